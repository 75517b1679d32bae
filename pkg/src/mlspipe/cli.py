"""Command line entry point: one subcommand per pipeline stage plus ``pipeline``."""

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from .classes import cloud_stats, format_stats, read_class_tree
from .cloud import fill_holes, rasterize_ground, smooth
from .descriptors import (BLOCK_ORDER, DescriptorConfig, DescriptorTable, describe_segments,
                          read_descriptor_table, write_descriptor_table)
from .errors import InvalidParameter, PipelineError
from .evaluation import (INTERSECTION, VARIANTS, classification_metrics, confusion_matrix,
                         evaluate_pipeline, match_objects, write_csv)
from .forest import TrainConfig, load_model, predict_many, save_model, split_train_test, train
from .ground import GroundParams, extract_ground
from .ply import read_ply, write_ply
from .segment import SegmentSet, export_labeled, segment_connected
from .synth import parse_scene, urban_scene, write_fixture

GROUND_PLY = "ground.ply"
SEGMENTS_PLY = "segments.ply"
PREDICTED_PLY = "predicted.ply"
DESCRIPTORS = "descriptors.bin"
MODEL = "model.bin"
EVAL_SEG = "eval_seg.csv"
EVAL_CLS = "eval_cls.csv"
MANIFEST = "manifest.txt"


class Run:
    """Output directory plus a manifest of parameters and stage timings."""

    def __init__(self, out_dir, command, args):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.params = {"command": command, "version": __version__}
        for k, v in sorted(vars(args).items()):
            if k in ("func", "out_dir", "config"):
                continue
            self.params[k] = v
        self.timings = {}
        self.results = {}
        self.write_manifest(status="running")

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def write_manifest(self, status):
        lines = [f"{k}={v}" for k, v in self.params.items()]
        lines += [f"result.{k}={v}" for k, v in self.results.items()]
        lines += [f"time.{k}={v:.6f}" for k, v in self.timings.items()]
        lines.append(f"status={status}")
        with open(self.path(MANIFEST), "w") as f:
            f.write("\n".join(lines) + "\n")

    def stage(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = run.timings.get(name, 0.0) + time.perf_counter() - self.t0

        return _Timer()


def read_manifest(path):
    out = {}
    with open(path) as f:
        for line in f:
            k, _, v = line.rstrip("\n").partition("=")
            if k:
                out[k] = v
    return out


# --- parameter groups -----------------------------------------------------

def add_ground_args(p, prefixed=False):
    g = p.add_argument_group("ground extraction")
    g.add_argument("--sensor-height", type=float, default=2.71)
    g.add_argument("--seed-radius", type=float, default=1.0)
    g.add_argument("--seed-z-tol", type=float, default=0.3)
    names = ["--ground-cell-size"] if prefixed else ["--cell-size", "--ground-cell-size"]
    g.add_argument(*names, dest="ground_cell_size", type=float, default=0.1)
    g.add_argument("--grow-dz-max", type=float, default=0.15)
    g.add_argument("--smooth-radius", type=int, default=2)
    g.add_argument("--support-radius", type=int, default=2,
                   help="cells searched for the lowest accepted elevation (0 = own cell)")


def add_segment_args(p, prefixed=False):
    g = p.add_argument_group("segmentation")
    names = ["--segment-cell-size"] if prefixed else ["--cell-size", "--segment-cell-size"]
    g.add_argument(*names, dest="segment_cell_size", type=float, default=0.2)
    g.add_argument("--min-points", type=int, default=50)


def add_descriptor_args(p):
    g = p.add_argument_group("descriptors")
    g.add_argument("--blocks", default=",".join(BLOCK_ORDER),
                   help="comma separated subset of " + ",".join(BLOCK_ORDER))
    g.add_argument("--esf-samples", type=int, default=20000)
    g.add_argument("--grsd-voxel", type=float, default=0.25)
    g.add_argument("--subsample-max", type=int, default=10000)


def add_forest_args(p):
    g = p.add_argument_group("random forest")
    g.add_argument("--n-trees", type=int, default=100)
    g.add_argument("--mtry", type=int, default=None)
    g.add_argument("--min-leaf", type=int, default=1)
    g.add_argument("--max-depth", type=int, default=None)
    g.add_argument("--split-fraction", type=float, default=0.8)
    g.add_argument("--class-weight", choices=["none", "balanced"], default="none")


def add_eval_args(p):
    g = p.add_argument_group("evaluation")
    g.add_argument("--m", type=float, default=0.5)
    g.add_argument("--variant", choices=VARIANTS, default=INTERSECTION)
    g.add_argument("--classes", help="classes.xml")
    g.add_argument("--coarse", help="coarse_classes.xml; projects classes before scoring")
    g.add_argument("--micro", action="store_true", help="print micro averages first")


def ground_params(a):
    return GroundParams(a.sensor_height, a.seed_radius, a.seed_z_tol, a.ground_cell_size,
                        a.grow_dz_max, a.smooth_radius, a.support_radius)


def descriptor_config(a):
    blocks = tuple(b.strip().upper() for b in a.blocks.split(",") if b.strip())
    return DescriptorConfig(blocks=blocks, esf_samples=a.esf_samples, grsd_voxel=a.grsd_voxel,
                            subsample_max=a.subsample_max, seed=a.seed)


def train_config(a):
    return TrainConfig(n_trees=a.n_trees, mtry=a.mtry, min_leaf=a.min_leaf,
                       max_depth=a.max_depth, seed=a.seed, split_fraction=a.split_fraction,
                       class_weight=None if a.class_weight == "none" else a.class_weight,
                       threads=a.threads)


def load_tree(a):
    if not getattr(a, "classes", None):
        return None
    with open(a.classes) as f:
        xml = f.read()
    coarse = None
    if getattr(a, "coarse", None):
        with open(a.coarse) as f:
            coarse = f.read()
    return read_class_tree(xml, coarse)


# --- stage helpers shared by the subcommands and ``pipeline`` -------------

def ground_stage(cloud, params):
    res = extract_ground(cloud, params)
    out = cloud.copy()
    lab = np.ones(len(cloud), dtype=np.uint32)
    lab[res.ground_indices] = 0
    out.points["label"] = lab
    return res, out


def elevation_from(cloud, ground_mask, cell_size, smooth_radius):
    img = rasterize_ground(cloud, np.flatnonzero(ground_mask), cell_size)
    return smooth(fill_holes(img), smooth_radius)


def segment_objects(cloud):
    """Segments of a labelled cloud and the majority class of each."""
    seg = SegmentSet.from_labels(cloud.label)
    ids = np.unique(cloud.label[cloud.label != 0]).astype(np.int64)
    classes = np.array([np.bincount(cloud.class_id[idx]).argmax() if len(idx) else 0
                        for idx in seg.segments], dtype=np.int64)
    return seg, ids, classes


def describe_stage(cloud, elevation, config, threads, label_offset=1):
    seg, ids, classes = segment_objects(cloud)
    seg_ids = ids - label_offset
    X = describe_segments(cloud, seg.segments, config, elevation, threads, seg_ids)
    return DescriptorTable(config.layout, X, seg_ids, classes)


def gt_training_table(cloud, params, config, threads, min_points):
    """Descriptors of the ground-truth objects, minus extracted ground points."""
    res = extract_ground(cloud, params)
    gmask = res.mask(len(cloud))
    train_cloud = cloud.copy()
    lab = train_cloud.points["label"]
    lab[gmask] = 0
    ids, counts = np.unique(lab[lab != 0], return_counts=True)
    lab[np.isin(lab, ids[counts < min_points])] = 0
    return describe_stage(train_cloud, res.elevation, config, threads)


def apply_predictions(cloud, table, predicted, ground_class=0):
    out = cloud.copy()
    cls = np.full(len(cloud), ground_class, dtype=np.uint32)
    label = cloud.label.astype(np.int64)
    lookup = dict(zip((table.segment_ids + 1).tolist(), np.asarray(predicted).tolist()))
    for lab, c in lookup.items():
        cls[label == lab] = c
    out.points["class"] = cls
    return out


def write_predictions(path, table, predicted, fractions, classes):
    rows = [["segment_id", "class"] + [f"p_{c}" for c in classes]]
    for s, p, fr in zip(table.segment_ids, predicted, fractions):
        rows.append([int(s), int(p)] + [repr(float(v)) for v in fr])
    write_csv(rows, path)


def report_eval(run, match, report, micro=False):
    if match is not None:
        write_csv(match.csv_rows(), run.path(EVAL_SEG))
        print(match.text())
        run.results.update(detection_precision=match.precision, detection_recall=match.recall,
                           detection_f1=match.f1)
    if report is not None:
        write_csv(report.csv_rows(), run.path(EVAL_CLS))
        print(report.text())
        avg = report.micro if micro else report.macro
        run.results.update(classification_f1=avg["f1"], classification_mcc=avg["mcc"])


# --- subcommands ----------------------------------------------------------

def cmd_stats(a):
    cloud = read_ply(a.input, strict=not a.lenient)
    rows = cloud_stats(cloud, load_tree(a))
    print(format_stats(rows))
    if a.out:
        write_csv([["class", "name", "objects", "points"]] +
                  [["" if r.class_id is None else r.class_id, r.name, r.objects, r.points]
                   for r in rows], a.out)


def cmd_synth(a):
    if a.scene:
        with open(a.scene) as f:
            spec = parse_scene(f.read())
    else:
        spec = urban_scene(a.objects, seed=a.seed, grade=a.grade, density=a.density)
    paths = write_fixture(spec, a.out)
    for p in paths:
        print(p)


def cmd_ground(a):
    run = Run(a.out_dir, "ground", a)
    cloud = read_ply(a.input, strict=not a.lenient)
    with run.stage("ground"):
        res, out = ground_stage(cloud, ground_params(a))
    write_ply(out, run.path(GROUND_PLY))
    run.results["ground_points"] = len(res.ground_indices)
    run.write_manifest("ok")
    print(f"{len(res.ground_indices)} of {len(cloud)} points are ground")


def cmd_segment(a):
    run = Run(a.out_dir, "segment", a)
    cloud = read_ply(a.input, strict=not a.lenient)
    ground = np.flatnonzero(cloud.label == 0)
    with run.stage("segment"):
        seg = segment_connected(cloud, np.flatnonzero(cloud.label != 0),
                                a.segment_cell_size, a.min_points)
        out = export_labeled(cloud, ground, seg)
    write_ply(out, run.path(SEGMENTS_PLY))
    run.results["segments"] = len(seg)
    run.write_manifest("ok")
    print(f"{len(seg)} segments")


def cmd_describe(a):
    run = Run(a.out_dir, "describe", a)
    cloud = read_ply(a.input, strict=not a.lenient)
    gsrc = read_ply(a.ground, strict=not a.lenient) if a.ground else cloud
    if len(gsrc) != len(cloud):
        raise InvalidParameter("ground cloud and input cloud differ in size")
    config = descriptor_config(a)
    with run.stage("describe"):
        elevation = None
        if "CONTEXT" in config.blocks:
            elevation = elevation_from(gsrc, gsrc.label == 0, a.ground_cell_size,
                                       a.smooth_radius)
        table = describe_stage(cloud, elevation, config, a.threads)
    write_descriptor_table(run.path(DESCRIPTORS), table)
    run.results["objects"] = len(table.segment_ids)
    run.write_manifest("ok")
    print(f"{len(table.segment_ids)} objects x {table.values.shape[1]} features")


def cmd_train(a):
    run = Run(a.out_dir, "train", a)
    table = read_descriptor_table(a.descriptors)
    X, y = table.values, table.class_ids
    cfg = train_config(a)
    report = None
    if a.holdout:
        tr, te = split_train_test(len(y), cfg.split_fraction, cfg.seed)
        with run.stage("train"):
            model = train(X[tr], y[tr], cfg, table.layout)
        pred, _ = predict_many(model, X[te], table.layout)
        cm, classes = confusion_matrix(y[te], pred, model.classes)
        report = classification_metrics(cm, classes)
    else:
        with run.stage("train"):
            model = train(X, y, cfg, table.layout)
    save_model(model, run.path(MODEL))
    run.results["oob_score"] = repr(model.oob_score)
    if report is not None:
        report_eval(run, None, report)
    run.write_manifest("ok")
    print(f"oob_score={model.oob_score:.4f}")


def cmd_predict(a):
    run = Run(a.out_dir, "predict", a)
    model = load_model(a.model)
    table = read_descriptor_table(a.descriptors)
    with run.stage("predict"):
        pred, frac = predict_many(model, table.values, table.layout)
    write_predictions(run.path("predictions.csv"), table, pred, frac, model.classes)
    if a.input:
        cloud = read_ply(a.input, strict=not a.lenient)
        write_ply(apply_predictions(cloud, table, pred, a.ground_class), run.path(PREDICTED_PLY))
    run.write_manifest("ok")
    print(f"predicted {len(pred)} objects")


def cmd_eval_seg(a):
    run = Run(a.out_dir, "eval-seg", a)
    gt = read_ply(a.gt, strict=not a.lenient)
    pred = read_ply(a.pred, strict=not a.lenient)
    with run.stage("eval"):
        if len(gt) != len(pred):
            raise InvalidParameter(f"point count mismatch: {len(gt)} vs {len(pred)}")
        match = match_objects(gt.label, pred.label, a.m, a.variant)
    report_eval(run, match, None)
    run.write_manifest("ok")


def cmd_eval_cls(a):
    run = Run(a.out_dir, "eval-cls", a)
    gt = read_ply(a.gt, strict=not a.lenient)
    pred = read_ply(a.pred, strict=not a.lenient)
    tree = load_tree(a)
    with run.stage("eval"):
        match, report = evaluate_pipeline(gt, pred, a.m, a.variant, tree,
                                          coarse=bool(a.coarse))
    report_eval(run, None, report, a.micro)
    run.write_manifest("ok")


def cmd_pipeline(a):
    run = Run(a.out_dir, "pipeline", a)
    cloud = read_ply(a.input, strict=not a.lenient)
    params = ground_params(a)
    config = descriptor_config(a)

    with run.stage("ground"):
        gres, gcloud = ground_stage(cloud, params)
    write_ply(gcloud, run.path(GROUND_PLY))

    with run.stage("segment"):
        seg = segment_connected(cloud, np.flatnonzero(gcloud.label != 0),
                                a.segment_cell_size, a.min_points)
        segcloud = export_labeled(cloud, gres.ground_indices, seg)
    write_ply(segcloud, run.path(SEGMENTS_PLY))

    with run.stage("describe"):
        table = describe_stage(segcloud, gres.elevation, config, a.threads)
    write_descriptor_table(run.path(DESCRIPTORS), table)

    if a.model:
        model = load_model(a.model)
    else:
        source = read_ply(a.train_cloud, strict=not a.lenient) if a.train_cloud else cloud
        with run.stage("describe_train"):
            ttable = gt_training_table(source, params, config, a.threads, a.min_points)
        with run.stage("train"):
            model = train(ttable.values, ttable.class_ids, train_config(a), ttable.layout)
        run.results["oob_score"] = repr(model.oob_score)
    save_model(model, run.path(MODEL))

    with run.stage("predict"):
        pred, frac = predict_many(model, table.values, table.layout) if len(table.values) else \
            (np.zeros(0, np.int64), np.zeros((0, len(model.classes))))
        predcloud = apply_predictions(segcloud, table, pred, a.ground_class)
    write_ply(predcloud, run.path(PREDICTED_PLY))
    write_predictions(run.path("predictions.csv"), table, pred, frac, model.classes)

    if (cloud.label != 0).any():
        tree = load_tree(a)
        with run.stage("eval"):
            match, report = evaluate_pipeline(cloud, predcloud, a.m, a.variant, tree,
                                              coarse=bool(a.coarse))
        report_eval(run, match, report, a.micro)
    run.write_manifest("ok")


# --- parser ---------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="mlspipe", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help, out_dir=True):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key=value file; command-line flags win")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--lenient", action="store_true",
                       help="accept PLY files with extra properties or elements")
        if out_dir:
            p.add_argument("--out-dir", default="run")
        return p

    p = command("stats", cmd_stats, "per-class object/point counts", out_dir=False)
    p.add_argument("--input", required=True)
    p.add_argument("--classes")
    p.add_argument("--coarse")
    p.add_argument("--out", help="optional CSV output")

    p = command("synth", cmd_synth, "generate a synthetic labelled scene", out_dir=False)
    p.add_argument("--scene", help="scene file; default is a random urban scene")
    p.add_argument("--objects", type=int, default=60)
    p.add_argument("--grade", type=float, default=0.0)
    p.add_argument("--density", type=float, default=1500.0)
    p.add_argument("--out", required=True, help="output path prefix (.ply/.scene)")

    p = command("ground", cmd_ground, "extract ground points")
    p.add_argument("--input", required=True)
    add_ground_args(p)

    p = command("segment", cmd_segment, "connected-component segmentation of ground.ply")
    p.add_argument("--input", required=True, help="ground.ply (label 0 = ground)")
    add_segment_args(p)

    p = command("describe", cmd_describe, "descriptor table of the labelled objects")
    p.add_argument("--input", required=True, help="cloud whose non-zero labels are objects")
    p.add_argument("--ground", help="cloud whose label-0 points are ground (default: input)")
    p.add_argument("--cell-size", "--ground-cell-size", dest="ground_cell_size",
                   type=float, default=0.1)
    p.add_argument("--smooth-radius", type=int, default=2)
    add_descriptor_args(p)

    p = command("train", cmd_train, "train a Random Forest on a descriptor table")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--holdout", action="store_true",
                   help="train on split_fraction of the objects, score the rest")
    add_forest_args(p)

    p = command("predict", cmd_predict, "classify a descriptor table")
    p.add_argument("--model", required=True)
    p.add_argument("--descriptors", required=True)
    p.add_argument("--input", help="segments.ply to receive predicted classes")
    p.add_argument("--ground-class", type=int, default=0)

    p = command("eval-seg", cmd_eval_seg, "object detection precision/recall/F1")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    add_eval_args(p)

    p = command("eval-cls", cmd_eval_cls, "per-class P/R/F1/MCC over matched objects")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    add_eval_args(p)

    p = command("pipeline", cmd_pipeline, "ground, segment, describe, classify, evaluate")
    p.add_argument("--input", required=True)
    p.add_argument("--model", help="pre-trained model; otherwise trained on ground truth")
    p.add_argument("--train-cloud", help="labelled cloud to train on (default: input)")
    p.add_argument("--ground-class", type=int, default=0)
    add_ground_args(p, prefixed=True)
    add_segment_args(p, prefixed=True)
    add_descriptor_args(p)
    add_forest_args(p)
    add_eval_args(p)
    return parser


_MANIFEST_ONLY = ("command", "version", "status")


def read_config(path):
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidParameter(f"{path}:{lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv=None):
    """Parse ``argv``; values from ``--config`` act as defaults under the flags."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    subparsers = parser._subparsers._group_actions[0].choices
    path = _config_path(argv)
    command = next((t for t in argv if t in subparsers), None)
    if path and command:
        sub = subparsers[command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in read_config(path).items():
            if k in _MANIFEST_ONLY or k.startswith(("result.", "time.")):
                continue  # a manifest doubles as a config file
            if k not in known:
                raise InvalidParameter(f"unknown config key {k!r} for {command}")
            action = known[k]
            if v == "None":
                defaults[k] = None
            elif action.nargs == 0:
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                defaults[k] = action.type(v) if action.type else v
            action.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    try:
        args = parse_args(argv)
        args.func(args)
    except PipelineError as e:
        print(f"mlspipe: {e.kind}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"mlspipe: io-error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
