"""Exception classes shared by the pipeline stages.

Every error carries a short ``kind`` tag; the CLI prints it as a one-line
diagnostic and maps it to a non-zero exit status.
"""


class PipelineError(Exception):
    kind = "error"


class InvalidParameter(PipelineError, ValueError):
    kind = "invalid-parameter"


class EmptyInput(PipelineError, ValueError):
    kind = "empty-input"


class PreconditionViolation(PipelineError, ValueError):
    kind = "precondition-violation"


class InvalidInput(PipelineError, ValueError):
    kind = "invalid-input"


class PlyFormatError(PipelineError):
    """Malformed header, truncated payload or schema mismatch."""

    kind = "ply-format"

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ClassTreeError(PipelineError, ValueError):
    kind = "class-tree"


class DuplicateClassId(ClassTreeError):
    kind = "duplicate-id"


class DanglingParent(ClassTreeError):
    kind = "dangling-parent"


class CyclicHierarchy(ClassTreeError):
    kind = "cyclic-hierarchy"


class MissingCoarseClass(PipelineError, KeyError):
    kind = "missing-coarse-class"

    def __str__(self):
        return str(self.args[0]) if self.args else self.kind


class NoSeedError(PipelineError):
    kind = "no-seed"


class InvalidTrainingSet(PipelineError, ValueError):
    kind = "invalid-training-set"


class IncompatibleModel(PipelineError, ValueError):
    kind = "incompatible-model"


class ModelFormatError(PipelineError):
    kind = "model-format"
