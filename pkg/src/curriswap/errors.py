"""Exception types shared across the package."""


class CurriswapError(Exception):
    pass


class ShapeError(CurriswapError, ValueError):
    pass


class VocabularyError(CurriswapError, IndexError):
    pass


class StaleTapeError(CurriswapError, RuntimeError):
    pass


class NonFiniteError(CurriswapError, FloatingPointError):
    pass


class IncompatibleError(CurriswapError, ValueError):
    """Raised when components with mismatched widths are put together."""

    def __init__(self, what, expected, found):
        self.what = what
        self.expected = expected
        self.found = found
        super().__init__(f"{what}: expected {expected}, found {found}")


class TaskMismatchError(CurriswapError, ValueError):
    pass


class CheckpointError(CurriswapError, ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class FormatVersionError(CheckpointError):
    pass


class PlanError(CurriswapError, ValueError):
    pass


class CorpusFormatError(CurriswapError, ValueError):
    pass
