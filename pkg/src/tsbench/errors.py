"""Exception hierarchy shared by every tsbench module."""


class TsbenchError(Exception):
    """Base class; the CLI turns these into one-line error records."""


# .tsf ingest
class MalformedHeader(TsbenchError, ValueError):
    pass


class MissingDataSection(TsbenchError, ValueError):
    pass


class RaggedLine(TsbenchError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class NonNumericValue(TsbenchError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class MissingValueMarker(TsbenchError, ValueError):
    pass


class HorizonTooLarge(TsbenchError, ValueError):
    pass


class EmptyRegion(TsbenchError, ValueError):
    pass


# model / training
class NonFiniteInput(TsbenchError, ValueError):
    pass


class NonFiniteLoss(TsbenchError, ArithmeticError):
    pass


class MissingValues(TsbenchError, ValueError):
    """Dataset carries missing observations; training refuses it."""


# metrics
class ConstantInsample(TsbenchError, ZeroDivisionError):
    pass


class AllTargetsZero(TsbenchError, ZeroDivisionError):
    pass


# metastore
class DuplicateConfig(TsbenchError, KeyError):
    pass


class StorageFailure(TsbenchError, OSError):
    pass


class StoreLocked(StorageFailure):
    pass


class SchemaMismatch(TsbenchError, ValueError):
    pass


class CorruptLine(TsbenchError, ValueError):
    def __init__(self, line, path=None, reason=""):
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"corrupt record at {where}" + (f" ({reason})" if reason else ""))
        self.line = line
        self.path = path


class UnknownMetric(TsbenchError, KeyError):
    pass


class EmptySelection(TsbenchError, ValueError):
    pass


# importance
class IncompleteGrid(TsbenchError, ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(str(m) for m in self.missing[:5])
        more = f" (+{len(self.missing) - 5} more)" if len(self.missing) > 5 else ""
        super().__init__(f"{len(self.missing)} missing cell(s): {shown}{more}")


class DegenerateVariance(TsbenchError, ValueError):
    pass
