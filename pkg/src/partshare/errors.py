"""Exception hierarchy.

Every error raised on purpose by the package derives from ``PartShareError``.
Data problems (bad files, mismatched shapes) additionally derive from
``DataError`` so the command line can map them to exit code 2.
"""


class PartShareError(Exception):
    pass


class DataError(PartShareError, ValueError):
    pass


class EmptySample(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class SingularCovariance(PartShareError, ArithmeticError):
    pass


class EmptyImage(DataError):
    pass


class EmptyAllowedSet(PartShareError, ValueError):
    pass


class DegenerateWeights(PartShareError, ValueError):
    pass


class MissingPartResponse(DataError, KeyError):
    pass


class EmptyEnsemble(PartShareError, ValueError):
    pass


class BudgetTooSmall(PartShareError, ValueError):
    pass


class InfeasibleExploration(PartShareError, RuntimeError):
    pass


class AllZeroWeights(PartShareError, ValueError):
    pass


class ZeroAreaPart(DataError):
    pass


class MissingBox(DataError):
    pass


class ModelResponseMismatch(DataError):
    pass


class InvalidConfig(PartShareError, ValueError):
    pass


class TooLarge(PartShareError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, path=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.path = path
        self.offset = offset


class ChecksumMismatch(DataError):
    pass


class NoPositives(PartShareError, ValueError):
    pass


class ModeMismatch(PartShareError, ValueError):
    pass


class ModelFormatError(DataError):
    pass
