"""
exceptions.py
=============
Error hierarchy of the cia_ids package.

The CLI maps every family to an exit code:
- ConfigError -> 1 (usage)
- DataError -> 2 (bad or inconsistent input data)
- anything else -> 3 (internal)
"""


class CiaIdsError(Exception):
    """Base class of all cia_ids errors."""

    exit_code = 3


class ConfigError(CiaIdsError, ValueError):
    """Invalid configuration value or command line argument."""

    exit_code = 1


class DataError(CiaIdsError, ValueError):
    """Input data violates a precondition."""

    exit_code = 2


class MissingFileError(DataError, FileNotFoundError):
    pass


class HeaderMismatchError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class SchemaMismatchError(DataError):
    pass


class SingleClassError(DataError):
    """Operation needs both benign and malicious rows."""


class UnknownAttackError(DataError, KeyError):
    pass


class UnknownFeatureError(DataError, KeyError):
    pass


class DimensionMismatchError(DataError):
    pass


class MalformedTreeError(DataError):
    pass


class AucUndefinedError(DataError):
    """AUC needs both classes in the ground truth."""


class EvaluationError(CiaIdsError, RuntimeError):
    """A pipeline stage failed; carries the (learner, setting, attack) context."""

    def __init__(self, message, learner=None, setting=None, attack=None):
        self.learner = learner
        self.setting = setting
        self.attack = attack
        context = "/".join(str(part) for part in (learner, setting, attack) if part is not None)
        super().__init__(f"[{context}] {message}" if context else message)

    @property
    def exit_code(self):
        cause = self.__cause__
        return cause.exit_code if isinstance(cause, CiaIdsError) else 3


class VerificationError(CiaIdsError):
    """Re-derived reports differ from the reports on disk."""
