"""Exception hierarchy shared by every gencert module."""


class GencertError(Exception):
    """Base class for toolkit errors."""


class InputError(GencertError):
    """Malformed or inconsistent user input (CLI exit code 2)."""


class SchemaError(InputError):
    pass


class InconsistentShardCount(InputError):
    pass


class UnknownToken(InputError):
    pass


class EmptyTable(InputError):
    pass


class MissingTarget(InputError):
    pass


class MissingShardVotes(InputError):
    pass


class LengthMismatch(InputError):
    pass


class HorizonExceedsTrace(InputError):
    pass


class EmptyTestSet(InputError):
    pass


class PolicyMismatch(InputError):
    pass


class BoundExceeded(GencertError):
    """An exhaustive oracle was asked to search beyond its tractability bound."""


class InfeasibleSize(GencertError):
    """Instance too large for the exact collective solver."""


class InvariantBreach(GencertError):
    """Two independent computations disagreed (CLI exit code 3)."""
