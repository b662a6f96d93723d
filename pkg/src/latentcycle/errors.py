"""Exception types shared across the package."""


class LatentCycleError(Exception):
    """Base class for all package errors."""


class ValidationError(LatentCycleError, ValueError):
    """Raised when inputs violate a documented precondition."""


class ResourceGuardError(LatentCycleError):
    """Raised when a combinatorial search would exceed its configured cap.

    Parameters
    ----------
    what : str
        Short description of the search that was refused.
    cap : int
        The cap that was exceeded.
    flag : str
        Name of the keyword argument (and CLI flag) that raises the cap.
    """

    def __init__(self, what: str, cap: int, flag: str):
        self.what = what
        self.cap = cap
        self.flag = flag
        super().__init__(
            f"{what} exceeds the cap of {cap}; raise it with {flag} if you "
            "accept the exponential cost"
        )
