"""Exception types shared across the simulator."""


class WarpFaultError(Exception):
    """Base class for all simulator errors."""


class ValidationError(WarpFaultError, ValueError):
    """A contract violation: bad dimensions, bad config values, bad words."""


class InvalidSiteError(WarpFaultError, ValueError):
    """A fault site that does not exist in the target's trace."""


class NoSitesError(WarpFaultError, ValueError):
    """Site sampling was asked for a register class the trace never writes."""


class LogFormatError(WarpFaultError, ValueError):
    """A campaign log that cannot be parsed or fails integrity checks."""


class LogVersionError(LogFormatError):
    """A campaign log written by an incompatible tool version."""


class DumpFormatError(WarpFaultError, ValueError):
    """A binary matrix or weight dump with a bad magic, header, or length."""


class DumpVersionError(DumpFormatError):
    """A binary dump written by an incompatible tool version."""
