"""Exception hierarchy shared across the package."""


class FedftError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FedftError):
    """Bad user-supplied input: malformed files, invalid config, missing paths."""


class ParseError(InputError):
    """Malformed dataset text; message names the offending line and column."""


class ContainerError(InputError):
    """Corrupt or mismatched binary dataset/parameter container."""


class ProtocolError(FedftError):
    """Invalid frame or message on the wire."""


class TransportError(FedftError):
    """Carrier-level failure: refused/reset connections, closed channels, timeouts."""
