class SpaceHsmError(Exception):
    pass


class SizeError(SpaceHsmError, ValueError):
    pass


class DecryptError(SpaceHsmError):
    pass


class FaultDetected(SpaceHsmError):
    pass


class MalformedMessage(SpaceHsmError, ValueError):
    pass


class ConflictError(SpaceHsmError):
    """Different public keys each reached the consensus threshold."""


class RejectError(SpaceHsmError):
    pass


class FrozenError(SpaceHsmError):
    pass


class BrownoutError(SpaceHsmError):
    pass


class ConfigError(SpaceHsmError, ValueError):
    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message
