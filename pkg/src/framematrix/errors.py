"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value or camera/rig parameter is invalid."""


class EmptyInputError(ValueError):
    """An operation received input with no valid pixels/frames."""


class OracleContractError(RuntimeError):
    """A denoiser oracle violated its contract (shape or negative variance)."""


class CodecError(ValueError):
    """A latent codec received incompatible dimensions."""


class ProtocolError(RuntimeError):
    """A bridge peer sent a malformed or mismatched message."""


class BridgeConnectionError(ConnectionError):
    """The denoiser bridge endpoint could not be reached."""


class BridgeTimeoutError(TimeoutError):
    """The denoiser bridge endpoint did not answer in time."""


class ExportError(RuntimeError):
    """Dataset export/import failed (unwritable path, checksum mismatch)."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and grid coordinates."""

    def __init__(self, stage: str, message: str, frame: int | None = None,
                 view: int | None = None):
        where = stage
        if frame is not None:
            where += f" frame={frame}"
        if view is not None:
            where += f" view={view}"
        super().__init__(f"[{where}] {message}")
        self.stage = stage
        self.frame = frame
        self.view = view
