"""Exception types shared across stages; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer


class StageError(RuntimeError):
    """A pipeline stage failed (exit code 3)."""


class IntegrityError(ValueError):
    """Corrupt, truncated or tampered artifact (exit code 4)."""

    def __init__(self, message: str, offset: int | None = None):
        where = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")
        self.offset = offset


class FingerprintMismatch(IntegrityError):
    """Two artifacts that must share a tokenizer (or generator) do not."""


class DivergenceError(StageError):
    """Training loss became NaN or infinite."""
