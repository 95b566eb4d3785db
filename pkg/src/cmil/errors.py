class NonFiniteLossError(FloatingPointError):
    """A training loss became NaN/inf; ``diagnostics`` names the offending terms."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        terms = ", ".join(f"{k}={v!r}" for k, v in self.diagnostics.items())
        return f"{base} ({terms})"


class TrainingDivergedError(RuntimeError):
    def __init__(self, module: str, cause: Exception, checkpoint=None):
        super().__init__(f"training diverged in {module}: {cause}"
                         + (f"; state saved to {checkpoint}" if checkpoint else ""))
        self.module = module
        self.checkpoint = checkpoint
