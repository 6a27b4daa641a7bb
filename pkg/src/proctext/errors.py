"""Exception hierarchy shared across the toolkit."""


class ProctextError(Exception):
    """Base class for all toolkit errors."""


class GlossaryError(ProctextError):
    """Raised for malformed glossary or embedding files."""


class ParseError(ProctextError):
    """Raised for malformed recipes or dependency annotations."""


class MiningError(ProctextError):
    """Raised for invalid mining configuration or annotation data."""


class CausalError(ProctextError):
    """Raised when a causal estimate cannot be computed."""


class MetricError(ProctextError):
    """Raised for invalid metric inputs (empty token lists, bad ratings)."""


class PipelineError(ProctextError):
    """Raised when a pipeline stage fails; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
