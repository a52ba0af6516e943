"""Exception hierarchy shared by every module."""

from typing import Optional


class HmmCorrectError(Exception):
    """Root of all errors raised by this package."""


class InputError(HmmCorrectError, ValueError):
    """User-supplied data or configuration is malformed."""


class FastqFormatError(InputError):
    def __init__(self, message: str, record_index: int) -> None:
        super().__init__(f"FASTQ record {record_index}: {message}")
        self.record_index = record_index


class QualityRangeError(InputError):
    def __init__(self, message: str, record_index: int, byte: int) -> None:
        super().__init__(f"FASTQ record {record_index}: {message} (byte {byte!r} = {chr(byte)!r})")
        self.record_index = record_index
        self.byte = byte


class FastaFormatError(InputError):
    pass


class TruthFormatError(InputError):
    def __init__(self, message: str, line_number: int) -> None:
        super().__init__(f"truth line {line_number}: {message}")
        self.line_number = line_number


class ModelFormatError(InputError):
    def __init__(self, message: str, line_number: int = 0) -> None:
        where = f"model line {line_number}: " if line_number else "model: "
        super().__init__(where + message)
        self.line_number = line_number


class ConfigError(InputError):
    pass


class KmerError(HmmCorrectError, ValueError):
    """Illegal kmer window or mismatched kmer lengths."""


class TrainingError(HmmCorrectError):
    pass


class DecodeFailure(HmmCorrectError):
    """A single read could not be decoded; callers pass it through uncorrected."""

    DEAD_TRELLIS = "dead_trellis"
    BUDGET_EXCEEDED = "budget_exceeded"
    UNSUPPORTED_LENGTH = "unsupported_length"

    def __init__(self, reason: str, stage: int = 0, detail: Optional[str] = None) -> None:
        msg = f"{reason} at stage {stage}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.reason = reason
        self.stage = stage
