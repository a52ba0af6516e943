import logging
from typing import List, Optional, Sequence, TextIO

from modules.bases import is_base_string
from modules.errors import InputError, TruthFormatError
from modules.evaluation import GroundTruth, TruthRecord
from modules.model_io import atomic_write
from modules.seqio import Read

logger = logging.getLogger(__name__)

TRUTH_COLUMNS = ('read_id', 'position', 'true_sequence')


class TruthExporter:
    """Writes ground truth as a TSV: read_id, 1-based genome position, true read."""

    def __init__(self, truth: GroundTruth) -> None:
        self.truth = truth

    def generate_tsv(self, header_lines: Optional[List[str]] = None) -> str:
        """
        Render the truth table.

        Args:
            header_lines: '#' lines written before the column header

        Returns:
            TSV text
        """
        lines = list(header_lines or [])
        lines.append('\t'.join(TRUTH_COLUMNS))
        for rec in self.truth.records:
            lines.append(f"{rec.read_id}\t{rec.position}\t{rec.true_bases}")
        return '\n'.join(lines) + '\n'

    def export(self, output_file: str, header_lines: Optional[List[str]] = None) -> None:
        atomic_write(output_file, self.generate_tsv(header_lines))
        logger.info("Wrote truth for %d reads to %s", len(self.truth), output_file)


class TruthImporter:
    """Parses truth TSV files, simulator output or externally aligned reads alike."""

    def parse_text(self, lines: Sequence[str]) -> GroundTruth:
        """
        Parse truth rows.

        Args:
            lines: file lines; '#' lines and the column header are skipped

        Returns:
            GroundTruth in file order

        Raises:
            TruthFormatError: malformed row, with its 1-based line number
        """
        records: List[TruthRecord] = []
        seen = set()
        for line_number, raw in enumerate(lines, start=1):
            line = raw.rstrip('\r\n')
            if not line or line.startswith('#'):
                continue
            fields = line.split('\t')
            if tuple(fields) == TRUTH_COLUMNS:
                continue
            if len(fields) != 3:
                raise TruthFormatError(f"expected 3 tab-separated fields, got {len(fields)}", line_number)
            read_id, position, sequence = fields
            try:
                pos = int(position)
            except ValueError:
                raise TruthFormatError(f"position {position!r} is not an integer", line_number) from None
            if pos < 1:
                raise TruthFormatError(f"position {pos} must be >= 1", line_number)
            sequence = sequence.upper()
            if not sequence or not is_base_string(sequence):
                raise TruthFormatError(f"true sequence {sequence!r} is not over A/C/G/T/N", line_number)
            if read_id in seen:
                raise TruthFormatError(f"duplicate read id {read_id!r}", line_number)
            seen.add(read_id)
            records.append(TruthRecord(read_id, pos, sequence))
        return GroundTruth(records)

    def parse_file(self, file_path: str) -> GroundTruth:
        with open(file_path, 'r') as f:
            return self.parse_text(f.readlines())

    def validate_and_import(self, file_path: str, reads: Sequence[Read]) -> GroundTruth:
        """
        Import truth and check it covers exactly the given reads.

        Raises:
            InputError: row count, ids or lengths disagree with the reads
        """
        truth = self.parse_file(file_path)
        if len(truth) != len(reads):
            raise InputError(f"{file_path}: {len(truth)} truth rows for {len(reads)} reads")
        for read in reads:
            rec = truth[read.id]
            if len(rec.true_bases) != len(read):
                raise InputError(f"{file_path}: read {read.id!r} has length {len(read)}, "
                                 f"truth has {len(rec.true_bases)}")
        logger.info("Loaded truth for %d reads from %s", len(truth), file_path)
        return truth


def ingest_external_truth(stream: TextIO) -> GroundTruth:
    """GroundTruth from a truth TSV stream (read id, position, true read)."""
    return TruthImporter().parse_text(stream.readlines())
