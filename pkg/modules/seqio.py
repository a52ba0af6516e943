"""
FASTQ and FASTA input/output.

FASTQ records are the plain 4-line form:
1. '@' followed by the read id (kept verbatim, description included)
2. bases, upper-case A/C/G/T/N
3. '+'
4. one quality byte per base, Phred + offset
"""

import logging
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from modules.bases import is_base_string, to_codes
from modules.errors import FastaFormatError, FastqFormatError, InputError, QualityRangeError

logger = logging.getLogger(__name__)

PHRED33_OFFSET = 33  # Sanger/Illumina 1.8+
PHRED64_OFFSET = 64  # Illumina 1.3-1.7
DEFAULT_QMAX = 60

# highest printable ASCII byte a quality may be written as
MAX_QUAL_BYTE = 126


@dataclass(frozen=True)
class Read:
    """One sequencer output: called bases and their quality scores.

    Attributes:
        id: header text after '@'
        bases: called bases over A, C, G, T, N
        quals: quality per base, each in 1..Qmax
    """
    id: str
    bases: str
    quals: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.bases) != len(self.quals):
            raise ValueError(f"read {self.id!r}: {len(self.bases)} bases but {len(self.quals)} qualities")

    def __len__(self) -> int:
        return len(self.bases)

    def has_n(self) -> bool:
        return 'N' in self.bases

    def codes(self) -> np.ndarray:
        return to_codes(self.bases)

    def with_bases(self, bases: str) -> 'Read':
        """Same read with replaced bases; qualities pass through unchanged."""
        return Read(self.id, bases, self.quals)


def _decode_quals(raw: bytes, offset: int, qmax: int, index: int) -> Tuple[Tuple[int, ...], int]:
    quals = []
    clamped = 0
    for byte in raw:
        q = byte - offset
        if q < 0:
            raise QualityRangeError(f"quality below offset {offset}", index, byte)
        if q > qmax:
            raise QualityRangeError(f"quality {q} exceeds Qmax={qmax}", index, byte)
        if q == 0:
            q = 1
            clamped += 1
        quals.append(q)
    return tuple(quals), clamped


def iter_fastq(stream: BinaryIO, offset: int = PHRED33_OFFSET,
               qmax: int = DEFAULT_QMAX) -> Iterator[Read]:
    """Stream reads from a binary FASTQ handle.

    '#' lines before the first record are skipped (config echo written by
    this package). Phred 0 is clamped to 1.

    Raises:
        FastqFormatError: malformed record, with its 0-based index
        QualityRangeError: quality byte outside offset..offset+qmax
    """
    if offset not in (PHRED33_OFFSET, PHRED64_OFFSET):
        raise ValueError(f"unsupported Phred offset {offset}")
    index = 0
    clamped = 0
    line = stream.readline()
    while line.startswith(b'#'):
        line = stream.readline()
    while line:
        if line in (b'\n', b'\r\n'):
            line = stream.readline()
            continue
        header = line.rstrip(b'\r\n')
        if not header.startswith(b'@'):
            raise FastqFormatError("header does not start with '@'", index)
        seq_line = stream.readline()
        plus_line = stream.readline()
        qual_line = stream.readline()
        if not qual_line:
            raise FastqFormatError("truncated record", index)
        if not plus_line.startswith(b'+'):
            raise FastqFormatError("separator line does not start with '+'", index)
        try:
            read_id = header[1:].decode('utf-8')
            bases = seq_line.rstrip(b'\r\n').decode('ascii').upper()
        except UnicodeDecodeError as exc:
            raise FastqFormatError(f"undecodable byte {exc.object[exc.start:exc.start + 1]!r}", index) from exc
        raw_quals = qual_line.rstrip(b'\r\n')
        if not is_base_string(bases):
            raise FastqFormatError(f"illegal base in {bases!r}", index)
        if len(bases) != len(raw_quals):
            raise FastqFormatError(
                f"{len(bases)} bases but {len(raw_quals)} quality bytes", index)
        quals, n_clamped = _decode_quals(raw_quals, offset, qmax, index)
        clamped += n_clamped
        yield Read(read_id, bases, quals)
        index += 1
        line = stream.readline()
    if clamped:
        logger.warning("Clamped %d Phred-0 qualities to 1", clamped)
    logger.debug("Parsed %d FASTQ records", index)


def parse_fastq(stream: BinaryIO, offset: int = PHRED33_OFFSET,
                qmax: int = DEFAULT_QMAX) -> List[Read]:
    return list(iter_fastq(stream, offset, qmax))


def read_fastq(path: str, offset: int = PHRED33_OFFSET, qmax: int = DEFAULT_QMAX) -> List[Read]:
    with open(path, 'rb') as f:
        reads = parse_fastq(f, offset, qmax)
    logger.info("Read %d reads from %s", len(reads), path)
    return reads


def format_fastq(reads: Iterable[Read], offset: int = PHRED33_OFFSET,
                 header_lines: Optional[List[str]] = None) -> bytes:
    """Render reads as canonical 4-line FASTQ bytes.

    Args:
        reads: reads to write
        offset: Phred offset
        header_lines: optional '#' lines placed before the first record

    Raises:
        InputError: a quality that cannot be printed at this offset
    """
    chunks: List[bytes] = []
    for line in header_lines or []:
        chunks.append(line.encode('utf-8') + b'\n')
    for read in reads:
        top = max(read.quals, default=0) + offset
        if top > MAX_QUAL_BYTE:
            raise InputError(f"read {read.id!r}: quality {top - offset} not printable at offset {offset}")
        chunks.append(b'@' + read.id.encode('utf-8') + b'\n')
        chunks.append(read.bases.encode('ascii') + b'\n+\n')
        chunks.append(bytes(q + offset for q in read.quals) + b'\n')
    return b''.join(chunks)


def write_fastq(reads: Iterable[Read], stream: BinaryIO, offset: int = PHRED33_OFFSET,
                header_lines: Optional[List[str]] = None) -> None:
    stream.write(format_fastq(reads, offset, header_lines))


def max_quality(reads: Iterable[Read]) -> int:
    """Largest quality seen; this becomes the model's Qmax."""
    return max((max(r.quals) for r in reads if r.quals), default=1)


def parse_fasta(stream: BinaryIO) -> List[Tuple[str, str]]:
    """Parse (name, sequence) records; sequence lines may wrap."""
    records: List[Tuple[str, str]] = []
    name: Optional[str] = None
    parts: List[str] = []
    for line_number, raw in enumerate(stream, start=1):
        try:
            line = raw.strip().decode('ascii')
        except UnicodeDecodeError as exc:
            raise FastaFormatError(f"line {line_number}: non-ASCII byte {exc.object[exc.start:exc.start + 1]!r}") from exc
        if not line or line.startswith('#'):
            continue
        if line.startswith('>'):
            if name is not None:
                records.append((name, ''.join(parts)))
            name = line[1:].strip()
            parts = []
            continue
        if name is None:
            raise FastaFormatError(f"line {line_number}: sequence before the first '>' header")
        seq = line.upper()
        if not is_base_string(seq):
            raise FastaFormatError(f"line {line_number}: illegal base in {seq!r}")
        parts.append(seq)
    if name is not None:
        records.append((name, ''.join(parts)))
    if not records:
        raise FastaFormatError("no FASTA records found")
    return records


def read_genome(path: str) -> str:
    """Concatenated sequence of every record in a FASTA file."""
    with open(path, 'rb') as f:
        records = parse_fasta(f)
    genome = ''.join(seq for _, seq in records)
    logger.info("Loaded genome of %d bp from %s (%d records)", len(genome), path, len(records))
    return genome


def format_fasta(name: str, sequence: str) -> bytes:
    return f">{name}\n{sequence}\n".encode('ascii')
