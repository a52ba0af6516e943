"""
Model and training-trace files.

Model layout (floats printed with repr, so a load reproduces every bit):

    #hmmcorrect-model v1
    #key=value                      config echo, ignored on load
    k=.. d=.. gamma=.. lambda=.. read_length=.. qmax=..
    [TRANS]
    <kmer> p(A) p(C) p(G) p(T)
    [CONFUSION]
    <t> g(A|A) g(C|A) g(G|A) g(T|A) g(A|C) ... g(T|T)      true base outer, called base inner
    [QUAL]
    <t> <j> q(1) .. q(Qmax)                                  j = 0 match, 1 mismatch

Fields are tab-separated; t runs over k+1..L.
"""

import logging
import os
import tempfile
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.errors import KmerError, ModelFormatError
from modules.hmm_params import HmmParams
from modules.kmer import encode_kmer
from modules.kmer_index import StateSpace

logger = logging.getLogger(__name__)

MODEL_VERSION_LINE = '#hmmcorrect-model v1'
_HEADER_KEYS = ('k', 'd', 'gamma', 'lambda', 'read_length', 'qmax')

TRACE_COLUMNS = ('iteration', 'loglik', 'penalty', 'objective', 'nonzero_transitions',
                 'states', 'trained_reads', 'dead_reads')


def atomic_write(path: str, data: str | bytes) -> None:
    """Write to a temp file in the target directory, then rename over path."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data.encode('utf-8') if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _floats(values: np.ndarray) -> str:
    return '\t'.join(repr(float(v)) for v in values)


class ModelExporter:
    """Serialises fitted parameters with their state space."""

    def __init__(self, params: HmmParams, space: StateSpace) -> None:
        if params.trans.shape[0] != len(space):
            raise ValueError(f"{params.trans.shape[0]} transition rows for {len(space)} states")
        self.params = params
        self.space = space

    def generate_text(self, header_lines: Optional[List[str]] = None) -> str:
        p = self.params
        lines = [MODEL_VERSION_LINE]
        lines.extend(header_lines or [])
        lines.append(f"k={p.k} d={p.d} gamma={p.gamma!r} lambda={p.lam!r} "
                     f"read_length={p.read_length} qmax={p.qmax}")
        lines.append('[TRANS]')
        for state in range(len(self.space)):
            lines.append(f"{self.space.kmer_string(state)}\t{_floats(p.trans[state])}")
        lines.append('[CONFUSION]')
        for i in range(p.n_positions):
            lines.append(f"{p.k + 1 + i}\t{_floats(p.confusion[i].reshape(-1))}")
        lines.append('[QUAL]')
        for i in range(p.n_positions):
            for j in range(2):
                lines.append(f"{p.k + 1 + i}\t{j}\t{_floats(p.qual[i, j])}")
        return '\n'.join(lines) + '\n'

    def export(self, output_file: str, header_lines: Optional[List[str]] = None) -> None:
        atomic_write(output_file, self.generate_text(header_lines))
        logger.info("Wrote model (%d states, %d nonzero transitions) to %s",
                    len(self.space), self.params.nonzero_transitions(), output_file)


class ModelImporter:
    """Parses a model file back into (HmmParams, StateSpace)."""

    def _parse_header(self, line: str, line_number: int) -> Dict[str, str]:
        fields: Dict[str, str] = {}
        for token in line.split():
            key, sep, value = token.partition('=')
            if not sep:
                raise ModelFormatError(f"header token {token!r} is not key=value", line_number)
            fields[key] = value
        missing = [key for key in _HEADER_KEYS if key not in fields]
        if missing:
            raise ModelFormatError(f"header lacks {', '.join(missing)}", line_number)
        return fields

    def _numbers(self, fields: Sequence[str], expected: int, line_number: int) -> List[float]:
        if len(fields) != expected:
            raise ModelFormatError(f"expected {expected} values, got {len(fields)}", line_number)
        try:
            return [float(f) for f in fields]
        except ValueError as exc:
            raise ModelFormatError(str(exc), line_number) from None

    def parse_text(self, lines: Sequence[str]) -> Tuple[HmmParams, StateSpace]:
        """
        Parse model lines.

        Raises:
            ModelFormatError: wrong version, malformed rows, missing positions or
                distributions off their simplex
        """
        if not lines or lines[0].rstrip('\r\n') != MODEL_VERSION_LINE:
            raise ModelFormatError(f"first line must be {MODEL_VERSION_LINE!r}", 1)
        header: Optional[Dict[str, str]] = None
        section = ''
        kmers: List[int] = []
        trans_rows: List[List[float]] = []
        confusion: Dict[int, List[float]] = {}
        qual: Dict[Tuple[int, int], List[float]] = {}
        k = qmax = 0
        for line_number, raw in enumerate(lines[1:], start=2):
            line = raw.rstrip('\r\n')
            if not line or line.startswith('#'):
                continue
            if header is None:
                header = self._parse_header(line, line_number)
                try:
                    k = int(header['k'])
                    qmax = int(header['qmax'])
                except ValueError as exc:
                    raise ModelFormatError(str(exc), line_number) from None
                continue
            if line.startswith('['):
                section = line
                continue
            fields = line.split('\t')
            if section == '[TRANS]':
                try:
                    kmer = encode_kmer(fields[0], k)
                except KmerError as exc:
                    raise ModelFormatError(str(exc), line_number) from None
                kmers.append(kmer.bits)
                trans_rows.append(self._numbers(fields[1:], 4, line_number))
            elif section == '[CONFUSION]':
                confusion[self._int(fields[0], line_number)] = self._numbers(fields[1:], 16, line_number)
            elif section == '[QUAL]':
                key = (self._int(fields[0], line_number), self._int(fields[1] if len(fields) > 1 else '', line_number))
                qual[key] = self._numbers(fields[2:], qmax, line_number)
            else:
                raise ModelFormatError(f"data outside a known section: {line[:40]!r}", line_number)
        if header is None:
            raise ModelFormatError("missing header line")

        try:
            d = int(header['d'])
            gamma = float(header['gamma'])
            lam = float(header['lambda'])
            read_length = int(header['read_length'])
        except ValueError as exc:
            raise ModelFormatError(f"bad header value: {exc}") from None
        if kmers != sorted(set(kmers)):
            raise ModelFormatError("TRANS rows must be sorted by kmer without repeats")
        positions = list(range(k + 1, read_length + 1))
        missing_t = [t for t in positions if t not in confusion]
        missing_q = [(t, j) for t in positions for j in range(2) if (t, j) not in qual]
        if missing_t or missing_q:
            raise ModelFormatError(f"missing emission rows for positions {missing_t or missing_q}")
        if len(confusion) != len(positions) or len(qual) != 2 * len(positions):
            raise ModelFormatError("emission rows for positions outside k+1..read_length")

        space = StateSpace.from_kmers(k, kmers)
        params = HmmParams(k, d, gamma, lam, read_length, qmax,
                           np.array(trans_rows, dtype=np.float64).reshape(-1, 4),
                           np.array([confusion[t] for t in positions]).reshape(-1, 4, 4),
                           np.array([[qual[(t, j)] for j in range(2)] for t in positions]))
        try:
            params.check(atol=1e-9)
        except ValueError as exc:
            raise ModelFormatError(str(exc)) from None
        return params, space

    def _int(self, field: str, line_number: int) -> int:
        try:
            return int(field)
        except ValueError:
            raise ModelFormatError(f"{field!r} is not an integer", line_number) from None

    def parse_file(self, file_path: str) -> Tuple[HmmParams, StateSpace]:
        with open(file_path, 'r') as f:
            params, space = self.parse_text(f.readlines())
        logger.info("Loaded model from %s: k=%d, %d states, L=%d", file_path, params.k, len(space),
                    params.read_length)
        return params, space


def save_model(path: str, params: HmmParams, space: StateSpace,
               header_lines: Optional[List[str]] = None) -> None:
    ModelExporter(params, space).export(path, header_lines)


def load_model(path: str) -> Tuple[HmmParams, StateSpace]:
    return ModelImporter().parse_file(path)


def format_trace(rows: Sequence, header_lines: Optional[List[str]] = None) -> str:
    """Iteration trace as TSV; rows are TraceRow-like objects."""
    lines = list(header_lines or [])
    lines.append('\t'.join(TRACE_COLUMNS))
    for row in rows:
        lines.append('\t'.join(repr(getattr(row, col)) if isinstance(getattr(row, col), float)
                               else str(getattr(row, col)) for col in TRACE_COLUMNS))
    return '\n'.join(lines) + '\n'


def write_trace(path: str, rows: Sequence, header_lines: Optional[List[str]] = None) -> None:
    atomic_write(path, format_trace(rows, header_lines))


def read_trace(path: str) -> List[Dict[str, float]]:
    """Trace rows as dicts; integer columns come back as int."""
    rows: List[Dict[str, float]] = []
    with open(path, 'r') as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.rstrip('\n')
            if not line or line.startswith('#') or line.startswith(TRACE_COLUMNS[0]):
                continue
            fields = line.split('\t')
            if len(fields) != len(TRACE_COLUMNS):
                raise ModelFormatError(f"trace row has {len(fields)} fields", line_number)
            rows.append({col: (float(v) if col in ('loglik', 'penalty', 'objective') else int(v))
                         for col, v in zip(TRACE_COLUMNS, fields)})
    return rows
