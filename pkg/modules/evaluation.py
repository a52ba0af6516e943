"""
Read simulation and correction scoring.

Simulated reads are uniform forward-strand samples of a genome. Every base
gets a quality drawn from a per-position PMF and is replaced, with
probability 10^(-q/10), by one of the other three bases chosen uniformly.
Scoring compares original, corrected and true bases beyond the first kmer:

    e   ground-truth errors
    ce  errors changed to the true base
    fa  every other change (a correct base altered, or an error altered to another wrong base)
    zeta = ce / e,  eta = (ce - fa) / e
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from modules.bases import CODE_TO_BASE, from_codes, to_codes
from modules.errors import InputError
from modules.seqio import Read

logger = logging.getLogger(__name__)

HIGH_QUALITY_MODE = 38
HIGH_QUALITY_SD = 2.0
LOW_QUALITY_DECAY = 4.0


@dataclass(frozen=True)
class TruthRecord:
    read_id: str
    position: int  # 1-based start on the genome
    true_bases: str
    strand: str = '+'


class GroundTruth:
    """True sequence of every read, keyed by read id."""

    def __init__(self, records: Iterable[TruthRecord]) -> None:
        self.records: List[TruthRecord] = list(records)
        self._by_id: Dict[str, TruthRecord] = {}
        for rec in self.records:
            if rec.read_id in self._by_id:
                raise InputError(f"duplicate read id {rec.read_id!r} in ground truth")
            self._by_id[rec.read_id] = rec

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, read_id: str) -> TruthRecord:
        try:
            return self._by_id[read_id]
        except KeyError:
            raise InputError(f"read {read_id!r} has no ground truth") from None

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GroundTruth) and self.records == other.records

    def error_flags(self, read: Read) -> np.ndarray:
        """True where the called base differs from the true base."""
        rec = self[read.id]
        if len(rec.true_bases) != len(read):
            raise InputError(f"read {read.id!r}: length {len(read)} != truth length {len(rec.true_bases)}")
        return to_codes(read.bases) != to_codes(rec.true_bases)

    def total_errors(self, reads: Iterable[Read]) -> int:
        return int(sum(int(self.error_flags(r).sum()) for r in reads))


class QualityModel:
    """Per-position quality PMFs over 1..Qmax; pmf[t - 1, q - 1]."""

    def __init__(self, pmf: np.ndarray) -> None:
        pmf = np.asarray(pmf, dtype=np.float64)
        if pmf.ndim != 2 or pmf.shape[0] < 1 or pmf.shape[1] < 1:
            raise InputError(f"quality model must be a non-empty (L, Qmax) table, got shape {pmf.shape}")
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise InputError("quality model has negative or non-finite entries")
        if np.max(np.abs(pmf.sum(axis=1) - 1.0)) > 1e-10:
            raise InputError("quality model rows do not sum to 1")
        self.pmf = pmf

    @property
    def read_length(self) -> int:
        return self.pmf.shape[0]

    @property
    def qmax(self) -> int:
        return self.pmf.shape[1]

    @classmethod
    def constant(cls, read_length: int, qmax: int, q: int) -> 'QualityModel':
        """Every base gets quality q."""
        pmf = np.zeros((read_length, qmax))
        pmf[:, q - 1] = 1.0
        return cls(pmf)

    @classmethod
    def from_reads(cls, reads: Sequence[Read], qmax: int) -> 'QualityModel':
        """Empirical per-position PMFs; positions nobody reaches are uniform."""
        if not reads:
            raise InputError("cannot estimate a quality model from zero reads")
        length = max(len(r) for r in reads)
        counts = np.zeros((length, qmax))
        for r in reads:
            q = np.asarray(r.quals, dtype=np.int64)
            if q.size and q.max() > qmax:
                raise InputError(f"read {r.id!r} has quality {q.max()} above Qmax={qmax}")
            counts[np.arange(q.size), q - 1] += 1
        totals = counts.sum(axis=1, keepdims=True)
        return cls(np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / qmax))

    def error_probabilities(self) -> np.ndarray:
        return 10.0 ** (-np.arange(1, self.qmax + 1) / 10.0)

    def implied_error_rate(self) -> float:
        """Mean substitution probability over positions."""
        return float((self.pmf @ self.error_probabilities()).mean())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """(n, L) qualities, one column per position drawn by inverse CDF."""
        cdf = np.cumsum(self.pmf, axis=1)
        u = rng.random((n, self.read_length))
        quals = np.empty((n, self.read_length), dtype=np.int64)
        for t in range(self.read_length):
            quals[:, t] = np.minimum(np.searchsorted(cdf[t], u[:, t], side='right'), self.qmax - 1) + 1
        return quals


def default_quality_model(read_length: int, qmax: int, target_error_rate: float) -> QualityModel:
    """Parametric stand-in for an empirical quality profile.

    Each position mixes a high-quality peak (mode min(38, Qmax), sd 2) with a
    geometric low-quality tail. The tail weight grows linearly along the read,
    w_t = w0 (0.5 + (t - 1)/(L - 1)), and w0 is set so the mean error rate
    equals the target.

    Raises:
        InputError: the target cannot be reached with weights in [0, 1]
    """
    if not 0 < target_error_rate < 0.75:
        raise InputError(f"target error rate must be in (0, 0.75), got {target_error_rate}")
    if read_length < 1 or qmax < 1:
        raise InputError("read length and Qmax must be positive")
    q = np.arange(1, qmax + 1, dtype=np.float64)
    high = np.exp(-0.5 * ((q - min(HIGH_QUALITY_MODE, qmax)) / HIGH_QUALITY_SD) ** 2)
    high /= high.sum()
    low = np.exp(-(q - 1) / LOW_QUALITY_DECAY)
    low /= low.sum()
    perr = 10.0 ** (-q / 10.0)
    e_high = float(high @ perr)
    e_low = float(low @ perr)

    ramp = np.full(read_length, 1.0) if read_length == 1 else \
        0.5 + np.arange(read_length) / (read_length - 1)
    # mean of the ramp is 1, so the implied rate is e_high + w0 (e_low - e_high)
    w0 = (target_error_rate - e_high) / (e_low - e_high) / ramp.mean()
    if w0 < 0 or w0 * ramp.max() > 1:
        lo = e_high
        hi = e_high + (e_low - e_high) * ramp.mean() / ramp.max()
        raise InputError(f"target error rate {target_error_rate} outside the reachable range "
                         f"[{lo:.3g}, {hi:.3g}] for Qmax={qmax}")
    w = w0 * ramp
    pmf = (1 - w)[:, None] * high[None, :] + w[:, None] * low[None, :]
    pmf /= pmf.sum(axis=1, keepdims=True)
    model = QualityModel(pmf)
    logger.debug("Default quality model: L=%d Qmax=%d w0=%.5f implied error %.5f",
                 read_length, qmax, w0, model.implied_error_rate())
    return model


def random_genome(length: int, seed: int) -> str:
    """Uniform i.i.d. A/C/G/T sequence."""
    if length < 1:
        raise InputError("genome length must be positive")
    rng = np.random.default_rng(seed)
    return from_codes(rng.integers(0, 4, size=length))


def simulate_reads(genome: str, n: int, read_length: int, qmodel: QualityModel,
                   seed: int) -> Tuple[List[Read], GroundTruth]:
    """Sample n substitution-errored reads of one length from a genome.

    Args:
        genome: A/C/G/T reference; N is rejected
        n: number of reads
        read_length: L, must match the quality model
        qmodel: per-position quality PMFs
        seed: seeds every random draw

    Returns:
        reads named read1..readN and their ground truth
    """
    if 'N' in genome:
        raise InputError("genome contains N; only A/C/G/T can be sampled")
    if not 1 <= read_length <= len(genome):
        raise InputError(f"read length {read_length} must be in 1..{len(genome)}")
    if qmodel.read_length != read_length:
        raise InputError(f"quality model covers {qmodel.read_length} positions, reads have {read_length}")
    if n < 0:
        raise InputError("number of reads must be >= 0")
    rng = np.random.default_rng(seed)
    codes = to_codes(genome)
    starts = rng.integers(0, len(genome) - read_length + 1, size=n)
    quals = qmodel.sample(rng, n)
    errors = rng.random((n, read_length)) < 10.0 ** (-quals / 10.0)
    shift = rng.integers(1, 4, size=(n, read_length))

    offsets = starts[:, None] + np.arange(read_length)[None, :]
    true = codes[offsets].astype(np.int64)
    called = np.where(errors, (true + shift) % 4, true)

    letters = np.frombuffer(CODE_TO_BASE.encode('ascii'), dtype=np.uint8)
    reads: List[Read] = []
    records: List[TruthRecord] = []
    for i in range(n):
        rid = f"read{i + 1}"
        reads.append(Read(rid, letters[called[i]].tobytes().decode('ascii'), tuple(quals[i].tolist())))
        records.append(TruthRecord(rid, int(starts[i]) + 1, letters[true[i]].tobytes().decode('ascii')))
    logger.info("Simulated %d reads of %d bp: %d substitutions (rate %.4f)",
                n, read_length, int(errors.sum()), float(errors.mean()) if n else 0.0)
    return reads, GroundTruth(records)


@dataclass
class CorrectionReport:
    """Error-correction tallies; zeta and eta are NaN when there are no errors."""
    e: int
    ce: int
    fa: int
    diagnostics: Dict[str, int] = field(default_factory=dict)

    @property
    def zeta(self) -> float:
        return self.ce / self.e if self.e else math.nan

    @property
    def eta(self) -> float:
        return (self.ce - self.fa) / self.e if self.e else math.nan

    def __add__(self, other: 'CorrectionReport') -> 'CorrectionReport':
        diag = dict(self.diagnostics)
        for key, value in other.diagnostics.items():
            diag[key] = diag.get(key, 0) + value
        return CorrectionReport(self.e + other.e, self.ce + other.ce, self.fa + other.fa, diag)


def score_corrections(original: Sequence[Read], corrected: Sequence[Read], truth: GroundTruth,
                      k_exclusion: int) -> CorrectionReport:
    """Tally e, ce and fa beyond the first k_exclusion bases of every read.

    Raises:
        InputError: read ids or lengths disagree between the three inputs
    """
    if len(original) != len(corrected):
        raise InputError(f"{len(original)} original reads but {len(corrected)} corrected reads")
    e = ce = fa = 0
    for orig, corr in zip(original, corrected):
        if orig.id != corr.id:
            raise InputError(f"read order differs: {orig.id!r} vs {corr.id!r}")
        rec = truth[orig.id]
        if not len(orig) == len(corr) == len(rec.true_bases):
            raise InputError(f"read {orig.id!r}: lengths differ between original, corrected and truth")
        o = to_codes(orig.bases)[k_exclusion:]
        c = to_codes(corr.bases)[k_exclusion:]
        t = to_codes(rec.true_bases)[k_exclusion:]
        err = o != t
        fixed = err & (c == t)
        e += int(err.sum())
        ce += int(fixed.sum())
        fa += int(((c != o) & ~fixed).sum())
    return CorrectionReport(e, ce, fa)


REPORT_FIELDS = ('e', 'ce', 'fa', 'zeta', 'eta')


def format_report_table(report: CorrectionReport) -> str:
    rows = [('errors (e)', str(report.e)),
            ('corrected (ce)', str(report.ce)),
            ('false alarms (fa)', str(report.fa)),
            ('zeta = ce/e', f"{report.zeta:.4f}"),
            ('eta = (ce-fa)/e', f"{report.eta:.4f}")]
    rows.extend((name, str(value)) for name, value in sorted(report.diagnostics.items()))
    width = max(len(name) for name, _ in rows)
    return '\n'.join(f"{name:<{width}}  {value}" for name, value in rows) + '\n'


def format_report_tsv(report: CorrectionReport, header_lines: Optional[List[str]] = None) -> str:
    names = list(REPORT_FIELDS) + sorted(report.diagnostics)
    values = [str(report.e), str(report.ce), str(report.fa), repr(report.zeta), repr(report.eta)]
    values.extend(str(report.diagnostics[name]) for name in sorted(report.diagnostics))
    lines = list(header_lines or [])
    lines.append('\t'.join(names))
    lines.append('\t'.join(values))
    return '\n'.join(lines) + '\n'
