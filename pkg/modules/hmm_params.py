"""
HMM parameters over the kmer state space.

Transitions p(b | a) are position independent and stored as an (n, 4) table
aligned with StateSpace ids. Emissions are per read position t = k+1..L,
stored at index t - k - 1:

    confusion[i, true, called] = g_t(called | true)       (rows sum to 1)
    qual[i, j, q - 1]          = q_tj(q), j = 0 match, 1 mismatch
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from modules.bases import Nucleotides
from modules.errors import KmerError
from modules.kmer import encode_kmer
from modules.kmer_index import NeighborhoodIndex, StateId, StateSpace

logger = logging.getLogger(__name__)

NEG_INF = float('-inf')
LOG_QUARTER = math.log(0.25)


def _log(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide='ignore'):
        return np.log(values)


@dataclass
class HmmParams:
    """Transition and emission tables plus the hyperparameters they were fitted with."""
    k: int
    d: int
    gamma: float
    lam: float
    read_length: int
    qmax: int
    trans: np.ndarray
    confusion: np.ndarray
    qual: np.ndarray

    def __post_init__(self) -> None:
        positions = self.read_length - self.k
        if positions < 1:
            raise KmerError(f"read length {self.read_length} leaves no positions after k={self.k}")
        # private read-only copies; derive a changed model with with_trans
        self.trans = np.array(self.trans, dtype=np.float64).reshape(-1, 4)
        self.confusion = np.array(self.confusion, dtype=np.float64).reshape(positions, 4, 4)
        self.qual = np.array(self.qual, dtype=np.float64).reshape(positions, 2, self.qmax)
        for table in (self.trans, self.confusion, self.qual):
            table.setflags(write=False)

    @property
    def n_positions(self) -> int:
        return self.read_length - self.k

    def position_index(self, t: int) -> int:
        """Table row for 1-based read position t in k+1..L."""
        if not self.k < t <= self.read_length:
            raise IndexError(f"position {t} outside {self.k + 1}..{self.read_length}")
        return t - self.k - 1

    def nonzero_transitions(self) -> int:
        return int(np.count_nonzero(self.trans > 0))

    @cached_property
    def log_trans(self) -> np.ndarray:
        return _log(self.trans)

    @cached_property
    def log_confusion(self) -> np.ndarray:
        return _log(self.confusion)

    @cached_property
    def log_qual(self) -> np.ndarray:
        return _log(self.qual)

    @cached_property
    def emission_table(self) -> Tuple[Tuple[Tuple[Tuple[float, ...], ...], ...], ...]:
        """Nested tuples [i][called][q - 1] -> 4 log emissions over the true base.

        Called base 4 (N) is uninformative: log q_t1(q) + log 1/4 for every true base.
        """
        lq = self.log_qual
        lg = self.log_confusion
        table = []
        for i in range(self.n_positions):
            per_called = []
            for called in range(5):
                per_q = []
                for q in range(self.qmax):
                    if called == Nucleotides.N_CODE:
                        v = float(lq[i, 1, q]) + LOG_QUARTER
                        per_q.append((v, v, v, v))
                        continue
                    per_q.append(tuple(
                        float(lq[i, 0 if b == called else 1, q]) + float(lg[i, b, called])
                        for b in range(4)))
                per_called.append(tuple(per_q))
            table.append(tuple(per_called))
        return tuple(table)

    def check(self, atol: float = 1e-10) -> None:
        """Raise ValueError if any distribution is off its simplex."""
        for name, arr in (('trans', self.trans), ('confusion', self.confusion), ('qual', self.qual)):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has negative or non-finite entries")
            sums = arr.sum(axis=-1)
            if arr.size and np.max(np.abs(sums - 1.0)) > atol:
                raise ValueError(f"{name} rows do not sum to 1 (max error {np.max(np.abs(sums - 1.0)):.3g})")

    def with_trans(self, trans: np.ndarray) -> 'HmmParams':
        return HmmParams(self.k, self.d, self.gamma, self.lam, self.read_length, self.qmax,
                         trans, self.confusion, self.qual)

    def restrict(self, keep: np.ndarray) -> 'HmmParams':
        """Parameters for the sub-space kept by StateSpace.restrict(keep)."""
        return self.with_trans(self.trans[np.asarray(keep, dtype=bool)])


def init_params(space: StateSpace, read_length: int, qmax: int, gamma: float, lam: float,
                d: int = 4) -> HmmParams:
    """Count-ratio transitions, uniform confusion and uniform quality PMFs.

    States never followed by a base inside a read get a uniform row.
    """
    counts = space.succ_counts.astype(np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    trans = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 0.25)
    positions = read_length - space.k
    confusion = np.full((positions, 4, 4), 0.25)
    qual = np.full((positions, 2, qmax), 1.0 / qmax)
    logger.debug("Initialised %d transition rows (%d with no successions)",
                 len(space), int(np.count_nonzero(totals == 0)))
    return HmmParams(space.k, d, gamma, lam, read_length, qmax, trans, confusion, qual)


def emission_log_prob(params: HmmParams, t: int, called: int, qual: int, true_base: int) -> float:
    """log[q_tj(qual) g_t(called | true_base)], j = 0 when called == true_base.

    Args:
        params: model
        t: 1-based read position in k+1..L
        called: called base code 0..3 (4 = N, uninformative)
        qual: quality in 1..Qmax
        true_base: state base code 0..3
    """
    i = params.position_index(t)
    if called == Nucleotides.N_CODE:
        return float(params.log_qual[i, 1, qual - 1]) + LOG_QUARTER
    j = 0 if called == true_base else 1
    return float(params.log_qual[i, j, qual - 1] + params.log_confusion[i, true_base, called])


def penalty_terms(trans: np.ndarray, gamma: float) -> np.ndarray:
    """log(1 + p/gamma) / log(1 + 1/gamma); 0 at p = 0 and 1 at p = 1."""
    return np.log1p(trans / gamma) / math.log1p(1.0 / gamma)


def penalty(params: HmmParams) -> float:
    """Approximate-l0 penalty J summed over every transition entry."""
    return float(penalty_terms(params.trans, params.gamma).sum())


def incoming_mass(params: HmmParams, space: StateSpace, alive: Optional[np.ndarray] = None) -> np.ndarray:
    """Sum over predecessors a' of p(last base of w | a') for every state w.

    With an alive mask only predecessors marked alive contribute.
    """
    last = (space.states & np.uint64(3)).astype(np.int64)
    pred = space.predecessors
    mass = np.zeros(len(space))
    for lead in range(4):
        src = pred[:, lead]
        ok = src >= 0
        if alive is not None:
            ok[ok] = alive[src[ok]]
        mass[ok] += params.trans[src[ok], last[ok]]
    return mass


def initial_state(bases: str, params: HmmParams, space: StateSpace,
                  index: Optional[NeighborhoodIndex] = None,
                  mass: Optional[np.ndarray] = None) -> StateId:
    """Stage-k state for a read: its first kmer when that is an N-free state.

    Otherwise the member of the d-neighbourhood of the first kmer (N read as A)
    with the largest incoming transition mass; ties go to the smallest id.
    Returns -1 when the neighbourhood is empty.
    """
    first = bases[:space.k]
    if 'N' not in first:
        state = space.id_of(encode_kmer(first).bits)
        if state >= 0:
            return state
    center = encode_kmer(first.replace('N', 'A'))
    if index is None:
        index = NeighborhoodIndex(space, params.d)
    members = index.members(center.bits)
    if not members:
        return -1
    if mass is None:
        mass = incoming_mass(params, space)
    return max(members, key=lambda s: (mass[s], -s))


@dataclass
class SuffStats:
    """Expected counts gathered by the E-step; merged by addition.

    Attributes:
        exp_trans: (n, 4) expected transitions per state and appended base
        exp_confusion: (positions, true, called) expected emission counts
        exp_qual: (positions, 2, qmax) expected quality counts, match / mismatch
        occupancy: (n,) expected visits per state, stage 0 included
        loglik: summed log-likelihood of the contributing reads
        reads: reads that contributed
        dead: reads skipped because their trellis died
    """
    exp_trans: np.ndarray
    exp_confusion: np.ndarray
    exp_qual: np.ndarray
    occupancy: np.ndarray
    loglik: float = 0.0
    reads: int = 0
    dead: int = 0

    @classmethod
    def zeros(cls, n_states: int, positions: int, qmax: int) -> 'SuffStats':
        return cls(np.zeros((n_states, 4)), np.zeros((positions, 4, 4)), np.zeros((positions, 2, qmax)),
                   np.zeros(n_states))

    def __add__(self, other: 'SuffStats') -> 'SuffStats':
        return SuffStats(self.exp_trans + other.exp_trans,
                         self.exp_confusion + other.exp_confusion,
                         self.exp_qual + other.exp_qual,
                         self.occupancy + other.occupancy,
                         self.loglik + other.loglik,
                         self.reads + other.reads,
                         self.dead + other.dead)
