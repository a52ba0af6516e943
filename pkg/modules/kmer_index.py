"""
Restricted kmer state space and Hamming neighbourhood queries.

The state space holds every N-free kmer observed in the reads, sorted by
packed value; a state's id is its rank in that order. Successions n(a, b)
count how often kmer a is followed by base b inside a read.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from modules.bases import to_codes
from modules.errors import InputError, KmerError
from modules.kmer import (MAX_K, Kmer, bits_to_string, encode_kmer, hamming_many,
                          kmer_mask, window_bits_matrix)
from modules.parallel import chunk_ranges, map_reduce
from modules.seqio import Read

logger = logging.getLogger(__name__)

StateId = int
# (kmer values, kmer counts, (kmer, next base) pairs, pair counts)
CountTable = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


class StateSpace:
    """Immutable set of observed kmers with succession counts.

    Attributes:
        k: kmer length
        states: sorted uint64 packed kmers; index = state id
        occurrences: times each kmer was observed in any read
        succ_counts: (n, 4) counts n(state, next base)
        successors: (n, 4) id of the kmer reached by appending a base, -1 if not in K
        predecessors: (n, 4) id of the kmer that reaches this one from a leading base, -1 if not in K
    """

    def __init__(self, k: int, states: np.ndarray, occurrences: np.ndarray,
                 succ_counts: np.ndarray) -> None:
        if not 1 <= k <= MAX_K:
            raise KmerError(f"k must be in 1..{MAX_K}, got {k}")
        self.k = k
        self.states = np.ascontiguousarray(states, dtype=np.uint64)
        self.occurrences = np.ascontiguousarray(occurrences, dtype=np.int64)
        self.succ_counts = np.ascontiguousarray(succ_counts, dtype=np.int64).reshape(-1, 4)
        n = self.states.shape[0]
        if n > 1 and not np.all(self.states[1:] > self.states[:-1]):
            raise KmerError("states must be sorted and unique")
        if self.occurrences.shape != (n,) or self.succ_counts.shape != (n, 4):
            raise KmerError("count arrays do not match the number of states")

        mask = np.uint64(kmer_mask(k))
        bases = np.arange(4, dtype=np.uint64)
        succ_bits = (np.left_shift(self.states[:, None], np.uint64(2)) | bases[None, :]) & mask
        self.successors = self.ids_of(succ_bits)
        lead = np.left_shift(bases, np.uint64(2 * (k - 1)))
        pred_bits = np.right_shift(self.states[:, None], np.uint64(2)) | lead[None, :]
        self.predecessors = self.ids_of(pred_bits)
        for table in (self.states, self.occurrences, self.succ_counts,
                      self.successors, self.predecessors):
            table.setflags(write=False)

    @classmethod
    def from_kmers(cls, k: int, kmers: Iterable[int | Kmer]) -> 'StateSpace':
        """State set rebuilt from packed kmers, e.g. from a model file; counts are zero."""
        values = np.unique(np.array([km.bits if isinstance(km, Kmer) else km for km in kmers],
                                    dtype=np.uint64))
        n = values.shape[0]
        return cls(k, values, np.zeros(n, dtype=np.int64), np.zeros((n, 4), dtype=np.int64))

    def __len__(self) -> int:
        return int(self.states.shape[0])

    def __contains__(self, kmer: Kmer) -> bool:
        return kmer.k == self.k and self.id_of(kmer.bits) >= 0

    def id_of(self, bits: int) -> StateId:
        """Dense id of a packed kmer, -1 when it is not a state."""
        pos = int(np.searchsorted(self.states, np.uint64(bits)))
        if pos < len(self) and int(self.states[pos]) == bits:
            return pos
        return -1

    def ids_of(self, bits: np.ndarray) -> np.ndarray:
        """Vectorised id_of; returns int64 ids with -1 for absent kmers."""
        bits = np.asarray(bits, dtype=np.uint64)
        if len(self) == 0:
            return np.full(bits.shape, -1, dtype=np.int64)
        pos = np.searchsorted(self.states, bits)
        clipped = np.minimum(pos, len(self) - 1)
        found = self.states[clipped] == bits
        return np.where(found, clipped, -1).astype(np.int64)

    def kmer(self, state: StateId) -> Kmer:
        return Kmer(self.k, int(self.states[state]))

    def kmer_string(self, state: StateId) -> str:
        return bits_to_string(int(self.states[state]), self.k)

    def restrict(self, keep: np.ndarray) -> 'StateSpace':
        """Sub-space holding the states where keep is True; counts carry over."""
        keep = np.asarray(keep, dtype=bool)
        return StateSpace(self.k, self.states[keep], self.occurrences[keep], self.succ_counts[keep])

    def total_successions(self) -> int:
        return int(self.succ_counts.sum())

    def dump(self, stream: TextIO) -> None:
        """Write one tab-separated line per state: kmer, total count, four successor counts."""
        for i in range(len(self)):
            counts = '\t'.join(str(int(c)) for c in self.succ_counts[i])
            stream.write(f"{self.kmer_string(i)}\t{int(self.occurrences[i])}\t{counts}\n")


def load_state_space(stream: TextIO) -> StateSpace:
    """Inverse of StateSpace.dump."""
    rows: List[Tuple[int, int, List[int]]] = []
    k: Optional[int] = None
    for line_number, line in enumerate(stream, start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        fields = line.split('\t')
        if len(fields) != 6:
            raise InputError(f"state dump line {line_number}: expected 6 fields, got {len(fields)}")
        try:
            kmer = encode_kmer(fields[0])
            counts = [int(f) for f in fields[1:]]
        except (KmerError, ValueError) as exc:
            raise InputError(f"state dump line {line_number}: {exc}") from exc
        if k is None:
            k = kmer.k
        elif kmer.k != k:
            raise InputError(f"state dump line {line_number}: kmer length {kmer.k} != {k}")
        rows.append((kmer.bits, counts[0], counts[1:]))
    if k is None:
        raise InputError("state dump is empty")
    rows.sort()
    return StateSpace(k, np.array([r[0] for r in rows], dtype=np.uint64),
                      np.array([r[1] for r in rows], dtype=np.int64),
                      np.array([r[2] for r in rows], dtype=np.int64))


def _weighted_unique(values: np.ndarray, counts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if values.shape[0] == 0:
        return values, np.zeros(0, dtype=np.int64)
    axis = 0 if values.ndim > 1 else None
    uniq, inverse = np.unique(values, axis=axis, return_inverse=True)
    totals = np.zeros(uniq.shape[0], dtype=np.int64)
    np.add.at(totals, inverse.reshape(-1), counts)
    return uniq, totals


def _count_chunk(reads: Sequence[Read], k: int) -> CountTable:
    """Count kmers and (kmer, next base) adjacencies for a batch of reads."""
    kmers: List[np.ndarray] = []
    pairs: List[np.ndarray] = []
    by_length: Dict[int, List[str]] = {}
    for read in reads:
        by_length.setdefault(len(read), []).append(read.bases)
    for length, seqs in by_length.items():
        codes = to_codes(''.join(seqs)).reshape(len(seqs), length)
        bits, valid = window_bits_matrix(codes, k)
        kmers.append(bits[valid])
        # an adjacency needs both the window and the one after it N-free
        adjacent = valid[:, :-1] & valid[:, 1:]
        next_base = codes[:, k:].astype(np.uint64)
        pairs.append(np.stack([bits[:, :-1][adjacent], next_base[adjacent]], axis=1))
    if not kmers:
        empty = np.zeros(0, dtype=np.uint64)
        return empty, np.zeros(0, dtype=np.int64), np.zeros((0, 2), dtype=np.uint64), np.zeros(0, dtype=np.int64)
    all_kmers = np.concatenate(kmers)
    all_pairs = np.concatenate(pairs).reshape(-1, 2)
    kv, kc = _weighted_unique(all_kmers, np.ones(all_kmers.shape[0], dtype=np.int64))
    pv, pc = _weighted_unique(all_pairs, np.ones(all_pairs.shape[0], dtype=np.int64))
    return kv, kc, pv.reshape(-1, 2), pc


def _merge_counts(a: CountTable, b: CountTable) -> CountTable:
    kv, kc = _weighted_unique(np.concatenate([a[0], b[0]]), np.concatenate([a[1], b[1]]))
    pv, pc = _weighted_unique(np.concatenate([a[2], b[2]]).reshape(-1, 2), np.concatenate([a[3], b[3]]))
    return kv, kc, pv.reshape(-1, 2), pc


def build_state_space(reads: Sequence[Read], k: int, threads: int = 1) -> StateSpace:
    """Collect every N-free kmer of the reads and count its successions.

    Args:
        reads: training reads (N allowed; windows touching N are skipped)
        k: kmer length
        threads: worker processes for counting

    Returns:
        the StateSpace; identical for any read order or thread count

    Raises:
        KmerError: k outside 1..32 or longer than the shortest read
    """
    if not 1 <= k <= MAX_K:
        raise KmerError(f"k must be in 1..{MAX_K}, got {k}")
    if not reads:
        raise InputError("no reads to build a state space from")
    shortest = min(len(r) for r in reads)
    if k > shortest:
        raise KmerError(f"k={k} exceeds the shortest read length {shortest}")

    ranges = chunk_ranges(len(reads), threads * 4 if threads > 1 else 1)
    tables = [(list(reads[a:b]), k) for a, b in ranges]
    kv, kc, pv, pc = map_reduce(_count_chunk, _merge_counts, tables, processes=threads)

    succ = np.zeros((kv.shape[0], 4), dtype=np.int64)
    if pv.shape[0]:
        rows = np.searchsorted(kv, pv[:, 0])
        succ[rows, pv[:, 1].astype(np.int64)] = pc
    space = StateSpace(k, kv, kc, succ)
    logger.info("Built state space: k=%d, %d states, %d successions from %d reads",
                k, len(space), space.total_successions(), len(reads))
    return space


def suggest_kmer_length(genome_length: int) -> int:
    """Smallest k for which a random kmer is unlikely to recur by chance: 2|G|/4^k <= 0.01."""
    if genome_length < 1:
        raise InputError("genome length must be positive")
    for k in range(1, MAX_K + 1):
        if 2 * genome_length <= 0.01 * 4 ** k:
            return k
    return MAX_K


def substitution_masks(length: int, max_d: int) -> np.ndarray:
    """XOR masks turning a packed kmer of this length into every kmer within max_d substitutions."""
    masks = [0]
    for d in range(1, min(max_d, length) + 1):
        for positions in itertools.combinations(range(length), d):
            shifts = [2 * (length - 1 - p) for p in positions]
            for flips in itertools.product((1, 2, 3), repeat=d):
                m = 0
                for s, f in zip(shifts, flips):
                    m |= f << s
                masks.append(m)
    return np.array(masks, dtype=np.uint64)


@dataclass(frozen=True)
class Neighborhood:
    """States within Hamming radius d of an observed kmer."""
    center: Kmer
    d: int
    members: Tuple[StateId, ...]


class _PartIndex:
    """CSR map from the bases of one slice of the kmer to the states carrying them."""

    def __init__(self, states: np.ndarray, shift: int, length: int) -> None:
        self.shift = np.uint64(shift)
        self.key_mask = np.uint64(kmer_mask(length))
        keys = np.right_shift(states, self.shift) & self.key_mask
        order = np.argsort(keys, kind='stable')
        sorted_keys = keys[order]
        self.keys, starts = np.unique(sorted_keys, return_index=True)
        self.offsets = np.append(starts, sorted_keys.shape[0]).astype(np.int64)
        self.ids = order.astype(np.int64)

    def lookup(self, center: int, masks: np.ndarray) -> np.ndarray:
        part = np.right_shift(np.uint64(center), self.shift) & self.key_mask
        probes = np.unique(part ^ masks)
        pos = np.searchsorted(self.keys, probes)
        inside = pos < self.keys.shape[0]
        pos, probes = pos[inside], probes[inside]
        pos = pos[self.keys[pos] == probes]
        if pos.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([self.ids[self.offsets[p]:self.offsets[p + 1]] for p in pos])


class NeighborhoodIndex:
    """Memoised d-neighbourhood queries against one StateSpace.

    Radius 2 or less probes every substitution of the centre. Larger radii
    split the kmer in two halves: a kmer within distance d agrees with the
    centre to within d // 2 substitutions on at least one half, so both
    halves are probed that way and the union filtered by exact distance.
    """

    def __init__(self, space: StateSpace, d: int) -> None:
        if d < 0:
            raise ValueError(f"neighbourhood radius must be >= 0, got {d}")
        self.space = space
        self.d = d
        self._cache: Dict[int, Tuple[StateId, ...]] = {}
        self._all = tuple(range(len(space)))
        k = space.k
        self._masks: Optional[np.ndarray] = None
        self._parts: List[Tuple[_PartIndex, np.ndarray]] = []
        if d >= k:
            pass
        elif d <= 2:
            self._masks = substitution_masks(k, d)
        else:
            head = k // 2
            tail = k - head
            half = d // 2
            self._parts = [
                (_PartIndex(space.states, 2 * tail, head), substitution_masks(head, half)),
                (_PartIndex(space.states, 0, tail), substitution_masks(tail, half)),
            ]

    def members(self, bits: int) -> Tuple[StateId, ...]:
        """Ids of states within distance d of the packed centre, ascending."""
        hit = self._cache.get(bits)
        if hit is not None:
            return hit
        return self._cache.setdefault(bits, self._compute(bits))

    def _compute(self, bits: int) -> Tuple[StateId, ...]:
        space = self.space
        if len(space) == 0:
            return ()
        if self.d >= space.k:
            return self._all
        if self._masks is not None:
            ids = space.ids_of(np.uint64(bits) ^ self._masks)
            return tuple(int(i) for i in np.unique(ids[ids >= 0]))
        candidates = np.unique(np.concatenate([part.lookup(bits, masks) for part, masks in self._parts]))
        if candidates.size == 0:
            return ()
        close = hamming_many(bits, space.states[candidates]) <= self.d
        return tuple(int(i) for i in candidates[close])

    def cache_size(self) -> int:
        return len(self._cache)


def neighborhood(center: Kmer, d: int, space: StateSpace,
                 index: Optional[NeighborhoodIndex] = None) -> Neighborhood:
    """States of K within Hamming radius d of center, in ascending id order."""
    if center.k != space.k:
        raise KmerError(f"centre has k={center.k}, state space has k={space.k}")
    if not 0 <= d <= space.k:
        raise ValueError(f"d must be in 0..{space.k}, got {d}")
    if index is None or index.space is not space or index.d != d:
        index = NeighborhoodIndex(space, d)
    return Neighborhood(center, d, index.members(center.bits))
