"""
Neighbourhood-pruned trellis over kmer states.

Stage 0 holds the fixed initial state s_k. Stage i (1..m, m = |read| - k)
holds the states allowed for the observed window x[i:i+k]; entering a state
at stage i emits read position t = k + i, whose called base and quality are
scored against the state's last base. Edges carry log p(b | src) plus that
emission, so forward/backward and Viterbi are plain sums over edges.

The stages are small (tens of states): edges are walked as Python lists and
each stage is reduced with one logsumexp call over a (states, 4) array.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from modules.errors import DecodeFailure
from modules.hmm_params import HmmParams, SuffStats
from modules.kmer import window_bits
from modules.kmer_index import NeighborhoodIndex, StateId, StateSpace
from modules.seqio import Read

logger = logging.getLogger(__name__)

NEG_INF = float('-inf')

# (src position in previous stage, dst position in this stage, appended base, edge log weight)
Edge = Tuple[int, int, int, float]


class DecodeTables:
    """Python-list views of the parameter tables used by the inner loops."""

    def __init__(self, params: HmmParams, space: StateSpace) -> None:
        if params.trans.shape[0] != len(space):
            raise ValueError(f"{params.trans.shape[0]} transition rows for {len(space)} states")
        self.k = space.k
        self.read_length = params.read_length
        self.qmax = params.qmax
        self.successors: List[List[int]] = space.successors.tolist()
        self.log_trans: List[List[float]] = params.log_trans.tolist()
        self.emission = params.emission_table


@dataclass
class Trellis:
    """Active states per stage and the edges between consecutive stages.

    Attributes:
        stages: state ids per stage, ascending; stages[0] = [initial state]
        edges: edges[i - 1] links stage i - 1 to stage i
        called: called base codes at positions k+1..|read|
        quals: qualities at the same positions
    """
    stages: List[List[StateId]]
    edges: List[List[Edge]]
    called: List[int]
    quals: List[int]

    @property
    def n_stages(self) -> int:
        return len(self.stages)


def check_length(read: Read, tables: DecodeTables) -> None:
    if not tables.k < len(read) <= tables.read_length:
        raise DecodeFailure(DecodeFailure.UNSUPPORTED_LENGTH, 0,
                            f"read length {len(read)} outside {tables.k + 1}..{tables.read_length}")


def build_trellis(read: Read, initial: StateId, tables: DecodeTables,
                  index: Optional[NeighborhoodIndex]) -> Trellis:
    """Expand the trellis stage by stage.

    Args:
        read: read to align; N is scored as an uninformative call
        initial: stage-0 state id
        tables: parameter views
        index: neighbourhood index; None allows every state of K at every stage

    Raises:
        DecodeFailure: a stage has no reachable allowed state, or the read length is unsupported
    """
    check_length(read, tables)
    k = tables.k
    codes = read.codes()
    bits, _ = window_bits(codes, k)  # N counts as A in the window
    called = codes[k:].tolist()
    quals = list(read.quals[k:])
    successors = tables.successors
    log_trans = tables.log_trans
    emission = tables.emission

    stages: List[List[StateId]] = [[initial]]
    edges: List[List[Edge]] = []
    for i in range(1, len(codes) - k + 1):
        allowed = set(index.members(int(bits[i]))) if index is not None else None
        emit = emission[i - 1][called[i - 1]][quals[i - 1] - 1]
        reached: List[Tuple[int, StateId, int, float]] = []
        for src_pos, src in enumerate(stages[-1]):
            succ = successors[src]
            row = log_trans[src]
            for b in range(4):
                dst = succ[b]
                if dst < 0 or row[b] == NEG_INF or emit[b] == NEG_INF:
                    continue
                if allowed is not None and dst not in allowed:
                    continue
                reached.append((src_pos, dst, b, row[b] + emit[b]))
        if not reached:
            raise DecodeFailure(DecodeFailure.DEAD_TRELLIS, i - 1)
        stage = sorted({dst for _, dst, _, _ in reached})
        where = {s: pos for pos, s in enumerate(stage)}
        stages.append(stage)
        edges.append([(src_pos, where[dst], b, w) for src_pos, dst, b, w in reached])
    return Trellis(stages, edges, called, quals)


def _stage_logsumexp(rows: List[List[float]]) -> List[float]:
    """logsumexp of every row; a row of -inf gives -inf."""
    with np.errstate(divide='ignore'):
        return logsumexp(np.array(rows, dtype=np.float64).reshape(-1, 4), axis=1).tolist()


def forward(trellis: Trellis) -> List[List[float]]:
    alpha: List[List[float]] = [[0.0]]
    for i, stage_edges in enumerate(trellis.edges, start=1):
        # a state has at most four predecessors, one per leading base
        incoming = [[NEG_INF] * 4 for _ in trellis.stages[i]]
        filled = [0] * len(trellis.stages[i])
        prev = alpha[-1]
        for src_pos, dst_pos, _, w in stage_edges:
            incoming[dst_pos][filled[dst_pos]] = prev[src_pos] + w
            filled[dst_pos] += 1
        alpha.append(_stage_logsumexp(incoming))
    return alpha


def backward(trellis: Trellis) -> List[List[float]]:
    beta: List[List[float]] = [[0.0] * len(trellis.stages[-1])]
    for i in range(len(trellis.edges), 0, -1):
        outgoing = [[NEG_INF] * 4 for _ in trellis.stages[i - 1]]
        nxt = beta[0]
        for src_pos, dst_pos, b, w in trellis.edges[i - 1]:
            outgoing[src_pos][b] = w + nxt[dst_pos]
        beta.insert(0, _stage_logsumexp(outgoing))
    return beta


def e_step_read(params: HmmParams, read: Read, space: StateSpace, initial: StateId,
                stats: Optional[SuffStats] = None, tables: Optional[DecodeTables] = None,
                index: Optional[NeighborhoodIndex] = None) -> Tuple[SuffStats, float]:
    """Forward-backward on one read, adding its expected counts to stats.

    Args:
        params: current model
        read: training read
        space: state space the params are aligned with
        initial: fixed stage-k state
        stats: accumulator; a fresh one is created when None
        tables: cached list views of params
        index: neighbourhood index for params.d; built when None

    Returns:
        (stats, log P(x_{k+1..L}, y_{k+1..L} | s_k = initial))

    Raises:
        DecodeFailure: dead trellis or unsupported read length
    """
    if tables is None:
        tables = DecodeTables(params, space)
    if index is None:
        index = NeighborhoodIndex(space, params.d)
    if stats is None:
        stats = SuffStats.zeros(len(space), params.n_positions, params.qmax)
    trellis = build_trellis(read, initial, tables, index)
    alpha = forward(trellis)
    beta = backward(trellis)
    with np.errstate(divide='ignore'):
        loglik = float(logsumexp(alpha[-1]))
    if loglik == NEG_INF:
        raise DecodeFailure(DecodeFailure.DEAD_TRELLIS, trellis.n_stages - 1, "zero likelihood")

    exp_trans = stats.exp_trans
    occupancy = stats.occupancy
    occupancy[initial] += 1.0
    for i, stage_edges in enumerate(trellis.edges, start=1):
        src_states = trellis.stages[i - 1]
        dst_states = trellis.stages[i]
        a = alpha[i - 1]
        bt = beta[i]
        by_base = [0.0, 0.0, 0.0, 0.0]
        for src_pos, dst_pos, b, w in stage_edges:
            post = math.exp(a[src_pos] + w + bt[dst_pos] - loglik)
            exp_trans[src_states[src_pos], b] += post
            occupancy[dst_states[dst_pos]] += post
            by_base[b] += post
        called = trellis.called[i - 1]
        q = trellis.quals[i - 1] - 1
        for b in range(4):
            if by_base[b] == 0.0:
                continue
            if called < 4:
                stats.exp_confusion[i - 1, b, called] += by_base[b]
            stats.exp_qual[i - 1, 0 if b == called else 1, q] += by_base[b]
    stats.loglik += loglik
    stats.reads += 1
    return stats, loglik


def viterbi(trellis: Trellis) -> Tuple[List[StateId], float]:
    """Best path through the trellis.

    Ties go to the smallest predecessor state id at each merge and to the
    smallest final state id.
    """
    score: List[float] = [0.0]
    back: List[List[int]] = []
    for i, stage_edges in enumerate(trellis.edges, start=1):
        n = len(trellis.stages[i])
        best = [NEG_INF] * n
        arg = [-1] * n
        # edges are grouped by ascending src position, i.e. ascending src id
        for src_pos, dst_pos, _, w in stage_edges:
            v = score[src_pos] + w
            if v > best[dst_pos]:
                best[dst_pos] = v
                arg[dst_pos] = src_pos
        score = best
        back.append(arg)
    end = 0
    for pos in range(1, len(score)):
        if score[pos] > score[end]:
            end = pos
    final = score[end]
    positions = [end]
    for arg in reversed(back):
        positions.append(arg[positions[-1]])
    positions.reverse()
    path = [trellis.stages[i][p] for i, p in enumerate(positions)]
    return path, final
