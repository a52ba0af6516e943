"""
Penalized Baum-Welch.

Each iteration runs the neighbourhood-constrained E-step over every training
read (in parallel, merged in read order), then re-estimates emissions by
relative frequency and transitions with the penalized row solver. Between
iterations K loses every state no read visited and, repeatedly, every state
the new transitions can no longer reach. Initial states of reads always stay,
so the penalized objective never decreases.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from modules.errors import DecodeFailure, TrainingError
from modules.hmm_params import (HmmParams, SuffStats, incoming_mass, init_params, penalty)
from modules.kmer import encode_kmer
from modules.kmer_index import NeighborhoodIndex, StateSpace
from modules.parallel import WorkerPool, chunk_ranges, worker_state
from modules.penalized import m_step_transition_rows
from modules.seqio import Read
from modules.trellis import DecodeTables, e_step_read

logger = logging.getLogger(__name__)


@dataclass
class TraceRow:
    """Scores of the parameters entering one iteration."""
    iteration: int
    loglik: float
    penalty: float
    objective: float
    nonzero_transitions: int
    states: int
    trained_reads: int
    dead_reads: int


@dataclass
class FitResult:
    params: HmmParams
    space: StateSpace
    trace: List[TraceRow] = field(default_factory=list)
    converged: bool = False


def m_step_emissions(stats: SuffStats) -> Tuple[np.ndarray, np.ndarray]:
    """Relative-frequency confusion matrices and quality PMFs.

    Returns:
        (confusion, qual) shaped like HmmParams; empty rows fall back to uniform
    """
    conf_tot = stats.exp_confusion.sum(axis=2, keepdims=True)
    confusion = np.where(conf_tot > 0, stats.exp_confusion / np.where(conf_tot > 0, conf_tot, 1.0), 0.25)
    qual_tot = stats.exp_qual.sum(axis=2, keepdims=True)
    qmax = stats.exp_qual.shape[2]
    qual = np.where(qual_tot > 0, stats.exp_qual / np.where(qual_tot > 0, qual_tot, 1.0), 1.0 / qmax)
    return confusion, qual


def _install_training(space: StateSpace, d: int, reads: Sequence[Read], initials: Sequence[int]) -> None:
    worker_state['space'] = space
    worker_state['index'] = NeighborhoodIndex(space, d)
    worker_state['reads'] = reads
    worker_state['initials'] = initials


def _e_step_chunk(params: HmmParams, start: int, stop: int) -> SuffStats:
    space: StateSpace = worker_state['space']
    index: NeighborhoodIndex = worker_state['index']
    reads: Sequence[Read] = worker_state['reads']
    initials: Sequence[int] = worker_state['initials']
    tables = DecodeTables(params, space)
    stats = SuffStats.zeros(len(space), params.n_positions, params.qmax)
    for r in range(start, stop):
        try:
            e_step_read(params, reads[r], space, initials[r], stats, tables, index)
        except DecodeFailure as exc:
            stats.dead += 1
            logger.debug("Skipping read %s in E-step: %s", reads[r].id, exc)
    return stats


def trainable_reads(reads: Sequence[Read], k: int) -> List[Read]:
    """N-free reads long enough to have at least one transition."""
    return [r for r in reads if not r.has_n() and len(r) > k]


def _prune_mask(params: HmmParams, space: StateSpace, occupancy: np.ndarray,
                protected: np.ndarray) -> np.ndarray:
    """States to keep after an M-step.

    A state no read visited under the old parameters is dropped, then every
    state left without incoming probability from the survivors, until no
    more go. Protected states always stay.
    """
    keep = (occupancy > 0) | protected
    while True:
        cut = keep & ~protected & (incoming_mass(params, space, keep) == 0)
        if not np.any(cut):
            return keep
        keep &= ~cut


def fit(reads: Sequence[Read], space: StateSpace, lam: float, gamma: float, d: int,
        max_iters: int = 30, tol: float = 1e-5, threads: int = 1, qmax: Optional[int] = None,
        prune_floor: float = 1e-8) -> FitResult:
    """Fit the HMM by penalized EM.

    Args:
        reads: reads; those containing N or shorter than k + 1 are left out
        space: state space built from the reads
        lam: penalty weight
        gamma: penalty scale
        d: neighbourhood radius used in the E-step
        max_iters: number of M-steps at most
        tol: stop when the penalized objective changes by less than this, relatively
        threads: worker processes for the E-step
        qmax: quality support; defaults to the largest observed quality
        prune_floor: transition entries below this become exactly zero

    Returns:
        FitResult with the final parameters, the (possibly pruned) state space
        and one trace row per evaluated parameter set

    Raises:
        TrainingError: no read could be used
    """
    train = trainable_reads(reads, space.k)
    if not train:
        raise TrainingError("no trainable reads (all contain N or are shorter than k + 1)")
    read_length = max(len(r) for r in train)
    if qmax is None:
        qmax = max(max(r.quals) for r in train)
    params = init_params(space, read_length, qmax, gamma, lam, d)

    # first kmers are fixed for the whole fit
    initials = [space.id_of(encode_kmer(r.bases[:space.k]).bits) for r in train]
    keep_reads = [i for i, s in enumerate(initials) if s >= 0]
    if len(keep_reads) < len(train):
        logger.warning("%d reads start with a kmer outside K and are not trained on",
                       len(train) - len(keep_reads))
        train = [train[i] for i in keep_reads]
        initials = [initials[i] for i in keep_reads]
    if not train:
        raise TrainingError("no read starts with a kmer of the state space")
    initial_arr = np.array(initials, dtype=np.int64)
    logger.info("Training on %d reads, L=%d, Qmax=%d, |K|=%d, lambda=%g, gamma=%g, d=%d",
                len(train), read_length, qmax, len(space), lam, gamma, d)

    ranges = chunk_ranges(len(train), threads * 4 if threads > 1 else 1)
    result = FitResult(params, space)
    previous: Optional[float] = None
    pool = WorkerPool(threads, _install_training, (space, d, train, initials))
    try:
        for iteration in range(max_iters + 1):
            stats = pool.map_reduce(_e_step_chunk, SuffStats.__add__,
                                    [(params, a, b) for a, b in ranges])
            if stats.reads == 0:
                raise TrainingError(f"every training read has a dead trellis at iteration {iteration}")
            j = penalty(params)
            row = TraceRow(iteration, stats.loglik, j, stats.loglik - lam * j,
                           params.nonzero_transitions(), len(space), stats.reads, stats.dead)
            result.trace.append(row)
            logger.info("EM %d: loglik=%.6f penalty=%.3f objective=%.6f nonzero=%d states=%d dead=%d",
                        iteration, row.loglik, row.penalty, row.objective,
                        row.nonzero_transitions, row.states, row.dead_reads)
            if stats.dead:
                logger.warning("EM %d: %d reads skipped with a dead trellis", iteration, stats.dead)

            if previous is not None and abs(row.objective - previous) <= tol * abs(previous):
                result.converged = True
                break
            if iteration == max_iters:
                break
            previous = row.objective

            trans = m_step_transition_rows(stats.exp_trans, lam, gamma, prune_floor, previous=params.trans)
            confusion, qual = m_step_emissions(stats)
            params = HmmParams(space.k, d, gamma, lam, read_length, qmax, trans, confusion, qual)

            protected = np.zeros(len(space), dtype=bool)
            protected[initial_arr] = True
            keep = _prune_mask(params, space, stats.occupancy, protected)
            if not np.all(keep):
                new_ids = np.cumsum(keep) - 1
                space = space.restrict(keep)
                params = params.restrict(keep)
                initial_arr = new_ids[initial_arr]
                initials = initial_arr.tolist()
                logger.info("EM %d: pruned %d states, %d remain", iteration, int((~keep).sum()), len(space))
                pool.close()
                pool = WorkerPool(threads, _install_training, (space, d, train, initials))
    finally:
        pool.close()

    result.params = params
    result.space = space
    if not result.converged:
        logger.info("EM stopped after %d iterations without reaching tol=%g", max_iters, tol)
    return result
