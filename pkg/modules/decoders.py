"""
Read correction by approximate Viterbi and by Fano sequential decoding.

A-Viterbi searches the neighbourhood-pruned trellis exhaustively (natural
log scores). Fano walks the 4-ary tree of kmer successions depth first with
a running metric

    M_s = M_c + log2 p(b | state) + log2 emission + B

and a threshold T moved in steps of Delta, backing up when the best
remaining branch falls below T. Fano is not restricted to the Hamming
neighbourhood, and scores a called N as uninformative; A-Viterbi reads N
as A.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from modules.config import RunConfig
from modules.errors import DecodeFailure, InputError, KmerError
from modules.evaluation import GroundTruth
from modules.hmm_params import HmmParams, incoming_mass, initial_state
from modules.kmer import Kmer, bits_to_string, encode_kmer, kmer_mask
from modules.kmer_index import NeighborhoodIndex, StateId, StateSpace
from modules.parallel import WorkerPool, chunk_ranges, worker_state
from modules.seqio import Read
from modules.trellis import NEG_INF, DecodeTables, build_trellis, check_length, viterbi

logger = logging.getLogger(__name__)

LOG2_E = 1.0 / math.log(2.0)


@dataclass
class DecodeResult:
    """Decoded read.

    Attributes:
        corrected: corrected bases, same length as the read
        path: state ids for stages k..L
        score: natural-log path likelihood (A-Viterbi) or final Fano metric (Fano)
        visited: forward moves / expanded nodes
        backtracks: back moves (Fano)
        threshold_lowerings: times T was lowered (Fano)
    """
    corrected: str
    path: List[StateId]
    score: float
    visited: int = 0
    backtracks: int = 0
    threshold_lowerings: int = 0


@dataclass(frozen=True)
class FanoConfig:
    """Fano step Delta, bias B and node budget (None: 64 forward moves per stage)."""
    delta: float = 0.5
    bias: float = 2.0
    max_visits: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.max_visits is not None and self.max_visits <= 0:
            raise ValueError(f"max_visits must be > 0, got {self.max_visits}")


def reconstruct_read(path: Sequence[Kmer]) -> str:
    """First kmer followed by the last base of every later state.

    Raises:
        KmerError: consecutive kmers do not overlap by k - 1 bases
    """
    if not path:
        raise KmerError("empty path")
    k = path[0].k
    overlap = kmer_mask(k - 1)
    pieces = [bits_to_string(path[0].bits, k)]
    for prev, cur in zip(path, path[1:]):
        if cur.k != k or (prev.bits & overlap) != (cur.bits >> 2):
            raise KmerError(f"{prev} and {cur} do not overlap by {k - 1} bases")
        pieces.append('ACGT'[cur.bits & 3])
    return ''.join(pieces)


def _path_bases(path: Sequence[StateId], space: StateSpace) -> str:
    return reconstruct_read([space.kmer(s) for s in path])


def _check_initial(initial: StateId, space: StateSpace) -> None:
    if not 0 <= initial < len(space):
        raise DecodeFailure(DecodeFailure.DEAD_TRELLIS, 0, "initial state is not in K")


def aviterbi_decode(read: Read, params: HmmParams, space: StateSpace, d: int, initial: StateId,
                    tables: Optional[DecodeTables] = None,
                    index: Optional[NeighborhoodIndex] = None) -> DecodeResult:
    """Most likely state path whose stage-t state lies within distance d of x_t.

    N is replaced by A before decoding.

    Raises:
        DecodeFailure: dead trellis (with the last live stage) or unsupported length
    """
    if tables is None:
        tables = DecodeTables(params, space)
    _check_initial(initial, space)
    if d >= space.k:
        index = None
    elif index is None or index.d != d or index.space is not space:
        index = NeighborhoodIndex(space, d)
    trellis = build_trellis(read.with_bases(read.bases.replace('N', 'A')), initial, tables, index)
    path, score = viterbi(trellis)
    visited = sum(len(stage) for stage in trellis.stages)
    return DecodeResult(_path_bases(path, space), path, score, visited=visited)


def fano_metric_update(m_c: float, trans_logprob2: float, emit_logprob2: float, bias: float) -> float:
    """M_s = M_c + log2 a + log2 xi + B."""
    return m_c + trans_logprob2 + emit_logprob2 + bias


def tighten_threshold(metric: float, delta: float, steps: int) -> int:
    """Largest n >= steps with n * delta <= metric, so that T <= M_c < T + delta."""
    n = math.floor(metric / delta)
    while n * delta > metric:
        n -= 1
    while (n + 1) * delta <= metric:
        n += 1
    return max(n, steps)


def fano_decode(read: Read, params: HmmParams, space: StateSpace, config: FanoConfig,
                initial: StateId, tables: Optional[DecodeTables] = None) -> DecodeResult:
    """Fano sequential decoding from the initial state to depth |read| - k.

    The threshold is kept as an integer count of Delta steps. Successors at a
    node are ranked by metric, ties by ascending base; a back move resumes
    the parent at its next rank, and lowering the threshold restarts the
    current node at rank 0.

    Raises:
        DecodeFailure: budget exhausted, no successor at the root, or unsupported length
    """
    if tables is None:
        tables = DecodeTables(params, space)
    _check_initial(initial, space)
    check_length(read, tables)
    k = tables.k
    codes = read.codes()
    called = codes[k:].tolist()
    quals = list(read.quals[k:])
    depth_max = len(called)
    budget = config.max_visits if config.max_visits is not None else 64 * (tables.read_length - k)
    delta = config.delta
    bias = config.bias
    successors = tables.successors
    log_trans = tables.log_trans
    emission = tables.emission

    def candidates(state: StateId, depth: int, metric: float) -> List[Tuple[float, int, StateId]]:
        emit = emission[depth][called[depth]][quals[depth] - 1]
        out = []
        row = log_trans[state]
        for b in range(4):
            dst = successors[state][b]
            if dst < 0 or row[b] == NEG_INF or emit[b] == NEG_INF:
                continue
            out.append((fano_metric_update(metric, row[b] * LOG2_E, emit[b] * LOG2_E, bias), b, dst))
        out.sort(key=lambda c: (-c[0], c[1]))
        return out

    path = [initial]
    metrics = [0.0]
    ranks = [0]
    cands = [candidates(initial, 0, 0.0)] if depth_max else []
    if depth_max and not cands[0]:
        raise DecodeFailure(DecodeFailure.DEAD_TRELLIS, 0, "no successor of the initial state")
    steps = 0  # T = steps * delta
    visited = backtracks = lowerings = 0
    depth = 0
    while depth < depth_max:
        options = cands[depth]
        rank = ranks[depth]
        m_next = options[rank][0] if rank < len(options) else NEG_INF
        if m_next >= steps * delta:
            # forward move
            visited += 1
            if visited > budget:
                raise DecodeFailure(DecodeFailure.BUDGET_EXCEEDED, depth,
                                    f"{budget} forward moves, {backtracks} back moves")
            m_cur = metrics[depth]
            _, _, dst = options[rank]
            depth += 1
            del path[depth:], metrics[depth:], ranks[depth:], cands[depth:]
            path.append(dst)
            metrics.append(m_next)
            ranks.append(0)
            if m_cur < (steps + 1) * delta:
                # first visit of this node under the current threshold
                steps = tighten_threshold(m_next, delta, steps)
            if depth < depth_max:
                cands.append(candidates(dst, depth, m_next))
            continue
        # look back
        if depth == 0 or metrics[depth - 1] < steps * delta:
            steps -= 1
            lowerings += 1
            ranks[depth] = 0
            continue
        depth -= 1
        backtracks += 1
        ranks[depth] += 1
    return DecodeResult(_path_bases(path, space), path, metrics[-1], visited, backtracks, lowerings)


@dataclass
class DiagnosticRow:
    read_id: str
    decoder: str
    status: str
    score: float = math.nan
    visited: int = 0
    backtracks: int = 0
    threshold_lowerings: int = 0
    changed: int = 0


DIAGNOSTIC_COLUMNS = ('read_id', 'decoder', 'status', 'score', 'visited', 'backtracks',
                      'threshold_lowerings', 'changed')


def format_diagnostics(rows: Iterable[DiagnosticRow], header_lines: Optional[List[str]] = None) -> str:
    lines = list(header_lines or [])
    lines.append('\t'.join(DIAGNOSTIC_COLUMNS))
    for r in rows:
        lines.append(f"{r.read_id}\t{r.decoder}\t{r.status}\t{r.score!r}\t{r.visited}\t"
                     f"{r.backtracks}\t{r.threshold_lowerings}\t{r.changed}")
    return '\n'.join(lines) + '\n'


def read_diagnostics(path: str) -> List[DiagnosticRow]:
    """Rows of a diagnostics TSV written by format_diagnostics.

    Raises:
        InputError: a row does not have the expected columns
    """
    rows: List[DiagnosticRow] = []
    with open(path, 'r') as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.rstrip('\r\n')
            if not line or line.startswith('#') or line.startswith(DIAGNOSTIC_COLUMNS[0] + '\t'):
                continue
            fields = line.split('\t')
            if len(fields) != len(DIAGNOSTIC_COLUMNS):
                raise InputError(f"{path}:{line_number}: expected {len(DIAGNOSTIC_COLUMNS)} fields, "
                                 f"got {len(fields)}")
            try:
                rows.append(DiagnosticRow(fields[0], fields[1], fields[2], float(fields[3]),
                                          *(int(v) for v in fields[4:])))
            except ValueError as exc:
                raise InputError(f"{path}:{line_number}: {exc}") from None
    return rows


def summarize_diagnostics(rows: Iterable[DiagnosticRow]) -> dict:
    """Count of reads per status, e.g. {'ok': 980, 'dead_trellis': 20}."""
    counts: dict = {}
    for r in rows:
        counts[r.status] = counts.get(r.status, 0) + 1
    return counts


def _install_decoding(params: HmmParams, space: StateSpace, config: RunConfig) -> None:
    worker_state['params'] = params
    worker_state['space'] = space
    worker_state['config'] = config
    worker_state['tables'] = DecodeTables(params, space)
    worker_state['index'] = NeighborhoodIndex(space, config.d)
    worker_state['mass'] = incoming_mass(params, space)


def decode_one(read: Read, first_kmer: Optional[str]) -> Tuple[Read, DiagnosticRow]:
    """Decode a read with the installed model; failures pass the read through."""
    params: HmmParams = worker_state['params']
    space: StateSpace = worker_state['space']
    config: RunConfig = worker_state['config']
    tables: DecodeTables = worker_state['tables']
    index: NeighborhoodIndex = worker_state['index']
    try:
        if len(read) < space.k:
            raise DecodeFailure(DecodeFailure.UNSUPPORTED_LENGTH, 0, f"read shorter than k={space.k}")
        if first_kmer is not None:
            try:
                initial = space.id_of(encode_kmer(first_kmer[:space.k]).bits)
            except KmerError:
                initial = -1
        else:
            initial = initial_state(read.bases, params, space, index, worker_state['mass'])
        _check_initial(initial, space)
        scored = read
        if max(read.quals, default=1) > params.qmax:
            # qualities above the model's support are scored as Qmax
            scored = Read(read.id, read.bases, tuple(min(q, params.qmax) for q in read.quals))
        if config.decoder == 'fano':
            fano = FanoConfig(config.delta, config.bias,
                              config.max_visits_factor * (params.read_length - space.k))
            result = fano_decode(scored, params, space, fano, initial, tables)
        else:
            result = aviterbi_decode(scored, params, space, config.d, initial, tables, index)
    except DecodeFailure as exc:
        logger.debug("Read %s left uncorrected: %s", read.id, exc)
        return read, DiagnosticRow(read.id, config.decoder, exc.reason)
    corrected = read.with_bases(result.corrected)
    changed = sum(a != b for a, b in zip(read.bases, result.corrected))
    return corrected, DiagnosticRow(read.id, config.decoder, 'ok', result.score, result.visited,
                                    result.backtracks, result.threshold_lowerings, changed)


def _decode_chunk(reads: Sequence[Read], first_kmers: Sequence[Optional[str]]) -> List[Tuple[Read, DiagnosticRow]]:
    return [decode_one(r, f) for r, f in zip(reads, first_kmers)]


def _concat(a: list, b: list) -> list:
    return a + b


def correct_reads(reads: Sequence[Read], params: HmmParams, space: StateSpace, config: RunConfig,
                  truth: Optional[GroundTruth] = None) -> Tuple[List[Read], List[DiagnosticRow]]:
    """Decode every read, in parallel, keeping input order.

    Args:
        reads: reads to correct
        params: fitted model
        space: its state space
        config: decoder, d, Fano settings, threads, first-kmer policy
        truth: required when config.first_kmer == 'truth'; supplies each read's true first kmer

    Returns:
        (corrected reads, one diagnostics row per read)
    """
    if config.k != params.k:
        raise KmerError(f"config k={config.k} does not match model k={params.k}")
    if config.first_kmer == 'truth':
        if truth is None:
            raise ValueError("first_kmer=truth needs ground truth")
        first_kmers: List[Optional[str]] = [truth[r.id].true_bases[:params.k] for r in reads]
    else:
        first_kmers = [None] * len(reads)
    if not reads:
        return [], []
    ranges = chunk_ranges(len(reads), config.threads * 4 if config.threads > 1 else 1)
    with WorkerPool(config.threads, _install_decoding, (params, space, config)) as pool:
        pairs = pool.map_reduce(_decode_chunk, _concat,
                                [(list(reads[a:b]), first_kmers[a:b]) for a, b in ranges])
    corrected = [p[0] for p in pairs]
    rows = [p[1] for p in pairs]
    summary = summarize_diagnostics(rows)
    failed = len(rows) - summary.get('ok', 0)
    logger.info("Decoded %d reads with %s: %d bases changed",
                len(rows), config.decoder, sum(r.changed for r in rows))
    if failed:
        logger.warning("%d reads pass through uncorrected: %s", failed,
                       ', '.join(f"{k}={v}" for k, v in sorted(summary.items()) if k != 'ok'))
    return corrected, rows
