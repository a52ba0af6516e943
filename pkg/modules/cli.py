"""
Command-line driver: simulate | train | correct | evaluate.

Tuning flags are named after the model symbols (--k, --d, --lambda, --gamma,
--delta, --bias). Values come from RunConfig defaults, then the --config
JSON file, then flags. Every output file starts with the resulting config as
'#key=value' lines.

Exit codes: 0 success, 2 bad input or configuration, 3 any other failure.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

from modules.baum_welch import fit
from modules.config import DECODERS, FIRST_KMER_POLICIES, RunConfig, read_config_file
from modules.decoders import correct_reads, format_diagnostics, read_diagnostics, summarize_diagnostics
from modules.errors import ConfigError, HmmCorrectError, InputError
from modules.evaluation import (QualityModel, default_quality_model, format_report_table,
                                format_report_tsv, random_genome, score_corrections, simulate_reads)
from modules.kmer_index import build_state_space, suggest_kmer_length
from modules.model_io import atomic_write, load_model, save_model, write_trace
from modules.plots import TraceVisualizer, plot_quality_model
from modules.seqio import Read, format_fasta, format_fastq, read_fastq, read_genome
from modules.truth_serdes import TruthExporter, TruthImporter

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_RUNTIME_ERROR = 3

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'

# flags whose dest is a RunConfig attribute
_CONFIG_FLAGS = ('k', 'd', 'lam', 'gamma', 'delta', 'bias', 'max_iters', 'tol', 'threads', 'seed',
                 'phred_offset', 'decoder', 'first_kmer', 'max_visits_factor', 'prune_floor', 'qmax')


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='FILE', help='JSON run configuration; flags override it')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')

    tuning = common.add_argument_group('model and decoder settings')
    tuning.add_argument('--k', type=int, help='kmer length (default 13)')
    tuning.add_argument('--d', type=int, help='Hamming neighbourhood radius (default 4)')
    tuning.add_argument('--lambda', dest='lam', type=float, help='penalty weight (default 250)')
    tuning.add_argument('--gamma', type=float, help='penalty scale (default 1e-4)')
    tuning.add_argument('--delta', type=float, help='Fano threshold step (default 0.5)')
    tuning.add_argument('--bias', type=float, help='Fano bias B (default 2; 10 suits real data)')
    tuning.add_argument('--max-iters', type=int, help='EM iterations at most (default 30)')
    tuning.add_argument('--tol', type=float, help='relative EM stopping tolerance (default 1e-5)')
    tuning.add_argument('--decoder', choices=DECODERS, help='correction decoder (default fano)')
    tuning.add_argument('--first-kmer', choices=FIRST_KMER_POLICIES,
                        help='initial state policy (default observed)')
    tuning.add_argument('--max-visits-factor', type=int, help='Fano forward moves per stage (default 64)')
    tuning.add_argument('--prune-floor', type=float, help='transition probabilities below this become 0')

    run = common.add_argument_group('run settings')
    run.add_argument('--threads', type=int, help='worker processes (default 1)')
    run.add_argument('--seed', type=int, help='random seed (default 0)')
    run.add_argument('--phred-offset', type=int, choices=(33, 64), help='FASTQ quality offset (default 33)')
    run.add_argument('--qmax', type=int, help='largest quality accepted in FASTQ input (default 60)')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog='hmm-read-corrector',
        description='HMM-based substitution error correction for short sequencing reads.')
    sub = parser.add_subparsers(dest='command', required=True)

    sim = sub.add_parser('simulate', parents=[common], help='sample errored reads with ground truth')
    source = sim.add_mutually_exclusive_group(required=True)
    source.add_argument('--genome', metavar='FASTA', help='reference to sample from')
    source.add_argument('--random-genome', metavar='LENGTH', type=int,
                        help='sample from a random genome of this length (saved next to the reads)')
    sim.add_argument('--num-reads', type=int, required=True, help='number of reads N')
    sim.add_argument('--read-length', type=int, help='read length L (default 36)')
    quality = sim.add_mutually_exclusive_group()
    quality.add_argument('--error-rate', type=float, default=0.0123,
                         help='mean substitution rate of the default quality model (default 0.0123)')
    quality.add_argument('--constant-quality', type=int, metavar='Q', help='every base gets quality Q')
    quality.add_argument('--quality-from', metavar='FASTQ', help='per-position qualities of a real run')
    sim.add_argument('--output', '-o', required=True, help='reads FASTQ')
    sim.add_argument('--truth-output', help='truth TSV (default <output>.truth.tsv)')
    sim.add_argument('--plot', metavar='PNG', help='quality model figure')

    train = sub.add_parser('train', parents=[common], help='fit the HMM to reads by penalized EM')
    train.add_argument('reads', help='FASTQ input')
    train.add_argument('--output', '-o', required=True, help='model file')
    train.add_argument('--trace', help='iteration trace TSV (default <output>.trace.tsv)')
    train.add_argument('--plot', metavar='PNG', help='EM trace figure')
    train.add_argument('--genome-length', type=int,
                       help='choose k from the genome size when --k is not given')

    correct = sub.add_parser('correct', parents=[common], help='correct reads with a trained model')
    correct.add_argument('reads', help='FASTQ input')
    correct.add_argument('--model', '-m', required=True, help='model file from train')
    correct.add_argument('--output', '-o', required=True, help='corrected FASTQ')
    correct.add_argument('--diagnostics', help='per-read TSV (default <output>.diagnostics.tsv)')
    correct.add_argument('--truth', help='truth TSV; required with --first-kmer truth')

    evaluate = sub.add_parser('evaluate', parents=[common], help='score corrected reads against truth')
    evaluate.add_argument('original', help='FASTQ before correction')
    evaluate.add_argument('corrected', help='FASTQ after correction')
    evaluate.add_argument('--truth', required=True, help='truth TSV')
    evaluate.add_argument('--diagnostics', help='diagnostics TSV from correct, summarised in the report')
    evaluate.add_argument('--output', '-o', help='report TSV')
    return parser


def resolve_config(args: argparse.Namespace) -> Tuple[RunConfig, Set[str]]:
    """RunConfig from defaults, --config and flags, with the keys set explicitly.

    Raises:
        ConfigError: invalid values or unknown keys
    """
    values: Dict[str, Any] = read_config_file(args.config) if args.config else {}
    explicit = set(values)
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
            explicit.add(name)
    return RunConfig.from_dict(values), explicit


def _sibling(path: str, suffix: str) -> str:
    return os.path.splitext(path)[0] + suffix


def _load_reads(path: str, config: RunConfig) -> List[Read]:
    return read_fastq(path, config.phred_offset, config.qmax)


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> None:
    header = config.header_lines('simulate')
    if args.random_genome is not None:
        genome = random_genome(args.random_genome, config.seed)
        genome_path = _sibling(args.output, '.genome.fasta')
        atomic_write(genome_path, format_fasta('random_genome', genome))
        logger.info("Wrote random genome of %d bp to %s", len(genome), genome_path)
    else:
        genome = read_genome(args.genome)

    if args.quality_from:
        qmodel = QualityModel.from_reads(_load_reads(args.quality_from, config), config.qmax)
        read_length = args.read_length or qmodel.read_length
    else:
        read_length = args.read_length or 36
        if args.constant_quality is not None:
            if not 1 <= args.constant_quality <= config.qmax:
                raise ConfigError(f"constant quality must be in 1..{config.qmax}")
            qmodel = QualityModel.constant(read_length, config.qmax, args.constant_quality)
        else:
            qmodel = default_quality_model(read_length, config.qmax, args.error_rate)
    logger.info("Quality model implies a substitution rate of %.5f", qmodel.implied_error_rate())

    reads, truth = simulate_reads(genome, args.num_reads, read_length, qmodel, config.seed)
    atomic_write(args.output, format_fastq(reads, config.phred_offset, header))
    truth_path = args.truth_output or _sibling(args.output, '.truth.tsv')
    TruthExporter(truth).export(truth_path, header)
    logger.info("Coverage %.1fx over %d bp", args.num_reads * read_length / len(genome), len(genome))
    if args.plot:
        plot_quality_model(qmodel, args.plot, config.to_dict())


def cmd_train(args: argparse.Namespace, config: RunConfig, explicit: Set[str]) -> None:
    if 'k' not in explicit and args.genome_length:
        k = suggest_kmer_length(args.genome_length)
        logger.info("Chose k=%d for a %d bp genome", k, args.genome_length)
        config = config.replace(k=k, d=min(config.d, k))
    reads = _load_reads(args.reads, config)
    space = build_state_space(reads, config.k, config.threads)
    result = fit(reads, space, config.lam, config.gamma, config.d, config.max_iters, config.tol,
                 config.threads, prune_floor=config.prune_floor)
    header = config.header_lines('train')
    save_model(args.output, result.params, result.space, header)
    trace_path = args.trace or _sibling(args.output, '.trace.tsv')
    write_trace(trace_path, result.trace, header)
    logger.info("Wrote %d trace rows to %s (converged: %s)", len(result.trace), trace_path, result.converged)
    if args.plot:
        TraceVisualizer(result.trace).save_png(args.plot, config.to_dict(),
                                               f'Penalized Baum-Welch, lambda={config.lam:g}')


def cmd_correct(args: argparse.Namespace, config: RunConfig, explicit: Set[str]) -> None:
    params, space = load_model(args.model)
    if 'k' in explicit and config.k != params.k:
        raise ConfigError(f"k={config.k} was requested but the model has k={params.k}")
    d = config.d if 'd' in explicit else params.d
    config = config.replace(k=params.k, d=d)
    if config.first_kmer == 'truth' and not args.truth:
        raise ConfigError("--first-kmer truth needs --truth")

    reads = _load_reads(args.reads, config)
    truth = TruthImporter().validate_and_import(args.truth, reads) if args.truth else None
    corrected, rows = correct_reads(reads, params, space, config, truth)

    header = config.header_lines('correct')
    atomic_write(args.output, format_fastq(corrected, config.phred_offset, header))
    diagnostics_path = args.diagnostics or _sibling(args.output, '.diagnostics.tsv')
    atomic_write(diagnostics_path, format_diagnostics(rows, header))
    logger.info("Wrote %d reads to %s and diagnostics to %s", len(corrected), args.output, diagnostics_path)


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> str:
    original = _load_reads(args.original, config)
    corrected = _load_reads(args.corrected, config)
    truth = TruthImporter().validate_and_import(args.truth, original)
    report = score_corrections(original, corrected, truth, config.k)
    if args.diagnostics:
        report.diagnostics = summarize_diagnostics(read_diagnostics(args.diagnostics))
    if args.output:
        atomic_write(args.output, format_report_tsv(report, config.header_lines('evaluate')))
        logger.info("Wrote report to %s", args.output)
    logger.info("e=%d ce=%d fa=%d zeta=%.4f eta=%.4f", report.e, report.ce, report.fa, report.zeta, report.eta)
    return format_report_table(report)


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        config, explicit = resolve_config(args)
        logger.debug("Run configuration: %s", config.to_dict())
        if args.command == 'simulate':
            cmd_simulate(args, config)
        elif args.command == 'train':
            cmd_train(args, config, explicit)
        elif args.command == 'correct':
            cmd_correct(args, config, explicit)
        else:
            sys.stdout.write(cmd_evaluate(args, config))
    except InputError as exc:
        logger.error("%s", exc)
        return EXIT_INPUT_ERROR
    except UnicodeDecodeError as exc:
        # text inputs (config, model, truth, first kmers) read in strict mode
        logger.error("input is not valid text: %s", exc)
        return EXIT_INPUT_ERROR
    except (HmmCorrectError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME_ERROR
    return EXIT_OK
