#!/usr/bin/env python3
"""
bconcord command line

Bayesian sparsity selection for precision matrices with the CONCORD
generalized likelihood: simulate data, fit spike-and-slab or horseshoe
chains, refit on a selected graph, enumerate exact pattern posteriors,
score selections and run replicated benchmarks.
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import asdict
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, Optional, Sequence

import numpy as np
from pydantic import ValidationError

import gibbs_kernels
from bhsc_sampler import run_chains_bhsc
from bssc_sampler import inclusion_agreement, run_chains, summarize
from config import (
    BenchSpec,
    Config,
    GammaHyper,
    HorseshoeConfig,
    RefitConfig,
    SpikeSlabConfig,
    TruthSpec,
    load_yaml,
    merge_settings,
)
from covariance import covariance_from_matrix, pattern_of, sample_covariance
from data_models import ChainTrace, DiagMode, GraphConstraint, PrecisionState, Prior, RunManifest
from errors import BConcordError
from exact_oracle import enumerate_patterns, marginal_inclusion
from refit import refit_gibbs
from rng import DATA_STREAM, REFIT_STREAM, TRUTH_STREAM, seeded_rng
from serialization import (
    dumps,
    file_digest,
    pair_table,
    pattern_from_json,
    pattern_to_json,
    read_json,
    read_matrix_csv,
    read_vector_csv,
    state_from_json,
    state_to_json,
    write_json,
    write_matrix_csv,
)
from simulate import accuracy, generate_truth, relative_frobenius, replicate, sample_mvn

try:
    import colorlog
except ImportError:
    colorlog = None

VERSION = "0.1.0"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)

FIT_DEFAULTS: Dict[str, Any] = {
    'prior': 'spike-slab', 'burn_in': 2000, 'keep': 2000, 'thin': 1, 'q': '0.5', 'lam': 1.0, 'gamma': 1.0,
    'hyper': False, 'r': 1e-4, 's': 1e-8, 'tau': None, 'threshold': 0.5, 'diag_mode': 'mode',
    'chains': 1, 'ci_level': 0.95, 'seed': 0, 'center': False, 'standardize': False, 'header': False,
}
REFIT_DEFAULTS: Dict[str, Any] = {
    'sweeps': 4000, 'burn_in': 200, 'eps': 1e-6, 'ci_level': 0.95, 'seed': 0,
    'center': False, 'standardize': False, 'header': False,
}
ENUMERATE_DEFAULTS: Dict[str, Any] = {'q': '0.5', 'lam': 1.0, 'tau': None, 'top': 50}
SIMULATE_DEFAULTS: Dict[str, Any] = {
    'density': 0.04, 'seed': 0, 'magnitude_low': 0.4, 'magnitude_high': 0.6, 'diag_margin': 0.5,
}


class UsageError(BConcordError):
    """Bad command-line usage"""


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors raised instead of exiting with status 2"""

    def error(self, message):
        raise UsageError(message)


def setup_logging(config: Config):
    """Rotating file log plus a console handler on stderr, installed once per process"""
    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, '_bconcord', False)]:
        root.removeHandler(handler)
        handler.close()

    os.makedirs(config.log_dir, exist_ok=True)
    file_handler = RotatingFileHandler(
        os.path.join(config.log_dir, config.log_file),
        maxBytes=config.log_max_bytes,
        backupCount=config.log_backups,
        encoding='utf-8',
    )
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    console_handler = logging.StreamHandler(sys.stderr)
    if colorlog is not None and sys.stderr.isatty():
        console_handler.setFormatter(colorlog.ColoredFormatter('%(log_color)s' + LOG_FORMAT))
    else:
        console_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    for handler in (file_handler, console_handler):
        handler._bconcord = True
        root.addHandler(handler)
    root.setLevel(config.log_level)


def report_timing(seconds) -> Dict[str, float]:
    """Per-sweep wall-clock summary: count, mean, p50, p95 and total seconds"""
    if isinstance(seconds, ChainTrace):
        seconds = seconds.sweep_seconds
    values = np.asarray(list(seconds), dtype=float)
    if values.size == 0:
        return {'count': 0, 'mean': 0.0, 'p50': 0.0, 'p95': 0.0, 'total': 0.0}
    p50, p95 = np.percentile(values, [50, 95])
    return {
        'count': int(values.size),
        'mean': float(values.mean()),
        'p50': float(p50),
        'p95': float(p95),
        'total': float(values.sum()),
    }


def _add_input_args(parser: argparse.ArgumentParser):
    parser.add_argument('--data', help='CSV data matrix, rows are observations')
    parser.add_argument('--cov', help='CSV covariance matrix (needs --n)')
    parser.add_argument('--n', type=int, help='sample size behind --cov')
    parser.add_argument('--header', action='store_true', default=None, help='data CSV has a header row')
    parser.add_argument('--center', action='store_true', default=None, help='subtract column means')
    parser.add_argument('--standardize', action='store_true', default=None, help='fit on unit-variance columns')


def _add_common_args(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help='YAML file with default values for these flags')
    parser.add_argument('--seed', type=int, help='64-bit unsigned seed')
    parser.add_argument('--threads', type=int, help='worker threads (default: BCONCORD_THREADS or cpu count)')
    parser.add_argument('--out', help='output JSON path (default: stdout)')


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='bconcord', description='Bayesian CONCORD sparsity selection')
    parser.add_argument('--version', action='version', version=f'%(prog)s {VERSION}')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    sim = sub.add_parser('simulate', help='generate a sparse truth and Gaussian data')
    _add_common_args(sim)
    sim.add_argument('--p', type=int, required=True)
    sim.add_argument('--n', type=int, required=True)
    sim.add_argument('--density', type=float)
    sim.add_argument('--magnitude-low', dest='magnitude_low', type=float)
    sim.add_argument('--magnitude-high', dest='magnitude_high', type=float)
    sim.add_argument('--diag-margin', dest='diag_margin', type=float)
    sim.add_argument('--out-prefix', dest='out_prefix', required=True)

    fit = sub.add_parser('fit', help='run spike-and-slab or horseshoe chains')
    _add_common_args(fit)
    _add_input_args(fit)
    fit.add_argument('--prior', choices=[p.value for p in Prior])
    fit.add_argument('--burnin', '--burn-in', dest='burn_in', type=int)
    fit.add_argument('--keep', type=int)
    fit.add_argument('--thin', type=int)
    fit.add_argument('--q', help="inclusion prior probability, or '1/p'")
    fit.add_argument('--lambda', dest='lam', type=float, help='slab precision')
    fit.add_argument('--gamma', type=float, help='diagonal exponential rate')
    fit.add_argument('--hyper', action='store_true', default=None, help='resample lambda and gamma each sweep')
    fit.add_argument('--r', type=float, help='Gamma shape offset for --hyper')
    fit.add_argument('--s', type=float, help='Gamma rate offset for --hyper')
    fit.add_argument('--tau', type=int, help='cap on the number of non-zero pairs')
    fit.add_argument('--threshold', type=float, help='inclusion probability threshold')
    fit.add_argument('--diag-mode', dest='diag_mode', choices=[m.value for m in DiagMode])
    fit.add_argument('--chains', type=int)
    fit.add_argument('--ci', dest='ci_level', type=float, help='credible level for the horseshoe intervals')

    ref = sub.add_parser('refit', help='refitted posterior on a selected graph')
    _add_common_args(ref)
    _add_input_args(ref)
    ref.add_argument('--graph', required=True, help='graph JSON {p, edges} or a fit result')
    ref.add_argument('--sweeps', type=int)
    ref.add_argument('--burnin', '--burn-in', dest='burn_in', type=int)
    ref.add_argument('--eps', type=float, help='smallest eigenvalue after projection')
    ref.add_argument('--ci', dest='ci_level', type=float)

    enum = sub.add_parser('enumerate', help='exact pattern posterior for small p')
    _add_common_args(enum)
    enum.add_argument('--cov', required=True)
    enum.add_argument('--n', type=int, required=True)
    enum.add_argument('--diag', required=True, help='CSV with the fixed diagonal')
    enum.add_argument('--q')
    enum.add_argument('--lambda', dest='lam', type=float)
    enum.add_argument('--tau', type=int)
    enum.add_argument('--top', type=int)

    ev = sub.add_parser('eval', help='score a selected pattern against the truth')
    _add_common_args(ev)
    ev.add_argument('--selected', required=True)
    ev.add_argument('--truth', required=True, help='truth pattern JSON')
    ev.add_argument('--est', help='result JSON with an estimate')
    ev.add_argument('--truth-matrix', dest='truth_matrix', help='truth precision matrix CSV')

    bench = sub.add_parser('bench', help='replicated simulation benchmark')
    _add_common_args(bench)
    bench.add_argument('--spec', required=True, help='YAML benchmark spec')
    bench.add_argument('--reps', type=int)
    bench.add_argument('--method', choices=['bssc', 'bssc+refit', 'bhsc'])
    bench.add_argument('--rows-csv', dest='rows_csv', help='per-replicate table as CSV')
    return parser


class Runner:
    """Executes one parsed command and assembles its output document"""

    def __init__(self, args: argparse.Namespace, config: Config):
        self.args = args
        self.config = config
        self.logger = logging.getLogger(f"{__name__}.Runner")
        self.threads = args.threads if args.threads is not None else config.threads
        if self.threads < 1:
            raise UsageError("--threads must be at least 1")
        self.digests: Dict[str, str] = {}
        self.timing: Dict[str, float] = {}
        self.started = time.perf_counter()

    def settings(self, defaults: Dict[str, Any]) -> Dict[str, Any]:
        file_values = _canonical_keys(load_yaml(self.args.config))
        cli_values = {k: v for k, v in vars(self.args).items() if k in defaults}
        return merge_settings(defaults, file_values, cli_values)

    def _digest(self, path: str):
        self.digests[os.path.basename(path)] = file_digest(path)

    def load_covariance(self, settings: Dict[str, Any]):
        args = self.args
        if args.data:
            self._digest(args.data)
            data = read_matrix_csv(args.data, header=bool(settings.get('header')))
            S = sample_covariance(data, center=bool(settings.get('center')),
                                  standardize=bool(settings.get('standardize')))
            if args.n is not None and args.n != data.shape[0]:
                self.logger.warning(f"--n={args.n} ignored, data has {data.shape[0]} rows")
            return S, data.shape[0]
        if args.cov:
            if args.n is None:
                raise UsageError("--n is required with --cov")
            self._digest(args.cov)
            return covariance_from_matrix(read_matrix_csv(args.cov), n=args.n), args.n
        raise UsageError("either --data or --cov required")

    def emit(self, result: Dict[str, Any], config_echo: Dict[str, Any], seed: Optional[int]) -> Dict[str, Any]:
        manifest = RunManifest(
            command=self.args.command,
            config=config_echo,
            seed=int(seed or 0),
            version=VERSION,
            input_digests=dict(sorted(self.digests.items())),
            duration_seconds=time.perf_counter() - self.started,
            timing=self.timing,
        )
        document = {'result': result, 'manifest': asdict(manifest)}
        if self.args.out:
            write_json(self.args.out, document)
            self.logger.info(f"Wrote {self.args.out}")
        else:
            sys.stdout.write(dumps(document))
        return document

    def simulate(self):
        args = self.args
        settings = self.settings(SIMULATE_DEFAULTS)
        spec = TruthSpec(p=args.p, density=settings['density'], magnitude_low=settings['magnitude_low'],
                         magnitude_high=settings['magnitude_high'], diag_margin=settings['diag_margin'],
                         seed=settings['seed'])
        truth = generate_truth(spec, seeded_rng(spec.seed, TRUTH_STREAM))
        data = sample_mvn(truth, args.n, seeded_rng(spec.seed, DATA_STREAM))

        truth_path = _prefixed(args.out_prefix, 'truth.csv')
        data_path = _prefixed(args.out_prefix, 'data.csv')
        pattern_path = _prefixed(args.out_prefix, 'truth_pattern.json')
        write_matrix_csv(truth_path, truth.dense())
        write_matrix_csv(data_path, data)
        pattern = pattern_of(truth)
        echo = {**spec.model_dump(mode='json'), 'n': args.n}
        manifest = asdict(RunManifest(command='simulate', config=echo, seed=spec.seed, version=VERSION))
        write_json(pattern_path, {'result': pattern_to_json(pattern), 'manifest': manifest})
        self.logger.info(f"Simulated p={spec.p}, n={args.n} with {pattern.density} edges")
        result = {'truth': truth_path, 'data': data_path, 'truth_pattern': pattern_path,
                  'edges': pattern.density, 'p': spec.p, 'n': args.n}
        return self.emit(result, echo, spec.seed)

    def fit(self):
        settings = self.settings(FIT_DEFAULTS)
        S, n = self.load_covariance(settings)
        seed = settings['seed']
        chains = int(settings['chains'])
        diag_mode = DiagMode(settings['diag_mode'])

        if Prior(settings['prior']) is Prior.HORSESHOE:
            cfg = HorseshoeConfig(gamma=settings['gamma'], burn_in=settings['burn_in'], keep=settings['keep'],
                                  thin=settings['thin'], ci_level=settings['ci_level'], diag_mode=diag_mode)
            summary = run_chains_bhsc(S, n, cfg, seed, chains=chains, threads=self.threads)
            self.timing = report_timing(summary.sweep_seconds)
            result = {
                'p': S.p, 'n': n, 'prior': Prior.HORSESHOE.value, 'pairs': pair_table(S.p),
                'estimate': state_to_json(summary.mean), 'mean': state_to_json(summary.mean),
                'ci_lo': summary.ci_lo, 'ci_hi': summary.ci_hi, 'level': summary.level,
                'selected': summary.selected.bits.astype(int), 'chains': chains, 'T': summary.T,
            }
            echo = {'prior': Prior.HORSESHOE.value, **cfg.echo(), 'chains': chains, **_input_echo(settings)}
            return self.emit(result, echo, seed)

        cfg = SpikeSlabConfig(
            q=_parse_q(settings['q'], S.p),
            lam=settings['lam'],
            gamma=settings['gamma'],
            hyper=GammaHyper(r=settings['r'], s=settings['s']) if settings['hyper'] else None,
            tau=settings['tau'],
            burn_in=settings['burn_in'],
            keep=settings['keep'],
            thin=settings['thin'],
            diag_mode=diag_mode,
        )
        cfg.tau_cap(S.p)
        trace = run_chains(S, n, cfg, seed, chains=chains, threads=self.threads)
        summary = summarize(trace, threshold=settings['threshold'])
        self.timing = report_timing(trace)
        self.logger.info(f"Selected {summary.selected.density} edges at threshold {summary.threshold}")
        result = {
            'p': S.p, 'n': n, 'prior': Prior.SPIKE_SLAB.value, 'pairs': pair_table(S.p),
            'inclusion': summary.inclusion, 'estimate': state_to_json(summary.estimate),
            'selected': summary.selected.bits.astype(int), 'threshold': summary.threshold,
            'chains': chains, 'T': trace.T, 'inclusion_agreement': inclusion_agreement(trace),
        }
        echo = {'prior': Prior.SPIKE_SLAB.value, **cfg.echo(), 'threshold': settings['threshold'], 'chains': chains,
                **_input_echo(settings)}
        return self.emit(result, echo, seed)

    def refit(self):
        settings = self.settings(REFIT_DEFAULTS)
        S, n = self.load_covariance(settings)
        self._digest(self.args.graph)
        pattern = pattern_from_json(read_json(self.args.graph))
        graph = GraphConstraint(p=S.p, edges=pattern)
        cfg = RefitConfig(sweeps=settings['sweeps'], burn_in=settings['burn_in'],
                          ci_level=settings['ci_level'], eps=settings['eps'])
        seed = settings['seed']
        res = refit_gibbs(S, graph, n, cfg, seeded_rng(seed, REFIT_STREAM))
        self.timing = report_timing(res.sweep_seconds)
        result = {
            'p': S.p, 'n': n, 'pairs': pair_table(S.p), 'edges': pattern_to_json(pattern)['edges'],
            'selected': pattern.bits.astype(int),
            'mode': state_to_json(res.mode), 'mean': state_to_json(res.mean), 'estimate': state_to_json(res.mean),
            'ci_lo': res.ci_lo, 'ci_hi': res.ci_hi, 'diag_ci_lo': res.diag_ci_lo, 'diag_ci_hi': res.diag_ci_hi,
            'level': res.level, 'min_eigenvalue': res.min_eigenvalue,
            'mode_is_pd': res.projected is None, 'mean_is_pd': res.mean_projected is None,
            'projected': state_to_json(res.projected) if res.projected is not None else None,
            'mean_projected': state_to_json(res.mean_projected) if res.mean_projected is not None else None,
        }
        return self.emit(result, {**cfg.echo(), **_input_echo(settings)}, seed)

    def enumerate(self):
        args = self.args
        settings = self.settings(ENUMERATE_DEFAULTS)
        self._digest(args.cov)
        self._digest(args.diag)
        S = covariance_from_matrix(read_matrix_csv(args.cov), n=args.n)
        diag = read_vector_csv(args.diag)
        cfg = SpikeSlabConfig(q=_parse_q(settings['q'], S.p), lam=settings['lam'], tau=settings['tau'])
        post = enumerate_patterns(S, args.n, diag, cfg, threads=self.threads)
        top = [
            {'code': pattern.code, 'edges': pattern_to_json(pattern)['edges'], 'probability': prob}
            for pattern, prob in post.top(int(settings['top']))
        ]
        result = {'p': S.p, 'n': args.n, 'pairs': pair_table(S.p), 'log_norm': post.log_norm,
                  'marginal': marginal_inclusion(post), 'top': top}
        return self.emit(result, {**cfg.echo(), 'top': settings['top']}, args.seed)

    def eval(self):
        args = self.args
        for path in (args.selected, args.truth):
            self._digest(path)
        selected = pattern_from_json(read_json(args.selected))
        truth = pattern_from_json(read_json(args.truth))
        report = asdict(accuracy(selected, truth))
        if args.est or args.truth_matrix:
            if not (args.est and args.truth_matrix):
                raise UsageError("--est and --truth-matrix must be given together")
            self._digest(args.est)
            self._digest(args.truth_matrix)
            estimate = state_from_json(read_json(args.est))
            truth_state = PrecisionState.from_dense(read_matrix_csv(args.truth_matrix))
            report['rel_frobenius'] = relative_frobenius(estimate, truth_state)
        return self.emit(report, {}, args.seed)

    def bench(self):
        args = self.args
        self._digest(args.spec)
        values = load_yaml(args.spec)
        overrides = {'reps': args.reps, 'method': args.method, 'seed': args.seed}
        spec = BenchSpec(**merge_settings({}, values, overrides))
        table, summary = replicate(spec, threads=self.threads)
        if args.rows_csv:
            table.to_csv(args.rows_csv, index=False, float_format='%.17g')
        self.timing = report_timing(table['seconds'].dropna())
        summary.pop('seconds', None)
        rows = table.drop(columns=['seconds']).to_dict(orient='records')
        result = {'spec': spec.model_dump(mode='json'), 'aggregate': summary, 'rows': rows}
        return self.emit(result, spec.model_dump(mode='json'), spec.seed)


def _input_echo(settings: Dict[str, Any]) -> Dict[str, Any]:
    return {key: bool(settings.get(key)) for key in ('header', 'center', 'standardize')}


FILE_KEY_ALIASES = {'lambda': 'lam', 'burnin': 'burn_in', 'ci': 'ci_level'}


def _canonical_keys(values: Dict[str, Any]) -> Dict[str, Any]:
    """
    Config file keys in the names the manifests echo: flag spellings are
    accepted as aliases and an echoed ``hyper: {r, s}`` block turns hyper on.
    """
    out = {FILE_KEY_ALIASES.get(k, k): v for k, v in values.items()}
    hyper = out.get('hyper')
    if isinstance(hyper, dict):
        out['hyper'] = True
        for key in ('r', 's'):
            if key in hyper:
                out.setdefault(key, hyper[key])
    return out


def _parse_q(value, p: int) -> float:
    if isinstance(value, str) and value.strip().replace(' ', '') == '1/p':
        return 1.0 / p
    try:
        return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"--q must be a probability or '1/p', got {value!r}")


def _prefixed(prefix: str, name: str) -> str:
    if prefix.endswith(os.sep) or os.path.isdir(prefix):
        return os.path.join(prefix, name)
    return f"{prefix}_{name}"


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; 0 on success, 1 on user error, 2 on numerical failure"""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return int(e.code or 0)
    except UsageError as e:
        print(f"bconcord: error: {e}", file=sys.stderr)
        return 1

    try:
        config = Config()
        setup_logging(config)
        gibbs_kernels.set_numba_enabled(config.use_numba)
        runner = Runner(args, config)
        getattr(runner, args.command)()
        return 0
    except BConcordError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=e.exit_code != 1)
        print(f"bconcord: error: {e}", file=sys.stderr)
        return e.exit_code
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"bconcord: numerical error: {e}", file=sys.stderr)
        return 2
    except (ValidationError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"bconcord: error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
