"""``trajsim`` command line: synth, dist, violations, train, eval, project.

Every subcommand takes ``--config FILE`` with flat ``key = value`` lines using
the flag names (``learning-rate = 0.01``). Flags given on the command line win
over the file, which wins over the built-in defaults. The effective settings
are echoed as ``# key = value`` lines before any other output.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, DivergenceError, TrajsimError
from .evaluation import (
    DEFAULT_HR_KS,
    DEFAULT_NDCG_KS,
    evaluate,
    rvs_pairs,
    select_queries,
    write_rvs_csv,
)
from .lorentz import ProjectionConfig, cosh_project, membership_residual, vanilla_project
from .metrics import DEFAULT_EDR_EPSILON, METRIC_TAGS, DistanceMatrix, MetricKind, distance_matrix
from .synth import gen_metric_dataset, gen_violating_dataset
from .trainer import ENCODERS, LOSSES, MODES, EmbeddingModel, EncoderKind, TrainConfig, train
from .trajectory import load_trajectories, write_trajectories
from .violation import sample_violations, violating_triples

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
_DEFAULT_TRAIN = TrainConfig()
_RVS_EXHAUSTIVE_LIMIT = 2_000_000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1 instead of 2.

    Prefix abbreviations are off: ``--c`` must never resolve to ``--config``.
    """

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("k values must be positive integers")
    return values


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _png_beside(csv_path):
    return Path(csv_path).with_suffix(".png")


# ---------------------------------------------------------------------------
# parser


def _add_common(p, seed=None, threads=False):
    p.add_argument("--config", metavar="FILE", help="flat key = value file with flag names as keys")
    if seed is not None:
        p.add_argument("--seed", type=int, default=seed, help="random seed")
    if threads:
        p.add_argument("--threads", type=_positive_int, default=1, help="worker threads")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="trajsim", description="Trajectory similarity and Lorentz-embedding toolkit.",
                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"trajsim {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic trajectory CSV", formatter_class=fmt)
    p.add_argument("--kind", choices=("violating", "metric"), default="violating",
                   help="comb trajectories with DTW violations, or single points (metric control)")
    p.add_argument("--n", type=int, default=200, help="number of trajectories")
    p.add_argument("--out", required=True, help="trajectory CSV to write")
    _add_common(p, seed=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dist", help="ground-truth distance matrix", formatter_class=fmt)
    p.add_argument("--metric", choices=METRIC_TAGS, default="dtw", help="trajectory distance")
    p.add_argument("--edr-epsilon", type=float, default=DEFAULT_EDR_EPSILON,
                   help="EDR match threshold (edr only)")
    p.add_argument("--in", dest="input", required=True, help="trajectory CSV")
    p.add_argument("--out", required=True, help="matrix file (TDM1) to write")
    p.add_argument("--csv", help="also export i,j,dist rows here")
    _add_common(p, threads=True)
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("violations", help="triangle-violation statistics of a matrix", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="matrix file (TDM1)")
    p.add_argument("--count", type=_positive_int, default=1_000_000, help="random triples to sample")
    p.add_argument("--exhaustive", action="store_true", help="use all C(n,3) triples instead of sampling")
    p.add_argument("--report", help="CSV report (metric,value)")
    p.add_argument("--hist", help="histogram CSV bin_lo,bin_hi,count; a PNG is written beside it")
    _add_common(p, seed=0, threads=True)
    p.set_defaults(func=cmd_violations)

    d = _DEFAULT_TRAIN
    p = sub.add_parser("train", help="fit embeddings to a distance matrix", formatter_class=fmt)
    p.add_argument("--traj", required=True, help="trajectory CSV")
    p.add_argument("--matrix", required=True, help="ground-truth matrix file (TDM1)")
    p.add_argument("--model-out", required=True, help="model file (LHM1) to write")
    p.add_argument("--loss-csv", help="per-epoch loss CSV epoch,mean_loss; a PNG is written beside it")
    p.add_argument("--mode", choices=MODES, default=d.mode, help="embedding distance")
    p.add_argument("--loss", choices=LOSSES, default=d.loss, help="per-pair loss")
    p.add_argument("--embed-dim", type=int, default=d.embed_dim, help="Euclidean embedding size")
    p.add_argument("--factor-dim", type=int, default=d.factor_dim, help="size of each fusion factor")
    p.add_argument("--beta", type=float, default=d.beta, help="hyperboloid curvature parameter")
    p.add_argument("--c", type=float, default=d.c, help="norm compression exponent")
    p.add_argument("--norm-clamp", type=float, default=d.norm_clamp, help="cap on the hyperbolic angle")
    p.add_argument("--learning-rate", type=float, default=d.learning_rate, help="SGD step size")
    p.add_argument("--factor-lr-scale", type=float, default=d.factor_lr_scale,
                   help="step-size multiplier for the factor (alpha gate) parameters")
    p.add_argument("--epochs", type=int, default=d.epochs, help="passes over the pair set")
    p.add_argument("--batch-pairs", type=int, default=d.batch_pairs, help="pairs per gradient step")
    p.add_argument("--neighbors", type=int, default=d.neighbors_per_anchor,
                   help="nearest ground-truth neighbours paired with each anchor per epoch")
    p.add_argument("--random-pairs", type=int, default=d.random_pairs_per_anchor,
                   help="uniform random partners per anchor per epoch")
    p.add_argument("--encoder", choices=ENCODERS, default=d.encoder.tag,
                   help="per-trajectory table (lookup) or mean of grid-cell rows")
    p.add_argument("--grid-cell-size", type=float, default=None, help="cell size for the gridmean encoder")
    _add_common(p, seed=d.seed)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="HR@k / NDCG@k of a trained model", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model file (LHM1)")
    p.add_argument("--matrix", required=True, help="ground-truth matrix file (TDM1)")
    p.add_argument("--traj", required=True, help="trajectory CSV holding queries and candidates")
    p.add_argument("--ks", type=_int_list, default=DEFAULT_HR_KS, help="HR cut-offs")
    p.add_argument("--ndcg-ks", type=_int_list, default=DEFAULT_NDCG_KS, help="NDCG cut-offs")
    p.add_argument("--queries", default="all", help="'all' or 'sample:N'")
    p.add_argument("--alpha", type=float, default=None,
                   help="pin the Lorentz share in fusion-dist mode (0 reproduces original)")
    p.add_argument("--report", help="CSV report (metric,value)")
    p.add_argument("--rvs-export", help="paired rvs_true,rvs_pred CSV over violating triples; "
                                        "a density PNG is written beside it")
    p.add_argument("--rvs-triples", type=_positive_int, default=1_000_000,
                   help="triples sampled for --rvs-export (all of them if C(n,3) is smaller)")
    _add_common(p, seed=0, threads=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="lift Euclidean vectors onto the hyperboloid", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="CSV of vectors, one per row")
    p.add_argument("--out", required=True, help="CSV of projected vectors plus a residual column")
    p.add_argument("--projection", choices=("vanilla", "cosh"), default="cosh", help="lift onto the hyperboloid")
    p.add_argument("--beta", type=float, default=1.0, help="hyperboloid curvature parameter")
    p.add_argument("--c", type=float, default=4.0, help="norm compression exponent (cosh)")
    p.add_argument("--norm-clamp", type=float, default=50.0, help="cap on the hyperbolic angle (cosh)")
    _add_common(p)
    p.set_defaults(func=cmd_project)
    return parser


# ---------------------------------------------------------------------------
# config file


def read_config_file(path):
    """Parse flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.lstrip("-").replace("_", "-")] = value
    return values


def _apply_config(sub, values, path):
    by_flag = {}
    for action in sub._actions:
        for opt in action.option_strings:
            by_flag[opt.lstrip("-")] = action
    defaults = {}
    for key, text in values.items():
        action = by_flag.get(key)
        if action is None or key in ("config", "help"):
            raise ConfigError(f"{path}: unknown key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{path}: {key} expects true/false, got {text!r}")
            value = low in ("true", "1", "yes")
        else:
            try:
                value = action.type(text) if action.type else text
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"{path}: bad value for {key}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise ConfigError(f"{path}: {key} must be one of {list(action.choices)}")
        defaults[action.dest] = value
        action.required = False
    sub.set_defaults(**defaults)


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(name)
    return None


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and argv and not argv[0].startswith("-"):
        sub = _subparser(parser, argv[0])
        if sub is not None:
            _apply_config(sub, read_config_file(known.config), known.config)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("no subcommand given")
    return args


def _format_value(v):
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def print_header(args, out):
    out.write(f"# trajsim {args.command}\n")
    for key, value in vars(args).items():
        if key in ("command", "func", "config"):
            continue
        out.write(f"# {key.replace('_', '-')} = {_format_value(value)}\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, out):
    gen = gen_violating_dataset if args.kind == "violating" else gen_metric_dataset
    ds = gen(args.n, args.seed)
    with open(args.out, "w", newline="") as fh:
        write_trajectories(ds, fh)
    out.write(f"trajectories: {len(ds)}\npoints: {sum(len(t) for t in ds)}\n")


def _metric_from_args(args):
    return MetricKind(args.metric, args.edr_epsilon if args.metric == "edr" else None)


def cmd_dist(args, out):
    ds = load_trajectories(args.input)
    m = distance_matrix(ds, _metric_from_args(args), threads=args.threads)
    m.save(args.out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            m.write_csv(fh)
    out.write(f"trajectories: {m.n}\npairs: {m.values.shape[0]}\n")
    if m.values.size:
        out.write(f"min: {m.values.min():.17g}\nmean: {m.values.mean():.17g}\nmax: {m.values.max():.17g}\n")


def cmd_violations(args, out):
    from .plotting import plot_rvs_histogram

    m = DistanceMatrix.load(args.input)
    stats = sample_violations(m, count=args.count, seed=args.seed, exhaustive=args.exhaustive,
                              threads=args.threads)
    rows = [("sampled", stats.sampled), ("violating", stats.violating),
            ("degenerate", stats.degenerate), ("rv", stats.rv), ("arvs", stats.arvs)]
    for name, value in rows:
        out.write(f"{name}: {value:.17g}\n" if isinstance(value, float) else f"{name}: {value}\n")
    if args.report:
        with open(args.report, "w", newline="") as fh:
            fh.write("metric,value\n")
            for name, value in rows:
                fh.write(f"{name},{value:.17g}\n" if isinstance(value, float) else f"{name},{value}\n")
    if args.hist:
        edges, counts = stats.hist_edges, stats.hist_counts
        with open(args.hist, "w", newline="") as fh:
            fh.write("bin_lo,bin_hi,count\n")
            for lo, hi, cnt in zip(edges[:-1], edges[1:], counts):
                fh.write(f"{lo:.17g},{hi:.17g},{int(cnt)}\n")
        plot_rvs_histogram(edges, counts, _png_beside(args.hist))


def _train_config(args):
    encoder = EncoderKind(args.encoder, args.grid_cell_size if args.encoder == "gridmean" else None)
    return TrainConfig(
        embed_dim=args.embed_dim, factor_dim=args.factor_dim, beta=args.beta, c=args.c,
        mode=args.mode, loss=args.loss, learning_rate=args.learning_rate, epochs=args.epochs,
        batch_pairs=args.batch_pairs, neighbors_per_anchor=args.neighbors,
        random_pairs_per_anchor=args.random_pairs, seed=args.seed, encoder=encoder,
        norm_clamp=args.norm_clamp, factor_lr_scale=args.factor_lr_scale)


def cmd_train(args, out):
    from .plotting import plot_loss_curve

    cfg = _train_config(args)
    ds = load_trajectories(args.traj)
    gt = DistanceMatrix.load(args.matrix)
    result = train(ds, gt, cfg)
    result.model.save(args.model_out)
    if args.loss_csv:
        with open(args.loss_csv, "w", newline="") as fh:
            result.write_loss_csv(fh)
        plot_loss_curve(result.loss_log, _png_beside(args.loss_csv), title=cfg.mode)
    out.write(f"mu: {result.model.mu:.17g}\nfinal_loss: {result.loss_log[-1]:.17g}\n")


def _rvs_triples(gt, count, seed):
    if math.comb(gt.n, 3) <= min(count, _RVS_EXHAUSTIVE_LIMIT):
        return violating_triples(gt, exhaustive=True)
    return violating_triples(gt, count=count, seed=seed)


def cmd_eval(args, out):
    from .plotting import plot_rvs_density

    model = EmbeddingModel.load(args.model)
    gt = DistanceMatrix.load(args.matrix)
    ds = load_trajectories(args.traj)
    rows = select_queries(len(ds), args.queries, args.seed)
    query_ids = [ds[i].id for i in rows]
    report = evaluate(model, gt, ds, query_ids, args.ks, args.ndcg_ks, args.alpha, args.threads)
    out.write(report.format_text() + "\n")
    if args.report:
        with open(args.report, "w", newline="") as fh:
            report.write_csv(fh)
    if args.rvs_export:
        gidx = np.array([gt.index_of(t.id) for t in ds], dtype=np.int64)
        if not np.array_equal(gidx, np.arange(gt.n)):
            raise DataError("--rvs-export needs the trajectory CSV to cover the matrix rows in order")
        triples = _rvs_triples(gt, args.rvs_triples, args.seed)
        true_rvs, pred_rvs = rvs_pairs(model, gt, ds, triples, args.alpha)
        with open(args.rvs_export, "w", newline="") as fh:
            write_rvs_csv(true_rvs, pred_rvs, fh)
        plot_rvs_density(true_rvs, pred_rvs, _png_beside(args.rvs_export), label=model.mode)
        frac = float(np.mean(pred_rvs > 0)) if len(pred_rvs) else float("nan")
        out.write(f"violating_triples: {len(true_rvs)}\npredicted_positive_fraction: {frac:.4f}\n")


def _read_vectors(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not f.strip() for f in row):
                continue
            try:
                rows.append([float(f) for f in row])
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header
                raise DataError(f"{path}: line {lineno}: non-numeric field") from None
            if len(rows[-1]) != len(rows[0]):
                raise DataError(f"{path}: line {lineno}: expected {len(rows[0])} columns")
    if not rows:
        raise DataError(f"{path}: no vectors")
    x = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError(f"{path}: non-finite value")
    return x


def cmd_project(args, out):
    cfg = ProjectionConfig(args.beta, args.c, args.norm_clamp)
    x = _read_vectors(args.input)
    h = vanilla_project(x, cfg.beta) if args.projection == "vanilla" else cosh_project(x, cfg)
    res = membership_residual(h, cfg.beta)
    with open(args.out, "w", newline="") as fh:
        fh.write(",".join([f"h{i}" for i in range(h.shape[1])] + ["residual"]) + "\n")
        for row, r in zip(h, res):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{r:.17g}\n")
    out.write(f"vectors: {h.shape[0]}\nmax_residual: {float(res.max()):.3g}\n")


# ---------------------------------------------------------------------------


def main(argv=None, out=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = sys.stdout if out is None else out
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError:
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"trajsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"trajsim: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        print_header(args, out)
        args.func(args, out)
    except ConfigError as exc:
        print(f"trajsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"trajsim: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, TrajsimError) as exc:
        print(f"trajsim: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"trajsim: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"trajsim: cannot access {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_DATA
    except UnicodeDecodeError as exc:
        print(f"trajsim: input is not UTF-8: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK
