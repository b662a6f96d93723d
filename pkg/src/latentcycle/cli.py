"""Command-line front end.

Subcommands: ``simulate``, ``vcsgs``, ``discover``, ``faithsim``,
``tensorcheck`` and ``evaluate``. Exit status is 0 on success, 2 on invalid
input (including unknown flags) and 3 when a resource guard refuses a
search.

Settings resolve as command-line flags, then a JSON file given with
``--config``, then built-in defaults. The config file may be flat or keyed
by subcommand, e.g. ``{"faithsim": {"graphs": 200}}``. Every output carries
the tool version, the seed and a hash of the resolved settings.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from latentcycle import __version__
from latentcycle.errors import ResourceGuardError, ValidationError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_GUARD = 3

#: Graph count used by ``faithsim --full``.
FULL_SWEEP_GRAPHS = 10_000

# output destinations and worker counts do not change results, so they stay
# out of the config hash
_OUTPUT_KEYS = {"out", "metrics", "figures", "estimate", "sem_out", "config", "command", "workers"}


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose errors raise instead of exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _default_workers() -> int:
    env = os.environ.get("LATENTCYCLE_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ValidationError(f"LATENTCYCLE_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ValidationError("LATENTCYCLE_THREADS must be at least 1")
    return n


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------
def parse_int_list(text: str) -> list[int]:
    """``"3,5,10"`` or ``"2..9"`` (inclusive) to a list of ints."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = part.split("..", 1)
                out += list(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ValidationError(f"cannot read {part!r} as an integer or a range a..b") from None
    if not out:
        raise ValidationError(f"empty list {text!r}")
    return out


def parse_float_list(text: str) -> list[float]:
    """``"0.1,0.01"`` or ``"2..9"`` to a list of floats."""
    if ".." in str(text):
        return [float(x) for x in parse_int_list(text)]
    try:
        out = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"cannot read {text!r} as a list of numbers") from None
    if not out:
        raise ValidationError(f"empty list {text!r}")
    return out


def parse_sets(text: str) -> list[list[str]]:
    """``"X5,X6;X3,X4;X1,X2"`` to a list of label lists."""
    sets = [[x.strip() for x in part.split(",") if x.strip()] for part in str(text).split(";")]
    if any(not s for s in sets):
        raise ValidationError(f"empty set in {text!r}")
    return sets


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None


def _read_json(path: str) -> dict:
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from None


def load_graph(ref: str):
    """A graph from a JSON file, or ``catalog:NAME`` for a reference graph.

    Returns
    -------
    (DirectedGraph, dict)
        The graph and the raw JSON (empty for catalogue graphs).
    """
    from latentcycle import reference_graphs
    from latentcycle.graph_core import DirectedGraph

    if ref.startswith("catalog:"):
        name = ref.split(":", 1)[1]
        try:
            return reference_graphs.get(name), {"catalog": name}
        except KeyError as exc:
            raise ValidationError(str(exc.args[0])) from None
    raw = _read_json(ref)
    return DirectedGraph.from_dict(raw), raw


def _load_dataset(path: str):
    from latentcycle.sem import Dataset

    return Dataset.from_csv(_read_text(path))


# ---------------------------------------------------------------------------
# provenance
# ---------------------------------------------------------------------------
def resolved_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return json.loads(json.dumps(cfg, default=str))


def config_hash(cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items() if k not in _OUTPUT_KEYS}
    blob = json.dumps(keep, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _meta(args: argparse.Namespace) -> dict:
    cfg = resolved_config(args)
    return {
        "tool": "latentcycle",
        "version": __version__,
        "seed": cfg.get("seed"),
        "config_hash": config_hash(cfg),
        "config": {k: v for k, v in cfg.items() if k not in _OUTPUT_KEYS},
    }


def _csv_header(args: argparse.Namespace) -> str:
    m = _meta(args)
    return (
        f"# latentcycle {m['version']} seed={m['seed']} config={m['config_hash']}\n"
        f"# config {json.dumps(m['config'], sort_keys=True)}\n"
    )


def _emit(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    p = Path(path)
    if p.parent and not p.parent.exists():
        raise ValidationError(f"output directory {p.parent} does not exist")
    p.write_text(text)


def _emit_json(obj: dict, args: argparse.Namespace, path: Optional[str]) -> None:
    out = {"meta": _meta(args)}
    out.update(obj)
    _emit(json.dumps(out, indent=2, sort_keys=False) + "\n", path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_simulate(args) -> int:
    from latentcycle.sem import NoiseSpec, random_sem, sample

    graph, _ = load_graph(args.graph)
    noise = {
        "gaussian": NoiseSpec.gaussian(),
        "uniform": NoiseSpec.uniform(-2.0, 2.0),
        "exponential": NoiseSpec.exponential(1.0),
    }[args.noise]
    sem = random_sem(graph, args.seed, regime=args.regime, noise=noise, low=args.low, high=args.high)
    data = sample(sem, args.n, args.seed, observed_only=not args.all_vertices)
    _emit(_csv_header(args) + data.to_csv(), args.out)
    if args.sem_out:
        d = sem.to_dict()
        d["meta"] = _meta(args)
        _emit(json.dumps(d, indent=2) + "\n", args.sem_out)
    return EXIT_OK


def cmd_vcsgs(args) -> int:
    from latentcycle.vcsgs import edge_estimation, run_vcsgs

    truth = load_graph(args.truth)[0] if args.truth else None
    data = _load_dataset(args.data) if args.data else None
    if args.mode == "oracle":
        if truth is None:
            raise ValidationError("--mode oracle needs --truth")
    elif data is None:
        raise ValidationError(f"--mode {args.mode} needs --data")
    H = run_vcsgs(
        data,
        ci=args.mode,
        alpha=args.alpha,
        truth=truth,
        max_vertices=args.max_vertices,
        n_perm=args.n_perm,
        seed=args.seed,
        max_extensions=args.max_extensions,
    )
    _emit_json({"pattern": H.to_dict()}, args, args.out)
    if args.estimate:
        if data is None:
            raise ValidationError("--estimate needs --data")
        model = edge_estimation(data, H, L=args.tv_l, m=args.bins)
        _emit_json({"model": model.to_dict()}, args, args.estimate)
    return EXIT_OK


def cmd_discover(args) -> int:
    from latentcycle.latent_discovery import (
        GraphOracle,
        SampleBackend,
        discover,
        evaluate,
    )

    graph_ref = args.graph or args.truth
    truth = load_graph(graph_ref)[0] if graph_ref else None
    if args.mode == "oracle":
        if truth is None:
            raise ValidationError("--mode oracle needs --graph (or --truth)")
        backend = GraphOracle(truth, args.seed)
        observed = [truth.label(v) for v in truth.observed]
        mode = "blocks"
    else:
        if not args.data:
            raise ValidationError(f"--mode {args.mode} needs --data")
        data = _load_dataset(args.data)
        backend = SampleBackend(data, args.alpha, args.gin_alpha, args.n_perm, args.seed)
        observed = data.labels
        mode = args.mode
    result = discover(
        backend,
        observed,
        mode,
        max_k=args.max_k,
        latent_rule=args.latent_rule,
        max_blocks=args.max_blocks,
        max_observed=args.max_observed,
    )
    _emit_json(result.to_dict(), args, args.out)
    if args.metrics:
        if truth is None:
            raise ValidationError("--metrics needs --truth")
        _emit_json({"metrics": evaluate(result, truth).to_dict()}, args, args.metrics)
    return EXIT_OK


def cmd_faithsim(args) -> int:
    from latentcycle import faithfulness_sim as fs

    n_graphs = FULL_SWEEP_GRAPHS if args.full else args.graphs
    nodes = parse_int_list(args.nodes)
    nbs = parse_float_list(args.nb)
    if args.kind == "sweep":
        rows = fs.violation_sweep_rows(
            nodes, nbs, parse_float_list(args.thresholds),
            n_graphs,
            args.seed,
            workers=args.workers,
            max_vertices=args.max_vertices,
        )
        cols = fs.SWEEP_COLUMNS
    elif args.kind == "profile":
        rows = []
        for p in nodes:
            rows += fs.edge_strength_violation_profile_rows(
                p, nbs, args.k, n_graphs, args.seed, workers=args.workers, max_vertices=args.max_vertices
            )
        cols = fs.PROFILE_COLUMNS
    else:
        rows, cols = [], ("p", "nb", "graph", "max_k")
        for p in nodes:
            for nb in nbs:
                nbc = fs.clamp_nb(p, nb)
                ks = fs.max_k_ensemble(
                    p, [nbc], n_graphs, args.seed, workers=args.workers, max_vertices=args.max_vertices
                )
                rows += [{"p": p, "nb": nbc, "graph": i, "max_k": k} for i, k in enumerate(ks)]
    text = fs._rows_to_csv(cols, ([r[c] for c in cols] for r in rows))
    _emit(_csv_header(args) + text, args.out)
    if args.figures:
        from latentcycle.plotting import faithsim_figures

        faithsim_figures(args.kind, rows, args.figures)
    return EXIT_OK


def cmd_tensorcheck(args) -> int:
    from latentcycle import reference_graphs
    from latentcycle.sem import generic_sem
    from latentcycle.tensor_constraints import tensor_constraint_check

    graph, raw = load_graph(args.graph)
    if args.sets:
        sets = parse_sets(args.sets)
    elif "sets" in raw:
        sets = [[str(x) for x in s] for s in raw["sets"]]
    elif raw.get("catalog") == "odd_order_counterexample":
        sets = [list(s) for s in reference_graphs.ODD_ORDER_SETS]
    else:
        raise ValidationError("no endpoint sets: pass --sets or put a 'sets' list in the graph JSON")
    k = len(sets)
    names = [f"s{i + 1}" for i in range(k)]
    if args.order == "all":
        import itertools

        orders = ["".join(names[i] for i in perm) for perm in itertools.permutations(range(k))]
    else:
        orders = [args.order]
    sem = generic_sem(graph, args.seed)
    reports = []
    for order in orders:
        perm = _parse_order(order, k)
        check = tensor_constraint_check(
            sem, [sets[i] for i in perm], len_cap=args.len_cap, max_search=args.max_search, max_n=args.max_n
        )
        reports.append({"order": order, "sets": [sets[i] for i in perm], **check.to_dict()})
    _emit_json({"checks": reports}, args, args.out)
    return EXIT_OK


def _parse_order(order: str, k: int) -> list[int]:
    """``"s2s3s1"`` to ``[1, 2, 0]``."""
    parts = [p for p in order.lower().split("s") if p]
    try:
        perm = [int(p) - 1 for p in parts]
    except ValueError:
        raise ValidationError(f"cannot read axis order {order!r}; expected e.g. s1s2s3") from None
    if sorted(perm) != list(range(k)):
        raise ValidationError(f"axis order {order!r} is not a permutation of s1..s{k}")
    return perm


def cmd_evaluate(args) -> int:
    from latentcycle.latent_discovery import DiscoveryResult, evaluate

    found = DiscoveryResult.from_dict(_read_json(args.found))
    truth = load_graph(args.truth)[0]
    _emit_json({"metrics": evaluate(found, truth).to_dict()}, args, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latentcycle", description="Causal discovery with latent variables and cycles.")
    parser.add_argument("--version", action="version", version=f"latentcycle {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, seed=0):
        p.add_argument("--config", help="JSON file with settings; flags override it")
        p.add_argument("--seed", type=int, default=seed, help="random seed (default %(default)s)")
        p.add_argument("--out", help="output file (default: standard output)")

    p = sub.add_parser("simulate", help="sample data from a linear SEM on a graph")
    common(p)
    p.add_argument("--graph", required=True, help="graph JSON file or catalog:NAME")
    p.add_argument("--n", type=int, default=1000, help="sample size (default %(default)s)")
    p.add_argument("--noise", choices=("gaussian", "uniform", "exponential"), default="exponential")
    p.add_argument("--regime", choices=("unit", "gap"), default="gap", help="coefficient regime")
    p.add_argument("--low", type=float, default=0.5, help="smallest |coefficient| in the gap regime")
    p.add_argument("--high", type=float, default=5.0, help="largest |coefficient| in the gap regime")
    p.add_argument("--all-vertices", action="store_true", help="also write latent columns")
    p.add_argument("--sem-out", help="write the sampled SEM as JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("vcsgs", help="very conservative SGS and edge estimation")
    common(p)
    p.add_argument("--data", help="CSV dataset")
    p.add_argument("--alpha", type=float, default=0.01, help="CI test level (default %(default)s)")
    p.add_argument("--mode", choices=("gaussian", "nonparam", "oracle"), default="gaussian")
    p.add_argument("--truth", help="graph JSON for --mode oracle")
    p.add_argument("--tv-l", type=float, default=2.0, help="TV smoothness constant L")
    p.add_argument("--bins", type=int, default=None, help="histogram bins per axis")
    p.add_argument("--n-perm", type=int, default=50, help="permutations per nonparametric test")
    p.add_argument("--max-vertices", type=int, default=12, help="vertex cap for the subset search")
    p.add_argument("--max-extensions", type=int, default=100_000, help="cap on DAG extensions checked")
    p.add_argument("--estimate", help="also run edge estimation and write the model JSON here")
    p.set_defaults(func=cmd_vcsgs)

    p = sub.add_parser("discover", help="latent clusters, causal order and block cycles")
    common(p)
    p.add_argument("--data", help="CSV dataset (cgin and blocks modes)")
    p.add_argument("--mode", choices=("cgin", "blocks", "oracle"), default="blocks")
    p.add_argument("--graph", help="graph JSON or catalog:NAME for --mode oracle")
    p.add_argument("--truth", help="ground-truth graph for --metrics")
    p.add_argument("--metrics", help="write recall/precision metrics JSON here")
    p.add_argument("--alpha", type=float, default=0.01, help="rank test level")
    p.add_argument("--gin-alpha", type=float, default=0.05, help="HSIC level inside GIN tests")
    p.add_argument("--n-perm", type=int, default=200, help="HSIC permutations for small samples")
    p.add_argument("--max-k", type=int, default=4, help="largest latent count searched")
    p.add_argument("--max-blocks", type=int, default=10, help="cap on clusters in one stratum for the block-cycle search")
    p.add_argument("--max-observed", type=int, default=24, help="cap on observed variables in the cluster search")
    p.add_argument("--latent-rule", choices=("floor", "ceil"), default="floor",
                   help="rounding of half the within-cluster rank for cyclic clusters")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("faithsim", help="faithfulness-violation Monte Carlo")
    common(p)
    p.add_argument("--kind", choices=("sweep", "maxk", "profile"), default="sweep")
    p.add_argument("--nodes", default="3,5,10", help="graph sizes, e.g. 3,5,10")
    p.add_argument("--nb", default="2", help="expected neighbourhood sizes, e.g. 2..9")
    p.add_argument("--thresholds", default="0.1,0.01,0.001", help="lambda / k thresholds")
    p.add_argument("--k", type=float, default=0.1, help="k for --kind profile")
    p.add_argument("--graphs", type=int, default=1000, help="graphs per cell (default %(default)s)")
    p.add_argument("--full", action="store_true", help=f"use {FULL_SWEEP_GRAPHS} graphs per cell")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: LATENTCYCLE_THREADS or 1)")
    p.add_argument("--max-vertices", type=int, default=10, help="largest graph size simulated")
    p.add_argument("--figures", help="directory for optional matplotlib figures")
    p.set_defaults(func=cmd_faithsim)

    p = sub.add_parser("tensorcheck", help="k-trek criterion vs cumulant hyperdeterminant")
    common(p)
    p.add_argument("--graph", required=True, help="graph JSON or catalog:NAME")
    p.add_argument("--sets", help="endpoint sets, e.g. 'X5,X6;X3,X4;X1,X2'")
    p.add_argument("--order", default="s1s2s3", help="axis order such as s2s3s1, or 'all'")
    p.add_argument("--len-cap", type=int, default=None, help="longest trek side searched")
    p.add_argument("--max-search", type=int, default=2_000_000, help="cap on k-trek systems examined")
    p.add_argument("--max-n", type=int, default=5, help="largest set size for the hyperdeterminant")
    p.set_defaults(func=cmd_tensorcheck)

    p = sub.add_parser("evaluate", help="score a cluster/order JSON against a graph")
    common(p)
    p.add_argument("--found", required=True, help="cluster/order JSON from discover")
    p.add_argument("--truth", required=True, help="ground-truth graph JSON or catalog:NAME")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse ``argv`` with defaults taken from the ``--config`` file, if any."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg = _read_json(args.config)
    if not isinstance(cfg, dict):
        raise ValidationError("config file must hold a JSON object")
    section = cfg.get(args.command, cfg)
    section = {k.replace("-", "_"): v for k, v in section.items() if not isinstance(v, dict)}
    known = set(vars(args)) - {"func", "command", "config"}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ValidationError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**section)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if getattr(args, "workers", 0) is None:
            args.workers = _default_workers()
        if getattr(args, "workers", 1) < 1:
            raise ValidationError("--workers must be at least 1")
        return args.func(args)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"latentcycle: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ResourceGuardError as exc:
        flag = "--" + exc.flag.replace("_", "-")
        print(f"latentcycle: refused: {exc} (command-line flag {flag})", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
