"""Command-line front end.

Every subcommand writes its output plus a ``<output>.manifest.json`` that
records the arguments, resolved configuration, seed, package version and
SHA-256 digests of inputs and outputs. Config files are flat ``key = value``
text whose keys mirror the long flags; flags given on the command line win.

Exit codes: 0 success, 1 runtime or data failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .core import Dag, Network, MpnType, PolarisError, dumps_dataset, dumps_network, load_dataset, load_network
from .estimation import alpha_table, estimate_cpd
from .evaluation import (
    GRID_SCORES,
    ExperimentConfig,
    evaluate,
    pr_curve,
    read_results_csv,
    results_to_csv,
    run_cell,
    run_experiment,
)
from .filtering import filter_all
from .scoring import NonPositiveAlpha, ScoreKind, local_score
from .search import learn
from .synthesis import InvalidConfig, SynthesisConfig, make_rng, random_network, sample

# sub-stream ids under the user's seed
STREAM_GEN_NET = 0
STREAM_SAMPLE = 1
# diprog-random reports two rows (mean and worst draw)
DIPROG_EXTRA = 1


class UsageError(Exception):
    """Bad flags or configuration; reported with exit code 2."""


# ---------------------------------------------------------------------------
# small helpers


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(x.strip().lower() for x in str(text).split(",") if x.strip())


def _pair(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return vals


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _mpn(text) -> MpnType:
    try:
        return MpnType.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(path, text: str) -> None:
    # write-then-rename so an interrupted run never leaves a half file
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def manifest_path(output) -> Path:
    return Path(str(output) + ".manifest.json")


def write_manifest(command: str, args: argparse.Namespace, config: dict, inputs, outputs, primary) -> dict:
    manifest = {
        "command": command,
        "argv": list(getattr(args, "_argv", [])),
        "config": config,
        "seed": config.get("seed"),
        "version": __version__,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
    }
    _write(manifest_path(primary), _dump_json(manifest))
    return manifest


def _out_path(args, default_suffix: str) -> Path:
    if args.out:
        return Path(args.out)
    raise UsageError(f"--out is required (e.g. result{default_suffix})")


def _score_kind(name: str, epsilon) -> ScoreKind:
    if name == "diprog" and epsilon is None:
        raise UsageError("--score diprog requires --epsilon")
    try:
        return ScoreKind(name, epsilon)
    except ValueError as exc:
        raise UsageError(f"epsilon: {exc}") from None


def _config_echo(args: argparse.Namespace, keys) -> dict:
    out = {}
    for k in keys:
        v = getattr(args, k)
        if isinstance(v, MpnType):
            v = v.value
        elif isinstance(v, tuple):
            v = [x.value if isinstance(x, MpnType) else x for x in v]
        elif isinstance(v, Path):
            v = str(v)
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_net(args) -> int:
    try:
        config = SynthesisConfig(
            n=args.n,
            max_parents=args.max_parents,
            mpn_type=args.mpn_type,
            epsilon=args.epsilon,
            theta_pos_range=args.theta_pos_range,
            root_marginal_range=args.root_marginal_range,
            forbid_transitive_edges=args.forbid_transitive_edges,
            require_faithful=args.require_faithful,
            seed=args.seed,
        )
    except InvalidConfig as exc:
        raise UsageError(str(exc)) from None
    out = _out_path(args, ".json")
    network = random_network(config, make_rng(config.seed, STREAM_GEN_NET))
    _write(out, dumps_network(network))
    write_manifest("gen-net", args, config.to_dict(), [], [out], out)
    return 0


def cmd_sample(args) -> int:
    if args.m is None:
        raise UsageError("m: --m is required")
    if args.m < 1:
        raise UsageError(f"m: sample size must be at least 1, got {args.m}")
    out = _out_path(args, ".csv")
    network = load_network(args.network)
    data = sample(network, args.m, make_rng(args.seed, STREAM_SAMPLE))
    _write(out, dumps_dataset(data))
    write_manifest("sample", args, _config_echo(args, ["network", "m", "seed"]), [args.network], [out], out)
    return 0


def _estimated_network(data, dag: Dag, mpn_type: MpnType, epsilon: float, pseudocount: float) -> Network:
    cpds = tuple(estimate_cpd(data, v, ps, pseudocount) for v, ps in enumerate(dag.parent_sets))
    return Network(dag, cpds, mpn_type, epsilon)


def to_dot(dag: Dag, confidences: dict) -> str:
    """DOT text with each edge labelled by its fold change (4 decimals)."""
    lines = ["digraph mpn {"]
    lines += [f'  "{name}";' for name in dag.names]
    for p, c in dag.edges():
        lines.append(f'  "{dag.names[p]}" -> "{dag.names[c]}" [label="{confidences[(p, c)]:.4f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_learn(args) -> int:
    kind = _score_kind(args.score, args.epsilon)
    if args.epsilon is not None and not 0.0 <= args.epsilon < 1.0:
        raise UsageError(f"epsilon: must lie in [0, 1), got {args.epsilon}")
    if not 0 <= args.max_parents <= 5:
        raise UsageError(f"max_parents: must lie in [0, 5], got {args.max_parents}")
    if args.pseudocount < 0:
        raise UsageError(f"pseudocount: must be non-negative, got {args.pseudocount}")
    out = _out_path(args, ".json")
    data = load_dataset(args.dataset)
    res = learn(data, args.mpn_type, kind, args.max_parents, args.pseudocount, args.alpha_threshold)
    net = _estimated_network(data, res.dag, args.mpn_type, args.epsilon or 0.0, args.pseudocount)
    _write(out, dumps_network(net))
    outputs = [out]
    base = out.with_suffix("") if out.suffix == ".json" else out
    dot = Path(args.dot) if args.dot else Path(str(base) + ".dot")
    _write(dot, to_dot(res.dag, res.confidences()))
    outputs.append(dot)
    diag = res.diagnostics()
    # wall time varies between runs; keep the file byte-stable
    diag.pop("runtime_ms")
    diag_path = Path(args.diagnostics) if args.diagnostics else Path(str(base) + ".diagnostics.json")
    _write(diag_path, _dump_json(diag))
    outputs.append(diag_path)
    if args.dump_filter:
        k = min(args.max_parents, max(data.n - 1, 0))
        cands = filter_all(args.mpn_type, data, k, args.pseudocount, args.alpha_threshold)
        _write(args.dump_filter, _dump_json([c.to_dict(data.names) for c in cands]))
        outputs.append(Path(args.dump_filter))
    print(f"learned {len(res.dag.edges())} edges, score {res.score:.6f}, {res.runtime_ms} ms", file=sys.stderr)
    keys = ["dataset", "mpn_type", "score", "epsilon", "max_parents", "pseudocount", "alpha_threshold", "seed"]
    write_manifest("learn", args, _config_echo(args, keys), [args.dataset], outputs, out)
    return 0


def cmd_score(args) -> int:
    net = load_network(args.network)
    data = load_dataset(args.dataset)
    if net.names != data.names:
        raise PolarisError(f"dataset columns {list(data.names)} do not match network variables {list(net.names)}")
    mpn_type = args.mpn_type or net.mpn_type
    kind = _score_kind(args.score, args.epsilon)
    out = _out_path(args, ".json")
    locals_ = []
    for v, ps in enumerate(net.dag.parent_sets):
        try:
            locals_.append(local_score(kind, mpn_type, data, v, ps, args.pseudocount))
        except NonPositiveAlpha as exc:
            raise PolarisError(f"node {net.names[v]}: {exc}") from None
    doc = {
        "kind": kind.name,
        "epsilon": kind.epsilon,
        "pseudocount": args.pseudocount,
        "mpn_type": mpn_type.value,
        "total": math.fsum(s.total for s in locals_),
        "local_scores": [dict(s.to_dict(), name=net.names[s.child]) for s in locals_],
    }
    _write(out, _dump_json(doc))
    outputs = [out]
    if args.dump_alpha:
        tables = [
            dict(alpha_table(mpn_type, data, v, ps, args.pseudocount).to_dict(), name=net.names[v])
            for v, ps in enumerate(net.dag.parent_sets)
            if ps
        ]
        _write(args.dump_alpha, _dump_json(tables))
        outputs.append(Path(args.dump_alpha))
    keys = ["network", "dataset", "mpn_type", "score", "epsilon", "pseudocount"]
    write_manifest("score", args, _config_echo(args, keys), [args.network, args.dataset], outputs, out)
    return 0


def _confidences(dag: Dag, path) -> dict:
    """Edge confidences from a learn diagnostics file; equal weights without one."""
    if path is None:
        return {e: 1.0 for e in dag.edges()}
    diag = json.loads(Path(path).read_text(encoding="utf-8"))
    index = {name: i for i, name in enumerate(dag.names)}
    conf = {}
    for e in diag.get("edges", []):
        try:
            conf[(index[e["parent"]], index[e["child"]])] = float(e["fold_change"])
        except KeyError as exc:
            raise PolarisError(f"{path}: unknown variable {exc} in edge list") from None
    return conf


def cmd_eval(args) -> int:
    truth = load_network(args.truth).dag
    learned = load_network(args.learned).dag
    conf = _confidences(learned, args.diagnostics)
    res = evaluate(truth, learned, conf)
    doc = {
        "precision": res.precision,
        "recall": res.recall,
        "aupr": res.aupr,
        "true_edges": res.true_edges,
        "learned_edges": res.learned_edges,
    }
    text = _dump_json(doc)
    inputs = [args.truth, args.learned] + ([args.diagnostics] if args.diagnostics else [])
    if args.out:
        out = Path(args.out)
        _write(out, text)
        write_manifest("eval", args, _config_echo(args, ["truth", "learned", "diagnostics"]), inputs, [out], out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_plot_data(args) -> int:
    truth = load_network(args.truth).dag
    learned = load_network(args.learned).dag
    points = pr_curve(truth, learned, _confidences(learned, args.diagnostics))
    lines = ["cutoff,recall,precision"] + [f"{c},{r!r},{p!r}" for c, r, p in points]
    out = _out_path(args, ".csv")
    _write(out, "\n".join(lines) + "\n")
    inputs = [args.truth, args.learned] + ([args.diagnostics] if args.diagnostics else [])
    write_manifest("plot-data", args, _config_echo(args, ["truth", "learned", "diagnostics"]), inputs, [out], out)
    return 0


BENCH_KEYS = [
    "mpn_types",
    "epsilons",
    "sample_sizes",
    "topologies",
    "resamples_per_topology",
    "n",
    "k",
    "scores",
    "random_epsilon_draws",
    "random_epsilon_range",
    "pseudocount",
    "alpha_threshold",
    "forbid_transitive_edges",
    "require_faithful",
    "max_parents",
    "theta_pos_range",
    "root_marginal_range",
    "seed",
]


def cmd_bench(args) -> int:
    try:
        config = ExperimentConfig(**{k: getattr(args, k) for k in BENCH_KEYS})
        # surface synthesis-range problems before any work starts
        SynthesisConfig(
            n=config.n,
            max_parents=config.max_parents,
            epsilon=max(config.epsilons),
            theta_pos_range=config.theta_pos_range,
            root_marginal_range=config.root_marginal_range,
        )
    except (ValueError, InvalidConfig) as exc:
        raise UsageError(str(exc)) from None
    if args.jobs < 1:
        raise UsageError(f"jobs: must be at least 1, got {args.jobs}")
    out = _out_path(args, ".csv")
    cfg = config.to_dict()
    n_cells = len(config.cells())
    rows: list[dict] = []
    if args.resume and out.exists():
        mpath = manifest_path(out)
        if mpath.exists() and json.loads(mpath.read_text(encoding="utf-8")).get("config") != cfg:
            raise UsageError(f"--resume: {out} was produced with a different configuration")
        rows = [r for r in read_results_csv(out) if r["cell"] < n_cells]
    expected = len(config.scores) + (DIPROG_EXTRA if "diprog-random" in config.scores else 0)
    per_cell: dict[int, list[dict]] = {}
    for r in rows:
        per_cell.setdefault(r["cell"], []).append(r)
    done = {c for c, rs in per_cell.items() if len(rs) == expected}
    rows = [r for r in rows if r["cell"] in done]
    inputs = [args.config] if args.config else []
    log_fh = open(args.log, "a" if args.resume else "w", encoding="utf-8") if args.log else None

    def flush(cell: int, cell_rows: list[dict]) -> None:
        rows.extend(cell_rows)
        _write(out, results_to_csv(rows))
        if log_fh:
            log_fh.flush()
        print(f"cell {cell + 1}/{n_cells} done", file=sys.stderr)

    def log(record: dict) -> None:
        record = dict(record)
        record.pop("runtime_ms", None)
        log_fh.write(json.dumps(record, sort_keys=True) + "\n")

    try:
        todo = [c for c in range(n_cells) if c not in done]
        if args.jobs > 1 and len(todo) > 1:
            run_experiment(config, jobs=args.jobs, skip_cells=done, on_cell=flush, log=log if log_fh else None)
        else:
            for cell in todo:
                flush(cell, run_cell(config, cell, log if log_fh else None))
        if not todo:
            _write(out, results_to_csv(rows))
    finally:
        if log_fh:
            log_fh.close()
    outputs = [out] + ([Path(args.log)] if args.log else [])
    write_manifest("bench", args, cfg, inputs, outputs, out)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polaris", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, out_help="output file"):
        p.add_argument("--config", type=Path, help="flat key = value file; flags override it")
        p.add_argument("--out", "-o", help=out_help)

    p = sub.add_parser("gen-net", help="generate a random MPN")
    common(p, "network JSON to write")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--mpn-type", type=_mpn, default=MpnType.CMPN)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--max-parents", type=int, default=3)
    p.add_argument("--theta-pos-range", type=_pair, default=SynthesisConfig.theta_pos_range)
    p.add_argument("--root-marginal-range", type=_pair, default=SynthesisConfig.root_marginal_range)
    p.add_argument("--forbid-transitive-edges", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--require-faithful", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_net)

    p = sub.add_parser("sample", help="forward-sample a dataset from a network")
    common(p, "dataset CSV to write")
    p.add_argument("network", type=Path)
    p.add_argument("--m", type=int, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("learn", help="learn a network from a dataset")
    common(p, "learned network JSON to write")
    p.add_argument("dataset", type=Path)
    p.add_argument("--mpn-type", type=_mpn, default=MpnType.CMPN)
    p.add_argument("--score", choices=("bic", "polaris", "diprog"), default="polaris")
    p.add_argument("--epsilon", type=float, default=None, help="noise level; required for diprog")
    p.add_argument("--max-parents", type=int, default=3)
    p.add_argument("--pseudocount", type=float, default=1.0)
    p.add_argument("--alpha-threshold", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest; learning is deterministic")
    p.add_argument("--dot", help="DOT file (default: next to --out)")
    p.add_argument("--diagnostics", help="diagnostics JSON (default: next to --out)")
    p.add_argument("--dump-filter", help="write alpha-filter accept/reject lists to this file")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("score", help="score a network structure against a dataset")
    common(p, "score JSON to write")
    p.add_argument("network", type=Path)
    p.add_argument("dataset", type=Path)
    p.add_argument("--mpn-type", type=_mpn, default=None, help="default: the network's type")
    p.add_argument("--score", choices=("bic", "polaris", "diprog"), default="polaris")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--pseudocount", type=float, default=1.0)
    p.add_argument("--dump-alpha", help="write per-node alpha tables to this file")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compare a learned network with the truth")
    common(p, "metrics JSON to write (default: stdout)")
    p.add_argument("truth", type=Path)
    p.add_argument("learned", type=Path)
    p.add_argument("--diagnostics", type=Path, help="learn diagnostics supplying edge confidences")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="run the synthetic experiment grid")
    common(p, "results CSV to write")
    p.add_argument("--mpn-types", type=lambda s: tuple(_mpn(x) for x in _words(s)), default=(MpnType.CMPN,))
    p.add_argument("--epsilons", type=_floats, default=(0.15,))
    p.add_argument("--sample-sizes", type=_ints, default=(200,))
    p.add_argument("--topologies", type=int, default=10)
    p.add_argument("--resamples-per-topology", "--resamples", type=int, default=3)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--scores", type=_words, default=("bic", "polaris", "diprog"), help=f"any of {','.join(GRID_SCORES)}")
    p.add_argument("--random-epsilon-draws", type=int, default=50)
    p.add_argument("--random-epsilon-range", type=_pair, default=(0.01, 0.40))
    p.add_argument("--pseudocount", type=float, default=1.0)
    p.add_argument("--alpha-threshold", type=float, default=0.0)
    p.add_argument("--forbid-transitive-edges", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--require-faithful", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--max-parents", type=int, default=3)
    p.add_argument("--theta-pos-range", type=_pair, default=SynthesisConfig.theta_pos_range)
    p.add_argument("--root-marginal-range", type=_pair, default=SynthesisConfig.root_marginal_range)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--resume", action="store_true", help="skip cells already present in --out")
    p.add_argument("--log", help="per-replicate JSON-lines log")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot-data", help="precision-recall points as CSV")
    common(p, "CSV to write")
    p.add_argument("truth", type=Path)
    p.add_argument("learned", type=Path)
    p.add_argument("--diagnostics", type=Path, help="learn diagnostics supplying edge confidences")
    p.set_defaults(func=cmd_plot_data)

    parser._subparsers_by_name = sub.choices  # type: ignore[attr-defined]
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = parser._subparsers_by_name[args.command]  # type: ignore[attr-defined]
        try:
            values = read_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        known = {a.dest: a for a in sub._actions}
        for key in values:
            if key not in known or key in ("help", "config", "func"):
                raise UsageError(f"{args.config}: unknown key {key!r} for {args.command}")
        # string defaults pass through each option's type converter
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    args._argv = list(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"polaris: error: {exc}", file=sys.stderr)
        return 2
    except (PolarisError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"polaris: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
