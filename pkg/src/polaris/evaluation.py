"""Structure-recovery metrics and the synthetic experiment grid."""

from __future__ import annotations

import csv
import io
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable

from .core import Dag, MpnType, PolarisError
from .filtering import FamilyStats
from .search import learn
from .synthesis import SynthesisConfig, make_rng, random_network, sample
from .scoring import ScoreKind


class NodeMismatch(PolarisError, ValueError):
    pass


@dataclass(frozen=True)
class EvalResult:
    recall: float
    precision: float
    aupr: float
    true_edges: int
    learned_edges: int
    runtime_ms: int = 0


def _check_nodes(truth: Dag, learned: Dag) -> None:
    if truth.n != learned.n or truth.names != learned.names:
        raise NodeMismatch(f"node sets differ: {list(truth.names)} vs {list(learned.names)}")


def precision_recall(truth: Dag, learned: Dag) -> tuple[float, float]:
    """Directed-edge precision and recall; an empty prediction has precision 1."""
    _check_nodes(truth, learned)
    t, l = truth.edge_set(), learned.edge_set()
    hit = len(t & l)
    precision = hit / len(l) if l else 1.0
    recall = hit / len(t) if t else 1.0
    return precision, recall


def pr_curve(truth: Dag, learned: Dag, confidences: dict) -> list[tuple[int, float, float]]:
    """``(cutoff, recall, precision)`` after each learned edge, strongest first.

    Equal confidences keep the ``(child, parent)`` edge order.
    """
    _check_nodes(truth, learned)
    edges = learned.edges()
    missing = [e for e in edges if e not in confidences]
    if missing:
        raise ValueError(f"no confidence given for edges {missing}")
    ranked = sorted(edges, key=lambda e: -confidences[e])
    t = truth.edge_set()
    points, hit = [], 0
    for i, e in enumerate(ranked, start=1):
        hit += e in t
        points.append((i, hit / len(t) if t else 1.0, hit / i))
    return points


def aupr(truth: Dag, learned: Dag, confidences: dict) -> float:
    """Step-wise area under the rank-cutoff precision-recall curve.

    True edges that are never predicted cap the curve below recall 1.
    """
    points = pr_curve(truth, learned, confidences)
    if truth.n and not truth.edge_set():
        return 1.0 if not points else 0.0
    area, prev = 0.0, 0.0
    for _, r, p in points:
        area += (r - prev) * p
        prev = r
    return area


def evaluate(truth: Dag, learned: Dag, confidences: dict, runtime_ms: int = 0) -> EvalResult:
    precision, recall = precision_recall(truth, learned)
    return EvalResult(
        recall, precision, aupr(truth, learned, confidences), len(truth.edge_set()), len(learned.edge_set()), runtime_ms
    )


# ---------------------------------------------------------------------------
# experiment grid

DIPROG_TRUE = "diprog"
DIPROG_RANDOM = "diprog-random"
GRID_SCORES = ("bic", "polaris", DIPROG_TRUE, DIPROG_RANDOM)
# a DiProg clamp of exactly 0 sends every noisy sample to log 0
MIN_DIPROG_EPSILON = 1e-3


@dataclass(frozen=True)
class ExperimentConfig:
    mpn_types: tuple[MpnType, ...] = (MpnType.CMPN,)
    epsilons: tuple[float, ...] = (0.15,)
    sample_sizes: tuple[int, ...] = (200,)
    topologies: int = 10
    resamples_per_topology: int = 3
    n: int = 10
    k: int = 3
    scores: tuple[str, ...] = ("bic", "polaris", DIPROG_TRUE)
    random_epsilon_draws: int = 50
    random_epsilon_range: tuple[float, float] = (0.01, 0.40)
    pseudocount: float = 1.0
    alpha_threshold: float = 0.0
    forbid_transitive_edges: bool = False
    require_faithful: bool = False
    max_parents: int = 3
    theta_pos_range: tuple[float, float] = SynthesisConfig.theta_pos_range
    root_marginal_range: tuple[float, float] = SynthesisConfig.root_marginal_range
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mpn_types", tuple(MpnType.parse(t) for t in self.mpn_types))
        object.__setattr__(self, "scores", tuple(s.lower() for s in self.scores))
        for name in ("mpn_types", "epsilons", "sample_sizes", "scores"):
            if not getattr(self, name):
                raise ValueError(f"{name}: must not be empty")
        for name in ("topologies", "resamples_per_topology", "n", "random_epsilon_draws"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name}: must be at least 1")
        for s in self.scores:
            if s not in GRID_SCORES:
                raise ValueError(f"scores: unknown score {s!r}; expected one of {', '.join(GRID_SCORES)}")
        if any(m < 1 for m in self.sample_sizes):
            raise ValueError("sample_sizes: every sample size must be at least 1")

    def cells(self) -> list[tuple[MpnType, float, int]]:
        return [(t, e, m) for t in self.mpn_types for e in self.epsilons for m in self.sample_sizes]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mpn_types"] = [t.value for t in self.mpn_types]
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


RESULT_COLUMNS = [
    "cell",
    "mpn_type",
    "epsilon",
    "m",
    "score",
    "replicates",
    "recall_mean",
    "recall_std",
    "precision_mean",
    "precision_std",
    "aupr_mean",
    "aupr_std",
]


def _mean_std(xs: list[float]) -> tuple[float, float]:
    return statistics.fmean(xs), (statistics.stdev(xs) if len(xs) > 1 else 0.0)


def _summary(cell, mpn_type, eps, m, score, results: list[EvalResult]) -> dict:
    row = {"cell": cell, "mpn_type": mpn_type.value, "epsilon": eps, "m": m, "score": score, "replicates": len(results)}
    for metric in ("recall", "precision", "aupr"):
        mean, std = _mean_std([getattr(r, metric) for r in results])
        row[f"{metric}_mean"] = mean
        row[f"{metric}_std"] = std
    return row


def run_cell(config: ExperimentConfig, cell: int, log: Callable[[dict], None] | None = None) -> list[dict]:
    """Run every replicate of one grid cell and summarise each score."""
    mpn_type, eps, m = config.cells()[cell]
    syn = SynthesisConfig(
        n=config.n,
        max_parents=config.max_parents,
        mpn_type=mpn_type,
        epsilon=eps,
        theta_pos_range=config.theta_pos_range,
        root_marginal_range=config.root_marginal_range,
        forbid_transitive_edges=config.forbid_transitive_edges,
        require_faithful=config.require_faithful,
        seed=config.seed,
    )
    eps_rng = make_rng(config.seed, cell, 2**31 - 1)
    lo, hi = config.random_epsilon_range
    random_eps = [float(x) for x in eps_rng.uniform(lo, hi, size=config.random_epsilon_draws)]
    per_score: dict[str, list[EvalResult]] = {s: [] for s in config.scores}
    per_draw: list[list[EvalResult]] = [[] for _ in random_eps]
    for topo in range(config.topologies):
        truth = random_network(syn, make_rng(config.seed, cell, topo))
        for rep in range(config.resamples_per_topology):
            data = sample(truth, m, make_rng(config.seed, cell, topo, rep + 1))
            stats = FamilyStats.from_dataset(data, min(config.k, data.n - 1))

            def run(kind: ScoreKind) -> EvalResult:
                res = learn(data, mpn_type, kind, config.k, config.pseudocount, config.alpha_threshold, stats=stats)
                ev = evaluate(truth.dag, res.dag, res.confidences(), res.runtime_ms)
                if log:
                    log({"cell": cell, "topology": topo, "replicate": rep, "score": str(kind), **asdict(ev)})
                return ev

            for s in config.scores:
                if s == DIPROG_RANDOM:
                    for i, e in enumerate(random_eps):
                        per_draw[i].append(run(ScoreKind("diprog", e)))
                elif s == DIPROG_TRUE:
                    per_score[s].append(run(ScoreKind("diprog", max(eps, MIN_DIPROG_EPSILON))))
                else:
                    per_score[s].append(run(ScoreKind(s)))
    rows = []
    for s in config.scores:
        if s == DIPROG_RANDOM:
            pooled = [r for draw in per_draw for r in draw]
            rows.append(_summary(cell, mpn_type, eps, m, "diprog-random-mean", pooled))
            worst = min(range(len(per_draw)), key=lambda i: statistics.fmean(r.aupr for r in per_draw[i]))
            rows.append(_summary(cell, mpn_type, eps, m, "diprog-random-worst", per_draw[worst]))
        else:
            rows.append(_summary(cell, mpn_type, eps, m, s, per_score[s]))
    return rows


def _run_cell_job(args):
    config, cell, logging = args
    records: list[dict] = []
    rows = run_cell(config, cell, records.append if logging else None)
    return cell, rows, records


def run_experiment(
    config: ExperimentConfig,
    jobs: int = 1,
    skip_cells: Iterable[int] = (),
    on_cell: Callable[[int, list[dict]], None] | None = None,
    log: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Run the grid; returns summary rows ordered by cell index.

    ``on_cell`` is called as each cell finishes so callers can flush
    partial results. With several jobs, per-replicate ``log`` records are
    replayed in cell order as each cell returns.
    """
    skip = set(skip_cells)
    todo = [c for c in range(len(config.cells())) if c not in skip]
    results: dict[int, list[dict]] = {}
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for cell, rows, records in pool.map(_run_cell_job, [(config, c, log is not None) for c in todo]):
                for record in records:
                    log(record)
                results[cell] = rows
                if on_cell:
                    on_cell(cell, rows)
    else:
        for cell in todo:
            results[cell] = run_cell(config, cell, log)
            if on_cell:
                on_cell(cell, results[cell])
    return [row for cell in sorted(results) for row in results[cell]]


def format_row(row: dict) -> list[str]:
    out = []
    for c in RESULT_COLUMNS:
        v = row[c]
        out.append(repr(float(v)) if isinstance(v, float) else str(v))
    return out


def results_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for row in sorted(rows, key=lambda r: int(r["cell"])):
        w.writerow(format_row(row))
    return buf.getvalue()


def read_results_csv(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["cell"] = int(row["cell"])
        row["m"] = int(row["m"])
        row["replicates"] = int(row["replicates"])
        for c in RESULT_COLUMNS[6:] + ["epsilon"]:
            row[c] = float(row[c])
    return rows
