"""Exact score maximisation over bounded in-degree DAGs.

Dynamic programming over node subsets: for each node the best parent set
contained in every candidate predecessor set, then the best ordering by
repeatedly choosing a sink. Cost is ``O(n**2 * 2**n)`` time and
``O(n * 2**n)`` memory, fine for the ten-node problems targeted here.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Dag, Dataset, MpnType, PolarisError, TooLarge
from .filtering import FamilyStats
from .scoring import ScoreKind, edge_confidences, scores_from_counts

MAX_SEARCH_NODES = 25
MAX_PARENTS = 5


class InfeasibleCache(PolarisError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LocalScoreCache:
    """Admissible parent sets per node as bitmasks with their local score totals."""

    n: int
    k: int
    kind: ScoreKind | None
    masks: tuple[np.ndarray, ...]
    scores: tuple[np.ndarray, ...]
    rejected: tuple[int, ...] = ()

    def __post_init__(self):
        for v, (mk, sc) in enumerate(zip(self.masks, self.scores)):
            if len(mk) != len(sc):
                raise ValueError(f"node {v}: {len(mk)} masks but {len(sc)} scores")

    @classmethod
    def from_entries(cls, n: int, entries, k: int | None = None, kind: ScoreKind | None = None) -> "LocalScoreCache":
        """Build from ``entries[v] = [(parent_tuple, score), ...]``."""
        masks, scores = [], []
        for v in range(n):
            mk = [sum(1 << p for p in ps) for ps, _ in entries[v]]
            masks.append(np.array(mk, dtype=np.int64))
            scores.append(np.array([s for _, s in entries[v]], dtype=float))
        if k is None:
            k = max((len(ps) for ent in entries for ps, _ in ent), default=0)
        return cls(n, k, kind, tuple(masks), tuple(scores))

    def size(self) -> int:
        return int(sum(len(m) for m in self.masks))

    def entries(self, v: int) -> list[tuple[tuple[int, ...], float]]:
        return [(mask_to_parents(int(mk)), float(sc)) for mk, sc in zip(self.masks[v], self.scores[v])]

    def validate(self) -> None:
        for v in range(self.n):
            if len(self.masks[v]) == 0:
                raise InfeasibleCache(f"node {v} has no admissible parent sets")
            if np.any(self.masks[v] & (1 << v)):
                raise InfeasibleCache(f"node {v} lists itself as a parent")


def mask_to_parents(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def build_cache(
    mpn_type: MpnType,
    dataset: Dataset,
    k: int = 3,
    kind: ScoreKind = ScoreKind("polaris"),
    pseudocount: float = 1.0,
    threshold: float | None = 0.0,
    stats: FamilyStats | None = None,
) -> LocalScoreCache:
    """Score every candidate parent set that survives the alpha-filter.

    ``threshold=None`` disables filtering. POLARIS hypotheses whose alpha
    term is undefined (a supported negative row with alpha exactly 0) are
    dropped as well.
    """
    if k > MAX_PARENTS:
        raise ValueError(f"max parents is limited to {MAX_PARENTS}, got {k}")
    if stats is None:
        stats = FamilyStats.from_dataset(dataset, min(k, dataset.n - 1))
    mk_parts, sc_parts, ch_parts = [], [], []
    rejected = np.zeros(stats.n, dtype=np.int64)
    alphas = stats.row_alphas(mpn_type, pseudocount) if kind.name == "polaris" or threshold is not None else None
    verdicts = stats.accepted(mpn_type, pseudocount, threshold, alphas)
    for s, (block, (acc, _, _)) in enumerate(zip(stats.sizes, verdicts)):
        ra = alphas[s] if kind.name == "polaris" else None
        _, _, total = scores_from_counts(kind, mpn_type, block.ones, block.support, stats.m, pseudocount, ra)
        total = total[acc]
        keep = np.isfinite(total)
        mk_parts.append(block.masks[acc][keep])
        sc_parts.append(total[keep])
        ch_parts.append(block.children[acc][keep])
        rejected += np.bincount(block.children[~acc], minlength=stats.n)
    all_masks = np.concatenate(mk_parts).astype(np.int64)
    all_scores = np.concatenate(sc_parts)
    all_children = np.concatenate(ch_parts)
    masks = [all_masks[all_children == v] for v in range(stats.n)]
    scores = [all_scores[all_children == v] for v in range(stats.n)]
    rejected = [int(r) for r in rejected]
    return LocalScoreCache(stats.n, stats.k, kind, tuple(masks), tuple(scores), tuple(rejected))


def _best_parent_tables(cache: LocalScoreCache):
    """For each node and predecessor set S, the best admissible parent set within S.

    Ties go to the numerically smallest mask.
    """
    n = cache.n
    full = 1 << n
    sentinel = np.int64(full)
    subsets = np.arange(full, dtype=np.int64)
    best = np.full((n, full), -np.inf)
    arg = np.full((n, full), sentinel, dtype=np.int64)
    for v in range(n):
        order = np.argsort(cache.masks[v], kind="stable")
        mk, sc = cache.masks[v][order], cache.scores[v][order]
        best[v, mk] = sc
        arg[v, mk] = mk
    for b in range(n):
        with_b = subsets[(subsets >> b) & 1 == 1]
        without_b = with_b ^ (1 << b)
        cand_s, cur_s = best[:, without_b], best[:, with_b]
        cand_a, cur_a = arg[:, without_b], arg[:, with_b]
        take = (cand_s > cur_s) | ((cand_s == cur_s) & (cand_a < cur_a))
        best[:, with_b] = np.where(take, cand_s, cur_s)
        arg[:, with_b] = np.where(take, cand_a, cur_a)
    return best, arg


def _popcount(full: int, n: int) -> np.ndarray:
    subsets = np.arange(full, dtype=np.int64)
    pc = np.zeros(full, dtype=np.int64)
    for b in range(n):
        pc += (subsets >> b) & 1
    return pc


def _forward(best: np.ndarray, n: int):
    """``value[S]``: best total of the nodes in S with parents inside S; ``sink[S]`` attains it."""
    full = 1 << n
    subsets = np.arange(full, dtype=np.int64)
    popcount = _popcount(full, n)
    value = np.full(full, -np.inf)
    value[0] = 0.0
    sink = np.full(full, -1, dtype=np.int64)
    nodes = np.arange(n)
    for size in range(1, n + 1):
        layer = subsets[popcount == size]
        member = ((layer[:, None] >> nodes[None, :]) & 1) == 1
        rest = layer[:, None] ^ (member * (1 << nodes[None, :]))
        cand = np.where(member, value[rest] + best[nodes[None, :], rest], -np.inf)
        pick = np.argmax(cand, axis=1)
        value[layer] = cand[np.arange(len(layer)), pick]
        sink[layer] = pick
    return value, sink


def _backward(best: np.ndarray, n: int) -> np.ndarray:
    """``back[S]``: best total of the nodes outside S when S precedes all of them."""
    full = 1 << n
    subsets = np.arange(full, dtype=np.int64)
    popcount = _popcount(full, n)
    back = np.full(full, -np.inf)
    back[full - 1] = 0.0
    nodes = np.arange(n)
    for size in range(n - 1, -1, -1):
        layer = subsets[popcount == size]
        outside = ((layer[:, None] >> nodes[None, :]) & 1) == 0
        nxt = layer[:, None] | (outside * (1 << nodes[None, :]))
        cand = np.where(outside, best[nodes[None, :], layer[:, None]] + back[nxt], -np.inf)
        back[layer] = cand.max(axis=1)
    return back


def _solve(cache: LocalScoreCache) -> list[int] | None:
    """Parent masks of one optimal DAG, or None when no acyclic choice exists."""
    n = cache.n
    best, arg = _best_parent_tables(cache)
    value, sink = _forward(best, n)
    full = 1 << n
    if not np.isfinite(value[full - 1]):
        return None
    masks = [0] * n
    s = full - 1
    while s:
        v = int(sink[s])
        s ^= 1 << v
        masks[v] = int(arg[v, s])
    return masks


def _pinned_optima(cache: LocalScoreCache) -> list[np.ndarray]:
    """For every node and cache entry, the best total of a DAG using that entry."""
    n = cache.n
    full = 1 << n
    best, _ = _best_parent_tables(cache)
    value, _ = _forward(best, n)
    back = _backward(best, n)
    subsets = np.arange(full, dtype=np.int64)
    out = []
    for v in range(n):
        bit = 1 << v
        h = np.where(subsets & bit, -np.inf, value + back[subsets | bit])
        # max over supersets: predecessor sets that contain the parent mask
        for b in range(n):
            lo = subsets[(subsets >> b) & 1 == 0]
            h[lo] = np.maximum(h[lo], h[lo | (1 << b)])
        out.append(cache.scores[v] + h[cache.masks[v]])
    return out


def _restricted(cache: LocalScoreCache, pinned: dict[int, int]) -> LocalScoreCache:
    masks, scores = list(cache.masks), list(cache.scores)
    for v, mk in pinned.items():
        keep = cache.masks[v] == mk
        masks[v], scores[v] = cache.masks[v][keep], cache.scores[v][keep]
    return LocalScoreCache(cache.n, cache.k, cache.kind, tuple(masks), tuple(scores))


def exact_search(cache: LocalScoreCache) -> tuple[Dag, float]:
    """Highest-scoring DAG whose parent sets all come from ``cache``.

    Among optimal DAGs the one whose parent masks, read as a sequence over
    nodes ``0..n-1``, are lexicographically smallest is returned. Totals are
    compared after exact (``math.fsum``) summation, so the choice does not
    depend on addition order.
    """
    n = cache.n
    if n > MAX_SEARCH_NODES:
        raise TooLarge(f"exact search limited to {MAX_SEARCH_NODES} nodes, got {n}")
    cache.validate()
    if n == 0:
        return Dag(()), 0.0
    lookup = [dict(zip(cache.masks[v].tolist(), cache.scores[v].tolist())) for v in range(n)]

    def total(masks):
        return math.fsum(lookup[v][mk] for v, mk in enumerate(masks))

    masks = _solve(cache)
    if masks is None:
        raise InfeasibleCache("no acyclic combination of cached parent sets exists")
    target = total(masks)
    slack = 1e-9 * max(1.0, abs(target))

    def near_ties(c, current):
        # entries smaller than the current choice that reach the optimum up to rounding
        pinned_best = _pinned_optima(c)
        return [
            sorted(int(mk) for mk, sc in zip(c.masks[v], pinned_best[v]) if mk < current[v] and sc >= target - slack)
            for v in range(n)
        ]

    if any(near_ties(cache, masks)):
        # pin nodes in index order to the smallest entry that keeps an optimal completion
        pinned: dict[int, int] = {}
        for v in range(n):
            sub = _restricted(cache, pinned)
            for mk in near_ties(sub, masks)[v]:
                trial = _solve(_restricted(cache, {**pinned, v: mk}))
                if trial is not None and total(trial) >= target:
                    masks = trial
                    break
            pinned[v] = masks[v]
    dag = Dag(tuple(mask_to_parents(mk) for mk in masks))
    return dag, total(masks)


@dataclass
class LearnResult:
    dag: Dag
    score: float
    kind: ScoreKind
    cache_size: int
    rejected_per_node: list[int]
    runtime_ms: int
    fold_changes: dict = field(default_factory=dict)

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected_per_node)

    def confidences(self) -> dict[tuple[int, int], float]:
        return {e: fc.ratio for e, fc in self.fold_changes.items()}

    def diagnostics(self, names=None) -> dict:
        names = names or self.dag.names
        return {
            "score_kind": str(self.kind),
            "score": self.score,
            "cache_size": self.cache_size,
            "rejected_total": self.rejected_total,
            "rejected_per_node": dict(zip(names, self.rejected_per_node)),
            "runtime_ms": self.runtime_ms,
            "edges": [
                {
                    "parent": names[p],
                    "child": names[c],
                    "fold_change": fc.ratio,
                    "score_difference": fc.difference,
                }
                for (p, c), fc in sorted(self.fold_changes.items(), key=lambda kv: (kv[0][1], kv[0][0]))
            ],
        }


def learn(
    dataset: Dataset,
    mpn_type: MpnType,
    kind: ScoreKind = ScoreKind("polaris"),
    k: int = 3,
    pseudocount: float = 1.0,
    threshold: float = 0.0,
    use_filter: bool | None = None,
    stats: FamilyStats | None = None,
    confidences: bool = True,
) -> LearnResult:
    """Filter, cache and search: the full structure-learning pipeline.

    The alpha-filter is applied by default only for the POLARIS score;
    pass ``use_filter`` to force it on or off.
    """
    start = time.perf_counter()
    if use_filter is None:
        use_filter = kind.name == "polaris"
    k = min(k, max(dataset.n - 1, 0))
    if stats is None or stats.k != k:
        stats = FamilyStats.from_dataset(dataset, k)
    cache = build_cache(mpn_type, dataset, k, kind, pseudocount, threshold if use_filter else None, stats)
    dag, score = exact_search(cache)
    dag = Dag(dag.parent_sets, dataset.names)
    folds = edge_confidences(dataset, dag, mpn_type, kind, pseudocount) if confidences else {}
    runtime = int(round((time.perf_counter() - start) * 1000))
    return LearnResult(dag, score, kind, cache.size(), list(cache.rejected), runtime, folds)
