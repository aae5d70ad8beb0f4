"""Decomposable local and network scores: BIC, POLARIS and clamped DiProg.

All logarithms are natural. A node with ``k`` parents contributes
``2**k`` parameters to the penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .core import Dag, Dataset, MpnType, PolarisError, positive_rows
from .estimation import family_counts, row_alphas, smoothed


class NonPositiveAlpha(PolarisError, ValueError):
    """A supported negative row has alpha <= 0, so the hypothesis is inadmissible."""


class EdgeNotPresent(PolarisError, KeyError):
    pass


@dataclass(frozen=True)
class ScoreKind:
    name: str
    epsilon: float | None = None

    def __post_init__(self):
        name = self.name.lower()
        if name not in ("bic", "polaris", "diprog"):
            raise ValueError(f"unknown score {self.name!r}; expected bic, polaris or diprog")
        object.__setattr__(self, "name", name)
        if name == "diprog":
            if self.epsilon is None or not 0.0 < self.epsilon <= 1.0:
                raise ValueError(f"diprog needs epsilon in (0, 1], got {self.epsilon}")
            object.__setattr__(self, "epsilon", float(self.epsilon))
        elif self.epsilon is not None:
            object.__setattr__(self, "epsilon", None)

    @classmethod
    def parse(cls, text: str, epsilon: float | None = None) -> "ScoreKind":
        """Accepts ``bic``, ``polaris``, ``diprog`` (with ``epsilon``) or ``diprog:0.15``."""
        if ":" in text:
            name, eps = text.split(":", 1)
            return cls(name, float(eps))
        return cls(text, epsilon)

    def __str__(self):
        return f"diprog:{self.epsilon!r}" if self.name == "diprog" else self.name


BIC = ScoreKind("bic")
POLARIS = ScoreKind("polaris")


def diprog(epsilon: float) -> ScoreKind:
    return ScoreKind("diprog", epsilon)


@dataclass(frozen=True)
class LocalScore:
    child: int
    parents: tuple[int, ...]
    ll: float
    alpha_term: float
    dim: int
    total: float

    def to_dict(self) -> dict:
        return {
            "child": self.child,
            "parents": list(self.parents),
            "ll": self.ll,
            "alpha_term": self.alpha_term,
            "dim": self.dim,
            "total": self.total,
        }


def bic_penalty(m: float, k: int) -> float:
    return math.log(m) / 2.0 * (1 << k)


def _ll(ones, support, theta):
    return (xlogy(ones, theta) + xlogy(support - ones, 1.0 - theta)).sum(axis=-1)


def scores_from_counts(kind: ScoreKind, mpn_type: MpnType, ones, support, m: float, pseudocount: float, alphas=None):
    """Vectorised local scores from family statistics.

    ``ones`` and ``support`` have shape ``(..., 2**k)``. Returns arrays
    ``(ll, alpha_term, total)`` over the leading axes; inadmissible POLARIS
    hypotheses (a supported negative row with alpha <= 0) get an
    ``alpha_term`` and ``total`` of ``-inf``. ``alphas`` may carry a
    precomputed ``row_alphas`` result for the same statistics.
    """
    ones = np.asarray(ones, dtype=float)
    support = np.asarray(support, dtype=float)
    k = int(np.log2(ones.shape[-1]))
    penalty = bic_penalty(m, k)
    if kind.name == "polaris":
        alpha, theta, _, pos = alphas if alphas is not None else row_alphas(mpn_type, ones, support, pseudocount)
        ll = _ll(ones, support, theta)
        matched = (~pos) & (support > 0)
        bad = np.any(matched & (alpha <= 0), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(matched, np.log(np.where(matched, np.maximum(alpha, 0.0), 1.0)), 0.0)
        alpha_term = np.where(bad, -np.inf, (support * logs).sum(axis=-1))
        total = ll + alpha_term / m - penalty
        return ll, alpha_term, total
    theta = smoothed(ones, support, pseudocount)
    if kind.name == "diprog" and k > 0:
        pos = positive_rows(mpn_type, k)
        theta = np.where(pos, theta, np.minimum(theta, kind.epsilon))
    ll = _ll(ones, support, theta)
    return ll, np.zeros_like(ll), ll - penalty


def _local(kind, mpn_type, dataset: Dataset, child: int, parents, pseudocount: float) -> LocalScore:
    parents = tuple(sorted(parents))
    ones, support = family_counts(dataset, child, parents)
    ll, at, total = scores_from_counts(kind, mpn_type, ones, support, dataset.m, pseudocount)
    if kind.name == "polaris" and np.isneginf(at):
        raise NonPositiveAlpha(f"node {child} with parents {list(parents)} has a supported negative row with alpha <= 0")
    return LocalScore(child, parents, float(ll), float(at), 1 << len(parents), float(total))


def log_likelihood_local(dataset: Dataset, child: int, parents, pseudocount: float = 1.0) -> float:
    ones, support = family_counts(dataset, child, parents)
    return float(_ll(ones, support, smoothed(ones, support, pseudocount)))


def bic_local(dataset: Dataset, child: int, parents, pseudocount: float = 1.0) -> LocalScore:
    return _local(BIC, MpnType.CMPN, dataset, child, parents, pseudocount)


def alpha_term_local(mpn_type: MpnType, dataset: Dataset, child: int, parents, pseudocount: float = 1.0) -> float:
    """Sum of ``log alpha`` over samples whose parent assignment is a negative row."""
    return _local(POLARIS, mpn_type, dataset, child, parents, pseudocount).alpha_term


def polaris_local(mpn_type: MpnType, dataset: Dataset, child: int, parents, pseudocount: float = 1.0) -> LocalScore:
    return _local(POLARIS, mpn_type, dataset, child, parents, pseudocount)


def diprog_local(mpn_type: MpnType, dataset: Dataset, child: int, parents, epsilon: float, pseudocount: float = 1.0) -> LocalScore:
    return _local(diprog(epsilon), mpn_type, dataset, child, parents, pseudocount)


def local_score(kind: ScoreKind, mpn_type: MpnType, dataset: Dataset, child: int, parents, pseudocount: float = 1.0) -> LocalScore:
    return _local(kind, mpn_type, dataset, child, parents, pseudocount)


def local_total(kind, mpn_type, dataset, child, parents, pseudocount: float = 1.0) -> float:
    """Local score total, with inadmissible POLARIS hypotheses mapped to ``-inf``."""
    try:
        return _local(kind, mpn_type, dataset, child, parents, pseudocount).total
    except NonPositiveAlpha:
        return -math.inf


def network_score(dataset: Dataset, dag: Dag, mpn_type: MpnType, kind: ScoreKind, pseudocount: float = 1.0) -> float:
    return math.fsum(
        _local(kind, mpn_type, dataset, v, ps, pseudocount).total for v, ps in enumerate(dag.parent_sets)
    )


@dataclass(frozen=True)
class FoldChange:
    """Leave-one-edge-out comparison.

    ``ratio`` is ``score(G without edge) / score(G)``; both scores are
    negative, so an edge that helps the fit has a ratio above 1.
    ``difference`` is ``score(G) - score(G without edge)``.
    """

    edge: tuple[int, int]
    score_with: float
    score_without: float
    ratio: float
    difference: float


def edge_fold_change(
    dataset: Dataset, dag: Dag, mpn_type: MpnType, kind: ScoreKind, edge: tuple[int, int], pseudocount: float = 1.0
) -> FoldChange:
    parent, child = edge
    if parent not in dag.parent_sets[child]:
        raise EdgeNotPresent(f"edge {parent}->{child} is not in the graph")
    locals_ = [_local(kind, mpn_type, dataset, v, ps, pseudocount).total for v, ps in enumerate(dag.parent_sets)]
    return _fold_change(dataset, dag, mpn_type, kind, edge, locals_, pseudocount)


def _fold_change(dataset, dag, mpn_type, kind, edge, locals_, pseudocount) -> FoldChange:
    parent, child = edge
    with_edge = math.fsum(locals_)
    # decomposability: only the child's local term moves
    reduced = list(locals_)
    reduced[child] = local_total(kind, mpn_type, dataset, child, [p for p in dag.parent_sets[child] if p != parent], pseudocount)
    without = math.fsum(reduced)
    if with_edge == 0.0:
        ratio = math.inf if without < 0 else 1.0
    else:
        ratio = without / with_edge
    return FoldChange((parent, child), with_edge, without, ratio, with_edge - without)


def edge_confidences(dataset, dag, mpn_type, kind, pseudocount: float = 1.0) -> dict[tuple[int, int], FoldChange]:
    """Fold change of every edge in ``dag``, keyed by ``(parent, child)``."""
    locals_ = [_local(kind, mpn_type, dataset, v, ps, pseudocount).total for v, ps in enumerate(dag.parent_sets)]
    return {e: _fold_change(dataset, dag, mpn_type, kind, e, locals_, pseudocount) for e in dag.edges()}
