"""Candidate parent-set enumeration and the alpha-filter."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import Dataset, MpnType
from .estimation import batch_family_counts, family_counts, row_alphas


def enumerate_candidates(n: int, child: int, k: int) -> list[tuple[int, ...]]:
    """All parent sets of size ``0..k`` drawn from the other nodes, size-then-lex order."""
    if not 0 <= k < max(n, 1):
        raise ValueError(f"need 0 <= k < n, got k={k}, n={n}")
    others = [v for v in range(n) if v != child]
    return [c for s in range(k + 1) for c in itertools.combinations(others, s)]


@lru_cache(maxsize=256)
def _combos(n: int, child: int, s: int) -> np.ndarray:
    others = [v for v in range(n) if v != child]
    combos = list(itertools.combinations(others, s))
    arr = np.array(combos, dtype=np.int64).reshape(len(combos), s)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Verdict:
    """Filter outcome; ``row`` and ``alpha`` name the offending row on rejection."""

    accepted: bool
    row: int | None = None
    alpha: float | None = None

    def __bool__(self):
        return self.accepted


def filter_counts(mpn_type: MpnType, ones, support, pseudocount: float, threshold: float = 0.0, alphas=None):
    """Vectorised alpha-filter over families with statistics of shape ``(..., 2**k)``.

    Returns ``(rejected, worst_row, worst_alpha)``. Only negative rows with
    positive support can reject. ``alphas`` may carry a precomputed
    ``row_alphas`` result.
    """
    alpha, _, _, pos = alphas if alphas is not None else row_alphas(mpn_type, ones, support, pseudocount)
    eligible = (~pos) & (np.asarray(support) > 0)
    masked = np.where(eligible, alpha, np.inf)
    worst_row = np.argmin(masked, axis=-1)
    worst = np.take_along_axis(masked, worst_row[..., None], axis=-1)[..., 0]
    return worst < threshold, worst_row, worst


def alpha_filter(
    mpn_type: MpnType, dataset: Dataset, child: int, parent_set, pseudocount: float = 1.0, threshold: float = 0.0
) -> Verdict:
    """Reject a parent set if any supported negative row has alpha below ``threshold``."""
    parent_set = tuple(sorted(parent_set))
    if not parent_set:
        return Verdict(True)
    ones, support = family_counts(dataset, child, parent_set)
    rejected, row, worst = filter_counts(mpn_type, ones, support, pseudocount, threshold)
    if rejected:
        return Verdict(False, int(row), float(worst))
    return Verdict(True)


@dataclass
class CandidateSet:
    child: int
    parent_sets: list[tuple[int, ...]] = field(default_factory=list)
    rejected: list[tuple[tuple[int, ...], int, float]] = field(default_factory=list)

    def to_dict(self, names=None) -> dict:
        label = (lambda ps: [names[p] for p in ps]) if names else list
        return {
            "child": self.child,
            "accepted": [label(ps) for ps in self.parent_sets],
            "rejected": [{"parents": label(ps), "row": row, "alpha": a} for ps, row, a in self.rejected],
        }


@lru_cache(maxsize=64)
def _family_index(n: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Every ``(child, parent set)`` pair with ``s`` parents, ordered by child then lex."""
    children, combos = [], []
    for child in range(n):
        cs = _combos(n, child, s)
        children.append(np.full(len(cs), child, dtype=np.int64))
        combos.append(cs)
    ch = np.concatenate(children)
    co = np.concatenate(combos).reshape(len(ch), s)
    ch.setflags(write=False)
    co.setflags(write=False)
    return ch, co


@dataclass(frozen=True, eq=False)
class SizeBlock:
    """Statistics for all families with the same number of parents."""

    children: np.ndarray
    combos: np.ndarray
    ones: np.ndarray
    support: np.ndarray

    @property
    def masks(self) -> np.ndarray:
        if self.combos.shape[1] == 0:
            return np.zeros(len(self.children), dtype=np.int64)
        return np.left_shift(1, self.combos).sum(axis=1)


@dataclass(frozen=True, eq=False)
class FamilyStats:
    """Family statistics for every candidate parent set of every node.

    ``sizes[s]`` holds all ``(child, parent set)`` pairs with ``s`` parents.
    Computing this once lets several scores share the counting pass.
    """

    n: int
    k: int
    m: int
    sizes: tuple[SizeBlock, ...]

    @classmethod
    def from_dataset(cls, dataset: Dataset, k: int) -> "FamilyStats":
        n = dataset.n
        if not 0 <= k < max(n, 1):
            raise ValueError(f"need 0 <= k < n, got k={k}, n={n}")
        sizes = []
        for s in range(k + 1):
            children, combos = _family_index(n, s)
            ones, support = batch_family_counts(dataset.values, children, combos)
            sizes.append(SizeBlock(children, combos, ones, support))
        return cls(n, k, dataset.m, tuple(sizes))

    def accepted(self, mpn_type: MpnType, pseudocount: float, threshold: float | None, alphas=None):
        """Per size, ``(accepted, worst_row, worst_alpha)`` arrays over the block's families."""
        out = []
        for s, block in enumerate(self.sizes):
            if threshold is None or s == 0:
                out.append((np.ones(len(block.children), dtype=bool), None, None))
            else:
                ra = alphas[s] if alphas is not None else None
                rejected, row, worst = filter_counts(mpn_type, block.ones, block.support, pseudocount, threshold, ra)
                out.append((~rejected, row, worst))
        return out

    def row_alphas(self, mpn_type: MpnType, pseudocount: float) -> list:
        return [row_alphas(mpn_type, b.ones, b.support, pseudocount) for b in self.sizes]


def filter_all(
    mpn_type: MpnType,
    dataset: Dataset,
    k: int,
    pseudocount: float = 1.0,
    threshold: float = 0.0,
    stats: FamilyStats | None = None,
) -> list[CandidateSet]:
    """Enumerate and alpha-filter the candidate parent sets of every node."""
    stats = stats or FamilyStats.from_dataset(dataset, k)
    result = [CandidateSet(child) for child in range(stats.n)]
    for block, (acc, row, worst) in zip(stats.sizes, stats.accepted(mpn_type, pseudocount, threshold)):
        for i, (child, combo) in enumerate(zip(block.children, block.combos)):
            ps = tuple(int(p) for p in combo)
            if acc[i]:
                result[child].parent_sets.append(ps)
            else:
                result[child].rejected.append((ps, int(row[i]), float(worst[i])))
    return result


def rejected_true_sets(candidates: list[CandidateSet], parent_sets) -> int:
    """How many of the given true parent sets were rejected."""
    count = 0
    for cs, true_ps in zip(candidates, parent_sets):
        if any(ps == tuple(true_ps) for ps, _, _ in cs.rejected):
            count += 1
    return count
