"""Empirical CPD estimation and the per-row alpha monotonicity statistics.

Everything here works from per-row sufficient statistics: ``ones[r]``, the
number of samples with parent row ``r`` and the child active, and
``support[r]``, the number of samples with parent row ``r``. The statistics
may be real-valued, which lets exact probabilities stand in for counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Cpd, Dataset, MpnType, positive_rows


def parent_rows(values: np.ndarray, parents) -> np.ndarray:
    """Row index of every sample's parent assignment."""
    idx = np.zeros(values.shape[0], dtype=np.int64)
    for i, p in enumerate(parents):
        idx |= values[:, p].astype(np.int64) << i
    return idx


def family_counts(dataset: Dataset, child: int, parents) -> tuple[np.ndarray, np.ndarray]:
    """``(ones, support)`` per parent row for ``child`` given ``parents``."""
    parents = tuple(parents)
    if child in parents:
        raise ValueError(f"node {child} cannot be its own parent")
    for p in (child, *parents):
        if not 0 <= p < dataset.n:
            raise IndexError(f"variable index {p} out of range for {dataset.n} columns")
    idx = parent_rows(dataset.values, parents)
    rows = 1 << len(parents)
    support = np.bincount(idx, minlength=rows).astype(float)
    ones = np.bincount(idx, weights=dataset.values[:, child], minlength=rows)
    return ones, support


def smoothed(ones, support, pseudocount: float) -> np.ndarray:
    """Laplace-smoothed row estimates; zero-support rows with no smoothing give 0.5."""
    ones = np.asarray(ones, dtype=float)
    support = np.asarray(support, dtype=float)
    num = ones + pseudocount
    den = support + 2.0 * pseudocount
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.5)
    return theta


def estimate_cpd(dataset: Dataset, child: int, parents, pseudocount: float = 1.0) -> Cpd:
    ones, support = family_counts(dataset, child, parents)
    return Cpd(child, tuple(parents), smoothed(ones, support, pseudocount), support)


def pooled_theta_plus(mpn_type: MpnType, ones, support, pseudocount: float) -> np.ndarray:
    """Pooled positive-condition estimate ``P(child=1 | positive row)``.

    Works over the last axis so batches of families can be pooled at once.
    """
    ones = np.asarray(ones, dtype=float)
    support = np.asarray(support, dtype=float)
    k = int(np.log2(ones.shape[-1]))
    pos = positive_rows(mpn_type, k)
    return smoothed(ones[..., pos].sum(axis=-1), support[..., pos].sum(axis=-1), pseudocount)


def theta_plus(mpn_type: MpnType, dataset: Dataset, child: int, parents, pseudocount: float = 1.0) -> float:
    ones, support = family_counts(dataset, child, parents)
    return float(pooled_theta_plus(mpn_type, ones, support, pseudocount))


def alpha_values(theta_pos, theta_neg) -> np.ndarray:
    """``(theta_pos - theta_neg) / (theta_pos + theta_neg)``, taken as 0 when both vanish."""
    tp = np.asarray(theta_pos, dtype=float)
    tn = np.asarray(theta_neg, dtype=float)
    den = tp + tn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, (tp - tn) / np.where(den > 0, den, 1.0), 0.0)


def row_alphas(mpn_type: MpnType, ones, support, pseudocount: float):
    """Per-row alpha (1 on positive rows) and the row estimates it came from.

    Broadcasts over leading axes; returns ``(alpha, theta, theta_plus, positive_mask)``.
    """
    ones = np.asarray(ones, dtype=float)
    support = np.asarray(support, dtype=float)
    k = int(np.log2(ones.shape[-1]))
    pos = positive_rows(mpn_type, k)
    theta = smoothed(ones, support, pseudocount)
    tplus = pooled_theta_plus(mpn_type, ones, support, pseudocount)
    alpha = np.where(pos, 1.0, alpha_values(np.expand_dims(tplus, -1), theta))
    return alpha, theta, tplus, pos


@dataclass(frozen=True, eq=False)
class AlphaTable:
    child: int
    parents: tuple[int, ...]
    positive: np.ndarray
    theta_hat: np.ndarray
    theta_plus_pooled: float
    alpha: np.ndarray
    support: np.ndarray

    def negative_rows(self) -> list[int]:
        return [r for r in range(len(self.alpha)) if not self.positive[r]]

    def to_dict(self) -> dict:
        return {
            "child": self.child,
            "parents": list(self.parents),
            "theta_plus": float(self.theta_plus_pooled),
            "rows": [
                {
                    "row": r,
                    "class": "positive" if self.positive[r] else "negative",
                    "theta_hat": float(self.theta_hat[r]),
                    "alpha": float(self.alpha[r]),
                    "support": float(self.support[r]),
                }
                for r in range(len(self.alpha))
            ],
        }


def alpha_table_from_counts(mpn_type: MpnType, child: int, parents, ones, support, pseudocount: float = 1.0) -> AlphaTable:
    alpha, theta, tplus, pos = row_alphas(mpn_type, ones, support, pseudocount)
    return AlphaTable(child, tuple(parents), pos, theta, float(tplus), alpha, np.asarray(support, dtype=float))


def alpha_table(mpn_type: MpnType, dataset: Dataset, child: int, parents, pseudocount: float = 1.0) -> AlphaTable:
    ones, support = family_counts(dataset, child, parents)
    return alpha_table_from_counts(mpn_type, child, parents, ones, support, pseudocount)


def batch_family_counts(values: np.ndarray, children, combos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Family statistics for many same-size families at once.

    ``children`` is an int or an array of ``C`` child indices and ``combos``
    a ``(C, s)`` array of parent sets; the result is a pair of ``(C, 2**s)``
    arrays ``(ones, support)``. One bin-counting pass covers every family,
    so the work is linear in the sample count.
    """
    c, s = combos.shape
    rows = 1 << s
    children = np.broadcast_to(np.asarray(children, dtype=np.int64), (c,))
    cols = values.astype(np.int64)
    key = cols[:, children] << s
    for i in range(s):
        key |= cols[:, combos[:, i]] << i
    key += np.arange(c, dtype=np.int64) * (2 * rows)
    counts = np.bincount(key.ravel(), minlength=c * 2 * rows).reshape(c, 2, rows).astype(float)
    return counts[:, 1, :], counts.sum(axis=1)
