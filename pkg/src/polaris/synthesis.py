"""Random MPN generation, forward sampling and exact marginals."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .core import (
    Cpd,
    Dag,
    Dataset,
    MpnType,
    Network,
    PolarisError,
    TooLarge,
    positive_rows,
    topological_order,
)

MAX_EXACT_NODES = 22


class InfeasibleConfig(PolarisError, ValueError):
    pass


class InvalidConfig(PolarisError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class SynthesisConfig:
    """Parameters of the random MPN generator.

    ``theta_pos_range`` is half-open ``(lo, hi]``; ``theta_neg_range`` is
    ``[lo, hi]`` and defaults to ``[0, epsilon]``.
    """

    n: int = 10
    max_parents: int = 3
    mpn_type: MpnType = MpnType.CMPN
    epsilon: float = 0.1
    theta_pos_range: tuple[float, float] = (0.5, 0.95)
    theta_neg_range: tuple[float, float] | None = None
    root_marginal_range: tuple[float, float] = (0.4, 0.8)
    forbid_transitive_edges: bool = False
    require_faithful: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mpn_type", MpnType.parse(self.mpn_type))
        if self.theta_neg_range is None:
            object.__setattr__(self, "theta_neg_range", (0.0, float(self.epsilon)))
        self.validate()

    def validate(self) -> None:
        if self.n < 1:
            raise InvalidConfig("n", f"must be at least 1, got {self.n}")
        if self.max_parents < 1:
            raise InvalidConfig("max_parents", f"must be at least 1, got {self.max_parents}")
        if not 0.0 <= self.epsilon < 1.0:
            raise InvalidConfig("epsilon", f"must lie in [0, 1), got {self.epsilon}")
        lo, hi = self.theta_pos_range
        if not (self.epsilon < lo < hi <= 1.0):
            raise InvalidConfig("theta_pos_range", f"need epsilon < lo < hi <= 1, got ({lo}, {hi}]")
        lo, hi = self.theta_neg_range
        if not (0.0 <= lo <= hi <= self.epsilon):
            raise InvalidConfig("theta_neg_range", f"need 0 <= lo <= hi <= epsilon, got [{lo}, {hi}]")
        lo, hi = self.root_marginal_range
        if not (0.0 < lo < hi < 1.0):
            raise InvalidConfig("root_marginal_range", f"need 0 < lo < hi < 1, got ({lo}, {hi})")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed", "must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mpn_type"] = self.mpn_type.value
        d["theta_pos_range"] = list(self.theta_pos_range)
        d["theta_neg_range"] = list(self.theta_neg_range)
        d["root_marginal_range"] = list(self.root_marginal_range)
        return d


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for the named sub-stream ``stream`` of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream)))


# ---------------------------------------------------------------------------
# topology


def random_dag(config: SynthesisConfig, rng: np.random.Generator, max_retries: int = 200) -> Dag:
    """Random DAG over a uniformly permuted topological order.

    Each node draws a parent count uniformly from ``0..max_parents`` and then
    parents uniformly among its predecessors. With
    ``forbid_transitive_edges`` a draw that makes one parent an ancestor of
    another is rejected and redrawn.
    """
    n = config.n
    order = rng.permutation(n)
    parent_sets: list[tuple[int, ...]] = [() for _ in range(n)]
    ancestors: list[set[int]] = [set() for _ in range(n)]
    for pos, v in enumerate(order):
        preds = order[:pos]
        for _ in range(max_retries):
            count = min(int(rng.integers(0, config.max_parents + 1)), len(preds))
            parents = tuple(sorted(int(p) for p in rng.choice(preds, size=count, replace=False))) if count else ()
            if not config.forbid_transitive_edges or not _has_shortcut(parents, ancestors):
                break
        else:
            raise InfeasibleConfig(f"could not draw transitive-free parents for node {v} in {max_retries} tries")
        parent_sets[v] = parents
        for p in parents:
            ancestors[v] |= ancestors[p] | {p}
    return Dag(tuple(parent_sets))


def _has_shortcut(parents, ancestors) -> bool:
    return any(u in ancestors[w] for u in parents for w in parents if u != w)


# ---------------------------------------------------------------------------
# parameters


def random_mpn(dag: Dag, config: SynthesisConfig, rng: np.random.Generator, max_retries: int = 1000) -> Network:
    """Draw monotonicity-conformant CPDs for ``dag``.

    Positive rows are uniform on ``theta_pos_range``, negative rows on
    ``theta_neg_range`` and root marginals on ``root_marginal_range``. When
    the config asks for faithful temporal priority, parameter draws that
    violate it are rejected.
    """
    for _ in range(max_retries):
        cpds = []
        for v, parents in enumerate(dag.parent_sets):
            k = len(parents)
            if k == 0:
                lo, hi = config.root_marginal_range
                rows = np.array([rng.uniform(lo, hi)])
            else:
                pos = positive_rows(config.mpn_type, k)
                u = rng.random(1 << k)
                plo, phi = config.theta_pos_range
                nlo, nhi = config.theta_neg_range
                # 1 - u lies in (0, 1], giving the half-open (lo, hi] positive range
                rows = np.where(pos, plo + (phi - plo) * (1.0 - u), nlo + (nhi - nlo) * u)
            cpds.append(Cpd(v, parents, rows))
        net = Network(dag, tuple(cpds), config.mpn_type, config.epsilon)
        if not config.require_faithful or is_faithful(net):
            return net
    raise InfeasibleConfig(f"no faithful parameterisation found in {max_retries} draws")


def random_network(config: SynthesisConfig, rng: np.random.Generator, max_topologies: int = 50) -> Network:
    """Topology plus parameters, redrawing the topology if it admits no faithful CPDs."""
    last: Exception | None = None
    for _ in range(max_topologies):
        dag = random_dag(config, rng)
        try:
            return random_mpn(dag, config, rng, max_retries=200)
        except InfeasibleConfig as exc:
            last = exc
    raise InfeasibleConfig(f"no faithful network after {max_topologies} topologies") from last


def is_faithful(network: Network) -> bool:
    """Every ancestor is strictly more frequent than each of its descendants."""
    marg = exact_marginals(network)
    for v, anc in enumerate(network.dag.ancestors()):
        if any(marg[a] <= marg[v] for a in anc):
            return False
    return True


# ---------------------------------------------------------------------------
# sampling and exact inference


def sample(network: Network, m: int, rng: np.random.Generator) -> Dataset:
    """Forward-sample ``m`` i.i.d. rows in topological order."""
    if m < 1:
        raise ValueError(f"sample size must be at least 1, got {m}")
    values = np.zeros((m, network.n), dtype=np.uint8)
    for v in topological_order(network.dag):
        cpd = network.cpds[v]
        idx = np.zeros(m, dtype=np.int64)
        for i, p in enumerate(cpd.parents):
            idx |= values[:, p].astype(np.int64) << i
        values[:, v] = rng.random(m) < cpd.rows[idx]
    return Dataset(values, network.names)


def exact_joint(network: Network) -> np.ndarray:
    """Probability of each of the ``2**n`` assignments (bit ``i`` = node ``i``)."""
    n = network.n
    if n > MAX_EXACT_NODES:
        raise TooLarge(f"exact enumeration limited to {MAX_EXACT_NODES} nodes, got {n}")
    states = np.arange(1 << n, dtype=np.int64)
    joint = np.ones(1 << n)
    for v, cpd in enumerate(network.cpds):
        idx = np.zeros_like(states)
        for i, p in enumerate(cpd.parents):
            idx |= ((states >> p) & 1) << i
        p1 = cpd.rows[idx]
        joint *= np.where((states >> v) & 1, p1, 1.0 - p1)
    return joint


def exact_marginals(network: Network) -> np.ndarray:
    """``P(X_i = 1)`` for every node by full enumeration of the joint."""
    joint = exact_joint(network)
    states = np.arange(joint.size, dtype=np.int64)
    return np.array([joint[((states >> v) & 1) == 1].sum() for v in range(network.n)])


def exact_family_counts(network: Network, child: int, parents, joint: np.ndarray | None = None, total: float = 1.0):
    """Expected family counts under the exact joint, scaled to ``total`` samples.

    Returns ``(ones, support)`` indexed by parent row: the probability mass
    with the child active and the mass of each parent assignment.
    """
    if joint is None:
        joint = exact_joint(network)
    states = np.arange(joint.size, dtype=np.int64)
    idx = np.zeros_like(states)
    for i, p in enumerate(parents):
        idx |= ((states >> p) & 1) << i
    rows = 1 << len(parents)
    support = np.bincount(idx, weights=joint, minlength=rows) * total
    ones = np.bincount(idx, weights=joint * ((states >> child) & 1), minlength=rows) * total
    return ones, support
