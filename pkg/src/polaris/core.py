"""Core model types: DAGs, CPD tables, MPN networks and binary datasets.

CPD rows are indexed by parent assignment with bit ``i`` of the row index
holding the value of the ``i``-th parent (least-significant bit first).
"""

from __future__ import annotations

import csv
import enum
import functools
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class PolarisError(Exception):
    """Base class for errors raised by this package."""


class InvalidDag(PolarisError, ValueError):
    pass


class CycleDetected(InvalidDag):
    def __init__(self, cycle: Sequence[int]):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(str(i) for i in self.cycle))


class IndexOutOfRange(InvalidDag):
    pass


class DuplicateParent(InvalidDag):
    pass


class SelfLoop(InvalidDag):
    pass


class InvalidNetwork(PolarisError, ValueError):
    pass


class InvalidDataset(PolarisError, ValueError):
    pass


class TooLarge(PolarisError, ValueError):
    pass


class MpnType(enum.Enum):
    CMPN = "CMPN"
    DMPN = "DMPN"
    XMPN = "XMPN"

    @classmethod
    def parse(cls, value: "str | MpnType") -> "MpnType":
        if isinstance(value, MpnType):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown MPN type {value!r}; expected one of cmpn, dmpn, xmpn") from None


# ---------------------------------------------------------------------------
# Row encoding and classification


def row_index(assignment: Sequence[int]) -> int:
    """Encode a parent bit-vector as a CPD row index (first parent = LSB)."""
    r = 0
    for i, bit in enumerate(assignment):
        if bit:
            r |= 1 << i
    return r


def row_assignment(r: int, n_parents: int) -> tuple[int, ...]:
    return tuple((r >> i) & 1 for i in range(n_parents))


def row_class(mpn_type: MpnType, assignment: Sequence[int]) -> bool:
    """Return True when ``assignment`` is a positive row for ``mpn_type``.

    Roots (empty assignment) are positive for every type.
    """
    k = len(assignment)
    if k == 0:
        return True
    s = sum(1 for b in assignment if b)
    if mpn_type is MpnType.CMPN:
        return s == k
    if mpn_type is MpnType.DMPN:
        return s > 0
    return s == 1


@functools.lru_cache(maxsize=None)
def positive_rows(mpn_type: MpnType, n_parents: int) -> np.ndarray:
    """Boolean mask over the ``2**n_parents`` rows, True for positive rows (read-only)."""
    mask = _positive_rows(mpn_type, n_parents)
    mask.setflags(write=False)
    return mask


def _positive_rows(mpn_type: MpnType, n_parents: int) -> np.ndarray:
    rows = np.arange(1 << n_parents)
    ones = np.zeros(rows.shape, dtype=np.int64)
    for i in range(n_parents):
        ones += (rows >> i) & 1
    if n_parents == 0:
        return np.ones(1, dtype=bool)
    if mpn_type is MpnType.CMPN:
        return ones == n_parents
    if mpn_type is MpnType.DMPN:
        return ones > 0
    return ones == 1


# ---------------------------------------------------------------------------
# DAG


@dataclass(frozen=True)
class Dag:
    """A directed acyclic graph given by per-node parent sets.

    Parent sets are normalised to sorted tuples; validity is checked on
    construction.
    """

    parent_sets: tuple[tuple[int, ...], ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        ps = tuple(tuple(int(p) for p in s) for s in self.parent_sets)
        names = tuple(self.names) if self.names else tuple(f"X{i}" for i in range(len(ps)))
        if len(names) != len(ps):
            raise InvalidDag(f"{len(names)} names for {len(ps)} nodes")
        object.__setattr__(self, "parent_sets", ps)
        object.__setattr__(self, "names", names)
        validate_dag(self)
        object.__setattr__(self, "parent_sets", tuple(tuple(sorted(s)) for s in ps))

    @property
    def n(self) -> int:
        return len(self.parent_sets)

    @classmethod
    def empty(cls, n: int, names: Sequence[str] = ()) -> "Dag":
        return cls(tuple(() for _ in range(n)), tuple(names))

    @classmethod
    def from_edges(cls, n: int, edges, names: Sequence[str] = ()) -> "Dag":
        ps: list[list[int]] = [[] for _ in range(n)]
        for u, v in edges:
            ps[v].append(u)
        return cls(tuple(tuple(sorted(p)) for p in ps), tuple(names))

    def edges(self) -> list[tuple[int, int]]:
        """Directed edges ``(parent, child)`` sorted by child then parent."""
        return [(p, c) for c, ps in enumerate(self.parent_sets) for p in ps]

    def edge_set(self) -> set[tuple[int, int]]:
        return set(self.edges())

    def with_parents(self, child: int, parents: Sequence[int]) -> "Dag":
        ps = list(self.parent_sets)
        ps[child] = tuple(sorted(parents))
        return Dag(tuple(ps), self.names)

    def without_edge(self, parent: int, child: int) -> "Dag":
        return self.with_parents(child, [p for p in self.parent_sets[child] if p != parent])

    def children(self) -> list[list[int]]:
        ch: list[list[int]] = [[] for _ in range(self.n)]
        for p, c in self.edges():
            ch[p].append(c)
        return ch

    def ancestors(self) -> list[set[int]]:
        """Ancestor set of each node."""
        anc: list[set[int]] = [set() for _ in range(self.n)]
        for v in topological_order(self):
            for p in self.parent_sets[v]:
                anc[v] |= anc[p] | {p}
        return anc


def validate_dag(dag: Dag) -> None:
    """Raise an ``InvalidDag`` subclass if ``dag`` is not a valid DAG."""
    n = len(dag.parent_sets)
    for v, ps in enumerate(dag.parent_sets):
        seen = set()
        for p in ps:
            if not 0 <= p < n:
                raise IndexOutOfRange(f"node {v}: parent index {p} outside [0, {n})")
            if p == v:
                raise SelfLoop(f"node {v} is its own parent")
            if p in seen:
                raise DuplicateParent(f"node {v}: parent {p} listed twice")
            seen.add(p)
    _kahn(dag.parent_sets)


def _kahn(parent_sets) -> list[int]:
    import heapq

    n = len(parent_sets)
    indeg = [len(ps) for ps in parent_sets]
    children: list[list[int]] = [[] for _ in range(n)]
    for v, ps in enumerate(parent_sets):
        for p in ps:
            children[p].append(v)
    heap = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) < n:
        raise CycleDetected(_find_cycle(parent_sets, set(order)))
    return order


def _find_cycle(parent_sets, done: set[int]) -> list[int]:
    # every remaining node has a remaining parent, so walking parents must loop
    v = next(i for i in range(len(parent_sets)) if i not in done)
    path: list[int] = []
    pos: dict[int, int] = {}
    while v not in pos:
        pos[v] = len(path)
        path.append(v)
        v = next(p for p in parent_sets[v] if p not in done)
    cycle = path[pos[v]:]
    cycle.reverse()
    return cycle + [cycle[0]]


def topological_order(dag: Dag) -> list[int]:
    """Parents before children; ties broken by ascending node index."""
    return _kahn(dag.parent_sets)


# ---------------------------------------------------------------------------
# CPDs and networks


@dataclass(frozen=True)
class Cpd:
    child: int
    parents: tuple[int, ...]
    rows: np.ndarray
    support: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.shape != (1 << len(self.parents),):
            raise InvalidNetwork(
                f"CPD of node {self.child}: expected {1 << len(self.parents)} rows, got {rows.shape}"
            )
        if np.any(rows < 0) or np.any(rows > 1) or np.any(np.isnan(rows)):
            raise InvalidNetwork(f"CPD of node {self.child}: probabilities outside [0, 1]")
        support = np.zeros(rows.shape) if self.support is None else np.asarray(self.support, dtype=float)
        rows.setflags(write=False)
        support.setflags(write=False)
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "support", support)

    def __eq__(self, other):
        return (
            isinstance(other, Cpd)
            and self.child == other.child
            and self.parents == other.parents
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.support, other.support)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class Network:
    dag: Dag
    cpds: tuple[Cpd, ...]
    mpn_type: MpnType
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "cpds", tuple(self.cpds))
        object.__setattr__(self, "mpn_type", MpnType.parse(self.mpn_type))
        if not 0.0 <= self.epsilon < 1.0:
            raise InvalidNetwork(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if len(self.cpds) != self.dag.n:
            raise InvalidNetwork(f"{len(self.cpds)} CPDs for {self.dag.n} nodes")
        for i, cpd in enumerate(self.cpds):
            if cpd.child != i or cpd.parents != self.dag.parent_sets[i]:
                raise InvalidNetwork(f"CPD {i} does not match the DAG parent set of node {i}")

    @property
    def n(self) -> int:
        return self.dag.n

    @property
    def names(self) -> tuple[str, ...]:
        return self.dag.names

    def is_conformant(self) -> bool:
        """Negative rows at most epsilon, positive rows above it (roots exempt)."""
        for cpd in self.cpds:
            if not cpd.parents:
                continue
            pos = positive_rows(self.mpn_type, len(cpd.parents))
            if np.any(cpd.rows[pos] <= self.epsilon) or np.any(cpd.rows[~pos] > self.epsilon):
                return False
        return True

    def __eq__(self, other):
        return (
            isinstance(other, Network)
            and self.dag == other.dag
            and self.cpds == other.cpds
            and self.mpn_type is other.mpn_type
            and self.epsilon == other.epsilon
        )

    __hash__ = None  # type: ignore[assignment]


# ---------------------------------------------------------------------------
# Dataset


@dataclass(frozen=True, eq=False)
class Dataset:
    values: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise InvalidDataset(f"expected a 2-d sample matrix, got shape {values.shape}")
        if values.size and not np.all((values == 0) | (values == 1)):
            raise InvalidDataset("dataset entries must be 0 or 1")
        values = values.astype(np.uint8)
        values.setflags(write=False)
        names = tuple(self.names) if self.names else tuple(f"X{i}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise InvalidDataset(f"{len(names)} names for {values.shape[1]} columns")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        return isinstance(other, Dataset) and self.names == other.names and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]


# ---------------------------------------------------------------------------
# Serialisation


def network_to_dict(network: Network) -> dict:
    return {
        "mpn_type": network.mpn_type.value,
        "epsilon": float(network.epsilon),
        "variables": list(network.names),
        "parents": [list(ps) for ps in network.dag.parent_sets],
        "cpds": [{"child": c.child, "rows": [float(x) for x in c.rows]} for c in network.cpds],
    }


def network_from_dict(data: dict) -> Network:
    try:
        names = tuple(data["variables"])
        parents = tuple(tuple(p) for p in data["parents"])
        dag = Dag(parents, names)
        by_child = {int(c["child"]): c["rows"] for c in data["cpds"]}
        cpds = tuple(Cpd(i, dag.parent_sets[i], by_child[i]) for i in range(dag.n))
        return Network(dag, cpds, MpnType.parse(data["mpn_type"]), float(data["epsilon"]))
    except KeyError as exc:
        raise InvalidNetwork(f"network JSON is missing {exc}") from None


def dumps_network(network: Network) -> str:
    # repr round-trips floats exactly, so load -> save is byte-stable
    return json.dumps(network_to_dict(network), indent=2) + "\n"


def loads_network(text: str) -> Network:
    return network_from_dict(json.loads(text))


def save_network(network: Network, path) -> None:
    Path(path).write_text(dumps_network(network), encoding="utf-8")


def load_network(path) -> Network:
    return loads_network(Path(path).read_text(encoding="utf-8"))


def dumps_dataset(dataset: Dataset) -> str:
    buf = io.StringIO()
    buf.write(",".join(dataset.names) + "\n")
    for row in dataset.values:
        buf.write(",".join("1" if x else "0" for x in row) + "\n")
    return buf.getvalue()


def loads_dataset(text: str) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InvalidDataset("empty CSV: missing header line") from None
    names = tuple(h.strip() for h in header)
    rows = []
    for lineno, line in enumerate(reader, start=2):
        if not line or all(not x.strip() for x in line):
            continue
        if len(line) != len(names):
            raise InvalidDataset(f"line {lineno}: expected {len(names)} fields, got {len(line)}")
        row = []
        for col, x in enumerate(line, start=1):
            x = x.strip()
            if x not in ("0", "1"):
                raise InvalidDataset(f"line {lineno}, column {col}: expected 0 or 1, got {x!r}")
            row.append(x == "1")
        rows.append(row)
    values = np.array(rows, dtype=np.uint8).reshape(len(rows), len(names))
    return Dataset(values, names)


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(dataset), encoding="utf-8")


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))
