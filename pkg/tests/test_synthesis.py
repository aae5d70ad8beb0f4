import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polaris.core import Cpd, Dag, MpnType, Network, TooLarge, dumps_dataset, positive_rows
from polaris.synthesis import (
    InfeasibleConfig,
    InvalidConfig,
    SynthesisConfig,
    exact_family_counts,
    exact_joint,
    exact_marginals,
    is_faithful,
    make_rng,
    random_dag,
    random_mpn,
    random_network,
    sample,
)

from oracles import has_transitive_edge, joint_by_enumeration, reachability


def chain(p0=0.5, tpos=0.9, tneg=0.1, eps=0.1):
    dag = Dag(((), (0,)))
    return Network(dag, (Cpd(0, (), [p0]), Cpd(1, (0,), [tneg, tpos])), MpnType.CMPN, eps)


def test_single_node():
    dag = random_dag(SynthesisConfig(n=1), make_rng(0))
    assert dag.n == 1 and dag.edges() == []


def test_in_degree_bound_over_seeds():
    cfg = SynthesisConfig(n=10, max_parents=3)
    sizes = []
    for seed in range(100):
        dag = random_dag(cfg, make_rng(seed))
        sizes += [len(ps) for ps in dag.parent_sets]
    assert max(sizes) <= 3
    # the bound is actually reached
    assert 3 in sizes


def test_no_transitive_edges_when_forbidden():
    cfg = SynthesisConfig(n=8, max_parents=3, forbid_transitive_edges=True)
    for seed in range(100):
        dag = random_dag(cfg, make_rng(seed))
        assert not has_transitive_edge(dag.n, dag.edges()), seed


def test_transitive_edges_appear_when_allowed():
    cfg = SynthesisConfig(n=8, max_parents=3)
    assert any(has_transitive_edge(8, random_dag(cfg, make_rng(s)).edges()) for s in range(30))


def test_reachability_oracle_sanity():
    r = reachability(3, [(0, 1), (1, 2)])
    assert r[0, 2] and not r[2, 0]


def test_random_dag_deterministic():
    cfg = SynthesisConfig(n=10)
    assert random_dag(cfg, make_rng(9, 2)) == random_dag(cfg, make_rng(9, 2))
    assert random_dag(cfg, make_rng(9, 2)) != random_dag(cfg, make_rng(9, 3))


def test_retry_budget_exhaustion():
    # one try per node: draws either come out shortcut-free or fail cleanly
    cfg = SynthesisConfig(n=6, max_parents=5, forbid_transitive_edges=True)
    rng = make_rng(0)
    failures = 0
    for _ in range(20):
        try:
            dag = random_dag(cfg, rng, max_retries=1)
        except InfeasibleConfig:
            failures += 1
            continue
        assert not has_transitive_edge(dag.n, dag.edges())
    assert failures > 0


@pytest.mark.parametrize("mpn", list(MpnType))
def test_conformance_over_seeds(mpn):
    cfg = SynthesisConfig(n=10, mpn_type=mpn, epsilon=0.15)
    for seed in range(100):
        net = random_network(cfg, make_rng(seed))
        assert net.is_conformant(), seed
        for cpd in net.cpds:
            if not cpd.parents:
                assert 0.4 < cpd.rows[0] < 0.8
                continue
            pos = positive_rows(mpn, len(cpd.parents))
            assert np.all(cpd.rows[pos] > 0.5) and np.all(cpd.rows[pos] <= 0.95)
            assert np.all(cpd.rows[~pos] >= 0.0) and np.all(cpd.rows[~pos] <= 0.15)


def test_zero_epsilon_negative_rows_are_zero():
    cfg = SynthesisConfig(n=10, epsilon=0.0, mpn_type=MpnType.DMPN)
    net = random_network(cfg, make_rng(1))
    for cpd in net.cpds:
        if cpd.parents:
            assert np.all(cpd.rows[~positive_rows(MpnType.DMPN, len(cpd.parents))] == 0.0)


@pytest.mark.parametrize(
    "mpn, high_rows",
    [(MpnType.CMPN, {3}), (MpnType.DMPN, {1, 2, 3}), (MpnType.XMPN, {1, 2})],
)
def test_two_parent_row_pattern(mpn, high_rows):
    cfg = SynthesisConfig(n=3, mpn_type=mpn, epsilon=0.1)
    net = random_mpn(Dag(((), (), (0, 1))), cfg, make_rng(2))
    rows = net.cpds[2].rows
    assert {r for r in range(4) if rows[r] > 0.1} == high_rows


def test_config_validation_names_field():
    with pytest.raises(InvalidConfig) as info:
        SynthesisConfig(epsilon=1.5)
    assert info.value.field == "epsilon"
    with pytest.raises(InvalidConfig, match="theta_pos_range"):
        SynthesisConfig(epsilon=0.6)
    with pytest.raises(InvalidConfig, match="theta_neg_range"):
        SynthesisConfig(epsilon=0.1, theta_neg_range=(0.0, 0.2))
    with pytest.raises(InvalidConfig, match="max_parents"):
        SynthesisConfig(max_parents=0)
    with pytest.raises(InvalidConfig, match="root_marginal_range"):
        SynthesisConfig(root_marginal_range=(0.0, 0.5))


def test_zero_noise_samples_are_all_positive():
    for mpn in MpnType:
        net = random_network(SynthesisConfig(n=8, mpn_type=mpn, epsilon=0.0), make_rng(11))
        data = sample(net, 2000, make_rng(11, 1))
        for v, ps in enumerate(net.dag.parent_sets):
            if not ps:
                continue
            idx = np.zeros(data.m, dtype=int)
            for i, p in enumerate(ps):
                idx |= data.values[:, p].astype(int) << i
            neg = ~positive_rows(mpn, len(ps))[idx]
            assert not np.any(data.values[neg, v])


def test_certain_root_column():
    net = Network(Dag(((),)), (Cpd(0, (), [1.0]),), MpnType.CMPN, 0.1)
    assert np.all(sample(net, 100, make_rng(0)).values == 1)


def test_chain_empirical_marginal():
    data = sample(chain(), 50000, make_rng(5))
    assert abs(data.values[:, 1].mean() - 0.5) < 0.01


def test_sampling_rejects_empty():
    with pytest.raises(ValueError):
        sample(chain(), 0, make_rng(0))


def test_sampling_deterministic_bytes():
    net = random_network(SynthesisConfig(n=10), make_rng(8))
    a = dumps_dataset(sample(net, 500, make_rng(8, 1)))
    b = dumps_dataset(sample(net, 500, make_rng(8, 1)))
    c = dumps_dataset(sample(net, 500, make_rng(8, 2)))
    assert a == b and a != c


def test_exact_marginals_simple():
    root = Network(Dag(((),)), (Cpd(0, (), [0.3]),), MpnType.CMPN, 0.1)
    assert exact_marginals(root)[0] == pytest.approx(0.3, abs=1e-15)
    assert exact_marginals(chain())[1] == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(list(MpnType)), st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_exact_joint_matches_enumeration(mpn, seed, n):
    net = random_network(SynthesisConfig(n=n, mpn_type=mpn, epsilon=0.2), make_rng(seed))
    oracle = joint_by_enumeration(net)
    joint = exact_joint(net)
    assert joint.sum() == pytest.approx(1.0, abs=1e-12)
    for x, p in oracle.items():
        idx = sum(b << i for i, b in enumerate(x))
        assert joint[idx] == pytest.approx(p, abs=1e-14)
    marg = exact_marginals(net)
    for v in range(n):
        assert marg[v] == pytest.approx(sum(p for x, p in oracle.items() if x[v]), abs=1e-12)


def test_exact_family_counts_against_joint():
    net = random_network(SynthesisConfig(n=6, epsilon=0.1), make_rng(12))
    oracle = joint_by_enumeration(net)
    ones, supp = exact_family_counts(net, 5, (1, 3), total=10.0)
    for r in range(4):
        b1, b3 = r & 1, r >> 1
        mass = sum(p for x, p in oracle.items() if x[1] == b1 and x[3] == b3)
        hit = sum(p for x, p in oracle.items() if x[1] == b1 and x[3] == b3 and x[5])
        assert supp[r] == pytest.approx(10 * mass, abs=1e-12)
        assert ones[r] == pytest.approx(10 * hit, abs=1e-12)


def test_exact_marginals_guard():
    n = 23
    dag = Dag(tuple(() for _ in range(n)))
    net = Network(dag, tuple(Cpd(i, (), [0.5]) for i in range(n)), MpnType.CMPN, 0.1)
    with pytest.raises(TooLarge):
        exact_marginals(net)


def test_marginals_against_sampler_3sigma():
    m = 200_000
    for seed in range(3):
        net = random_network(SynthesisConfig(n=8, mpn_type=list(MpnType)[seed], epsilon=0.1), make_rng(30, seed))
        p = exact_marginals(net)
        freq = sample(net, m, make_rng(30, seed, 1)).values.mean(axis=0)
        sigma = np.sqrt(p * (1 - p) / m)
        assert np.all(np.abs(freq - p) <= 3 * sigma + 1e-12)


def test_faithful_networks_respect_priority():
    cfg = SynthesisConfig(n=8, max_parents=2, forbid_transitive_edges=True, require_faithful=True, epsilon=0.1)
    for seed in range(20):
        net = random_network(cfg, make_rng(seed))
        oracle = joint_by_enumeration(net)
        marg = [sum(p for x, p in oracle.items() if x[v]) for v in range(net.n)]
        reach = reachability(net.n, net.dag.edges())
        for u in range(net.n):
            for w in range(net.n):
                if reach[u, w]:
                    assert marg[u] > marg[w]
        assert is_faithful(net)


def test_unfaithful_network_detected():
    # child more frequent than its parent
    net = chain(p0=0.3, tpos=0.95, tneg=0.1, eps=0.1)
    assert exact_marginals(net)[1] == pytest.approx(0.3 * 0.95 + 0.7 * 0.1)
    assert not is_faithful(net)
    assert is_faithful(chain(p0=0.6))
    net2 = Network(
        Dag(((), (0,)), ("a", "b")),
        (Cpd(0, (), [0.2]), Cpd(1, (0,), [0.5, 0.9])),
        MpnType.CMPN,
        0.5,
    )
    assert not is_faithful(net2)


def test_make_rng_streams_independent():
    a = make_rng(1, 0).random(5)
    b = make_rng(1, 1).random(5)
    assert not np.allclose(a, b)
    assert np.array_equal(make_rng(1, 0).random(5), a)
