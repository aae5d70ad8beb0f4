import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polaris.core import Cpd, Dag, Dataset, MpnType, Network, positive_rows
from polaris.scoring import (
    BIC,
    POLARIS,
    EdgeNotPresent,
    NonPositiveAlpha,
    ScoreKind,
    alpha_term_local,
    bic_local,
    bic_penalty,
    diprog,
    diprog_local,
    edge_confidences,
    edge_fold_change,
    local_score,
    local_total,
    log_likelihood_local,
    network_score,
    polaris_local,
    scores_from_counts,
)
from polaris.synthesis import SynthesisConfig, exact_family_counts, make_rng, random_dag, random_network, sample

from oracles import naive_alpha_term, naive_loglik


def rows(*spec):
    """Build a dataset from ``(parent bits..., child, repeat)`` tuples."""
    out = []
    for *bits, reps in spec:
        out += [list(bits)] * reps
    return Dataset(np.array(out, dtype=np.uint8))


def test_root_loglik():
    d = Dataset(np.array([[1], [1], [0], [0]]))
    assert log_likelihood_local(d, 0, (), 0.0) == pytest.approx(4 * math.log(0.5))


def test_deterministic_child_loglik_zero():
    d = rows((0, 0, 5), (1, 1, 7))
    assert log_likelihood_local(d, 1, (0,), 0.0) == 0.0


def test_loglik_matches_per_sample_oracle_seeded():
    net = random_network(SynthesisConfig(n=3, epsilon=0.1), make_rng(40))
    d = sample(net, 100, make_rng(40, 1))
    for child in range(3):
        for s in range(3):
            for ps in itertools.combinations([v for v in range(3) if v != child], s):
                assert log_likelihood_local(d, child, ps, 1.0) == pytest.approx(
                    naive_loglik(d.values, child, ps, 1.0), rel=1e-12
                )


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 80), st.sampled_from([0.5, 1.0]))
def test_loglik_property(seed, m, pc):
    rng = np.random.default_rng(seed)
    d = Dataset(rng.integers(0, 2, size=(m, 4)))
    ps = tuple(sorted(rng.choice([1, 2, 3], size=rng.integers(0, 4), replace=False).tolist()))
    ll = log_likelihood_local(d, 0, ps, pc)
    assert ll <= 0
    assert ll == pytest.approx(naive_loglik(d.values, 0, ps, pc), rel=1e-12, abs=1e-12)


def test_bic_penalty_values():
    assert bic_penalty(100, 2) == pytest.approx(math.log(100) / 2 * 4)
    assert bic_penalty(100, 0) == pytest.approx(math.log(100) / 2)
    d = sample(random_network(SynthesisConfig(n=4), make_rng(1)), 100, make_rng(1, 1))
    s = bic_local(d, 3, (0, 1))
    assert s.dim == 4 and s.alpha_term == 0.0
    assert s.total == pytest.approx(s.ll - math.log(100) / 2 * 4)


def test_alpha_term_zero_without_negative_matches():
    # parents always both 1: CMPN negative rows never occur
    d = rows((1, 1, 1, 6), (1, 1, 0, 4))
    assert alpha_term_local(MpnType.CMPN, d, 2, (0, 1)) == 0.0
    assert polaris_local(MpnType.CMPN, d, 2, (0, 1)).total == pytest.approx(bic_local(d, 2, (0, 1)).total)


def test_alpha_term_linear_in_negative_samples():
    # theta+ = 4/5 and theta- = 1/5 without smoothing, so alpha = 0.6 on the negative row
    d = rows((1, 1, 4), (1, 0, 1), (0, 1, 1), (0, 0, 4))
    assert alpha_term_local(MpnType.CMPN, d, 1, (0,), pseudocount=0.0) == pytest.approx(5 * math.log(0.6))
    assert alpha_term_local(MpnType.CMPN, d, 1, (0,), 0.0) == pytest.approx(
        naive_alpha_term("CMPN", d.values, 1, (0,), 0.0)
    )


def test_alpha_term_single_sample():
    d = rows((1, 1, 4), (1, 0, 1), (0, 0, 1))
    # one negative sample; with pc = 1 its row estimate is 1/3 and theta+ is 5/7
    a = (5 / 7 - 1 / 3) / (5 / 7 + 1 / 3)
    assert alpha_term_local(MpnType.CMPN, d, 1, (0,)) == pytest.approx(math.log(a))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(MpnType)))
def test_alpha_term_matches_oracle(seed, mpn):
    net = random_network(SynthesisConfig(n=4, mpn_type=mpn, epsilon=0.1), make_rng(seed))
    d = sample(net, 150, make_rng(seed, 1))
    for v, ps in enumerate(net.dag.parent_sets):
        try:
            got = alpha_term_local(mpn, d, v, ps)
        except NonPositiveAlpha:
            continue
        assert got == pytest.approx(naive_alpha_term(mpn.value, d.values, v, ps, 1.0), abs=1e-9)


def test_non_positive_alpha_raises():
    # the negative row is more often active than the positive one
    d = rows((1, 1, 1), (1, 0, 4), (0, 1, 4), (0, 0, 1))
    with pytest.raises(NonPositiveAlpha):
        polaris_local(MpnType.CMPN, d, 1, (0,))
    assert local_total(POLARIS, MpnType.CMPN, d, 1, (0,)) == -math.inf
    # BIC has no such restriction
    assert math.isfinite(local_total(BIC, MpnType.CMPN, d, 1, (0,)))


def test_higher_alpha_wins_when_fit_ties():
    # theta and 1 - theta give the same likelihood; only alpha separates them
    support = np.array([10.0, 10.0, 10.0, 10.0])
    a = np.array([1.0, 1.0, 1.0, 7.0])
    b = np.array([1.0, 1.0, 1.0, 3.0])
    lla, ata, ta = scores_from_counts(POLARIS, MpnType.CMPN, a, support, 40, 0.0)
    llb, atb, tb = scores_from_counts(POLARIS, MpnType.CMPN, b, support, 40, 0.0)
    assert lla == pytest.approx(llb)
    assert ata > atb and ta > tb


def test_alpha_term_vanishes_relative_to_fit():
    net = random_network(SynthesisConfig(n=10, epsilon=0.1), make_rng(50))
    d = sample(net, 2000, make_rng(50, 1))
    at = ll = 0.0
    for v, ps in enumerate(net.dag.parent_sets):
        s = polaris_local(MpnType.CMPN, d, v, ps)
        at += s.alpha_term
        ll += s.ll
    assert abs(at) / d.m / abs(ll) < 0.01


def test_diprog_clamp_inactive_equals_bic():
    d = rows((1, 1, 8), (1, 0, 2), (0, 0, 20))
    # negative row estimate is 1/22 with pc = 1
    assert diprog_local(MpnType.CMPN, d, 1, (0,), 0.1).total == pytest.approx(bic_local(d, 1, (0,)).total)


def test_diprog_clamp_active_lowers_score():
    d = rows((1, 1, 8), (1, 0, 2), (0, 1, 4), (0, 0, 6))
    s = diprog_local(MpnType.CMPN, d, 1, (0,), 0.1, pseudocount=0.0)
    assert s.total < bic_local(d, 1, (0,), 0.0).total
    # the clamped row is scored at exactly epsilon
    expected = 8 * math.log(0.8) + 2 * math.log(0.2) + 4 * math.log(0.1) + 6 * math.log(0.9)
    assert s.ll == pytest.approx(expected)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(MpnType)))
def test_diprog_at_one_is_bic(seed, mpn):
    rng = np.random.default_rng(seed)
    d = Dataset(rng.integers(0, 2, size=(50, 4)))
    for ps in [(), (1,), (1, 2), (1, 2, 3)]:
        assert diprog_local(mpn, d, 0, ps, 1.0).total == bic_local(d, 0, ps).total


def test_score_kind_parsing():
    assert ScoreKind.parse("diprog:0.15") == diprog(0.15)
    assert str(diprog(0.15)) == "diprog:0.15"
    assert ScoreKind.parse("POLARIS") == POLARIS
    with pytest.raises(ValueError):
        ScoreKind("diprog")
    with pytest.raises(ValueError):
        ScoreKind("diprog", 1.5)
    with pytest.raises(ValueError):
        ScoreKind("aic")


@pytest.mark.parametrize("kind", [BIC, POLARIS, diprog(0.1)])
def test_network_score_decomposes(kind):
    for seed in range(100):
        net = random_network(SynthesisConfig(n=6, epsilon=0.1), make_rng(60, seed))
        d = sample(net, 120, make_rng(60, seed, 1))
        dag = random_dag(SynthesisConfig(n=6), make_rng(61, seed))
        locals_ = [local_total(kind, MpnType.CMPN, d, v, ps) for v, ps in enumerate(dag.parent_sets)]
        if not all(map(math.isfinite, locals_)):
            continue
        assert network_score(d, dag, MpnType.CMPN, kind) == pytest.approx(math.fsum(locals_), rel=1e-12)


def test_network_score_single_node_and_components():
    d = Dataset(np.array([[1, 0, 1], [0, 0, 1], [1, 1, 0], [1, 1, 1]]))
    assert network_score(Dataset(d.values[:, :1]), Dag(((),)), MpnType.CMPN, BIC) == pytest.approx(
        bic_local(d, 0, ()).total
    )
    dag = Dag(((), (0,), ()))
    assert network_score(d, dag, MpnType.CMPN, BIC) == pytest.approx(
        bic_local(d, 0, ()).total + bic_local(d, 1, (0,)).total + bic_local(d, 2, ()).total
    )


def test_changing_one_parent_set_moves_one_term():
    net = random_network(SynthesisConfig(n=5), make_rng(70))
    d = sample(net, 200, make_rng(70, 1))
    before = [bic_local(d, v, ps).total for v, ps in enumerate(net.dag.parent_sets)]
    ps = list(net.dag.parent_sets)
    target = next(v for v in range(5) if len(ps[v]) < 4)
    extra = next(u for u in range(5) if u != target and u not in ps[target])
    ps[target] = tuple(sorted(ps[target] + (extra,)))
    after = [bic_local(d, v, p).total for v, p in enumerate(ps)]
    changed = [v for v in range(5) if before[v] != after[v]]
    assert changed == [target]


def _deterministic_network():
    dag = Dag(((), (0,), (1,)))
    cpds = (Cpd(0, (), [0.6]), Cpd(1, (0,), [0.0, 1.0]), Cpd(2, (1,), [0.0, 1.0]))
    return Network(dag, cpds, MpnType.CMPN, 0.0)


@pytest.mark.parametrize("kind", [BIC, POLARIS])
def test_fold_change_deterministic_edge(kind):
    net = _deterministic_network()
    d = sample(net, 500, make_rng(80))
    for e in net.dag.edges():
        fc = edge_fold_change(d, net.dag, MpnType.CMPN, kind, e)
        reduced = net.dag.without_edge(*e)
        assert fc.score_without == pytest.approx(network_score(d, reduced, MpnType.CMPN, kind))
        assert fc.score_with == pytest.approx(network_score(d, net.dag, MpnType.CMPN, kind))
        assert fc.difference > 0 and fc.ratio > 1
        assert fc.ratio == pytest.approx(fc.score_without / fc.score_with)


def test_fold_change_only_child_term_moves():
    net = random_network(SynthesisConfig(n=6), make_rng(81))
    d = sample(net, 300, make_rng(81, 1))
    p, c = net.dag.edges()[0]
    reduced = net.dag.without_edge(p, c)
    fc = edge_fold_change(d, net.dag, MpnType.CMPN, BIC, (p, c))
    assert fc.difference == pytest.approx(
        bic_local(d, c, net.dag.parent_sets[c]).total - bic_local(d, c, reduced.parent_sets[c]).total
    )
    # re-adding the edge restores the score
    restored = reduced.with_parents(c, reduced.parent_sets[c] + (p,))
    assert network_score(d, restored, MpnType.CMPN, BIC) == fc.score_with


def test_fold_change_missing_edge():
    net = _deterministic_network()
    d = sample(net, 50, make_rng(82))
    with pytest.raises(EdgeNotPresent):
        edge_fold_change(d, net.dag, MpnType.CMPN, BIC, (2, 0))


def test_edge_confidences_cover_edges():
    net = random_network(SynthesisConfig(n=7), make_rng(83))
    d = sample(net, 300, make_rng(83, 1))
    conf = edge_confidences(d, net.dag, MpnType.CMPN, BIC)
    assert set(conf) == set(net.dag.edges())
    for e, fc in conf.items():
        assert fc == edge_fold_change(d, net.dag, MpnType.CMPN, BIC, e)


def test_local_score_serialises():
    d = Dataset(np.array([[1, 0], [1, 1]]))
    doc = local_score(BIC, MpnType.CMPN, d, 1, (0,)).to_dict()
    assert doc["parents"] == [0] and doc["dim"] == 2


@pytest.mark.parametrize("mpn", list(MpnType))
def test_diprog_prefers_true_parent_set_on_exact_counts(mpn):
    """With expected counts, the true family beats any family with a supported negative row above epsilon.

    Alternatives are drawn from the child's non-descendants; a descendant
    used as a parent reverses an edge, which a single local term cannot
    penalise.
    """
    eps, m = 0.1, 1000.0
    kind = diprog(eps)
    checked = 0
    for seed in range(60):
        net = random_network(SynthesisConfig(n=3, max_parents=2, mpn_type=mpn, epsilon=eps), make_rng(90, seed))
        for child in range(3):
            true_ps = net.dag.parent_sets[child]
            o, s = exact_family_counts(net, child, true_ps, total=m)
            _, _, best = scores_from_counts(kind, mpn, o, s, m, 0.0)
            desc = {v for v, anc in enumerate(net.dag.ancestors()) if child in anc}
            others = [v for v in range(3) if v != child and v not in desc]
            for size in range(3):
                for ps in itertools.combinations(others, size):
                    if ps == true_ps or not ps:
                        continue
                    o2, s2 = exact_family_counts(net, child, ps, total=m)
                    theta = np.divide(o2, s2, out=np.full_like(o2, 0.5), where=s2 > 0)
                    neg = ~positive_rows(mpn, len(ps))
                    if not np.any(neg & (s2 > 0) & (theta > eps)):
                        continue
                    _, _, alt = scores_from_counts(kind, mpn, o2, s2, m, 0.0)
                    assert best >= alt - 1e-9, (seed, child, true_ps, ps)
                    checked += 1
    assert checked > 20
