import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambs.diffcore import ContractViolation
from ambs.ot import w1_discrete, w2_diag_gaussian
from oracles import w1_by_highs, w1_by_vertex_enumeration, w2_by_quantile_quadrature


def random_metric_cost(rng, n, dim=3):
    pts = rng.uniform(0, 2, size=(n, dim))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(d, 0.0)
    return (d + d.T) / 2


def random_dist(rng, n):
    p = rng.dirichlet(np.ones(n))
    return p / p.sum()


# ---------------------------------------------------------------------------
# w1_discrete
# ---------------------------------------------------------------------------


def test_w1_identical_distributions_zero():
    rng = np.random.default_rng(0)
    p = random_dist(rng, 5)
    cost = random_metric_cost(rng, 5)
    assert w1_discrete(p, p, cost) == pytest.approx(0.0, abs=1e-12)


def test_w1_point_masses():
    cost = random_metric_cost(np.random.default_rng(1), 4)
    p = np.array([0.0, 1.0, 0.0, 0.0])
    q = np.array([0.0, 0.0, 0.0, 1.0])
    assert w1_discrete(p, q, cost) == pytest.approx(cost[1, 3])


def test_w1_line_graph_pinned():
    # move 0.5 from point 0 (cost 2) and 0.5 from point 1 (cost 1) to point 2
    cost = np.abs(np.arange(3)[:, None] - np.arange(3)[None, :]).astype(float)
    p = np.array([0.5, 0.5, 0.0])
    q = np.array([0.0, 0.0, 1.0])
    assert w1_discrete(p, q, cost) == pytest.approx(1.5)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_w1_matches_vertex_enumeration(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(20):
        p = random_dist(rng, n)
        q = random_dist(rng, n)
        cost = random_metric_cost(rng, n)
        assert w1_discrete(p, q, cost) == pytest.approx(
            w1_by_vertex_enumeration(p, q, cost), abs=1e-9
        )


@pytest.mark.parametrize("n", [6, 10, 16, 32])
def test_w1_matches_highs(n):
    rng = np.random.default_rng(200 + n)
    for _ in range(8):
        p = random_dist(rng, n)
        q = random_dist(rng, n)
        cost = random_metric_cost(rng, n)
        assert w1_discrete(p, q, cost) == pytest.approx(w1_by_highs(p, q, cost), abs=1e-9)


def test_w1_with_zero_mass_points():
    rng = np.random.default_rng(7)
    cost = random_metric_cost(rng, 6)
    p = np.array([0.3, 0.0, 0.7, 0.0, 0.0, 0.0])
    q = np.array([0.0, 0.2, 0.0, 0.0, 0.8, 0.0])
    assert w1_discrete(p, q, cost) == pytest.approx(w1_by_highs(p, q, cost), abs=1e-9)


def test_w1_degenerate_masses_many_zeros():
    # degenerate case that exercises zero-allocation (degenerate) pivots
    n = 8
    cost = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :]).astype(float)
    p = np.zeros(n)
    q = np.zeros(n)
    p[0] = p[3] = p[5] = 1 / 3
    q[1] = q[3] = q[7] = 1 / 3
    assert w1_discrete(p, q, cost) == pytest.approx(w1_by_highs(p, q, cost), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_w1_metric_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    cost = random_metric_cost(rng, n)
    p, q, r = (random_dist(rng, n) for _ in range(3))
    dpq = w1_discrete(p, q, cost)
    dqp = w1_discrete(q, p, cost)
    dqr = w1_discrete(q, r, cost)
    dpr = w1_discrete(p, r, cost)
    assert dpq >= 0.0
    assert dpq <= cost.max() + 1e-12
    assert dpq == pytest.approx(dqp, abs=1e-9)
    assert dpr <= dpq + dqr + 1e-8
    assert w1_discrete(p, p, cost) == pytest.approx(0.0, abs=1e-12)


def test_w1_rejects_bad_inputs():
    cost = np.zeros((3, 3))
    good = np.array([0.2, 0.3, 0.5])
    with pytest.raises(ContractViolation):
        w1_discrete(np.array([0.5, 0.5, 0.5]), good, cost)  # unnormalized
    with pytest.raises(ContractViolation):
        w1_discrete(np.array([-0.2, 0.7, 0.5]), good, cost)  # negative mass
    with pytest.raises(ContractViolation):
        w1_discrete(good, good, np.ones((3, 3)))  # nonzero diagonal
    asym = np.array([[0.0, 1.0, 1.0], [2.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    with pytest.raises(ContractViolation):
        w1_discrete(good, good, asym)
    with pytest.raises(ContractViolation):
        w1_discrete(good, np.array([0.5, 0.5]), cost)  # support mismatch


# ---------------------------------------------------------------------------
# w2_diag_gaussian
# ---------------------------------------------------------------------------


def test_w2_identical_zero():
    mu = np.array([0.3, -1.2])
    sig = np.array([0.5, 2.0])
    assert w2_diag_gaussian(mu, sig, mu, sig) == 0.0


def test_w2_pure_mean_shift():
    assert w2_diag_gaussian([0.0], [1.0], [3.0], [1.0]) == pytest.approx(3.0)


def test_w2_pinned_2d_sqrt3():
    got = w2_diag_gaussian([1.0, 0.0], [1.0, 2.0], [0.0, 0.0], [2.0, 1.0])
    assert got == pytest.approx(np.sqrt(3.0))


def test_w2_matches_quantile_quadrature():
    rng = np.random.default_rng(42)
    for _ in range(5):
        mu_a = rng.normal(size=3)
        mu_b = rng.normal(size=3)
        sig_a = rng.uniform(0.3, 2.0, size=3)
        sig_b = rng.uniform(0.3, 2.0, size=3)
        got = w2_diag_gaussian(mu_a, sig_a, mu_b, sig_b)
        ref = w2_by_quantile_quadrature(mu_a, sig_a, mu_b, sig_b)
        assert got == pytest.approx(ref, rel=0.02)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_w2_metric_properties(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 5))
    mus = rng.normal(size=(3, k))
    sigs = rng.uniform(0.1, 3.0, size=(3, k))
    d01 = w2_diag_gaussian(mus[0], sigs[0], mus[1], sigs[1])
    d10 = w2_diag_gaussian(mus[1], sigs[1], mus[0], sigs[0])
    d12 = w2_diag_gaussian(mus[1], sigs[1], mus[2], sigs[2])
    d02 = w2_diag_gaussian(mus[0], sigs[0], mus[2], sigs[2])
    assert d01 == d10  # symmetric exactly
    assert d01 >= 0.0
    assert d02 <= d01 + d12 + 1e-6
    assert w2_diag_gaussian(mus[0], sigs[0], mus[0], sigs[0]) == 0.0


def test_w2_zero_iff_identical():
    a = (np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    b = (np.array([0.0, 1.0]), np.array([1.0, 1.0 + 1e-6]))
    assert w2_diag_gaussian(a[0], a[1], b[0], b[1]) > 0.0


def test_w2_rejects_bad_sigma_and_shapes():
    with pytest.raises(ContractViolation):
        w2_diag_gaussian([0.0], [0.0], [1.0], [1.0])
    with pytest.raises(ContractViolation):
        w2_diag_gaussian([0.0], [-1.0], [1.0], [1.0])
    with pytest.raises(ContractViolation):
        w2_diag_gaussian([0.0, 1.0], [1.0, 1.0], [1.0], [1.0])
