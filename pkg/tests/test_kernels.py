import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssimpute.errors import (
    AccuracyNotReachedError,
    ConfigurationError,
    StabilityError,
    UnsupportedOrderError,
)
from ssimpute.kernels import (
    KernelSpec,
    enriched_kernel,
    enrichment_impulse,
    gram_matrix_rbf,
    impulse_kernel_matrix,
    rbf_h_continuous,
    rbf_h_continuous_quadrature,
    rbf_h_discrete,
    rbf_h_discrete_summation,
    spline_kernel_quadrature_oracle,
    spline_kernel_w,
    stable_spline_k,
)

LN2 = math.log(2.0)

betas = st.floats(0.05, 2.0)
orders = st.sampled_from([1, 2])
stable_pairs = st.tuples(st.floats(-0.95, 0.95), st.floats(-0.95, 0.95)).map(
    lambda k: (k[0] * (1 + k[1]), k[1])
)


# ---------------------------------------------------------------------------
# spline kernel


@pytest.mark.parametrize(
    "s,t,q,expected",
    [(0.3, 0.7, 1, 0.3), (0.8, 0.0, 1, 0.0), (0.8, 0.0, 2, 0.0), (0.5, 0.5, 2, 0.5 * 0.25 / 2 - 0.125 / 6)],
)
def test_spline_kernel_examples(s, t, q, expected):
    assert spline_kernel_w(s, t, q) == pytest.approx(expected, abs=1e-15)
    assert spline_kernel_quadrature_oracle(s, t, q, 1e-10) == pytest.approx(expected, abs=1e-10)


def test_quadrature_oracle_examples():
    assert spline_kernel_quadrature_oracle(1.0, 1.0, 2, 1e-10) == pytest.approx(1 / 3, abs=1e-10)
    assert spline_kernel_quadrature_oracle(0.0, 0.4, 3, 1e-10) == 0.0


def test_quadrature_oracle_general_order():
    # q = 3 at s = t = 1: integral of (1-u)^4 / 4 = 1/20
    assert spline_kernel_quadrature_oracle(1.0, 1.0, 3) == pytest.approx(1 / 20, abs=1e-12)


def test_quadrature_oracle_reports_estimate():
    with pytest.raises(AccuracyNotReachedError) as info:
        spline_kernel_quadrature_oracle(1.0, 1.0, 8, 1e-300)
    assert info.value.estimate == pytest.approx(1.0 / (math.factorial(7) ** 2 * 15), rel=1e-8)


def test_spline_kernel_order_error():
    with pytest.raises(UnsupportedOrderError):
        spline_kernel_w(0.1, 0.2, 3)
    with pytest.raises(UnsupportedOrderError):
        KernelSpec(order_q=3)


# ---------------------------------------------------------------------------
# stable spline kernel


def test_stable_spline_examples():
    assert stable_spline_k(2, 5, KernelSpec(1, 1.0)) == pytest.approx(math.exp(-5), rel=1e-15)
    assert stable_spline_k(0, 0, KernelSpec(2, 0.37)) == pytest.approx(1 / 3, rel=1e-15)
    frozen = 0.03274465458397207  # quadrature oracle at (e^-0.5, e^-1), q = 2
    assert stable_spline_k(1, 2, KernelSpec(2, 0.5)) == pytest.approx(frozen, abs=1e-12)


def test_stable_spline_negative_argument():
    with pytest.raises(ConfigurationError):
        stable_spline_k(-1.0, 2.0, KernelSpec())


@settings(max_examples=60, deadline=None)
@given(s=st.floats(0, 20), t=st.floats(0, 20), beta=betas, q=orders)
def test_stable_spline_matches_time_warped_oracle(s, t, beta, q):
    spec = KernelSpec(q, beta)
    oracle = spline_kernel_quadrature_oracle(math.exp(-beta * s), math.exp(-beta * t), q, 1e-13)
    assert stable_spline_k(s, t, spec) == pytest.approx(oracle, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(s=st.floats(0, 50), t=st.floats(0, 50), beta=betas, q=orders)
def test_stable_spline_symmetry_and_cauchy_schwarz(s, t, beta, q):
    spec = KernelSpec(q, beta)
    k = stable_spline_k(s, t, spec)
    assert k == stable_spline_k(t, s, spec)
    assert k * k <= stable_spline_k(s, s, spec) * stable_spline_k(t, t, spec) * (1 + 1e-12) + 1e-300


def test_cauchy_schwarz_bulk():
    rng = np.random.default_rng(0)
    s, t = rng.uniform(0, 30, (2, 10_000))
    beta = rng.uniform(0.05, 2, 10_000)
    for q in (1, 2):
        k = np.array([stable_spline_k(a, b, KernelSpec(q, be)) for a, b, be in zip(s[:5000], t[:5000], beta[:5000])])
        ks = np.array([stable_spline_k(a, a, KernelSpec(q, be)) for a, be in zip(s[:5000], beta[:5000])])
        kt = np.array([stable_spline_k(b, b, KernelSpec(q, be)) for b, be in zip(t[:5000], beta[:5000])])
        assert np.all(k**2 <= ks * kt * (1 + 1e-12))


# ---------------------------------------------------------------------------
# RBF kernels


def test_rbf_continuous_examples():
    assert rbf_h_continuous(0.0, KernelSpec(1, 2.0, continuous=True)) == pytest.approx(0.5)
    assert rbf_h_continuous(0.0, KernelSpec(2, 1.0, continuous=True)) == pytest.approx(2 / 18)
    # frozen quadrature oracle values
    assert rbf_h_continuous(1.3, KernelSpec(2, 0.7, continuous=True)) == pytest.approx(
        0.03340142564551704, abs=1e-8)
    assert rbf_h_continuous(2.0, KernelSpec(1, 0.3, continuous=True)) == pytest.approx(
        1.8293721203134214, abs=1e-8)


def test_rbf_discrete_examples():
    spec1 = KernelSpec(1, LN2)
    assert rbf_h_discrete(0, spec1) == pytest.approx(1.0, rel=1e-14)
    assert rbf_h_discrete(1, spec1) == pytest.approx(0.5, rel=1e-14)
    assert rbf_h_discrete(0, KernelSpec(2, LN2)) == pytest.approx(1 / 21, rel=1e-14)
    # frozen direct-summation values
    assert rbf_h_discrete(3, KernelSpec(2, 0.4)) == pytest.approx(0.017587485571788262, abs=1e-13)
    assert rbf_h_discrete(5, KernelSpec(1, 0.9)) == pytest.approx(0.0076109707175375865, abs=1e-13)


def test_rbf_enriched_frozen():
    assert rbf_h_discrete(2, KernelSpec(2, 0.4, (-1.0, 0.25), 60)) == pytest.approx(
        1.7890430568768283, abs=1e-12)
    assert rbf_h_discrete(0, KernelSpec(1, 0.5, (0.3, -0.4), 40)) == pytest.approx(
        1.8169240879240722, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(beta=betas, q=orders, x=st.integers(-30, 30))
def test_rbf_discrete_matches_summation(beta, q, x):
    spec = KernelSpec(q, beta)
    assert abs(rbf_h_discrete(x, spec) - rbf_h_discrete_summation(x, spec)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(beta=st.floats(0.2, 2.0), q=orders, x=st.integers(0, 12), enr=stable_pairs)
def test_rbf_enriched_matches_summation(beta, q, x, enr):
    spec = KernelSpec(q, beta, enr, 30)
    oracle = rbf_h_discrete_summation(x, spec)
    assert rbf_h_discrete(x, spec) == pytest.approx(oracle, abs=1e-12 * max(1.0, abs(oracle)))


@settings(max_examples=20, deadline=None)
@given(beta=betas, q=orders, x=st.floats(-30, 30))
def test_rbf_continuous_matches_quadrature(beta, q, x):
    spec = KernelSpec(q, beta, continuous=True)
    assert abs(rbf_h_continuous(x, spec) - rbf_h_continuous_quadrature(x, spec)) < 1e-8


@settings(max_examples=50, deadline=None)
@given(beta=betas, q=orders)
def test_rbf_decay(beta, q):
    for spec, h in ((KernelSpec(q, beta), rbf_h_discrete), (KernelSpec(q, beta, continuous=True), rbf_h_continuous)):
        grid = np.arange(0, 200)
        v = np.asarray(h(grid, spec))
        assert np.all(np.diff(v) <= 0)
        assert h(-7, spec) == h(7, spec)
        assert h(math.ceil(50 / beta), spec) < 1e-8 * h(0, spec)


# ---------------------------------------------------------------------------
# enrichment


@pytest.mark.parametrize(
    "args,expected",
    [((0, 0, 3), [1, 0, 0]), ((-1.0, 0.25, 4), [1, 1, 0.75, 0.5]), ((0.5, 0.9, 2), [1, -0.5])],
)
def test_enrichment_impulse_examples(args, expected):
    np.testing.assert_allclose(enrichment_impulse(*args), expected, atol=1e-15)


@pytest.mark.parametrize("pair", [(0.0, 1.0), (2.1, 0.5), (-1.5, 0.5), (0.0, -1.0)])
def test_enrichment_outside_triangle(pair):
    with pytest.raises(StabilityError):
        enrichment_impulse(*pair, 5)
    with pytest.raises(StabilityError):
        KernelSpec(enrichment=pair)


def test_enriched_kernel_identity_filter():
    spec = KernelSpec(2, 0.6, (0.0, 0.0), 50)
    plain = spec.with_(enrichment=None)
    for s, t in [(0, 0), (3, 5), (10, 2)]:
        assert enriched_kernel(s, t, spec) == pytest.approx(stable_spline_k(s, t, plain), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(beta=betas, q=orders, enr=stable_pairs)
def test_enriched_kernel_origin(beta, q, enr):
    spec = KernelSpec(q, beta, enr, 20)
    assert enriched_kernel(0, 0, spec) == pytest.approx(stable_spline_k(0, 0, spec.with_(enrichment=None)))


def test_enriched_kernel_needs_enrichment():
    with pytest.raises(ConfigurationError):
        enriched_kernel(1, 2, KernelSpec())


def test_enriched_kernel_monte_carlo():
    rng = np.random.default_rng(42)
    spec = KernelSpec(2, 0.3, (-0.9, 0.5), 10)
    grid = np.arange(6, dtype=float)
    K = stable_spline_k(grid[:, None], grid[None, :], spec.with_(enrichment=None))
    L = np.linalg.cholesky(K + 1e-14 * np.eye(6))
    g = rng.standard_normal((200_000, 6)) @ L.T
    h = enrichment_impulse(*spec.enrichment, 6)
    conv = np.stack([g[:, : s + 1][:, ::-1] @ h[: s + 1] for s in range(6)], axis=1)
    prod = conv[:, 3] * conv[:, 5]
    se = prod.std() / math.sqrt(len(prod))
    assert abs(prod.mean() - enriched_kernel(3, 5, spec)) < 3 * se


def test_impulse_kernel_matrix_matches_pointwise():
    spec = KernelSpec(2, 0.4, (0.5, 0.3), 12)
    M = impulse_kernel_matrix(spec)
    direct = np.array([[enriched_kernel(i, j, spec) for j in range(1, 13)] for i in range(1, 13)])
    np.testing.assert_allclose(M, direct, rtol=1e-12, atol=1e-15)
    plain = impulse_kernel_matrix(KernelSpec(1, 0.4, None, 5))
    assert plain[1, 3] == pytest.approx(math.exp(-0.4 * 4))


def test_enrichment_truncation_tail_small():
    # the part of the enriched diagonal carried by lags beyond T_f is negligible
    spec = KernelSpec(2, 0.5, (-1.2, 0.5), 100)
    longer = spec.with_(truncation_len=200)
    d100 = np.diag(impulse_kernel_matrix(spec))
    d200 = np.diag(impulse_kernel_matrix(longer))[:100]
    np.testing.assert_allclose(d100, d200, rtol=0, atol=1e-10 * d100.max())


# ---------------------------------------------------------------------------
# Gram matrices


def test_gram_examples():
    g = gram_matrix_rbf([5], KernelSpec(2, 0.3))
    assert g.entries.shape == (1, 1)
    assert g.entries[0, 0] == pytest.approx(rbf_h_discrete(0, KernelSpec(2, 0.3)))
    g = gram_matrix_rbf([0, 1, 2], KernelSpec(1, LN2))
    np.testing.assert_allclose(g.entries, [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]], rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(beta=betas, q=orders, n=st.integers(1, 30), cont=st.booleans())
def test_gram_toeplitz_on_equispaced(beta, q, n, cont):
    spec = KernelSpec(q, beta, continuous=cont)
    R = gram_matrix_rbf(np.arange(n) * (0.5 if cont else 1), spec).entries
    for k in range(n):
        d = np.diag(R, k)
        assert np.all(d == d[0])
    assert np.array_equal(R, R.T)


@settings(max_examples=60, deadline=None)
@given(
    beta=betas, q=orders, n=st.integers(1, 50), seed=st.integers(0, 2**31),
    enr=st.one_of(st.none(), stable_pairs),
)
def test_gram_psd(beta, q, n, seed, enr):
    rng = np.random.default_rng(seed)
    times = np.sort(rng.choice(200, size=n, replace=False))
    g = gram_matrix_rbf(times, KernelSpec(q, beta, enr, 40))
    assert g.is_psd()
    assert np.array_equal(g.entries, g.entries.T)
