import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rkcq.opcalc import (
    CqContext,
    Resolvent,
    StageSequence,
    TransferFunctionError,
    apply_transfer_function,
    delta,
    delta_batch,
    discrete_antiderivative,
    discrete_derivative,
    sample_stages,
    stage_times,
    stiffly_accurate_derivative,
    ztransform,
)
from rkcq.semigroup import ConstrainedOperator, EvolutionProblem, rk_step_constrained
from rkcq.tableau import BUILTIN_NAMES, SingularityError, builtin_tableau

STIFF = [n for n in BUILTIN_NAMES if builtin_tableau(n).stiffly_accurate]


def derivative_by_cauchy_product(t, k, U):
    """``V_n = k^{-1} sum_j D_j U_{n-j}`` with the power-series coefficients of delta.

    ``delta(z) = Q^{-1} - sum_{j>=1} r^{j-1} z^j Q^{-1} 1 b^T Q^{-1}``.
    """
    Qi = np.linalg.inv(t.Q)
    r = 1.0 - t.b @ Qi @ np.ones(t.m)
    rank1 = np.outer(Qi @ np.ones(t.m), t.b @ Qi)
    n = U.shape[0]
    V = np.einsum("ij,njd->nid", Qi, U)
    for j in range(1, n):
        V[j:] -= r ** (j - 1) * np.einsum("ij,njd->nid", rank1, U[: n - j])
    return V / k


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_delta_at_zero_is_Qinv(name):
    t = builtin_tableau(name)
    np.testing.assert_allclose(delta(t, 0.0), np.linalg.inv(t.Q), atol=1e-13)


def test_delta_backward_euler():
    be = builtin_tableau("radau_iia_1")
    assert delta(be, 0.5)[0, 0] == pytest.approx(0.5, abs=1e-15)
    z = np.linspace(-0.9, 0.9, 7) + 0.3j
    np.testing.assert_allclose(delta_batch(be, z)[:, 0, 0], 1 - z, atol=1e-15)


def test_delta_pole():
    with pytest.raises(SingularityError):
        delta(builtin_tableau("gauss_2"), 1.0)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_delta_spectrum_in_right_half_plane(name):
    rng = np.random.default_rng(3)
    z = 0.95 * np.sqrt(rng.uniform(size=1000)) * np.exp(2j * np.pi * rng.uniform(size=1000))
    assert np.linalg.eigvals(delta_batch(builtin_tableau(name), z)).real.min() > 0


def test_antiderivative_of_constants_backward_euler():
    ctx = CqContext(builtin_tableau("radau_iia_1"), 0.1, 10)
    out = discrete_antiderivative(ctx, StageSequence(np.ones((10, 1))))
    np.testing.assert_allclose(out.stages[:, 0, 0], 0.1 * np.arange(1, 11), atol=1e-15)
    np.testing.assert_allclose(out.steps[:, 0], 0.1 * np.arange(11), atol=1e-15)


def test_antiderivative_exact_for_linear_radau2():
    t = builtin_tableau("radau_iia_2")
    ctx = CqContext(t, 0.1, 20)
    out = discrete_antiderivative(ctx, sample_stages(t, 0.1, 20, lambda s: s))
    np.testing.assert_allclose(out.steps[:, 0], ctx.times**2 / 2, atol=1e-14)
    np.testing.assert_allclose(out.stages[:, :, 0], stage_times(t, 0.1, 20) ** 2 / 2, atol=1e-14)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_zero_sequences(name):
    t = builtin_tableau(name)
    ctx = CqContext(t, 0.1, 5)
    zero = StageSequence.zeros(5, t.m, 2)
    assert not discrete_antiderivative(ctx, zero).stages.any()
    assert not discrete_derivative(ctx, zero).stages.any()


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_derivative_matches_series_oracle(name):
    t = builtin_tableau(name)
    rng = np.random.default_rng(11)
    U = rng.standard_normal((40, t.m, 2))
    V = discrete_derivative(CqContext(t, 0.05, 40), StageSequence(U)).stages
    np.testing.assert_allclose(V, derivative_by_cauchy_product(t, 0.05, U), atol=1e-9)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_derivative_transform_is_delta_over_k(name):
    # on a polynomial-length sequence the z-transforms satisfy V^(z) = delta(z)/k U^(z) up to the truncation tail
    t = builtin_tableau(name)
    rng = np.random.default_rng(5)
    U = np.zeros((60, t.m, 1))
    U[:8] = rng.standard_normal((8, t.m, 1))
    k = 0.1
    V = discrete_derivative(CqContext(t, k, 60), StageSequence(U)).stages
    for z in (0.2, -0.3 + 0.1j, 0.05j):
        lhs = ztransform(V[:, :, 0], z)[0]
        rhs = delta(t, z) @ ztransform(U[:, :, 0], z)[0] / k
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(name=st.sampled_from(BUILTIN_NAMES), seed=st.integers(0, 2**32 - 1), k=st.floats(0.01, 1.0))
def test_pairing_is_identity(name, seed, k):
    t = builtin_tableau(name)
    ctx = CqContext(t, k, 50)
    U = np.random.default_rng(seed).standard_normal((50, t.m, 1))
    back = discrete_derivative(ctx, discrete_antiderivative(ctx, StageSequence(U))).stages
    np.testing.assert_allclose(back, U, atol=1e-12 * max(1.0, np.abs(U).max()))
    fwd = discrete_antiderivative(ctx, discrete_derivative(ctx, StageSequence(U))).stages
    np.testing.assert_allclose(fwd, U, atol=1e-11 * max(1.0, np.abs(U).max()))


def test_derivative_order_for_quadratic():
    t = builtin_tableau("radau_iia_2")
    errs = []
    ks = [0.1, 0.05, 0.025, 0.0125]
    for k in ks:
        n = round(1 / k)
        V = discrete_derivative(CqContext(t, k, n), sample_stages(t, k, n, lambda s: s**2)).stages
        errs.append(np.abs(V[:, :, 0] - 2 * stage_times(t, k, n)).max())
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates >= t.q - 0.1) or max(errs) < 1e-12


def test_stiffly_accurate_shortcut_linear():
    t = builtin_tableau("radau_iia_2")
    G = stiffly_accurate_derivative(CqContext(t, 0.1, 10), lambda s: s).stages
    np.testing.assert_allclose(G, 1.0, atol=1e-13)


@pytest.mark.parametrize("k", [0.1, 0.05, 0.025])
def test_stiffly_accurate_shortcut_matches_recurrence(k):
    t = builtin_tableau("radau_iia_3")
    n = round(1 / k)
    ctx = CqContext(t, k, n)
    f = lambda s: s**3
    a = stiffly_accurate_derivative(ctx, f).stages
    b = discrete_derivative(ctx, sample_stages(t, k, n, f)).stages
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert not stiffly_accurate_derivative(ctx, lambda s: 0.0).stages.any()


def test_shortcut_rejects_non_stiffly_accurate():
    with pytest.raises(ValueError):
        stiffly_accurate_derivative(CqContext(builtin_tableau("gauss_2"), 0.1, 4), np.sin)


def test_identity_symbol():
    t = builtin_tableau("radau_iia_3")
    g = sample_stages(t, 0.1, 30, np.cos)
    out = apply_transfer_function(CqContext(t, 0.1, 30), lambda s: np.ones_like(s), g)
    np.testing.assert_allclose(out.stages, g.stages, atol=1e-11)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_inverse_symbol_matches_antiderivative(name):
    t = builtin_tableau(name)
    ctx = CqContext(t, 0.05, 100)
    g = sample_stages(t, 0.05, 100, lambda s: 1.0)
    cq = apply_transfer_function(ctx, lambda s: 1 / s, g)
    ref = discrete_antiderivative(ctx, g)
    np.testing.assert_allclose(cq.stages, ref.stages, atol=1e-8)
    np.testing.assert_allclose(cq.steps, ref.steps, atol=1e-8)


def test_resolvent_matches_rk_stepping():
    t = builtin_tableau("radau_iia_2")
    k, n = 0.05, 200
    prob = EvolutionProblem(ConstrainedOperator.unconstrained([[-1.0]]), F=lambda s: np.array([np.sin(s)]), Xi=None, T=n * k)
    rk = rk_step_constrained(prob, t, k, n)
    cq = apply_transfer_function(CqContext(t, k, n), Resolvent(-1.0), sample_stages(t, k, n, np.sin))
    assert np.abs(cq.stages - rk.stages).max() <= 1e-7
    assert np.abs(cq.steps - rk.steps).max() <= 1e-7


@settings(max_examples=15, deadline=None)
@given(a=st.floats(-20, -0.1), b=st.floats(-20, -0.1))
def test_symbols_compose(a, b):
    # F1(d) F2(d) = (F1 F2)(d): product of resolvents vs their partial fractions
    t = builtin_tableau("radau_iia_3")
    ctx = CqContext(t, 0.1, 40)
    g = sample_stages(t, 0.1, 40, lambda s: s * np.exp(-s))
    two = apply_transfer_function(ctx, Resolvent(a), apply_transfer_function(ctx, Resolvent(b), g))
    prod = apply_transfer_function(ctx, lambda s: 1 / ((s - a) * (s - b)), g)
    np.testing.assert_allclose(two.stages, prod.stages, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
def test_linearity(alpha, beta):
    t = builtin_tableau("radau_iia_2")
    ctx = CqContext(t, 0.1, 30)
    g1 = sample_stages(t, 0.1, 30, np.sin)
    g2 = sample_stages(t, 0.1, 30, lambda s: s**2)
    F = lambda s: 1 / np.sqrt(s)
    lhs = apply_transfer_function(ctx, F, StageSequence(alpha * g1.stages + beta * g2.stages)).stages
    rhs = alpha * apply_transfer_function(ctx, F, g1).stages + beta * apply_transfer_function(ctx, F, g2).stages
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_singular_symbol_reports_frequency():
    t = builtin_tableau("radau_iia_2")
    ctx = CqContext(t, 0.1, 10)
    with pytest.raises(TransferFunctionError) as info:
        apply_transfer_function(ctx, lambda s: np.full_like(s, np.nan), sample_stages(t, 0.1, 10, np.sin))
    assert info.value.frequency_index == 0


def test_non_real_symbol_rejected_on_real_data():
    t = builtin_tableau("radau_iia_2")
    ctx = CqContext(t, 0.1, 10)
    g = sample_stages(t, 0.1, 10, np.sin)
    with pytest.raises(TransferFunctionError):
        apply_transfer_function(ctx, Resolvent(1j - 1), g)
    out = apply_transfer_function(ctx, Resolvent(1j - 1), g, real=False)
    assert np.iscomplexobj(out.stages)


@pytest.mark.parametrize(
    "kw",
    [dict(k=0.0, n_steps=4), dict(k=0.1, n_steps=0), dict(k=0.1, n_steps=4, N=6), dict(k=0.1, n_steps=4, N=4), dict(k=0.1, n_steps=4, lam=1.0)],
)
def test_context_validation(kw):
    with pytest.raises(ValueError):
        CqContext(builtin_tableau("radau_iia_1"), **kw)


def test_context_defaults():
    ctx = CqContext(builtin_tableau("radau_iia_1"), 0.1, 100)
    assert ctx.N == 256
    assert ctx.lam ** (2 * ctx.N) == pytest.approx(1e-24, rel=1e-6)


def test_stage_sequence_shapes():
    s = StageSequence(np.ones((4, 3)))
    assert (s.n_steps, s.m, s.d) == (4, 3, 1)
    assert s.steps.shape == (5, 1)
    with pytest.raises(ValueError):
        StageSequence(np.ones((4, 3, 1)), steps=np.ones((4, 1)))
