import numpy as np
import pytest
from conftest import bm_grad_q, configs, core_jacobian, dense_tensor

from mpsfit.losses import LossContext, exact_distribution_context, nll, nll_and_gradient
from mpsfit.measurement import MEASUREMENT_VECTORS, generate_qst_dataset, sample_computational_basis
from mpsfit.models import IsingModel, ising_distribution, ising_to_bm
from mpsfit.mps import Mps, canonicalize, random_mps
from mpsfit.optimizers import (
    OptimizerConfig,
    dmrg1_sweep,
    dmrg2_sweep,
    gd_step,
    golden_section_search,
    line_search,
    ngd_sweep,
    toy_multilinear_check,
    train,
)


def _bm_instance(seed, n=5, r=3, samples=40):
    rng = np.random.default_rng(seed)
    psi = random_mps(n, r, rng=rng)
    bits = rng.integers(0, 2, size=(samples, n))
    return psi, LossContext.born(bits), rng


def _qst_grad_q(q, ctx):
    """Packed gradient ``dF/dRe q + i dF/dIm q`` of the tomography loss on the dense state."""
    n = ctx.n
    g = 2 * q / np.vdot(q, q).real
    for sym, w in zip(ctx.symbols, ctx.weights):
        u = np.array([1.0 + 0j])
        for s in sym:
            u = np.kron(u, MEASUREMENT_VECTORS[s])
        a = u @ q
        g = g - w * 2 * np.conj(u) * a / abs(a) ** 2
    return g


def _projection(m, v):
    coef, *_ = np.linalg.lstsq(m, v, rcond=1e-12)
    return m @ coef


# --- GD ----------------------------------------------------------------------


def test_gd_step_at_stationary_point_is_noop():
    model = IsingModel(6, 1.0)
    ctx = exact_distribution_context(configs(6), ising_distribution(model))
    psi = ising_to_bm(model)
    out = gd_step(psi, ctx, eta=1.0)
    np.testing.assert_allclose(out.to_dense(), psi.to_dense(), atol=1e-10)


def _hand_gd(cores, bits, weights, lr, steps):
    """GD with gradients assembled from the dense Jacobian, no caching."""
    cores = [c.copy() for c in cores]
    for _ in range(steps):
        q = dense_tensor(cores)
        gq = bm_grad_q(q, bits, weights)
        grads = [(core_jacobian(cores, i).T @ gq).reshape(cores[i].shape) for i in range(len(cores))]
        cores = [c - lr * g for c, g in zip(cores, grads)]
    return cores


def test_gd_matches_hand_rolled_oracle():
    psi, ctx, _ = _bm_instance(1, n=4, r=2)
    ref = _hand_gd(psi.cores, ctx.symbols, ctx.weights, 0.05, 5)
    out = psi
    for _ in range(5):
        out = gd_step(out, ctx, eta=20.0)
    for a, b in zip(out.cores, ref):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_gd_quadratic_single_entry():
    # one free scalar: q = c * e, loss depends on c only through the normalized state, so use two sites
    psi = Mps([np.array([[[1.0], [0.5]]]).reshape(1, 2, 1), np.array([[[1.0], [0.0]]]).reshape(1, 2, 1)])
    ctx = LossContext.born(np.array([[0, 0], [1, 0]]), weights=[0.8, 0.2])
    # exact minimizer: p(1,0) = 0.2 means the ratio b/a = 0.5
    _, grads = nll_and_gradient(psi, ctx)
    assert max(np.abs(g).max() for g in grads) < 1e-12


# --- NGD --------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_ngd_site_update_is_projected_step(seed):
    rng = np.random.default_rng(seed)
    n, r = int(rng.integers(3, 6)), int(rng.integers(1, 4))
    eta = 7.0
    complex_ = seed % 2 == 1
    psi = random_mps(n, r, complex_=complex_, rng=rng)
    if complex_:
        ctx = LossContext.tomography(generate_qst_dataset(psi, 40, rng))
    else:
        ctx = LossContext.born(rng.integers(0, 2, size=(40, n)))
    states = [psi]
    sites = []
    ngd_sweep(psi, ctx, eta, callback=lambda s, st: (sites.append(s), states.append(st)))
    for prev, new, site in zip(states[:-1], states[1:], sites):
        q = dense_tensor(prev.cores)
        gq = _qst_grad_q(q, ctx) if complex_ else bm_grad_q(q, ctx.symbols, ctx.weights)
        m = core_jacobian(prev.cores, site)
        expected = q - _projection(m, gq) / eta
        got = dense_tensor(new.cores)
        assert np.linalg.norm(got - expected) <= 1e-8 * np.linalg.norm(expected)


def test_ngd_equals_one_site_dmrg():
    for seed in range(5):
        psi, ctx, _ = _bm_instance(seed, n=6, r=3)
        a, b = [], []
        ngd_sweep(psi, ctx, 5.0, callback=lambda s, st: a.append(st), order="forward")
        dmrg1_sweep(psi, ctx, 5.0, callback=lambda s, st: b.append(st))
        assert len(a) == len(b) == 6
        for x, y in zip(a, b):
            np.testing.assert_allclose(x.to_dense(), y.to_dense(), atol=1e-10)


def test_ngd_gauge_independent():
    psi, ctx, _ = _bm_instance(3, n=6, r=3)
    a, _ = ngd_sweep(psi, ctx, 4.0, line_search=True)
    b, _ = ngd_sweep(canonicalize(psi, 4), ctx, 4.0, line_search=True)
    np.testing.assert_allclose(a.to_dense(), b.to_dense(), atol=1e-8)


def test_ngd_noop_at_minimizer():
    model = IsingModel(6, 1.0)
    ctx = exact_distribution_context(configs(6), ising_distribution(model))
    psi = ising_to_bm(model)
    out, _ = ngd_sweep(psi, ctx, 1.0)
    assert np.linalg.norm(out.to_dense() - psi.to_dense()) < 1e-8


def test_ngd_visit_order():
    psi, ctx, _ = _bm_instance(4, n=5)
    _, ups = ngd_sweep(psi, ctx, 10.0)
    assert [u.site for u in ups] == [0, 1, 2, 3, 4, 4, 3, 2, 1, 0]


def test_operator_splitting_limit():
    rng = np.random.default_rng(5)
    psi = canonicalize(random_mps(4, 2, rng=rng), 0)
    # data drawn from the state keeps the curvature moderate, so 1/eta = 1e-3 is already asymptotic
    ctx = LossContext.born(sample_computational_basis(psi, 40, rng))
    q0 = dense_tensor(psi.cores)
    gq = bm_grad_q(q0, ctx.symbols, ctx.weights)
    visits = list(range(4)) + list(range(3, -1, -1))
    limit = -sum(_projection(core_jacobian(psi.cores, i), gq) for i in visits)
    scaled = {}
    for eta in (1e3, 1e4, 1e5):
        out, _ = ngd_sweep(psi, ctx, eta)
        scaled[eta] = eta * (dense_tensor(out.cores) - q0)
    errors = [np.linalg.norm(scaled[e] - limit) for e in (1e3, 1e4, 1e5)]
    # first-order convergence in 1/eta
    assert errors[0] / errors[1] == pytest.approx(10, rel=0.05)
    assert errors[1] / errors[2] == pytest.approx(10, rel=0.05)
    richardson = (1e5 * scaled[1e5] - 1e4 * scaled[1e4]) / (1e5 - 1e4)
    assert np.linalg.norm(richardson - limit) < 1e-2 * errors[2]


def test_dmrg1_descends_for_small_steps():
    wins = 0
    for seed in range(20):
        psi, ctx, _ = _bm_instance(50 + seed, n=5, r=3)
        wins += nll(dmrg1_sweep(psi, ctx, 1e3), ctx) < nll(psi, ctx)
    assert wins == 20


def test_dmrg1_noop_at_minimizer():
    model = IsingModel(5, 1.0)
    ctx = exact_distribution_context(configs(5), ising_distribution(model))
    psi = ising_to_bm(model)
    assert np.linalg.norm(dmrg1_sweep(psi, ctx, 1.0).to_dense() - psi.to_dense()) < 1e-8


# --- line search --------------------------------------------------------------


def test_golden_section_quadratic():
    for a in (0.013, 0.7, 3.0, 250.0):
        alpha, _, flag = golden_section_search(lambda x: (x - a) ** 2)
        assert alpha == pytest.approx(a, rel=1e-6)
        assert flag == ""


def test_line_search_flags():
    psi, ctx, _ = _bm_instance(6)
    zero = [np.zeros_like(c) for c in psi.cores]
    assert line_search(psi, zero, ctx) == (0.0, "zero-direction")
    _, grads = nll_and_gradient(psi, ctx)
    uphill = [np.zeros_like(c) for c in psi.cores]
    uphill[2] = grads[2]
    assert line_search(psi, uphill, ctx) == (0.0, "non-descent")
    with pytest.raises(ValueError):
        line_search(psi, grads, ctx)


@pytest.mark.parametrize("seed", range(10))
def test_line_search_beats_grid(seed):
    # complex amplitudes along a ray generically never vanish, so the 1-D loss is smooth
    rng = np.random.default_rng(20 + seed)
    psi = random_mps(5, 3, complex_=True, rng=rng)
    ctx = LossContext.tomography(generate_qst_dataset(random_mps(5, 3, complex_=True, rng=rng), 60, rng))
    _, grads = nll_and_gradient(psi, ctx)
    k = int(rng.integers(0, 5))
    delta = [np.zeros_like(c) for c in psi.cores]
    delta[k] = -grads[k]

    def loss(a):
        cores = list(psi.cores)
        cores[k] = cores[k] + a * delta[k]
        return nll(Mps(cores), ctx)

    alpha, flag = line_search(psi, delta, ctx)
    assert alpha > 0 and flag == ""
    best = loss(alpha)
    assert best <= loss(0.0) + 1e-12
    grid = np.linspace(0.1 * alpha, 10 * alpha, 1000)
    assert best <= min(loss(a) for a in grid) + 1e-9


def test_line_search_sweep_never_increases_loss():
    psi, ctx, _ = _bm_instance(7, n=6, r=3)
    _, ups = ngd_sweep(psi, ctx, 1.0, line_search=True)
    values = [u.nll_before for u in ups]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


# --- 2-site DMRG ------------------------------------------------------------


def test_dmrg2_merge_split_exact():
    psi, ctx, _ = _bm_instance(8, n=6, r=3)
    out = dmrg2_sweep(psi, ctx, float("inf"), r_max=8)
    np.testing.assert_allclose(out.to_dense(), psi.to_dense(), rtol=1e-10, atol=1e-12)


def test_dmrg2_small_step_bound():
    psi, ctx, _ = _bm_instance(9, n=5, r=4)
    q0 = dense_tensor(psi.cores)
    gq = bm_grad_q(q0, ctx.symbols, ctx.weights)
    lr = 1e-6
    out = dmrg2_sweep(psi, ctx, 1 / lr, r_max=16)
    change = np.linalg.norm(dense_tensor(out.cores) - q0)
    assert change <= (psi.n - 1) * lr * np.linalg.norm(gq) * (1 + 1e-6)


def test_dmrg2_respects_rank_cap():
    psi, ctx, _ = _bm_instance(10, n=7, r=4)
    assert dmrg2_sweep(psi, ctx, 10.0, r_max=2).r_max <= 2


# --- driver -----------------------------------------------------------------


def test_train_zero_iterations_returns_start():
    psi, ctx, _ = _bm_instance(11)
    out, trace = train(psi, ctx, OptimizerConfig(method="GD", max_iters=0))
    assert out is psi and len(trace) == 0


@pytest.mark.parametrize("method", ["GD", "NGD", "DMRG1", "DMRG2"])
def test_train_records_every_iteration(method, tmp_path):
    psi, ctx, _ = _bm_instance(12)
    cfg = OptimizerConfig(method=method, eta=10.0, max_iters=4, r_max=3, tol=0.0)
    out, trace = train(psi, ctx, cfg)
    assert [r.iter for r in trace.records] == list(range(5))
    assert np.all(np.isfinite(trace.nll))
    assert trace.final_nll == pytest.approx(nll(out, ctx))
    trace.to_csv(tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "iter,sweep,nll,mi_x1_xn,tv_to_causal,alpha,wall_ms"


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(method="ADAM")
    with pytest.raises(ValueError):
        OptimizerConfig(eta=0.0)


# --- scalar-core toy ----------------------------------------------------------


def test_toy_unit_scalars_agree():
    rep = toy_multilinear_check(np.ones(6), site=2)
    assert rep.ngd_new_x == pytest.approx(rep.gd_site_new_x, abs=1e-10)
    assert rep.ngd_error < 1e-10


def test_toy_rate_inflation():
    rep = toy_multilinear_check(np.full(10, 2.0), site=0)
    assert rep.predicted_effective_rate == pytest.approx(1e-3 * 4.0**9)
    assert rep.rate_error < 1e-10


def test_toy_ngd_is_gd_in_x():
    rng = np.random.default_rng(13)
    for _ in range(10):
        c = rng.uniform(0.3, 1.7, size=8)
        rep = toy_multilinear_check(c, site=int(rng.integers(0, 8)), rng=rng)
        assert rep.ngd_error < 1e-10
        assert rep.rate_error < 1e-10
