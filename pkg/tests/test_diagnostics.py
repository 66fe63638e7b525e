import numpy as np
import pytest

from mpsfit.diagnostics import (
    EnumerationBoundError,
    kl_decomposition,
    mutual_information,
    pair_marginal,
    trap_detector,
    tv_distance,
)
from mpsfit.models import IsingModel, ising_distribution, ising_to_bm
from mpsfit.mps import born_distribution, product_state, random_mps


def _enumerated_pair(psi, i, j):
    n = psi.n
    p = born_distribution(psi).reshape((2,) * n)
    axes = tuple(k for k in range(n) if k not in (i, j))
    return p.sum(axis=axes)


@pytest.mark.parametrize("n", [2, 3, 6, 10])
def test_pair_marginal_matches_enumeration(n):
    psi = random_mps(n, 3, complex_=n % 2 == 0, rng=n)
    np.testing.assert_allclose(pair_marginal(psi), _enumerated_pair(psi, 0, n - 1), atol=1e-10)
    if n > 3:
        np.testing.assert_allclose(pair_marginal(psi, (1, n - 2)), _enumerated_pair(psi, 1, n - 2), atol=1e-10)
    assert pair_marginal(psi).sum() == pytest.approx(1.0, abs=1e-10)


def test_pair_marginal_ising():
    np.testing.assert_allclose(pair_marginal(IsingModel(8, 0.0)), np.full((2, 2), 0.25), atol=1e-12)
    model = IsingModel(10, 1.0)
    p = ising_distribution(model).reshape((2,) * 10).sum(axis=tuple(range(1, 9)))
    np.testing.assert_allclose(pair_marginal(model), p, atol=1e-12)
    np.testing.assert_allclose(pair_marginal(ising_to_bm(model)), p, atol=1e-10)
    with pytest.raises(ValueError):
        pair_marginal(model, (0, 3))


def test_mutual_information_values():
    assert mutual_information(np.outer([0.3, 0.7], [0.6, 0.4])) == pytest.approx(0.0, abs=1e-15)
    assert mutual_information(np.array([[0.5, 0.0], [0.0, 0.5]])) == pytest.approx(np.log(2), rel=1e-14)
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = rng.random((2, 2))
        t /= t.sum()
        mi = mutual_information(t)
        assert 0 <= mi <= np.log(2)
        assert mi == pytest.approx(mutual_information(t.T), rel=1e-12)


def test_target_boundary_information():
    assert mutual_information(pair_marginal(IsingModel(16, 1.0))) == pytest.approx(0.33, abs=0.01)


@pytest.mark.parametrize("n", [4, 6, 8, 10])
def test_kl_decomposition_identity(n):
    target = IsingModel(n, 1.0)
    psi = random_mps(n, 3, rng=100 + n)
    d_kl, d_z, d_wz = kl_decomposition(target, psi)
    p, q = ising_distribution(target), born_distribution(psi)
    assert d_kl == pytest.approx(np.sum(p * np.log(p / q)), abs=1e-8)
    assert d_z + d_wz == pytest.approx(d_kl, abs=1e-8)
    assert d_z >= -1e-10 and d_wz >= -1e-10


def test_kl_decomposition_exact_model():
    model = IsingModel(8, 1.0)
    d_kl, d_z, d_wz = kl_decomposition(model, ising_to_bm(model))
    assert abs(d_kl) < 1e-10 and abs(d_z) < 1e-10 and abs(d_wz) < 1e-10


def test_causal_model_is_trapped():
    model = IsingModel(16, 1.0)
    mi = mutual_information(pair_marginal(model))
    rep = trap_detector(model, ising_to_bm(model.causal()))
    assert abs(rep.D_w_given_z) < 1e-10
    assert rep.D_z == pytest.approx(mi, abs=0.02)
    assert rep.trapped and rep.method == "exact"
    assert rep.D_z + rep.D_w_given_z == pytest.approx(rep.D_kl, abs=1e-8)
    # the causal model keeps a small residual boundary correlation at finite n
    assert rep.mi_model < 0.05


def test_exact_model_not_trapped():
    model = IsingModel(10, 1.0)
    rep = trap_detector(model, ising_to_bm(model))
    assert not rep.trapped
    assert abs(rep.D_z) < 1e-10


def test_proxy_path():
    model = IsingModel(12, 1.0)
    causal = ising_to_bm(model.causal())
    exact = trap_detector(model, causal)
    proxy = trap_detector(model, causal, enum_bound=1 << 10, nll_gap=exact.D_kl)
    assert proxy.method == "proxy"
    assert proxy.D_w_given_z == pytest.approx(exact.D_w_given_z, abs=1e-10)
    assert proxy.trapped == exact.trapped
    with pytest.raises(EnumerationBoundError):
        trap_detector(model, causal, enum_bound=1 << 10)


def test_report_text_and_row():
    model = IsingModel(6, 1.0)
    rep = trap_detector(model, ising_to_bm(model))
    lines = rep.as_text().splitlines()
    keys = [line.split("=")[0] for line in lines]
    assert keys[:6] == ["D_z", "D_w_given_z", "mi_model", "mi_target", "nll_gap", "trapped"]
    assert "trapped=false" in lines
    assert rep.as_row()["trapped"] == "false"


def test_tv_distance():
    psi = random_mps(6, 3, rng=7)
    assert tv_distance(psi, psi) == pytest.approx(0.0, abs=1e-15)
    a = product_state([np.array([1.0, 0.0])] * 4)
    b = product_state([np.array([0.0, 1.0])] * 4)
    assert tv_distance(a, b) == pytest.approx(1.0)
    p = ising_distribution(IsingModel(6, 1.0))
    assert tv_distance(p, born_distribution(psi), n=6) == pytest.approx(0.5 * np.abs(p - born_distribution(psi)).sum())
    with pytest.raises(EnumerationBoundError):
        tv_distance(IsingModel(12, 1.0), IsingModel(12, 0.5), enum_bound=1 << 10)
    with pytest.raises(ValueError):
        tv_distance(a, psi)
