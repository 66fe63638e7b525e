import numpy as np
import pytest
from conftest import configs
from scipy.stats import chisquare

from mpsfit.diagnostics import mutual_information
from mpsfit.models import (
    PAULI,
    IsingModel,
    bits_to_spins,
    heisenberg_mpo,
    ising_distribution,
    ising_exact_sampler,
    ising_log_partition,
    ising_log_unnormalized,
    ising_pair_marginal,
    ising_to_bm,
    kron_chain,
    load_spin_dataset,
    optimal_nll,
    save_spin_dataset,
    spins_to_bits,
    tfim_mpo,
)
from mpsfit.mps import born_distribution


def _edge_sum_oracle(x, edges, beta):
    return -beta * sum(x[i] * x[j] for i, j in edges)


def _enumerated(model):
    spins = bits_to_spins(configs(model.n))
    edges = [(i, i + 1) for i in range(model.n - 1)]
    if model.topology == "cycle":
        edges.append((model.n - 1, 0))
    w = np.exp([_edge_sum_oracle(x, edges, model.beta) for x in spins])
    return w / w.sum()


def _boundary_table(n, beta):
    """Closed form for the cycle: E[x_1 x_n] = (t + t^(n-1)) / (1 + t^n), t = -tanh(beta)."""
    t = -np.tanh(beta)
    c = (t + t ** (n - 1)) / (1 + t**n)
    s = np.array([-1.0, 1.0])
    return (1 + c * np.outer(s, s)) / 4


def test_log_unnormalized_examples(rng):
    m = IsingModel(16, 1.0)
    assert ising_log_unnormalized(m, np.ones(16)) == -16.0
    alt = np.array([(-1) ** k for k in range(16)])
    assert ising_log_unnormalized(m, alt) == 16.0
    m6 = IsingModel(6, 0.7)
    x = rng.choice([-1, 1], size=6)
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]
    assert ising_log_unnormalized(m6, x) == pytest.approx(_edge_sum_oracle(x, edges, 0.7))


@pytest.mark.parametrize("n", [3, 6, 16, 40])
def test_log_partition_closed_form(n):
    b = 1.0
    z = (2 * np.cosh(b)) ** n + (-2 * np.sinh(b)) ** n
    assert ising_log_partition(IsingModel(n, b)) == pytest.approx(np.log(z), rel=1e-12)
    zp = 2 * (2 * np.cosh(b)) ** (n - 1)
    assert ising_log_partition(IsingModel(n, b, "path")) == pytest.approx(np.log(zp), rel=1e-12)


@pytest.mark.parametrize("topology", ["cycle", "path"])
@pytest.mark.parametrize("n", [3, 6, 10])
def test_bm_construction_reproduces_distribution(topology, n):
    model = IsingModel(n, 1.0, topology)
    psi = ising_to_bm(model)
    np.testing.assert_allclose(born_distribution(psi), _enumerated(model), rtol=1e-12)
    np.testing.assert_allclose(ising_distribution(model), _enumerated(model), rtol=1e-12)
    assert psi.r_max == (4 if topology == "cycle" else 2)


def test_pair_marginal_closed_form():
    for n in (6, 16):
        np.testing.assert_allclose(ising_pair_marginal(IsingModel(n, 1.0)), _boundary_table(n, 1.0), atol=1e-14)
    np.testing.assert_allclose(ising_pair_marginal(IsingModel(8, 0.0)), np.full((2, 2), 0.25))


@pytest.mark.parametrize("n", [4, 6, 8])
def test_sampler_chi_square(n):
    model = IsingModel(n, 1.0)
    bits = spins_to_bits(ising_exact_sampler(model, 100_000, rng_seed=n))
    idx = bits @ (1 << np.arange(n - 1, -1, -1))
    observed = np.bincount(idx, minlength=2**n)
    expected = _enumerated(model) * observed.sum()
    assert chisquare(observed, expected).pvalue > 0.01


def test_sampler_path_and_beta_zero():
    path = IsingModel(6, 1.0, "path")
    bits = spins_to_bits(ising_exact_sampler(path, 100_000, rng_seed=1))
    idx = bits @ (1 << np.arange(5, -1, -1))
    emp = np.bincount(idx, minlength=64) / len(idx)
    assert 0.5 * np.abs(emp - _enumerated(path)).sum() < 0.02
    free = spins_to_bits(ising_exact_sampler(IsingModel(5, 0.0), 100_000, rng_seed=2))
    for k in range(5):
        counts = np.bincount(free[:, k], minlength=2)
        assert chisquare(counts).pvalue > 0.01


def test_sampler_boundary_mutual_information():
    # the cycle's boundary pair shares about 0.33 nats at beta = 1, n = 16
    bits = spins_to_bits(ising_exact_sampler(IsingModel(16, 1.0), 2**15, rng_seed=0))
    table = np.zeros((2, 2))
    np.add.at(table, (bits[:, 0], bits[:, -1]), 1)
    assert mutual_information(table) == pytest.approx(0.33, abs=0.02)


def test_optimal_nll(rng):
    spins = rng.choice([-1, 1], size=(50, 7))
    assert optimal_nll(IsingModel(7, 0.0), spins) == pytest.approx(7 * np.log(2), rel=1e-14)
    model = IsingModel(6, 1.0)
    data = ising_exact_sampler(model, 500, rng_seed=3)
    p = _enumerated(model)
    idx = spins_to_bits(data) @ (1 << np.arange(5, -1, -1))
    assert optimal_nll(model, data) == pytest.approx(-np.mean(np.log(p[idx])), rel=1e-10)


def _tfim_dense(n, J, h, periodic):
    H = np.zeros((2**n, 2**n), dtype=complex)
    edges = [(i, i + 1) for i in range(n - 1)] + ([(n - 1, 0)] if periodic else [])
    for i, j in edges:
        ops = [PAULI["I"]] * n
        ops[i], ops[j] = PAULI["Z"], PAULI["Z"]
        H -= J * kron_chain(ops)
    for i in range(n):
        ops = [PAULI["I"]] * n
        ops[i] = PAULI["X"]
        H -= h * kron_chain(ops)
    return H


def _heis_dense(n, periodic, J=1.0):
    H = np.zeros((2**n, 2**n), dtype=complex)
    edges = [(i, i + 1) for i in range(n - 1)] + ([(n - 1, 0)] if periodic else [])
    for i, j in edges:
        for p in "XYZ":
            ops = [PAULI["I"]] * n
            ops[i], ops[j] = PAULI[p], PAULI[p]
            H += J * kron_chain(ops)
    return H


@pytest.mark.parametrize("periodic", [True, False])
def test_tfim_mpo_matches_kron_oracle(periodic):
    for n in (3, 4, 6):
        mpo = tfim_mpo(n, 0.7, 1.3, periodic)
        np.testing.assert_allclose(mpo.to_dense(), _tfim_dense(n, 0.7, 1.3, periodic), atol=1e-12)
    assert max(tfim_mpo(6, periodic=periodic).bond_dims) == (4 if periodic else 3)


def test_tfim_special_cases():
    H = tfim_mpo(5, 1.0, 0.0).to_dense()
    up = np.zeros(32)
    up[0] = 1.0
    assert np.real(up @ H @ up) == pytest.approx(-5.0)
    assert np.linalg.eigvalsh(tfim_mpo(5, 0.0, 1.0).to_dense())[0] == pytest.approx(-5.0)


def test_heisenberg_mpo():
    two = heisenberg_mpo(2, periodic=False).to_dense()
    np.testing.assert_allclose(np.linalg.eigvalsh(two), [-3, 1, 1, 1], atol=1e-12)
    for periodic in (True, False):
        for n in (3, 4, 5):
            dense = heisenberg_mpo(n, periodic).to_dense()
            np.testing.assert_allclose(dense, _heis_dense(n, periodic), atol=1e-12)
            np.testing.assert_allclose(dense, dense.conj().T, atol=1e-12)
    assert max(heisenberg_mpo(6, True).bond_dims) == 8
    assert max(heisenberg_mpo(6, False).bond_dims) == 5


@pytest.mark.parametrize("n", [6, 8])
def test_mpos_hermitian(n):
    for mpo in (tfim_mpo(n), heisenberg_mpo(n)):
        d = mpo.to_dense()
        np.testing.assert_allclose(d, d.conj().T, atol=1e-12)


def test_spin_dataset_round_trip(tmp_path):
    spins = ising_exact_sampler(IsingModel(5, 1.0), 20, rng_seed=9)
    save_spin_dataset(spins, tmp_path / "d.txt")
    assert np.array_equal(load_spin_dataset(tmp_path / "d.txt"), spins)
    assert (tmp_path / "d.txt").read_text().splitlines()[0] == "n=5 kind=spin"


def test_model_validation():
    with pytest.raises(ValueError):
        IsingModel(2, 1.0, "cycle")
    with pytest.raises(ValueError):
        IsingModel(5, float("inf"))
