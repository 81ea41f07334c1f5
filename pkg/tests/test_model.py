import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import roots_legendre

from fdpclab.errors import ConfigurationError
from fdpclab.model import (ChannelSpec, CorrelatedRayleigh, Dimensions,
                           IidComplexGaussian, IidRealGaussian, IidUniformComplex,
                           NoCsit, PerfectCsit, QuantizedCsit, build_sample_bank,
                           design_uniform_quantizer, quantize_H, quantizer_mse,
                           random_psd, sample_H, sample_H_given_Hhat)

from conftest import make_rng, rand_spec


# ---------------------------------------------------------------------------
# domain type validation
# ---------------------------------------------------------------------------

def test_dimensions_invariants():
    Dimensions(3, 2, 2)
    with pytest.raises(ConfigurationError):
        Dimensions(2, 2, 3)       # m > t
    with pytest.raises(ConfigurationError):
        Dimensions(0, 1, 1)


def test_channel_spec_validation(rng):
    dims = Dimensions(2, 2, 1)
    T = np.array([[1.0], [0.0]])
    ChannelSpec.create(dims, T=T, sigma_s=np.eye(2), sigma_z=np.eye(2))
    # power budget violated
    with pytest.raises(ConfigurationError):
        ChannelSpec(dims=dims, T=T, sigma_s=np.eye(2), sigma_z=np.eye(2),
                    P=0.5, Q=2.0, N=2.0)
    # non-Hermitian covariance
    with pytest.raises(ConfigurationError):
        ChannelSpec.create(dims, T=T, sigma_s=np.array([[1.0, 0.5], [0.0, 1.0]]),
                           sigma_z=np.eye(2))
    # singular noise
    with pytest.raises(ConfigurationError):
        ChannelSpec.create(dims, T=T, sigma_s=np.eye(2), sigma_z=np.diag([1.0, 0.0]))
    # negative-definite interference
    with pytest.raises(ConfigurationError):
        ChannelSpec.create(dims, T=T, sigma_s=np.diag([1.0, -0.5]), sigma_z=np.eye(2))


def test_spec_clips_tiny_negative_eigenvalues():
    dims = Dimensions(2, 2, 1)
    sigma_s = np.diag([1.0, -1e-14])
    spec = ChannelSpec.create(dims, T=[[1.0], [0.0]], sigma_s=sigma_s, sigma_z=np.eye(2))
    assert np.linalg.eigvalsh(spec.sigma_s).min() >= 0.0


def test_rescaling_keeps_structure():
    spec = ChannelSpec.create(Dimensions(2, 2, 1), T=[[1.0], [0.0]],
                              sigma_s=np.diag([2.0, 0.0]), sigma_z=np.eye(2))
    scaled = spec.at_snr_db(20.0, q_over_p=0.5)
    assert scaled.P == pytest.approx(2.0 * 100.0)
    assert scaled.Q == pytest.approx(0.5 * scaled.P)
    assert np.trace(scaled.T @ scaled.T.T) == pytest.approx(scaled.P)
    # direction preserved
    assert scaled.T[1, 0] == 0.0 and scaled.sigma_s[1, 1] == 0.0


# ---------------------------------------------------------------------------
# fading laws
# ---------------------------------------------------------------------------

def test_iid_real_gaussian_moments():
    rng = make_rng(0)
    dims = Dimensions(2, 2, 1)
    draws = np.stack([sample_H(IidRealGaussian(), dims, rng) for _ in range(200)])
    # batched path for the heavy moment check
    from fdpclab.model import _sample_h_batch

    big = _sample_h_batch(IidRealGaussian(), dims, rng, 10 ** 5)
    assert abs(big.mean()) < 0.02
    assert 0.95 < big.var() < 1.05
    assert draws.shape == (200, 2, 2)


def test_correlated_rayleigh_identity_matches_iid():
    rng = make_rng(1)
    dims = Dimensions(2, 2, 1)
    from fdpclab.model import _sample_h_batch

    corr = _sample_h_batch(CorrelatedRayleigh(r_rx=np.eye(2), r_tx=np.eye(2)),
                           dims, rng, 10 ** 5)
    assert abs((np.abs(corr) ** 2).mean() - 1.0) < 0.02
    flat = corr.reshape(-1, 4)
    cross = np.cov(flat.T)
    off_diag = np.abs(cross - np.diag(np.diag(cross))).max()
    assert off_diag < 0.02


def test_uniform_complex_support():
    rng = make_rng(2)
    dims = Dimensions(3, 2, 1)
    from fdpclab.model import _sample_h_batch

    draws = _sample_h_batch(IidUniformComplex(), dims, rng, 2000)
    assert draws.real.min() >= 0.0 and draws.real.max() <= 1.0
    assert draws.imag.min() >= 0.0 and draws.imag.max() <= 1.0


def test_correlated_rayleigh_rejects_bad_correlation():
    with pytest.raises(ConfigurationError):
        CorrelatedRayleigh(r_rx=np.diag([1.0, -1.0]), r_tx=np.eye(2))


# ---------------------------------------------------------------------------
# quantizer design
# ---------------------------------------------------------------------------

def _mse_quadrature(step, bits, n_gl=64):
    """Oracle MSE: per-bin Gauss-Legendre panels plus 12-sigma tail panels."""
    n = 2 ** bits
    levels = (np.arange(n) - (n - 1) / 2.0) * step
    edges = (levels[:-1] + levels[1:]) / 2.0
    nodes, weights = roots_legendre(n_gl)
    phi = lambda x: np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)

    def panel(a, b, level):
        x = 0.5 * (a + b) + 0.5 * (b - a) * nodes
        return 0.5 * (b - a) * np.sum(weights * (x - level) ** 2 * phi(x))

    total = sum(panel(edges[k - 1], edges[k], levels[k]) for k in range(1, n - 1))
    total += 2.0 * panel(edges[-1], edges[-1] + 12.0, levels[-1])  # symmetric tails
    return total


def _grid_oracle_step(bits):
    coarse = np.arange(0.02, 3.0001, 0.002)
    c0 = coarse[int(np.argmin([_mse_quadrature(d, bits) for d in coarse]))]
    fine = np.arange(c0 - 0.004, c0 + 0.004, 1e-5)
    return fine[int(np.argmin([_mse_quadrature(d, bits) for d in fine]))]


def test_design_b1_closed_form():
    # two symmetric levels: optimal half-step is the mean absolute value
    step = design_uniform_quantizer(1)
    assert step / 2.0 == pytest.approx(np.sqrt(2.0 / np.pi), abs=1e-6)


def test_design_b2_matches_grid_oracle():
    assert design_uniform_quantizer(2) == pytest.approx(_grid_oracle_step(2), abs=1e-4)


@pytest.mark.parametrize("bits", [1, 2, 3, 4, 5, 6])
def test_design_local_optimality(bits):
    step = design_uniform_quantizer(bits)
    mse = quantizer_mse(step, bits)
    assert mse <= quantizer_mse(step + 0.01, bits)
    assert mse <= quantizer_mse(step - 0.01, bits)


def test_design_rejects_out_of_range():
    with pytest.raises(ConfigurationError):
        design_uniform_quantizer(0)
    with pytest.raises(ConfigurationError):
        design_uniform_quantizer(7)


# ---------------------------------------------------------------------------
# quantization and conditional sampling
# ---------------------------------------------------------------------------

def test_quantize_sign_levels():
    csit = QuantizedCsit(bits=1, step=1.6)
    assert quantize_H(np.array([[0.3]]), csit)[0, 0] == pytest.approx(0.8)
    assert quantize_H(np.array([[-5.0]]), csit)[0, 0] == pytest.approx(-0.8)


@given(bits=st.integers(1, 4), step=st.floats(0.05, 3.0),
       seed=st.integers(0, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_quantize_idempotent(bits, step, seed):
    csit = QuantizedCsit(bits=bits, step=step)
    x = make_rng(seed).standard_normal((3, 3)) * 3.0
    once = quantize_H(x, csit)
    assert np.array_equal(quantize_H(once, csit), once)


def test_levels_partition_and_spacing():
    csit = QuantizedCsit(bits=3, step=0.586)
    lv = csit.levels()
    assert len(lv) == 8
    assert np.allclose(np.diff(lv), csit.step)
    assert np.allclose(lv, -lv[::-1])  # symmetric about zero


def test_conditional_sampling_round_trip():
    rng = make_rng(3)
    csit = QuantizedCsit.designed(2)
    model = IidRealGaussian()
    dims = Dimensions(2, 2, 1)
    for _ in range(50):
        h = sample_H(model, dims, rng)
        h_hat = quantize_H(h, csit)
        draws = sample_H_given_Hhat(h_hat, csit, model, rng, n=40)
        assert np.allclose(quantize_H(draws, csit),
                           np.broadcast_to(h_hat, draws.shape))


def test_conditional_sampling_sign_bin():
    rng = make_rng(4)
    csit = QuantizedCsit(bits=1, step=1.6)
    h_hat = np.full((2, 2), 0.8)
    draws = sample_H_given_Hhat(h_hat, csit, IidRealGaussian(), rng, n=500)
    assert draws.min() >= 0.0


def test_mixture_matches_unconditional_moments():
    rng = make_rng(5)
    dims = Dimensions(2, 2, 1)
    model = IidRealGaussian()
    csit = QuantizedCsit.designed(2)
    from fdpclab.model import _sample_h_batch

    n = 10 ** 5
    unconditional = _sample_h_batch(model, dims, rng, n)
    raw = _sample_h_batch(model, dims, rng, n)
    hierarchical = sample_H_given_Hhat(quantize_H(raw, csit), csit, model, rng)
    assert abs(unconditional.mean() - hierarchical.mean()) < 0.02
    assert abs(unconditional.var() - hierarchical.var()) < 0.02


def test_conditional_sampling_complex_round_trip():
    rng = make_rng(6)
    csit = QuantizedCsit.designed(1, component_std=np.sqrt(0.5))
    model = IidComplexGaussian()
    h = sample_H(model, Dimensions(2, 2, 1), rng)
    h_hat = quantize_H(h, csit)
    draws = sample_H_given_Hhat(h_hat, csit, model, rng, n=100)
    assert np.allclose(quantize_H(draws, csit), np.broadcast_to(h_hat, draws.shape))


def test_conditional_sampling_rejects_unsupported_fading():
    csit = QuantizedCsit.designed(1)
    with pytest.raises(ConfigurationError):
        sample_H_given_Hhat(np.zeros((2, 2)), csit, IidUniformComplex(), make_rng(0))


# ---------------------------------------------------------------------------
# sample banks
# ---------------------------------------------------------------------------

def test_bank_determinism_bytewise(rng):
    spec = rand_spec(make_rng(7), 2, 2, 1, "real")
    model = IidRealGaussian()
    csit = QuantizedCsit.designed(2)
    b1 = build_sample_bank(spec, model, csit, 10, 25, seed=99)
    b2 = build_sample_bank(spec, model, csit, 10, 25, seed=99)
    assert b1.to_bytes() == b2.to_bytes()
    b3 = build_sample_bank(spec, model, csit, 10, 25, seed=100)
    assert b1.to_bytes() != b3.to_bytes()


def test_bank_structure_contracts():
    spec = rand_spec(make_rng(8), 2, 2, 1, "real")
    model = IidRealGaussian()
    none = build_sample_bank(spec, model, NoCsit(), 10, 1000, seed=1)
    assert len(none) == 1 and none.cells[0].draws.shape == (1000, 2, 2)
    assert none.cells[0].h_hat is None
    perfect = build_sample_bank(spec, model, PerfectCsit(), 500, 7, seed=1)
    assert len(perfect) == 500
    for cell in perfect:
        assert cell.draws.shape == (1, 2, 2)
        assert np.array_equal(cell.draws[0], cell.h_hat)


def test_bank_rejects_field_mismatch():
    spec = rand_spec(make_rng(9), 2, 2, 1, "real")
    with pytest.raises(ConfigurationError):
        build_sample_bank(spec, IidComplexGaussian(), NoCsit(), 1, 10, seed=0)


def test_bank_rejects_quantized_unsupported_fading():
    spec = rand_spec(make_rng(10), 2, 2, 1, "complex")
    with pytest.raises(ConfigurationError):
        build_sample_bank(spec, IidUniformComplex(), QuantizedCsit.designed(1),
                          4, 4, seed=0)


def test_random_psd_rank_and_trace():
    mat = random_psd(4, rank=2, seed=3, trace=5.0, field="complex")
    eig = np.linalg.eigvalsh(mat)
    assert np.trace(mat).real == pytest.approx(5.0)
    assert (eig > 1e-12).sum() == 2
