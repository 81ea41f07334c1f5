"""Channel, covariance, fading and CSIT domain types plus all random sampling.

Conventions used throughout the package:

* the channel is ``Y = H(X + S) + Z`` with ``H`` of shape (r, t),
* the transmit covariance is factored as ``Sigma_X = T @ T*`` with ``T`` of
  shape (t, m) and ``trace(T T*) <= P``,
* the scalar field ("real" or "complex") is declared once per spec; every
  rate is a difference of log-determinants, so the formulas are
  field-generic.

Sampling is pure given an explicit generator; sample banks derive one
independent stream per outer cell from ``(seed, cell_index)`` so that the
bank is a deterministic function of its arguments.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr, ndtri

from .errors import ConfigurationError
from .linalg import clip_psd, ct, hermitize, sqrtm_pd, validate_hermitian

REAL = "real"
COMPLEX = "complex"


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dimensions:
    """Antenna counts and the rank bound of the input covariance."""

    t: int  # transmit antennas
    r: int  # receive antennas
    m: int  # rank bound of Sigma_X, 1 <= m <= t

    def __post_init__(self):
        if self.t < 1 or self.r < 1 or self.m < 1:
            raise ConfigurationError("dimensions must be positive")
        if self.m > self.t:
            raise ConfigurationError(f"m={self.m} exceeds t={self.t}")


def _as_field(a, field, name):
    a = np.asarray(a)
    if field == REAL:
        if np.iscomplexobj(a):
            if np.abs(a.imag).max(initial=0.0) > 0:
                raise ConfigurationError(f"{name} has imaginary entries in a real spec")
            a = a.real
        return np.ascontiguousarray(a, dtype=np.float64)
    return np.ascontiguousarray(a, dtype=np.complex128)


@dataclass(frozen=True)
class ChannelSpec:
    """Static description of one fading dirty paper channel instance.

    ``P``, ``Q`` and ``N`` are the power budgets; they must agree with the
    traces of ``T T*``, ``sigma_s`` and ``sigma_z`` (``P`` is an upper bound
    for ``trace(T T*)``).
    """

    dims: Dimensions
    T: np.ndarray          # (t, m) factor of Sigma_X
    sigma_s: np.ndarray    # (t, t) interference covariance, p.s.d.
    sigma_z: np.ndarray    # (r, r) noise covariance, p.d.
    P: float
    Q: float
    N: float
    field: str = REAL

    def __post_init__(self):
        t, r, m = self.dims.t, self.dims.r, self.dims.m
        if self.field not in (REAL, COMPLEX):
            raise ConfigurationError(f"unknown field {self.field!r}")
        T = _as_field(self.T, self.field, "T")
        if T.shape != (t, m):
            raise ConfigurationError(f"T has shape {T.shape}, expected {(t, m)}")
        sigma_s = _as_field(self.sigma_s, self.field, "sigma_s")
        sigma_z = _as_field(self.sigma_z, self.field, "sigma_z")
        if sigma_s.shape != (t, t):
            raise ConfigurationError("sigma_s shape mismatch")
        if sigma_z.shape != (r, r):
            raise ConfigurationError("sigma_z shape mismatch")
        validate_hermitian(sigma_s, "sigma_s")
        validate_hermitian(sigma_z, "sigma_z")
        sigma_s = clip_psd(sigma_s, "sigma_s")

        tr_x = float(np.trace(T @ ct(T)).real)
        if tr_x > self.P * (1.0 + 1e-9) + 1e-15:
            raise ConfigurationError(
                f"trace(T T*)={tr_x:.6g} exceeds power budget P={self.P:.6g}"
            )
        if abs(float(np.trace(sigma_s).real) - self.Q) > 1e-9 * max(1.0, self.Q):
            raise ConfigurationError("trace(sigma_s) does not equal Q")
        n = float(np.trace(sigma_z).real)
        if abs(n - self.N) > 1e-9 * max(1.0, self.N) or n <= 0:
            raise ConfigurationError("trace(sigma_z) must equal N > 0")
        sign, _ = np.linalg.slogdet(sigma_z)
        if np.linalg.eigvalsh(hermitize(sigma_z)).min() <= 0 or sign.real <= 0:
            raise ConfigurationError("sigma_z must be positive definite")

        for name, arr in (("T", T), ("sigma_s", sigma_s), ("sigma_z", sigma_z)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dtype(self):
        return np.float64 if self.field == REAL else np.complex128

    @property
    def snr(self):
        return self.P / self.N

    @property
    def sigma_x(self):
        return self.T @ ct(self.T)

    @classmethod
    def create(cls, dims, T, sigma_s, sigma_z, field=REAL, P=None):
        """Build a spec, deriving P, Q, N from the matrices when omitted."""
        T = np.asarray(T)
        sigma_s = np.asarray(sigma_s)
        sigma_z = np.asarray(sigma_z)
        if P is None:
            P = float(np.trace(T @ ct(T)).real)
        Q = float(np.trace(sigma_s).real)
        N = float(np.trace(sigma_z).real)
        return cls(dims=dims, T=T, sigma_s=sigma_s, sigma_z=sigma_z,
                   P=P, Q=Q, N=N, field=field)

    def rescaled(self, P, Q=None):
        """Same spatial structure, new power budgets.

        ``T`` is scaled so ``trace(T T*) = P`` and ``sigma_s`` so its trace
        is ``Q`` (default: keep the current Q/P ratio).
        """
        tr_x = float(np.trace(self.T @ ct(self.T)).real)
        if tr_x <= 0:
            raise ConfigurationError("cannot rescale a zero transmit factor")
        if Q is None:
            Q = self.Q * P / self.P
        if Q > 0 and self.Q == 0:
            raise ConfigurationError("cannot rescale zero interference to Q > 0")
        T = self.T * np.sqrt(P / tr_x)
        sigma_s = self.sigma_s * (Q / self.Q) if self.Q > 0 else self.sigma_s
        return ChannelSpec(dims=self.dims, T=T, sigma_s=sigma_s,
                           sigma_z=self.sigma_z, P=P, Q=float(Q), N=self.N,
                           field=self.field)

    def at_snr_db(self, snr_db, q_over_p=None):
        """Spec rescaled so that P/N hits the requested SNR in dB."""
        P = self.N * 10.0 ** (snr_db / 10.0)
        Q = None if q_over_p is None else q_over_p * P
        return self.rescaled(P, Q)


# ---------------------------------------------------------------------------
# fading models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IidRealGaussian:
    """Entries i.i.d. N(0, 1)."""

    field = REAL


@dataclass(frozen=True)
class IidComplexGaussian:
    """Entries i.i.d. circularly-symmetric CN(0, 1)."""

    field = COMPLEX


@dataclass(frozen=True)
class IidUniformComplex:
    """Entries i.i.d. Unif[0,1] + j Unif[0,1]."""

    field = COMPLEX


@dataclass(frozen=True)
class CorrelatedRayleigh:
    """Separably correlated Rayleigh fading ``R_r^{1/2} G R_t^{1/2}``."""

    r_rx: np.ndarray  # (r, r) receive correlation, Hermitian p.d.
    r_tx: np.ndarray  # (t, t) transmit correlation, Hermitian p.d.

    field = COMPLEX

    def __post_init__(self):
        for name in ("r_rx", "r_tx"):
            mat = np.ascontiguousarray(getattr(self, name), dtype=np.complex128)
            validate_hermitian(mat, name)
            if np.linalg.eigvalsh(hermitize(mat)).min() <= 0:
                raise ConfigurationError(f"{name} must be positive definite")
            mat.setflags(write=False)
            object.__setattr__(self, name, mat)


def _sample_h_batch(model, dims, rng, n):
    """Draw ``n`` channel matrices, shape (n, r, t)."""
    r, t = dims.r, dims.t
    if isinstance(model, IidRealGaussian):
        return rng.standard_normal((n, r, t))
    if isinstance(model, IidComplexGaussian):
        z = rng.standard_normal((n, r, t)) + 1j * rng.standard_normal((n, r, t))
        return z * np.sqrt(0.5)
    if isinstance(model, IidUniformComplex):
        return rng.random((n, r, t)) + 1j * rng.random((n, r, t))
    if isinstance(model, CorrelatedRayleigh):
        if model.r_rx.shape != (r, r) or model.r_tx.shape != (t, t):
            raise ConfigurationError("correlation matrices do not match dims")
        g = (rng.standard_normal((n, r, t)) + 1j * rng.standard_normal((n, r, t)))
        g *= np.sqrt(0.5)
        return np.einsum("ij,njk,kl->nil", sqrtm_pd(model.r_rx), g,
                         sqrtm_pd(model.r_tx))
    raise ConfigurationError(f"unknown fading model {model!r}")


def sample_H(model, dims, rng):
    """One draw of the channel matrix under the given fading law."""
    return _sample_h_batch(model, dims, rng, 1)[0]


def fading_component_std(model):
    """Per real component standard deviation of one channel entry."""
    if isinstance(model, IidRealGaussian):
        return 1.0
    if isinstance(model, IidComplexGaussian):
        return np.sqrt(0.5)
    raise ConfigurationError(
        "component std only defined for the i.i.d. Gaussian fading variants"
    )


# ---------------------------------------------------------------------------
# CSIT models and the per-entry quantizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerfectCsit:
    pass


@dataclass(frozen=True)
class NoCsit:
    pass


@dataclass(frozen=True)
class QuantizedCsit:
    """Per-entry scalar quantizer with ``2**bits`` equally spaced levels.

    Bins are of equal length ``step`` except for the outermost two, which
    extend to infinity; reconstruction levels sit at the bin centers and the
    bin boundaries sit midway between adjacent levels.
    """

    bits: int
    step: float

    def __post_init__(self):
        if not (isinstance(self.bits, (int, np.integer)) and self.bits >= 1):
            raise ConfigurationError("bits must be an integer >= 1")
        if not self.step > 0:
            raise ConfigurationError("quantizer step must be positive")

    @property
    def n_levels(self):
        return 2 ** self.bits

    def levels(self):
        k = np.arange(self.n_levels, dtype=np.float64)
        return (k - (self.n_levels - 1) / 2.0) * self.step

    @classmethod
    def designed(cls, bits, component_std=1.0):
        """Quantizer with the MSE-optimal step for the given source std."""
        return cls(bits=bits, step=design_uniform_quantizer(bits) * component_std)


def quantizer_mse(step, bits):
    """Mean squared error of the quantizer on a standard normal source."""
    n = 2 ** bits
    levels = (np.arange(n) - (n - 1) / 2.0) * step
    lo = np.concatenate(([-np.inf], (levels[:-1] + levels[1:]) / 2.0))
    hi = np.concatenate(((levels[:-1] + levels[1:]) / 2.0, [np.inf]))

    def phi(x):
        out = np.zeros_like(x)
        finite = np.isfinite(x)
        out[finite] = np.exp(-0.5 * x[finite] ** 2) / np.sqrt(2.0 * np.pi)
        return out

    def xphi(x):
        return np.where(np.isfinite(x), x, 0.0) * phi(x)

    cdf = lambda x: np.where(np.isfinite(x), ndtr(np.where(np.isfinite(x), x, 0.0)),
                             (x > 0).astype(float))
    mass = cdf(hi) - cdf(lo)
    return float(np.sum((1.0 + levels ** 2) * mass
                        + xphi(lo) - xphi(hi)
                        - 2.0 * levels * (phi(lo) - phi(hi))))


def design_uniform_quantizer(bits):
    """MSE-optimal step of the equally-spaced-level quantizer, unit normal source."""
    if not 1 <= bits <= 6:
        raise ConfigurationError("bits must lie in 1..6")
    res = minimize_scalar(lambda d: quantizer_mse(d, bits),
                          bounds=(1e-4, 4.0), method="bounded",
                          options={"xatol": 1e-9})
    return float(res.x)


def _quantize_real(x, csit):
    c = (csit.n_levels - 1) / 2.0
    k = np.clip(np.rint(np.asarray(x, dtype=np.float64) / csit.step + c),
                0, csit.n_levels - 1)
    return (k - c) * csit.step


def quantize_H(H, csit):
    """Quantize each entry of H; complex entries quantize re/im independently."""
    if not isinstance(csit, QuantizedCsit):
        raise ConfigurationError("quantize_H requires a QuantizedCsit model")
    H = np.asarray(H)
    if np.iscomplexobj(H):
        return _quantize_real(H.real, csit) + 1j * _quantize_real(H.imag, csit)
    return _quantize_real(H, csit)


def _bin_edges_for_levels(values, csit):
    """Lower/upper bin edges of the bins whose reconstruction levels are ``values``."""
    c = (csit.n_levels - 1) / 2.0
    k = np.clip(np.rint(values / csit.step + c), 0, csit.n_levels - 1)
    lo = np.where(k == 0, -np.inf, (k - 0.5 - c) * csit.step)
    hi = np.where(k == csit.n_levels - 1, np.inf, (k + 0.5 - c) * csit.step)
    return lo, hi


def _sample_truncated_real(values, csit, sigma_c, rng):
    """Truncated-normal draws on each value's bin, by inverse CDF."""
    lo, hi = _bin_edges_for_levels(values, csit)
    u_lo = ndtr(lo / sigma_c)
    u_hi = ndtr(hi / sigma_c)
    u = u_lo + rng.random(values.shape) * (u_hi - u_lo)
    tiny = np.finfo(np.float64).tiny
    x = sigma_c * ndtri(np.clip(u, tiny, 1.0 - 1e-16))
    # keep draws strictly inside their bin so the quantizer round-trips
    return np.clip(x, np.nextafter(lo, np.inf), np.nextafter(hi, -np.inf))


def sample_H_given_Hhat(h_hat, csit, model, rng, n=None):
    """Draw H from the fading prior conditioned on its quantized value.

    Each entry's posterior is the prior truncated to the bin whose
    reconstruction level equals the corresponding entry of ``h_hat``.
    Supported only for the i.i.d. Gaussian fading variants.

    Returns one (r, t) draw when ``n`` is None, else an (n, r, t) stack.
    """
    if not isinstance(csit, QuantizedCsit):
        raise ConfigurationError("conditional sampling requires quantized CSIT")
    sigma_c = fading_component_std(model)
    h_hat = np.asarray(h_hat)
    shape = h_hat.shape if n is None else (n,) + h_hat.shape
    tiled = np.broadcast_to(h_hat, shape)
    if isinstance(model, IidComplexGaussian):
        re = _sample_truncated_real(tiled.real, csit, sigma_c, rng)
        im = _sample_truncated_real(tiled.imag, csit, sigma_c, rng)
        return re + 1j * im
    return _sample_truncated_real(tiled.astype(np.float64), csit, sigma_c, rng)


# ---------------------------------------------------------------------------
# sample banks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BankCell:
    """One outer cell: a transmitter-side estimate and conditional draws."""

    h_hat: np.ndarray | None
    draws: np.ndarray  # (n_i, r, t)

    def mean_h(self):
        return self.draws.mean(axis=0)


@dataclass(frozen=True)
class SampleBank:
    """A fixed, seeded collection of fading draws shared across evaluations."""

    cells: tuple
    seed: int
    n_outer: int
    n_inner: int

    def __iter__(self):
        return iter(self.cells)

    def __len__(self):
        return len(self.cells)

    @property
    def n_total(self):
        return sum(cell.draws.shape[0] for cell in self.cells)

    def to_bytes(self):
        """Deterministic serialization of every draw, for reproducibility checks."""
        parts = []
        for cell in self.cells:
            if cell.h_hat is not None:
                parts.append(np.ascontiguousarray(cell.h_hat).tobytes())
            parts.append(np.ascontiguousarray(cell.draws).tobytes())
        return b"".join(parts)


def _cell_rng(seed, cell_index):
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(int(cell_index),))
    )


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def build_sample_bank(spec, model, csit, n_outer, n_inner, seed):
    """Deterministic nested bank of fading draws for the given CSIT model.

    Perfect CSIT yields ``n_outer`` cells of one draw each with ``h_hat``
    equal to the draw; no CSIT collapses to a single cell of ``n_inner``
    unconditional draws; quantized CSIT draws an estimate per cell and
    ``n_inner`` conditional draws inside it.
    """
    if n_outer < 1 or n_inner < 1:
        raise ConfigurationError("sample counts must be >= 1")
    if model.field != spec.field:
        raise ConfigurationError(
            f"fading model field {model.field!r} does not match spec field {spec.field!r}"
        )
    dims = spec.dims
    cells = []
    if isinstance(csit, NoCsit):
        rng = _cell_rng(seed, 0)
        draws = _sample_h_batch(model, dims, rng, n_inner)
        cells.append(BankCell(h_hat=None, draws=_freeze(draws)))
    elif isinstance(csit, PerfectCsit):
        for i in range(n_outer):
            rng = _cell_rng(seed, i)
            h = _sample_h_batch(model, dims, rng, 1)
            cells.append(BankCell(h_hat=_freeze(h[0]), draws=_freeze(h)))
    elif isinstance(csit, QuantizedCsit):
        fading_component_std(model)  # raises for unsupported variants
        for i in range(n_outer):
            rng = _cell_rng(seed, i)
            h_raw = _sample_h_batch(model, dims, rng, 1)[0]
            h_hat = quantize_H(h_raw, csit)
            draws = sample_H_given_Hhat(h_hat, csit, model, rng, n=n_inner)
            cells.append(BankCell(h_hat=_freeze(h_hat), draws=_freeze(draws)))
    else:
        raise ConfigurationError(f"unknown CSIT model {csit!r}")
    return SampleBank(cells=tuple(cells), seed=int(seed),
                      n_outer=len(cells), n_inner=n_inner)


# ---------------------------------------------------------------------------
# covariance constructors (explicit matrix / scaled identity / seeded random)
# ---------------------------------------------------------------------------

def scaled_identity(n, trace, field=REAL):
    dtype = np.float64 if field == REAL else np.complex128
    return np.eye(n, dtype=dtype) * (trace / n)


def random_psd(n, rank, seed, trace, field=REAL):
    """Random p.s.d. matrix ``G G*`` of the given rank, normalized to ``trace``."""
    if not 1 <= rank <= n:
        raise ConfigurationError("rank must lie in 1..n")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    g = rng.standard_normal((n, rank))
    if field == COMPLEX:
        g = (g + 1j * rng.standard_normal((n, rank))) * np.sqrt(0.5)
    mat = g @ ct(g)
    tr = float(np.trace(mat).real)
    return hermitize(mat * (trace / tr))


def random_factor(t, m, seed, power, field=REAL):
    """Random (t, m) transmit factor with ``trace(T T*) = power``."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    g = rng.standard_normal((t, m))
    if field == COMPLEX:
        g = (g + 1j * rng.standard_normal((t, m))) * np.sqrt(0.5)
    tr = float(np.trace(g @ ct(g)).real)
    return g * np.sqrt(power / tr)
