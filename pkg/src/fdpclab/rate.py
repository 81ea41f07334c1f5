"""Rate functionals over a sample bank.

The central object is the (m+r) x (m+r) Hermitian block matrix

    M(W, H) = [[ I_m + W Ss W*,        (T* + W Ss) H*          ],
               [ H (T + Ss W*),  H (T T* + Ss) H* + Sz         ]]

whose expected log-determinant (conditioned on the transmitter-side
estimate) is minimized over the inflation factor ``W``.  The achievable
rate of one bank cell is

    mean_i logdet( H_i (T T* + Ss) H_i* + Sz ) - mean_i logdet M(W, H_i)

averaged over outer cells and converted to bits.  The no-interference
bound uses the same draws (common random numbers).

Internally everything is in nats; reported rates are in bits.
Reductions over samples are plain sequential means in sample order, so
results are deterministic for a fixed bank.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .linalg import ct, hermitize, logdet_pd

LN2 = float(np.log(2.0))


def check_inflation(spec, W):
    """Validate and canonicalize an inflation factor to spec dtype (m, t)."""
    W = np.asarray(W)
    m, t = spec.dims.m, spec.dims.t
    if W.shape != (m, t):
        raise ConfigurationError(f"inflation factor has shape {W.shape}, expected {(m, t)}")
    if not np.isfinite(W).all():
        raise ConfigurationError("inflation factor has non-finite entries")
    if spec.field == "real" and np.iscomplexobj(W):
        if np.abs(W.imag).max(initial=0.0) > 0:
            raise ConfigurationError("complex inflation factor in a real spec")
        W = W.real
    return np.ascontiguousarray(W, dtype=spec.dtype)


@dataclass(frozen=True)
class RateEstimate:
    """Monte Carlo rate estimate in bits with its standard error."""

    rate_bits: float
    stderr_bits: float
    n_outer: int
    n_inner: int
    seed: int
    converged: bool = True


def _received_covariance(spec, H):
    """``H (T T* + Ss) H* + Sz`` for stacked H of shape (n, r, t)."""
    sig = spec.T @ ct(spec.T) + spec.sigma_s
    out = np.einsum("nrk,kl,nsl->nrs", H, sig, np.conj(H), optimize=True)
    return hermitize(out + spec.sigma_z)


def _build_M_core(T, sigma_s, sigma_z, W, H, dtype):
    """Assemble the block matrix for explicit factors (H stacked, (n, r, t))."""
    m = T.shape[1]
    r = H.shape[1]
    n = H.shape[0]
    tl = hermitize(np.eye(m, dtype=dtype) + W @ sigma_s @ ct(W))
    cross = ct(T) + W @ sigma_s                      # (m, t)
    tr_block = np.einsum("mk,nrk->nmr", cross, np.conj(H), optimize=True)
    sig = T @ ct(T) + sigma_s
    br = np.einsum("nrk,kl,nsl->nrs", H, sig, np.conj(H), optimize=True)
    br = hermitize(br + sigma_z)
    M = np.empty((n, m + r, m + r), dtype=dtype)
    M[:, :m, :m] = tl
    M[:, :m, m:] = tr_block
    M[:, m:, :m] = ct(tr_block)
    M[:, m:, m:] = br
    return M


def build_M(spec, W, H):
    """Achievable-rate block matrix for one H or a stack of H draws.

    Hermitian by construction.  Returns shape (m+r, m+r) for a single H and
    (n, m+r, m+r) for a stack.
    """
    W = check_inflation(spec, W)
    H = np.asarray(H, dtype=spec.dtype)
    single = H.ndim == 2
    if single:
        H = H[None]
    M = _build_M_core(spec.T, spec.sigma_s, spec.sigma_z, W, H, spec.dtype)
    return M[0] if single else M


def objective(spec, W, inner_samples):
    """Sample mean of ``logdet M(W, H)`` over the given draws, in nats."""
    H = np.asarray(inner_samples)
    if H.ndim != 3 or H.shape[0] == 0:
        raise ConfigurationError("inner_samples must be a nonempty (n, r, t) stack")
    return float(np.mean(logdet_pd(build_M(spec, W, H))))


def _per_sample_terms(spec, W, H):
    """(logdet received covariance, logdet M) per draw, both in nats."""
    ld_m = logdet_pd(build_M(spec, W, H))
    ld_d = logdet_pd(_received_covariance(spec, np.asarray(H, dtype=spec.dtype)))
    return ld_d, ld_m


def _resolve_cell_w(spec, w, cell):
    """Return (W, converged) for one bank cell under the w policy."""
    if isinstance(w, str):
        if w != "perfect":
            raise ConfigurationError(f"unknown inflation policy {w!r}")
        if cell.h_hat is None or cell.draws.shape[0] != 1:
            raise ConfigurationError(
                "the 'perfect' policy requires a perfect-CSIT bank (one draw per cell)"
            )
        from .inflation import w_perfect_csit

        return w_perfect_csit(spec, cell.h_hat), True
    if callable(w):
        out = w(spec, cell)
        if isinstance(out, tuple):
            return out
        return out, True
    return check_inflation(spec, w), True


class _Evaluation:
    """Per-cell rate/bound contributions for one (spec, w, bank) evaluation."""

    def __init__(self, spec, w, bank, want_bound=True):
        n_cells = len(bank.cells)
        self.rate_cells = np.empty(n_cells)
        self.bound_cells = np.empty(n_cells) if want_bound else None
        self.converged = True
        self.single_rate = None
        self.single_bound = None
        ld_z = float(logdet_pd(spec.sigma_z))
        for i, cell in enumerate(bank.cells):
            W, ok = _resolve_cell_w(spec, w, cell)
            self.converged = self.converged and bool(ok)
            ld_d, ld_m = _per_sample_terms(spec, W, cell.draws)
            self.rate_cells[i] = np.mean(ld_d) - np.mean(ld_m)
            if n_cells == 1:
                self.single_rate = ld_d - ld_m
            if want_bound:
                ld_x = logdet_pd(_bound_covariance(spec, cell.draws))
                self.bound_cells[i] = np.mean(ld_x) - ld_z
                if n_cells == 1:
                    self.single_bound = ld_x - ld_z
        self.bank = bank

    def _se(self, cells, single):
        if len(cells) > 1:
            return float(np.std(cells, ddof=1) / np.sqrt(len(cells)))
        if single is None or single.size < 2:
            return 0.0
        return float(np.std(single, ddof=1) / np.sqrt(single.size))

    def rate_estimate(self):
        return RateEstimate(
            rate_bits=float(np.mean(self.rate_cells)) / LN2,
            stderr_bits=self._se(self.rate_cells, self.single_rate) / LN2,
            n_outer=self.bank.n_outer, n_inner=self.bank.n_inner,
            seed=self.bank.seed, converged=self.converged,
        )

    def bound_estimate(self):
        return RateEstimate(
            rate_bits=float(np.mean(self.bound_cells)) / LN2,
            stderr_bits=self._se(self.bound_cells, self.single_bound) / LN2,
            n_outer=self.bank.n_outer, n_inner=self.bank.n_inner,
            seed=self.bank.seed,
        )

    def paired_arrays(self):
        """(rate, bound) arrays over the stderr basis (cells, or samples when single-cell)."""
        if len(self.rate_cells) > 1:
            return self.rate_cells, self.bound_cells
        return self.single_rate, self.single_bound


def _bound_covariance(spec, H):
    sig_x = spec.T @ ct(spec.T)
    out = np.einsum("nrk,kl,nsl->nrs", np.asarray(H, dtype=spec.dtype), sig_x,
                    np.conj(np.asarray(H, dtype=spec.dtype)), optimize=True)
    return hermitize(out + spec.sigma_z)


def achievable_rate(spec, w, bank):
    """Achievable rate over the bank for a fixed W, a per-cell solver, or 'perfect'.

    ``w`` may be an (m, t) array (used for all cells), the string
    ``"perfect"`` (per-cell closed form, perfect-CSIT banks only), or a
    callable ``(spec, cell) -> W`` or ``-> (W, converged)`` solved once per
    outer cell.
    """
    return _Evaluation(spec, w, bank, want_bound=False).rate_estimate()


def no_interference_bound(spec, bank):
    """Rate of the same channel without interference, on the same draws."""
    ld_z = float(logdet_pd(spec.sigma_z))
    cells = np.empty(len(bank.cells))
    single = None
    for i, cell in enumerate(bank.cells):
        ld_x = logdet_pd(_bound_covariance(spec, cell.draws))
        cells[i] = np.mean(ld_x) - ld_z
        if len(bank.cells) == 1:
            single = ld_x - ld_z
    if len(cells) > 1:
        se = float(np.std(cells, ddof=1) / np.sqrt(len(cells)))
    elif single is not None and single.size > 1:
        se = float(np.std(single, ddof=1) / np.sqrt(single.size))
    else:
        se = 0.0
    return RateEstimate(rate_bits=float(np.mean(cells)) / LN2,
                        stderr_bits=se / LN2, n_outer=bank.n_outer,
                        n_inner=bank.n_inner, seed=bank.seed)


def paired_rates(spec, w, bank):
    """Rate and bound on common draws plus their error covariance.

    Returns ``(rate_est, bound_est, cov_bits2)`` where ``cov_bits2`` is the
    covariance of the two estimators in bits^2, for stderr propagation of
    gaps and ratios.
    """
    ev = _Evaluation(spec, w, bank)
    a, b = ev.paired_arrays()
    if a is None or a.size < 2:
        cov = 0.0
    else:
        cov = float(np.cov(a, b, ddof=1)[0, 1] / a.size) / LN2 ** 2
    return ev.rate_estimate(), ev.bound_estimate(), cov
