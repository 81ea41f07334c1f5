"""Inflation-factor solvers and closed forms.

Two iterative solvers work on a fixed list of conditional fading draws
(sample-average approximation, so each solves a deterministic problem):

* ``alg1_solve`` cycles over the rows of W, each row minimizing a
  Jensen-bounded surrogate of the objective in closed form;
* ``alg2_solve`` iterates the stationarity fixed-point map ``g``.

Closed forms: the perfect-CSIT inflation factor, the pseudo-inverse choice
that attains the largest high-SNR scaling, and the high-SNR choice for
positive definite input covariance (stated in the raw-input convention, see
``w_raw_to_factored``).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SolverError
from .linalg import ct, hermitize, pinv_rtol, psd_factor
from .rate import _build_M_core, check_inflation, objective


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 200
    tol: float = 1e-7          # relative objective / iterate change threshold
    damping: float = 1.0       # step size for the fixed-point iteration
    rank_tol: float = 1e-10    # relative singular-value cutoff for pseudo-inverses

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if not 0.0 < self.tol < 1.0:
            raise ConfigurationError("tol must lie in (0, 1)")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigurationError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class SolveResult:
    W: np.ndarray
    objective_trace: tuple
    converged: bool
    iterations: int


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def w_perfect_csit(spec, H):
    """Optimal inflation factor when the transmitter knows H exactly."""
    H = np.asarray(H, dtype=spec.dtype)
    T = spec.T
    rx = hermitize(H @ (T @ ct(T)) @ ct(H) + spec.sigma_z)
    return ct(T) @ ct(H) @ np.linalg.solve(rx, H)


def w_pinv(spec, rank_tol=1e-10):
    """Moore-Penrose pseudo-inverse of the transmit factor (m, t)."""
    return pinv_rtol(spec.T, rank_tol)


def w_zero(spec):
    """All-zero inflation factor (treat interference as noise)."""
    return np.zeros((spec.dims.m, spec.dims.t), dtype=spec.dtype)


def w_identity(spec):
    """Identity embedding of shape (m, t) in the declared field."""
    return np.eye(spec.dims.m, spec.dims.t, dtype=spec.dtype)


def w_high_snr_pd(spec):
    """High-SNR optimal inflation factor for full-rank input covariance.

    Stated in the raw-input convention (auxiliary variable built from X
    rather than the whitened X'); convert with :func:`w_raw_to_factored`
    before evaluating rates.  Requires m = t.
    """
    if spec.dims.m != spec.dims.t:
        raise ValueError("the high-SNR identity choice requires m = t")
    return np.eye(spec.dims.t, dtype=spec.dtype)


def w_raw_to_factored(spec, w_raw):
    """Map a raw-input-convention inflation factor to the factored convention.

    The package's W weights the interference inside U = X' + W S with
    X' the whitened input, X = T X'.  A (t, t) factor W_raw defined against
    the physical input X corresponds to T^{-1} W_raw; requires square
    invertible T.
    """
    if spec.dims.m != spec.dims.t:
        raise ValueError("conversion requires a square transmit factor")
    return np.linalg.solve(spec.T, np.asarray(w_raw, dtype=spec.dtype))


def theoretical_scaling(rank_sum, m, r):
    """Largest high-SNR scaling factor achievable by interference pre-subtraction.

    ``rank_sum`` is the rank of Sigma_X + Sigma_S.
    """
    if r < 1 or m < 1:
        raise ValueError("m and r must be >= 1")
    if rank_sum < m:
        raise ValueError("rank_sum must be >= m")
    return min(r, rank_sum) - min(r, rank_sum - m)


def theoretical_scaling_pd(t, r):
    """Scaling factor in the full-rank input covariance case."""
    return min(t, r)


# ---------------------------------------------------------------------------
# Algorithm 1: row-wise surrogate minimization
# ---------------------------------------------------------------------------

def _row_permutation(m, row):
    perm = list(range(m))
    perm[0], perm[row] = perm[row], perm[0]
    return perm


def _permuted_M(spec, W, row, H):
    """Block matrix with W's target row moved to position 0 (plus permuted parts)."""
    m = spec.dims.m
    perm = _row_permutation(m, row)
    Wp = W[perm]
    Tp = spec.T[:, perm]
    M = _build_M_core(Tp, spec.sigma_s, spec.sigma_z, Wp, H, spec.dtype)
    return M, Wp, Tp, perm


def row_surrogate(spec, W, row, inner_samples):
    """Value of the Jensen surrogate ``E(a - B* D^{-1} B)`` for one row of W."""
    W = check_inflation(spec, W)
    H = np.asarray(inner_samples, dtype=spec.dtype)
    M, _, _, _ = _permuted_M(spec, W, row, H)
    a = M[:, 0, 0].real
    B = M[:, 1:, :1]
    quad = np.einsum("nio,nio->n", np.conj(B), np.linalg.solve(M[:, 1:, 1:], B))
    return float(np.mean(a - quad.real))


def alg1_row_update(spec, W, row, inner_samples):
    """Replace one row of W by the minimizer of its Jensen-bounded surrogate.

    The surrogate ``E(a - B* D^{-1} B)`` is an exact quadratic in the row;
    the normal matrix is inverted on the column space of sigma_s (factored
    as T2 T2*), which also canonicalizes the row into that space.
    """
    W = check_inflation(spec, W)
    m, r, t = spec.dims.m, spec.dims.r, spec.dims.t
    if not 0 <= row < m:
        raise ValueError(f"row index {row} out of range for m={m}")
    H = np.asarray(inner_samples, dtype=spec.dtype)
    if H.ndim != 3 or H.shape[0] == 0:
        raise ConfigurationError("inner_samples must be a nonempty (n, r, t) stack")

    t2 = psd_factor(spec.sigma_s)
    out = W.copy()
    if t2.shape[1] == 0:
        # W multiplies sigma_s everywhere; the zero row is the canonical choice
        out[row] = 0.0
        return out

    M, Wp, Tp, perm = _permuted_M(spec, W, row, H)
    D = M[:, 1:, 1:]
    try:
        Dinv = np.linalg.inv(D)
    except np.linalg.LinAlgError:
        raise SolverError(f"singular D block in row update {row}", row_index=row)

    k = m - 1
    F = Dinv[:, :k, :k]
    G = Dinv[:, :k, k:]
    J = Dinv[:, k:, :k]
    K = Dinv[:, k:, k:]
    Wb = Wp[1:]                                     # (m-1, t)
    e_hkh = np.einsum("nrt,nrs,nsu->tu", np.conj(H), K, H, optimize=True) / H.shape[0]
    psi2 = e_hkh
    psi = e_hkh
    if k:
        e_f = F.mean(axis=0)
        e_gh = np.einsum("nar,nrt->at", G, H, optimize=True) / H.shape[0]
        e_hj = np.einsum("nrt,nra->ta", np.conj(H), J, optimize=True) / H.shape[0]
        psi2 = e_hj @ Wb + e_hkh
        psi = ct(Wb) @ e_f @ Wb + ct(Wb) @ e_gh + e_hj @ Wb + e_hkh
    n_tilde = np.conj(Tp[:, 0]) @ psi2              # (t,): first column of T, conjugated
    core = np.eye(t2.shape[1], dtype=spec.dtype) - ct(t2) @ psi @ t2
    try:
        y = np.linalg.solve(core.T, (n_tilde @ t2).T).T
    except np.linalg.LinAlgError:
        raise SolverError(
            f"singular normal matrix in row update {row} after rank reduction",
            row_index=row,
        )
    out[row] = y @ np.linalg.pinv(t2)
    return out


def alg1_solve(spec, W0, config, inner_samples):
    """Cyclic row minimization until the objective stabilizes.

    One iteration sweeps all rows; the objective is recorded after every
    accepted sweep (the initial objective is the first trace entry).  Each
    row step minimizes a Jensen surrogate, which does not guarantee descent
    of the true objective, so a sweep that increases the objective beyond
    tolerance is rolled back and the run stops there, flagged not converged,
    with the best-seen iterate returned.  The recorded trace is therefore
    non-increasing.
    """
    W = check_inflation(spec, W0)
    H = np.asarray(inner_samples, dtype=spec.dtype)
    trace = [objective(spec, W, H)]
    converged = False
    sweeps = 0
    for sweeps in range(1, config.max_iters + 1):
        W_new = W
        for row in range(spec.dims.m):
            W_new = alg1_row_update(spec, W_new, row, H)
        obj_new = objective(spec, W_new, H)
        if obj_new > trace[-1] + config.tol * max(1.0, abs(trace[-1])):
            sweeps -= 1  # rolled back: this sweep produced no iterate
            break
        W = W_new
        trace.append(obj_new)
        if abs(trace[-1] - trace[-2]) < config.tol * max(1.0, abs(trace[-2])):
            converged = True
            break
    return SolveResult(W=W, objective_trace=tuple(trace),
                       converged=converged, iterations=sweeps)


# ---------------------------------------------------------------------------
# Algorithm 2: stationarity fixed point
# ---------------------------------------------------------------------------

def alg2_map(spec, W, inner_samples):
    """One application of the stationarity map ``g``.

    With zero interference the stationarity equation holds identically and
    the map returns W unchanged.
    """
    W = check_inflation(spec, W)
    H = np.asarray(inner_samples, dtype=spec.dtype)
    if H.ndim != 3 or H.shape[0] == 0:
        raise ConfigurationError("inner_samples must be a nonempty (n, r, t) stack")
    if np.abs(spec.sigma_s).max(initial=0.0) == 0.0:
        return W.copy()
    m = spec.dims.m
    M = _build_M_core(spec.T, spec.sigma_s, spec.sigma_z, W, H, spec.dtype)
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        raise SolverError("singular block matrix in fixed-point map")
    e_a1 = Minv[:, :m, :m].mean(axis=0)
    e_a2h = np.einsum("nmr,nrt->mt", Minv[:, :m, m:], H, optimize=True) / H.shape[0]
    try:
        return -np.linalg.solve(e_a1, e_a2h)
    except np.linalg.LinAlgError:
        raise SolverError(
            "singular E(A1) in fixed-point map; lower the damping or re-seed"
        )


def alg2_solve(spec, W0, config, inner_samples):
    """Damped fixed-point iteration ``W <- (1-g) W + g map(W)``.

    The step is halved whenever it would increase the objective; five
    consecutive rejected steps flag non-convergence and the best-seen W is
    returned.
    """
    W = check_inflation(spec, W0)
    H = np.asarray(inner_samples, dtype=spec.dtype)
    if np.abs(spec.sigma_s).max(initial=0.0) == 0.0:
        return SolveResult(W=W, objective_trace=(objective(spec, W, H),),
                           converged=True, iterations=0)
    gamma = config.damping
    obj = objective(spec, W, H)
    trace = [obj]
    best_obj, best_w = obj, W
    strikes = 0
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        G = alg2_map(spec, W, H)
        cand = (1.0 - gamma) * W + gamma * G
        obj_c = objective(spec, cand, H)
        if obj_c > obj + 1e-12 * max(1.0, abs(obj)):
            strikes += 1
            gamma *= 0.5
            if strikes >= 5 or gamma < 1e-6:
                break
            continue
        step = np.linalg.norm(cand - W) / max(1.0, np.linalg.norm(W))
        W = cand
        obj = obj_c
        trace.append(obj)
        strikes = 0
        if obj < best_obj:
            best_obj, best_w = obj, W
        if step < config.tol:
            converged = True
            break
    if not converged:
        W = best_w
    return SolveResult(W=W, objective_trace=tuple(trace),
                       converged=converged, iterations=iterations)


# ---------------------------------------------------------------------------
# initialization and dispatch
# ---------------------------------------------------------------------------

def default_w0(spec, inner_samples, kind="mean-h"):
    """Standard starting points: perfect-CSIT W at the cell-mean H, 0, or T+."""
    if kind == "mean-h":
        return w_perfect_csit(spec, np.asarray(inner_samples).mean(axis=0))
    if kind == "zero":
        return w_zero(spec)
    if kind == "pinv":
        return w_pinv(spec)
    if kind == "identity":
        return w_identity(spec)
    raise ConfigurationError(f"unknown initialization {kind!r}")


def best_initialization(spec, inner_samples):
    """Pick the candidate starting point with the smallest sample objective."""
    H = np.asarray(inner_samples, dtype=spec.dtype)
    best = None
    for kind in ("mean-h", "zero", "pinv", "identity"):
        W = default_w0(spec, H, kind)
        val = objective(spec, W, H)
        if best is None or val < best[0]:
            best = (val, W)
    return best[1]


def solve_w(spec, inner_samples, method, config=None):
    """Solve for the inflation factor on one cell's draws.

    ``method`` is one of alg1, alg2, zero, pinv, identity, and the iterative
    methods start from the best of the standard initializations.
    """
    config = config or SolverConfig()
    if method == "alg1":
        return alg1_solve(spec, best_initialization(spec, inner_samples),
                          config, inner_samples)
    if method == "alg2":
        return alg2_solve(spec, best_initialization(spec, inner_samples),
                          config, inner_samples)
    closed = {"zero": w_zero, "pinv": w_pinv, "identity": w_identity}
    if method in closed:
        W = closed[method](spec)
        return SolveResult(W=W, objective_trace=(objective(spec, W, inner_samples),),
                           converged=True, iterations=0)
    raise ConfigurationError(f"unknown solver {method!r}")


def cell_solver(method, config=None):
    """Adapter: a per-cell W provider for :func:`fdpclab.rate.achievable_rate`."""

    def _solve(spec, cell):
        res = solve_w(spec, cell.draws, method, config)
        return res.W, res.converged

    return _solve
