"""Experiment harness: SNR sweeps, slope estimation, low-SNR ratios, CSV output.

A registry of named reference channels pins one instance of each
qualitative regime (interference rank versus input rank, feedback
resolution, correlation structure); tests and the CLI refer to them by
name so results stay stable across runs.

Every sweep cell is reproducible from (seed, config) alone: one bank per
CSIT setting (fading draws do not depend on the transmit power, so the same
bank serves every SNR — common random numbers), and all solver candidates
at a given (snr, csit) share that bank.
"""

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FdpcError
from .inflation import cell_solver, theoretical_scaling, w_identity, w_pinv, w_zero
from .linalg import ct, numerical_rank
from .model import (COMPLEX, REAL, ChannelSpec, CorrelatedRayleigh, Dimensions,
                    IidComplexGaussian, IidRealGaussian, NoCsit, PerfectCsit,
                    QuantizedCsit, build_sample_bank, fading_component_std,
                    random_factor, random_psd)
from .rate import achievable_rate, no_interference_bound, paired_rates

CSV_HEADER = ["snr_db", "csit", "solver", "rate_bits", "stderr_bits",
              "bound_bits", "n_outer", "n_inner", "seed"]


@dataclass(frozen=True)
class SweepPlan:
    snr_db_list: tuple
    q_over_p: float
    solvers: tuple               # e.g. ("alg1", "alg2", "zero")
    csit_list: tuple             # CsitModel instances
    include_bound: bool = True
    n_outer: int = 200
    n_inner: int = 2000

    def __post_init__(self):
        if not self.snr_db_list or not self.solvers or not self.csit_list:
            raise ConfigurationError("sweep plan lists must be nonempty")
        if self.q_over_p < 0:
            raise ConfigurationError("q_over_p must be >= 0")


@dataclass(frozen=True)
class SweepRow:
    snr_db: float
    csit: str
    solver: str
    rate_bits: float
    stderr_bits: float
    bound_bits: float
    n_outer: int
    n_inner: int
    seed: int
    error: str | None = None     # not serialized; nan fields mark error rows


def csit_label(csit):
    if isinstance(csit, NoCsit):
        return "none"
    if isinstance(csit, PerfectCsit):
        return "perfect"
    if isinstance(csit, QuantizedCsit):
        return f"B={csit.bits}"
    raise ConfigurationError(f"unknown CSIT model {csit!r}")


def derived_seed(seed, *key):
    """Stable 63-bit sub-seed for a nested experiment component."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def resolve_w(spec, solver, config=None):
    """Per-spec W policy for a solver name usable by achievable_rate."""
    fixed = {"zero": w_zero, "pinv": w_pinv, "identity": w_identity}
    if solver in fixed:
        return fixed[solver](spec)
    if solver == "perfect":
        return "perfect"
    if solver in ("alg1", "alg2"):
        return cell_solver(solver, config)
    raise ConfigurationError(f"unknown solver {solver!r}")


def run_sweep(base_spec, model, plan, seed, solver_config=None, threads=1):
    """Evaluate every (snr, csit, solver) cell of the plan.

    Per-cell failures are recorded as error rows (nan rates) and the sweep
    continues.  Row order follows the plan regardless of thread count.
    """
    banks = {}
    for ci, csit in enumerate(plan.csit_list):
        bank_seed = derived_seed(seed, ci)
        banks[ci] = (build_sample_bank(base_spec, model, csit, plan.n_outer,
                                       plan.n_inner, bank_seed), bank_seed)

    cells = []
    for ci, csit in enumerate(plan.csit_list):
        for snr in plan.snr_db_list:
            for solver in plan.solvers:
                cells.append((ci, csit, float(snr), solver))

    bound_cache = {}

    def eval_cell(cell):
        ci, csit, snr, solver = cell
        bank, bank_seed = banks[ci]
        label = csit_label(csit)
        try:
            spec = base_spec.at_snr_db(snr, plan.q_over_p)
            est = achievable_rate(spec, resolve_w(spec, solver, solver_config), bank)
            if plan.include_bound:
                key = (ci, snr)
                if key not in bound_cache:
                    bound_cache[key] = no_interference_bound(spec, bank).rate_bits
                bound = bound_cache[key]
            else:
                bound = float("nan")
            return SweepRow(snr_db=snr, csit=label, solver=solver,
                            rate_bits=est.rate_bits, stderr_bits=est.stderr_bits,
                            bound_bits=bound, n_outer=bank.n_outer,
                            n_inner=bank.n_inner, seed=bank_seed)
        except FdpcError as exc:
            return SweepRow(snr_db=snr, csit=label, solver=solver,
                            rate_bits=float("nan"), stderr_bits=float("nan"),
                            bound_bits=float("nan"), n_outer=bank.n_outer,
                            n_inner=bank.n_inner, seed=bank_seed, error=str(exc))

    if threads > 1:
        # bounds are cached per (csit, snr); warm the cache sequentially so
        # threaded evaluation stays deterministic and race-free
        if plan.include_bound:
            for ci, csit in enumerate(plan.csit_list):
                for snr in plan.snr_db_list:
                    spec = base_spec.at_snr_db(float(snr), plan.q_over_p)
                    bound_cache[(ci, float(snr))] = no_interference_bound(
                        spec, banks[ci][0]).rate_bits
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(eval_cell, cells))
    else:
        rows = [eval_cell(c) for c in cells]
    return rows


def format_sweep_csv(rows):
    """Render sweep rows with 6 significant digits, deterministic order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([
            f"{row.snr_db:.6g}", row.csit, row.solver,
            f"{row.rate_bits:.6g}", f"{row.stderr_bits:.6g}",
            f"{row.bound_bits:.6g}", row.n_outer, row.n_inner, row.seed,
        ])
    return buf.getvalue()


def write_sweep_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_sweep_csv(rows))


def estimate_scaling(base_spec, model, w_choice, snr_db_pair, seed,
                     q_over_p=1.0, n_inner=20000):
    """High-SNR slope of the rate in bits per log2(P), two-point secant.

    Both endpoints share one no-CSIT bank (common random numbers).
    """
    lo, hi = snr_db_pair
    if not hi > lo or lo < 30.0:
        raise ConfigurationError("slope window must satisfy hi > lo >= 30 dB")
    bank = build_sample_bank(base_spec, model, NoCsit(), 1, n_inner, seed)
    rates = {}
    for snr in (lo, hi):
        spec = base_spec.at_snr_db(snr, q_over_p)
        if isinstance(w_choice, str):
            w = resolve_w(spec, w_choice)
        elif callable(w_choice):
            w = w_choice(spec)
        else:
            w = w_choice
        rates[snr] = achievable_rate(spec, w, bank).rate_bits
    dlog_p = (hi - lo) / 10.0 * np.log2(10.0)
    return (rates[hi] - rates[lo]) / dlog_p


def predicted_scaling(spec):
    """Theoretical high-SNR slope for the spec's covariance ranks."""
    rank_sum = numerical_rank(spec.T @ ct(spec.T) + spec.sigma_s)
    return theoretical_scaling(rank_sum, spec.dims.m, spec.dims.r)


def low_snr_ratio(base_spec, model, snr_db_list, seed, q_over_p=1.0, n_inner=20000):
    """Ratio of the zero-inflation rate to the bound per SNR, common draws.

    Returns a list of ``(snr_db, ratio, stderr_ratio)`` rows; the stderr is
    the delta-method propagation using the paired covariance.
    """
    bank = build_sample_bank(base_spec, model, NoCsit(), 1, n_inner, seed)
    out = []
    for snr in snr_db_list:
        spec = base_spec.at_snr_db(float(snr), q_over_p)
        r_est, c_est, cov = paired_rates(spec, w_zero(spec), bank)
        ratio = r_est.rate_bits / c_est.rate_bits
        var = (ratio ** 2) * ((r_est.stderr_bits / r_est.rate_bits) ** 2
                              + (c_est.stderr_bits / c_est.rate_bits) ** 2
                              - 2.0 * cov / (r_est.rate_bits * c_est.rate_bits))
        out.append((float(snr), float(ratio), float(np.sqrt(max(var, 0.0)))))
    return out


def format_lowsnr_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["snr_db", "ratio", "stderr_ratio"])
    for snr, ratio, se in rows:
        writer.writerow([f"{snr:.6g}", f"{ratio:.6g}", f"{se:.6g}"])
    return buf.getvalue()


def gap_to_bound(base_spec, model, snr_db, solver, seed, csit=None,
                 n_outer=200, n_inner=20000, solver_config=None):
    """Bound minus rate (bits) with both evaluated on one bank.

    Returns ``(gap_bits, stderr_gap_bits)``.
    """
    csit = csit or NoCsit()
    bank = build_sample_bank(base_spec, model, csit, n_outer, n_inner, seed)
    spec = base_spec.at_snr_db(float(snr_db), base_spec.Q / base_spec.P)
    r_est, c_est, cov = paired_rates(spec, resolve_w(spec, solver, solver_config), bank)
    gap = c_est.rate_bits - r_est.rate_bits
    var = r_est.stderr_bits ** 2 + c_est.stderr_bits ** 2 - 2.0 * cov
    return float(gap), float(np.sqrt(max(var, 0.0)))


# ---------------------------------------------------------------------------
# reference channel registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceChannel:
    name: str
    spec: ChannelSpec            # base instance at P = N (0 dB), Q = q_over_p * P
    model: object                # fading model
    q_over_p: float
    note: str


def _exp_corr(n, rho):
    idx = np.arange(n)
    return (rho ** np.abs(idx[:, None] - idx[None, :])).astype(complex)


def _basis_outer(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return np.outer(e, e)


def _make_registry():
    regs = {}

    def add(name, spec, model, q_over_p, note):
        regs[name] = ReferenceChannel(name, spec, model, q_over_p, note)

    real = IidRealGaussian()
    cplx = IidComplexGaussian()

    # 2x2 real channels (quantized-feedback regimes)
    p0 = 2.0  # P = N = trace(I_2)
    add("fdpc-2x2-a",
        ChannelSpec.create(Dimensions(2, 2, 1), T=np.sqrt(p0) * np.array([[1.0], [0.0]]),
                           sigma_s=p0 * _basis_outer(2, 1), sigma_z=np.eye(2), field=REAL),
        real, 1.0,
        "rank(Sigma_X + Sigma_S) = 2 > rank(Sigma_X) = 1; feedback-monotonicity regime")
    add("fdpc-2x2-b",
        ChannelSpec.create(Dimensions(2, 2, 1), T=np.sqrt(p0) * np.array([[1.0], [0.0]]),
                           sigma_s=p0 * _basis_outer(2, 0), sigma_z=np.eye(2), field=REAL),
        real, 1.0,
        "interference aligned with the input: rank sum = m = 1 <= r, bound gap vanishes")

    # 3x2 real channels (scaling-factor regimes, W = T+)
    t3 = np.sqrt(p0 / 2.0) * np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    add("fdpc-3x2-a",
        ChannelSpec.create(Dimensions(3, 2, 2), T=t3,
                           sigma_s=p0 * _basis_outer(3, 2), sigma_z=np.eye(2), field=REAL),
        real, 1.0, "rank sum 3 > m = 2: predicted slope 1")
    add("fdpc-3x2-b",
        ChannelSpec.create(Dimensions(3, 2, 2), T=t3,
                           sigma_s=(p0 / 2.0) * np.diag([1.0, 1.0, 0.0]),
                           sigma_z=np.eye(2), field=REAL),
        real, 1.0, "rank sum 2 = m: predicted slope 2")
    add("fdpc-3x2-c",
        ChannelSpec.create(Dimensions(3, 2, 1), T=np.sqrt(p0) * np.array([[1.0], [0.0], [0.0]]),
                           sigma_s=(p0 / 2.0) * np.diag([0.0, 1.0, 1.0]),
                           sigma_z=np.eye(2), field=REAL),
        real, 1.0, "rank sum 3, m = 1: predicted slope 0")

    # low-SNR reference
    add("fdpc-lowsnr",
        ChannelSpec.create(Dimensions(2, 2, 2), T=np.sqrt(p0 / 2.0) * np.eye(2),
                           sigma_s=(p0 / 2.0) * np.eye(2), sigma_z=np.eye(2), field=REAL),
        real, 1.0, "2x2 real, Q/P = 1: zero-inflation ratio-optimality regime")

    # algorithm-comparison channels (complex Rayleigh, no CSIT)
    add("fdpc-fig4-1",
        ChannelSpec.create(Dimensions(2, 2, 1),
                           T=random_factor(2, 1, seed=61, power=p0, field=COMPLEX),
                           sigma_s=random_psd(2, 2, seed=62, trace=p0, field=COMPLEX),
                           sigma_z=np.eye(2), field=COMPLEX),
        cplx, 1.0, "m = 1: row solver uses its closed form")
    add("fdpc-fig4-2",
        ChannelSpec.create(Dimensions(3, 2, 2),
                           T=random_factor(3, 2, seed=63, power=p0, field=COMPLEX),
                           sigma_s=random_psd(3, 3, seed=64, trace=p0, field=COMPLEX),
                           sigma_z=np.eye(2), field=COMPLEX),
        cplx, 1.0, "m = 2 rank-3 interference")

    # full-rank covariance, t > r (high-SNR identity-choice regime)
    add("fdpc-3x2-pd",
        ChannelSpec.create(Dimensions(3, 2, 3),
                           T=random_factor(3, 3, seed=101, power=p0, field=COMPLEX),
                           sigma_s=random_psd(3, 3, seed=102, trace=p0, field=COMPLEX),
                           sigma_z=np.eye(2), field=COMPLEX),
        cplx, 1.0, "positive definite input covariance, t = 3 > r = 2")

    # covariance-optimization references
    p3 = 3.0
    add("fdpc-cov-3x3",
        ChannelSpec.create(Dimensions(3, 3, 3), T=np.sqrt(p3 / 3.0) * np.eye(3),
                           sigma_s=random_psd(3, 3, seed=41, trace=p3, field=COMPLEX),
                           sigma_z=np.eye(3), field=COMPLEX),
        CorrelatedRayleigh(r_rx=_exp_corr(3, 0.7), r_tx=_exp_corr(3, 0.5)),
        1.0, "separably correlated Rayleigh 3x3: spatial water-filling regime")
    add("fdpc-rank-3x2",
        ChannelSpec.create(Dimensions(3, 2, 3), T=np.sqrt(p0 / 3.0) * np.eye(3),
                           sigma_s=random_psd(3, 2, seed=51, trace=p0, field=COMPLEX),
                           sigma_z=np.eye(2), field=COMPLEX),
        CorrelatedRayleigh(r_rx=_exp_corr(2, 0.3), r_tx=_exp_corr(3, 0.9)),
        1.0, "strong transmit correlation: reduced-rank signalling suffices at low SNR")

    return regs


_REGISTRY = _make_registry()


def reference_names():
    return sorted(_REGISTRY)


def reference_channel(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown reference channel {name!r}; known: {', '.join(reference_names())}"
        ) from None


def default_quantized_csit(model, bits):
    """Quantizer with the MSE-optimal step for the fading law's component std."""
    return QuantizedCsit.designed(bits, fading_component_std(model))
