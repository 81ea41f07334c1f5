"""fdpclab: achievable-rate laboratory for dirty paper coding over fading channels."""

from .model import (ChannelSpec, CorrelatedRayleigh, Dimensions,
                    IidComplexGaussian, IidRealGaussian, IidUniformComplex,
                    NoCsit, PerfectCsit, QuantizedCsit, build_sample_bank)
from .rate import RateEstimate, achievable_rate, build_M, no_interference_bound, objective
from .inflation import (SolveResult, SolverConfig, alg1_solve, alg2_solve,
                        solve_w, theoretical_scaling, w_perfect_csit, w_pinv)
from .covopt import JointConfig, JointResult, joint_optimize

__version__ = "0.1.0"

__all__ = [
    "ChannelSpec", "CorrelatedRayleigh", "Dimensions", "IidComplexGaussian",
    "IidRealGaussian", "IidUniformComplex", "NoCsit", "PerfectCsit",
    "QuantizedCsit", "build_sample_bank",
    "RateEstimate", "achievable_rate", "build_M", "no_interference_bound",
    "objective",
    "SolveResult", "SolverConfig", "alg1_solve", "alg2_solve", "solve_w",
    "theoretical_scaling", "w_perfect_csit", "w_pinv",
    "JointConfig", "JointResult", "joint_optimize",
]
