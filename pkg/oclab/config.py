"""Global configuration values for the quantization laboratory."""

from __future__ import annotations

# Probability validation
PROB_TOL = 1e-12  # construction-time tolerance on total mass
MARGINAL_TOL = 1e-9  # coupling marginals vs requested pmfs
DEGENERACY_EPS = 1e-12  # flows below this are treated as zero

# Transport solver
DUAL_TOL = 1e-9  # complementary slackness residual for an optimal basis
DEGENERATE_STREAK = 50  # consecutive zero-step pivots before Bland's rule takes over
OT_MAX_PIVOTS = 200_000

# Prokhorov metric
PROKHOROV_TOL = 1e-9  # bisection width
PROKHOROV_MAX_SUPPORT = 20

# Constrained mutual information
SINKHORN_TOL = 1e-10  # marginal residual at termination
SINKHORN_MAX_ITER = 200_000
BETA_CAP = 2.0**64
DISTORTION_TOL = 1e-7  # |E[rho] - D| at the end of the beta bisection
RATE_TOL = 1e-9  # bits, inverse bisection on the rate
BISECTION_MAX_STEPS = 400

# Blahut-Arimoto
BA_TOL = 1e-12
BA_MAX_ITER = 100_000

# Quantizer enumeration and the mixture LP
ENUMERATION_CAP = 10**7
LP_PIVOT_EPS = 1e-12
LP_OPT_TOL = 1e-11
LP_DUAL_TOL = 1e-8
LP_MAX_PIVOTS = 100_000

# Random coding
CODEBOOK_CAP = 2**20  # codewords per block
EXACT_COUPLING_CAP = 10**6  # |T_n| * |Y|^n cells for product-space OT
UNIFORMITY_CLASS_CAP = 10**4  # largest class tabulated by the uniformity test
TYPE_CLASS_EXACT_MAX_N = 1000  # big-integer multinomials up to this block length
CHUNK_TRIALS = 1000  # trials sharing one RNG stream
CHUNK_CELL_BUDGET = 4_000_000  # codebook cells materialized per chunk
SIGMA_GATE = 3.0
CHI2_ALPHA = 0.01

# Reproducibility and parallelism
DEFAULT_SEED = 42
THREADS_ENV = "OCLAB_THREADS"
DEFAULT_THREADS = 1

# Process exit codes
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_INVARIANT = 4

__all__ = [
    "PROB_TOL",
    "MARGINAL_TOL",
    "DEGENERACY_EPS",
    "DUAL_TOL",
    "DEGENERATE_STREAK",
    "OT_MAX_PIVOTS",
    "PROKHOROV_TOL",
    "PROKHOROV_MAX_SUPPORT",
    "SINKHORN_TOL",
    "SINKHORN_MAX_ITER",
    "BETA_CAP",
    "DISTORTION_TOL",
    "RATE_TOL",
    "BISECTION_MAX_STEPS",
    "BA_TOL",
    "BA_MAX_ITER",
    "ENUMERATION_CAP",
    "LP_PIVOT_EPS",
    "LP_OPT_TOL",
    "LP_DUAL_TOL",
    "LP_MAX_PIVOTS",
    "CODEBOOK_CAP",
    "EXACT_COUPLING_CAP",
    "UNIFORMITY_CLASS_CAP",
    "TYPE_CLASS_EXACT_MAX_N",
    "CHUNK_TRIALS",
    "CHUNK_CELL_BUDGET",
    "SIGMA_GATE",
    "CHI2_ALPHA",
    "DEFAULT_SEED",
    "THREADS_ENV",
    "DEFAULT_THREADS",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_INFEASIBLE",
    "EXIT_INVARIANT",
]
