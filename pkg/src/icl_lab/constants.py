"""Tolerances shared by the library, the tests and the acceptance suite."""

# algebraic identities (normalisation, ratio consistency, prediction)
ALGEBRAIC_TOL = 1e-10
RATIO_REL_TOL = 1e-8
MIXTURE_WEIGHT_SUM_TOL = 1e-12

# statistical agreement, in Monte-Carlo standard errors
MC_SIGMA = 3.0
MIN_ESS = 50.0

# asymptotic checks (relative)
ASYMPTOTIC_REL_TOL = 0.05

# context identity condition and the Psi_w sign check
IDENTITY_TOL = 1e-9
PSI_W_FLOOR = -1e-10

# quadrature oracle
QUADRATURE_HALF_WIDTH = 8.0
QUADRATURE_MIN_POINTS = 256
QUADRATURE_MATCH_TOL = 1e-4

# gradient checks
FD_STEP = 1e-5
GRAD_REL_TOL = 1e-5

# numerical rank cutoff for the min-norm solver
PINV_RCOND = 1e-10

# gradient descent divergence guard
DIVERGENCE_LOSS = 1e12

# reference input distances are quoted to two decimals
DISTANCE_TOL = 0.01

# largest input dimension accepted by configs
MAX_DIM = 64
