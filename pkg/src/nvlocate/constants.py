"""Physical constants shared across the package.

SI units throughout: tesla, metres, hertz, seconds.  Mixed units such as
uT/um appear only at I/O boundaries (CLI, CSV headers), never internally.
"""

import math

# mu_0 / 4 pi in T*m/A (exact in the pre-2019 SI definition, accurate to
# well below any tolerance used here).
MU0_OVER_4PI = 1e-7

# NV ground-state zero-field splitting, Hz.
ZERO_FIELD_SPLITTING_HZ = 2.870e9

# NV gyromagnetic ratio, Hz/T (g_e * mu_B / h).
GYROMAGNETIC_RATIO_HZ_PER_T = 2.8024e10

# Prefactor of the CW-ODMR sensitivity formula for Gaussian lineshapes.
CW_SENSITIVITY_PREFACTOR = 4.0 / (3.0 * math.sqrt(3.0))

# FWHM -> Gaussian sigma conversion.
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
