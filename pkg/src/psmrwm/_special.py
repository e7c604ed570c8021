"""Standard-normal helpers shared across modules."""

import numpy as np
from scipy import special

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def norm_cdf(z):
    return special.ndtr(z)


def log_norm_cdf(z):
    # accurate far into the lower tail, where ndtr underflows
    return special.log_ndtr(z)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z - LOG_SQRT_2PI)
