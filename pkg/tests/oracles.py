"""Frozen oracle values, computed independently of the package.

Closed forms are written out directly.  The simplex norms have no closed
form; they were computed once with mpmath (30 digits, tanh-sinh quadrature
after the substitution u = e^x, v = e^y) and are frozen here.
"""
import math

# ||z^alpha||^2 for phi = ln(1 + e^x) with the logistic density: Beta(alpha+1, k-alpha+1)
P1_NORM_K2_A1 = 1.0 / 6.0
P1_NORM_K2_A0 = 1.0 / 3.0

# ||z^alpha||^2 for phi = ln(1 + e^x + e^y), keys (alpha_1, alpha_2, k)
SIMPLEX_NORMS = {
    (1, 0, 2): 0.07973626739290574589,
    (0, 0, 2): 0.13039559891064138117,
    (1, 1, 2): 0.065197799455320690582,
    (2, 1, 4): 0.0048962240378199202797,
}

# Legendre transform of ln(1 + e^x) at 1/2
P1_CONJUGATE_HALF = -math.log(2.0)


def p1_conjugate(a: float) -> float:
    """a ln a + (1 - a) ln(1 - a) on [0, 1]."""
    out = 0.0
    for p in (a, 1.0 - a):
        if p > 0:
            out += p * math.log(p)
    return out


def p1_envelope_half(x: float) -> float:
    """Envelope of ln(1 + e^x) with gradients >= 1/2."""
    return x / 2 + math.log(2.0) if x < 0 else math.log1p(math.exp(x))


# logistic function at 8, the gradient of ln(1 + e^x) there
SIGMA_8 = 0.9996646498695335219

# lattice filtration counts
H0_INTERVAL_K100 = 51 / 100  # [0,1], lambda = 1/2
H0_SQUARE_K10 = 66 / 100  # [0,1]^2, lambda = 1/2 on axis 0: 6 * 11 points


def simplex_bin_mass(a: float, b: float) -> float:
    """Mass of the triangle's first-coordinate marginal, density 1 - t, on [a, b]."""
    return (b - a) - (b * b - a * a) / 2


def simplex3_slice(lam: float) -> float:
    """vol of the standard 3-simplex cut by a_1 >= lam."""
    return (1 - lam) ** 3 / 6
