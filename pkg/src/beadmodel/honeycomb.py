"""Discrete bead model: inverse Kasteleyn coefficients on the honeycomb lattice.

Edge weights are a = t (horizontal/bead edges), b = 1, c = exp(gamma*t).
After integrating out the w variable of the torus double integral by
residues, the coupling coefficients reduce to single integrals over arcs of
the circle:

    Kinv(x, y) = (-1)^y/(2 pi t) * int_{-th0}^{th0} e^{-i y th} G(th)^x dth        (x >= 0)
    Kinv(x, y) = (-1)^(y+1)/(2 pi t) * int_{th0<|th|<pi} e^{-i y th} G(th)^x dth   (x < 0)

with G(th) = (e^{gamma t} e^{i th} - 1)/t and
th0 = arccos((1 + e^{2 gamma t} - t^2) / (2 e^{gamma t})).  |G| = 1 exactly at
th = th0, so both branches have bounded integrands.  Pairing th with -th makes
the result real.  In the vertical scaling limit t -> 0, t*y*sqrt(1-gamma^2) -> xi,
the rescaled coefficients (-1)^y Kinv / sqrt(1-gamma^2) converge to the
continuous kernel J(x, xi) -- except on the degenerate lane x = -1 with y held
bounded, where the complement-arc integral acquires an extra additive 1/2
(see ``X_MINUS1_OFFSET`` and verify_convergence below).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import AccuracyError, DomainError
from .kernel import KernelParams, eval_kernel

_QUAD_KW = dict(epsabs=1e-12, epsrel=1e-12, limit=500)

#: Additive offset of the t->0 limit of (-1)^y Kinv(-1, y) at fixed y=0,
#: relative to s*J(-1, 0).  J(-1, .) jumps at xi = 0: its xi->0 limit exceeds
#: the point value by 1/(2s) (a Dirichlet-integral tail; see kernel.eval_kernel).
#: The discrete kernel converges to the limit value, hence the offset
#: X_MINUS1_OFFSET / s relative to the closed-form point value.
X_MINUS1_OFFSET = 0.5


@dataclass(frozen=True)
class DiscreteParams:
    """Mesh parameters: gamma in (-1,1) and 0 < t below the liquidity bound."""

    gamma: float
    t: float

    def __post_init__(self):
        g, t = float(self.gamma), float(self.t)
        if not (-1.0 < g < 1.0):
            raise DomainError(f"gamma must lie in (-1, 1), got {g}")
        if not (t > 0.0):
            raise DomainError(f"t must be positive, got {t}")
        # triangle inequalities among (t, 1, e^{gamma t}); only e^{gamma t} < 1 + t binds
        if math.exp(g * t) >= 1.0 + t:
            raise DomainError(f"weights (t={t}, 1, e^(gamma t)) are not liquid: e^(gamma t) >= 1+t")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "t", t)

    @property
    def s(self) -> float:
        return math.sqrt(1.0 - self.gamma**2)


@dataclass(frozen=True)
class Theta0:
    value: float

    def __post_init__(self):
        if not (self.value > 0.0):
            raise DomainError("theta0 must be positive")


def theta0(params: DiscreteParams) -> Theta0:
    """Half-width of the circle arc where the w-pole enters the unit disk."""
    g, t = params.gamma, params.t
    arg = (1.0 + math.exp(2.0 * g * t) - t * t) / (2.0 * math.exp(g * t))
    if not (-1.0 <= arg <= 1.0):
        raise DomainError(f"arccos argument {arg} outside [-1, 1]: weights not liquid")
    return Theta0(math.acos(arg))


def eval_discrete_kernel(params: DiscreteParams, x: int, y: int, tol: float = 1e-11) -> float:
    """Inverse Kasteleyn coefficient between fundamental domains offset (x, y).

    x counts threads, y vertical lattice steps.  Uses oscillatory-weight
    quadrature (cos/sin weights at frequency y) on the explicit arc integrals.
    """
    g, t = params.gamma, params.t
    x = int(x)
    y = int(y)
    th0 = theta0(params).value
    u = math.exp(g * t)

    def g_re(th):
        return (((u * np.exp(1j * th) - 1.0) / t) ** x).real

    def g_im(th):
        return (((u * np.exp(1j * th) - 1.0) / t) ** x).imag

    if x >= 0:
        lo, hi, sign = 0.0, th0, (-1.0) ** y
    else:
        lo, hi, sign = th0, math.pi, -((-1.0) ** y)

    # Re[e^{-iy th} G^x] = Re[G^x] cos(y th) + Im[G^x] sin(y th); sin is odd in y
    if y == 0:
        val, err = quad(g_re, lo, hi, **_QUAD_KW)
    else:
        v1, e1 = quad(g_re, lo, hi, weight="cos", wvar=abs(y), **_QUAD_KW)
        v2, e2 = quad(g_im, lo, hi, weight="sin", wvar=abs(y), **_QUAD_KW)
        val, err = v1 + math.copysign(1, y) * v2, e1 + e2
    if err > max(tol, 1e-12) * 50 and err > 1e-7:
        raise AccuracyError(f"discrete kernel quadrature error {err:.2e} at (x={x}, y={y})")
    return sign * val / (math.pi * t)


def bead_probability(params: DiscreteParams) -> float:
    """Probability of a bead at a given site: t * Kinv(0, 0) = theta0/pi."""
    return params.t * eval_discrete_kernel(params, 0, 0)


def verify_convergence(gamma: float, x: int, xi: float, t_list) -> list[dict]:
    """Tabulate the discrete-to-continuous kernel error along a t sequence.

    For each t, y = round(xi / (t*sqrt(1-gamma^2))) and the realized
    coordinate xi_t = t*y*sqrt(1-gamma^2).  The reported error is

        | (-1)^y Kinv(x, y) / s  -  J(x, xi_t)  -  offset |

    where offset = X_MINUS1_OFFSET/s on the degenerate lane (x = -1, y = 0)
    and zero elsewhere.
    """
    kp = KernelParams(gamma)
    s = kp.s
    rows = []
    for t in t_list:
        dp = DiscreteParams(gamma, t)
        y = int(round(xi / (t * s)))
        xi_real = t * y * s
        disc = ((-1.0) ** y) * eval_discrete_kernel(dp, x, y) / s
        limit = eval_kernel(kp, x, xi_real).value
        offset = X_MINUS1_OFFSET / s if (x == -1 and y == 0) else 0.0
        rows.append(
            dict(
                t=t,
                y=y,
                xi_realized=xi_real,
                discrete=disc,
                limit=limit,
                offset=offset,
                error=abs(disc - limit - offset),
            )
        )
    return rows
