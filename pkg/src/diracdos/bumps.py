"""Compactly supported C-infinity test functions with exact derivative chains.

Three families on a closed support [lo, hi]:

  bump       exp(1 - 1/(1 - t^2)) in the scaled variable, peak 1 at the center
  poly_bump  (1 - t^2) times the bump core, also peak 1
  plateau    smoothed indicator: 0 -> 1 ramp, flat top, 1 -> 0 ramp

High derivatives come from closed-form recurrences, not numerical
differentiation: the bump core satisfies (1-t^2)^2 w' = -2t w, so its
log-derivative has an explicit partial-fraction expansion and the Leibniz
rule gives every order in a numerically benign way. Derivatives are set to
exactly 0 within EDGE_CUT of the support edge; the true values there are far
below double precision and the closed forms would overflow first.

The plateau's profile is the normalized antiderivative of the bump core,
evaluated through a Chebyshev expansion; its derivatives reduce to bump-core
derivatives, so only the order-0 value needs the expansion.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev

from .errors import ConfigError, PreconditionError

EDGE_CUT = 1e-7
FAMILIES = ("bump", "poly_bump", "plateau")
_PLATEAU_DEG = 2048
_SUP_GRID = 4097


def _core_derivatives(t, order):
    """Rows 0..order of d^k/dt^k exp(1 - 1/(1 - t^2)) on the reference interval."""
    t = np.asarray(t, dtype=float)
    out = np.zeros((order + 1, t.size))
    inside = np.abs(t) < 1.0 - EDGE_CUT
    ti = t[inside]
    if ti.size == 0:
        return out
    w = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
    phi = np.empty((order + 1, ti.size))
    phi[0] = w
    if order >= 1:
        # g = log w;  g^{(j)} from the partial fractions of 1/(1-t^2)
        gd = np.empty((order + 1, ti.size))
        up = 1.0 - ti
        dn = 1.0 + ti
        for j in range(1, order + 1):
            gd[j] = -(math.factorial(j) / 2.0) * (up ** (-(j + 1))
                                                  + (-1.0) ** j * dn ** (-(j + 1)))
        for k in range(order):
            acc = np.zeros(ti.size)
            for j in range(k + 1):
                acc += math.comb(k, j) * gd[j + 1] * phi[k - j]
            phi[k + 1] = acc
    out[:, inside] = phi
    return out


def _poly_core_derivatives(t, order):
    """Same for (1 - t^2) exp(1 - 1/(1 - t^2)): Leibniz with the quadratic factor."""
    w = _core_derivatives(t, order)
    t = np.asarray(t, dtype=float)
    q0 = np.where(np.abs(t) < 1.0, 1.0 - t * t, 0.0)
    q1 = np.where(np.abs(t) < 1.0, -2.0 * t, 0.0)
    out = np.zeros_like(w)
    for k in range(order + 1):
        acc = q0 * w[k]
        if k >= 1:
            acc += k * q1 * w[k - 1]
        if k >= 2:
            acc += math.comb(k, 2) * (-2.0) * w[k - 2]
        out[k] = acc
    return out


_plateau_cache = {}


def _plateau_profile_coeffs():
    """Chebyshev coefficients of the normalized bump antiderivative on [-1, 1]."""
    if "coeffs" not in _plateau_cache:
        c = chebyshev.chebinterpolate(
            lambda t: _core_derivatives(t, 0)[0], _PLATEAU_DEG)
        F = chebyshev.chebint(c)
        lo, hi = chebyshev.chebval([-1.0, 1.0], F)
        _plateau_cache["coeffs"] = F
        _plateau_cache["lo"] = lo
        _plateau_cache["mass"] = hi - lo
    return _plateau_cache["coeffs"], _plateau_cache["lo"], _plateau_cache["mass"]


def _plateau_value(t):
    """Ramp profile B(t): 0 at -1, 1 at +1, C-infinity."""
    F, lo, mass = _plateau_profile_coeffs()
    t = np.asarray(t, dtype=float)
    v = (chebyshev.chebval(np.clip(t, -1.0, 1.0), F) - lo) / mass
    v = np.clip(v, 0.0, 1.0)
    v[t <= -1.0] = 0.0
    v[t >= 1.0] = 1.0
    return v


@dataclass(frozen=True, eq=False)
class SmoothBump:
    """One smooth compactly supported function with derivative access.

    derivatives(x, order) returns rows 0..order of the derivative stack at
    the given points; values outside the closed support are exactly 0.
    """

    lo: float
    hi: float
    family: str = "bump"
    ramp: float = 0.0
    max_order: int = 8
    _sup_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError("unknown bump family %r" % (self.family,))
        if not self.lo < self.hi:
            raise ConfigError("support must be a nonempty interval")
        if self.family == "plateau":
            if not 0.0 < self.ramp <= 0.5 * (self.hi - self.lo):
                raise ConfigError("plateau ramp must lie in (0, (hi-lo)/2]")
        if self.max_order < 1:
            raise ConfigError("max_order must be at least 1")

    @property
    def support(self):
        return (self.lo, self.hi)

    def __call__(self, x):
        return self.derivatives(x, 0)[0]

    def derivatives(self, x, order):
        if order > self.max_order:
            raise PreconditionError("order %d exceeds max_order %d"
                                    % (order, self.max_order))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.family == "plateau":
            return self._plateau_derivatives(x, order)
        half = 0.5 * (self.hi - self.lo)
        mid = 0.5 * (self.hi + self.lo)
        t = (x - mid) / half
        core = (_core_derivatives if self.family == "bump"
                else _poly_core_derivatives)(t, order)
        scale = (1.0 / half) ** np.arange(order + 1)
        return core * scale[:, None]

    def _plateau_derivatives(self, x, order):
        out = np.zeros((order + 1, x.size))
        rise_hi = self.lo + self.ramp
        fall_lo = self.hi - self.ramp
        out[0, (x >= rise_hi) & (x <= fall_lo)] = 1.0
        s = 2.0 / self.ramp
        _, _, mass = _plateau_profile_coeffs()
        for sign, sel, t in (
            (1.0, (x >= self.lo) & (x < rise_hi), lambda xs: s * (xs - self.lo) - 1.0),
            (-1.0, (x > fall_lo) & (x <= self.hi), lambda xs: s * (self.hi - xs) - 1.0),
        ):
            if not sel.any():
                continue
            ts = t(x[sel])
            out[0, sel] = _plateau_value(ts)
            if order >= 1:
                core = _core_derivatives(ts, order - 1) / mass
                for k in range(1, order + 1):
                    out[k, sel] = (sign * s) ** k * core[k - 1]
        return out

    def derivative_sup(self, order):
        """Max abs of the order-th derivative, from a fixed fine grid."""
        if order not in self._sup_cache:
            x = np.linspace(self.lo, self.hi, _SUP_GRID)
            d = self.derivatives(x, order)
            self._sup_cache[order] = float(np.max(np.abs(d[order])))
        return self._sup_cache[order]

    def panel_structure(self):
        """Segments (a, b, kind) for quadrature grading.

        kind "edge": derivatives concentrate at both segment ends; "flat":
        the function is constant there (all derivatives vanish).
        """
        if self.family != "plateau":
            return ((self.lo, self.hi, "edge"),)
        a, b = self.lo + self.ramp, self.hi - self.ramp
        segs = [(self.lo, a, "edge")]
        if b > a:
            segs.append((a, b, "flat"))
        segs.append((b, self.hi, "edge"))
        return tuple(segs)


def make_bump(lo, hi, family="bump", ramp=None, max_order=8):
    if ramp is None:
        ramp = 0.25 * (hi - lo) if family == "plateau" else 0.0
    return SmoothBump(float(lo), float(hi), family, float(ramp), int(max_order))
