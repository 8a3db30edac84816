"""Large-system performance prediction for the parallel simplified PDA.

Uniform binary priors and ``m0 = 0`` throughout. The decision statistic
``d_k h_k^t`` of stage ``t`` is treated as Gaussian with mean ``E^t`` and
variance ``F^{t,t}``; the BER after the stage is ``Phi(-E^t / sqrt(F^{t,t}))``.

Two recursions are provided:

* replica form (``ra_trajectory``): ``E = 1/(sigma2 + alpha(1-Q))`` and
  ``F = [alpha(1-2M+Q) + sigma2] E^2`` with ``M, Q`` fed back through
  Gaussian integrals of ``tanh`` and ``tanh^2``;
* statistical-neurodynamics form (``sn_trajectory``): the same feedback, but
  the chip-level statistic ``z^t = zbar^t - alpha U^t A^{t-1} z^{t-1}``
  carries a reaction term, which brings in cross-stage covariances.
  Only the undamped (``omega = 0``) transient is modelled; for ``omega > 0``
  the steady state from :func:`solve_equilibrium` is returned.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache
import math

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Quadrature",
    "default_quadrature",
    "gauss_expect",
    "gauss_expect2",
    "ber_from_EF",
    "MacroState",
    "ra_stage_map",
    "ra_trajectory",
    "sn_trajectory",
    "EquilibriumPoint",
    "EquilibriumSearch",
    "equilibrium_map",
    "solve_equilibrium",
    "find_equilibria",
    "track_equilibrium",
]

DEFAULT_ORDER = 61


def _sech2(x):
    c = np.cosh(np.clip(x, -350.0, 350.0))
    return 1.0 / (c * c)


def _tanh2(x):
    t = np.tanh(x)
    return t * t


# ---------------------------------------------------------------------------
# quadrature over the standard Gaussian measure Dz
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quadrature:
    """Nodes and weights with ``sum w f(z) ~ int f(z) Dz``."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "hermite"

    @property
    def order(self):
        return len(self.nodes)

    @classmethod
    def hermite(cls, order=DEFAULT_ORDER):
        """Gauss-Hermite rule for the weight ``exp(-z^2/2)``: exact for polynomials of degree < 2 order."""
        return _hermite(int(order))

    @classmethod
    def composite(cls, zmax=10.0, panels=160, points=6):
        """Gauss-Legendre panels on ``[-zmax, zmax]`` times the Gaussian density.

        Resolves the sharp transition of ``tanh(sqrt(F) z + E)`` (width
        ``1/sqrt(F)`` around ``z = -E/sqrt(F)``) that a global Hermite rule
        steps over once ``F`` is large.
        """
        return _composite(float(zmax), int(panels), int(points))


@lru_cache(maxsize=None)
def _hermite(order):
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return Quadrature(x, w / math.sqrt(2.0 * math.pi), "hermite")


@lru_cache(maxsize=None)
def _composite(zmax, panels, points):
    x, w = np.polynomial.legendre.leggauss(points)
    edges = np.linspace(-zmax, zmax, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    z = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wz = (half[:, None] * w[None, :]).ravel() * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return Quadrature(z, wz, "composite")


def default_quadrature():
    return _composite(10.0, 160, 6)


def _quad(quad):
    if quad is None:
        return default_quadrature()
    if isinstance(quad, int):
        return _hermite(quad)
    return quad


def gauss_expect(f, mean, var, quad=None):
    """``int f(z sqrt(var) + mean) Dz``."""
    if var < 0:
        raise ValueError(f"variance must be non-negative, got {var}")
    q = _quad(quad)
    return float(q.weights @ f(q.nodes * math.sqrt(var) + mean))


def gauss_expect2(f, g, mean_a, var_a, mean_b, var_b, cov_ab, quad=None):
    """``E{f(X) g(Y)}`` for jointly Gaussian ``(X, Y)`` by tensor-product quadrature."""
    if var_a < 0 or var_b < 0:
        raise ValueError("variances must be non-negative")
    q = _quad(quad)
    sa, sb = math.sqrt(var_a), math.sqrt(var_b)
    rho = cov_ab / (sa * sb) if sa > 0 and sb > 0 else 0.0
    rho = min(1.0, max(-1.0, rho))
    z1 = q.nodes[:, None]
    z2 = q.nodes[None, :]
    x = mean_a + sa * z1
    y = mean_b + sb * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2)
    return float(q.weights @ (f(x) * g(y)) @ q.weights)


def ber_from_EF(E, F):
    """``Phi(-E / sqrt(F))`` via the complementary error function (scipy ``ndtr``)."""
    if not F > 0:
        raise ValueError(f"F must be positive, got {F}")
    return float(ndtr(-E / math.sqrt(F)))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MacroState:
    t: int                      # stage index of the statistic h^t (None for a steady state)
    M: float
    Q: float
    E: float
    F: float
    U: float
    A: float
    B: float
    C: float
    I: float
    J: float
    ber: float                  # BER of the decisions sign(m^{t+1})
    method: str = "RA"

    @property
    def stage(self):
        """1-based detector stage whose decisions this state predicts."""
        return None if self.t is None else self.t + 1


def ra_stage_map(M, Q, alpha, sigma2):
    """Replica-form stage map ``(M, Q) -> (E, F)``. Plain arithmetic, exact for rationals."""
    E = 1 / (sigma2 + alpha * (1 - Q))
    F = (alpha * (1 - 2 * M + Q) + sigma2) * E * E
    return E, F


def _check(alpha, sigma2):
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")


def ra_trajectory(alpha, sigma2, T, omega=0.0, quad=None):
    """Replica-form per-stage recursion from ``M = Q = 0``."""
    _check(alpha, sigma2)
    if omega:
        return [_steady_state(alpha, sigma2, onsager=False, quad=quad, method="RA")]
    q = _quad(quad)
    out = []
    M = Q = 0.0
    prev = None
    for t in range(int(T)):
        A = 1.0 / (sigma2 + alpha * (1.0 - Q))
        E, F = ra_stage_map(M, Q, alpha, sigma2)
        U = 1.0 if prev is None else gauss_expect(_sech2, prev[0], prev[1], q)
        I = gauss_expect(np.tanh, E, F, q)
        J = gauss_expect(_tanh2, E, F, q)
        C = F / (A * A)
        out.append(MacroState(t, M, Q, E, F, U, A, 1.0, C, I, J, ber_from_EF(E, F), "RA"))
        prev = (E, F)
        M, Q = I, J
    return out


def sn_trajectory(alpha, sigma2, T, omega=0.0, quad=None, force_u_zero=False):
    """Statistical-neurodynamics per-stage recursion (undamped transient).

    The chip statistic obeys ``z^t = zbar^t - c_t z^{t-1}`` with
    ``c_t = alpha U^t A^{t-1}`` (``c_0 = 0``), and

    * ``V^{s,t}   = E{zbar^s zbar^t} = alpha (1 - I^{s-1} - I^{t-1} + P^{s-1,t-1}) + sigma2``
    * ``G^{s,t}   = E{z^s zbar^t}    = V^{s,t} - c_s G^{s-1,t}``
    * ``C^{t,tau} = V^{t,tau} - c_tau G^{tau-1,t} - c_t G^{t-1,tau} + c_t c_tau C^{t-1,tau-1}``

    where ``P^{a,b} = E{tanh(h^a) tanh(h^b)}`` (``P^{a,a} = J^a``) and
    quantities at index ``-1`` vanish (``m0 = 0``). Then ``E^t = A^t B^t``
    with ``B^t = 1 - c_t B^{t-1}`` and ``F^{t,tau} = A^t A^tau C^{t,tau}``.
    ``force_u_zero`` switches the reaction term off.
    """
    _check(alpha, sigma2)
    if omega:
        return [_steady_state(alpha, sigma2, onsager=True, quad=quad, method="SN")]
    q = _quad(quad)
    T = int(T)
    I = np.zeros(T)
    P = np.zeros((T, T))
    F = np.zeros((T, T))
    C = np.zeros((T, T))
    E = np.zeros(T)
    A = np.zeros(T)
    B = np.zeros(T)
    c = np.zeros(T)
    G = {}

    def Iv(a):
        return I[a] if a >= 0 else 0.0

    def Pv(a, b):
        return P[a, b] if a >= 0 and b >= 0 else 0.0

    def V(s, t):
        return alpha * (1.0 - Iv(s - 1) - Iv(t - 1) + Pv(s - 1, t - 1)) + sigma2

    def Gv(s, t):
        if s < 0:
            return 0.0
        key = (s, t)
        if key not in G:
            G[key] = V(s, t) - (c[s] * Gv(s - 1, t) if s > 0 else 0.0)
        return G[key]

    out = []
    for t in range(T):
        M_t = Iv(t - 1)
        Q_t = Pv(t - 1, t - 1)
        A[t] = 1.0 / (sigma2 + alpha * (1.0 - Q_t))
        if t == 0:
            U_t = 1.0
        else:
            U_t = gauss_expect(_sech2, E[t - 1], F[t - 1, t - 1], q)
        if force_u_zero:
            U_t = 0.0
        c[t] = alpha * U_t * A[t - 1] if t > 0 else 0.0
        B[t] = 1.0 - c[t] * B[t - 1] if t > 0 else 1.0
        for tau in range(t + 1):
            val = V(t, tau)
            if t > 0:
                val -= c[t] * Gv(t - 1, tau)
            if tau > 0:
                val -= c[tau] * Gv(tau - 1, t)
                if t > 0:
                    val += c[t] * c[tau] * C[t - 1, tau - 1]
            C[t, tau] = C[tau, t] = val
            F[t, tau] = F[tau, t] = A[t] * A[tau] * val
        E[t] = A[t] * B[t]
        Ftt = F[t, t]
        I[t] = gauss_expect(np.tanh, E[t], Ftt, q)
        P[t, t] = gauss_expect(_tanh2, E[t], Ftt, q)
        for tau in range(t):
            P[t, tau] = P[tau, t] = gauss_expect2(
                np.tanh, np.tanh, E[t], Ftt, E[tau], F[tau, tau], F[t, tau], q)
        out.append(MacroState(t, M_t, Q_t, E[t], Ftt, U_t, A[t], B[t], C[t, t],
                              I[t], P[t, t], ber_from_EF(E[t], Ftt), "SN"))
    return out


# ---------------------------------------------------------------------------
# equilibrium
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquilibriumPoint:
    M: float
    Q: float
    U: float
    A: float
    E: float
    F: float
    ber: float
    residual: float
    iterations: int
    converged: bool
    method: str = "SN"
    residual_history: tuple = field(default=(), repr=False)

    def as_state(self):
        return MacroState(None, self.M, self.Q, self.E, self.F, self.U, self.A,
                          self.E / self.A, self.F / self.A ** 2, self.M, self.Q,
                          self.ber, "EQ")


def equilibrium_map(M, Q, U, alpha, sigma2, onsager=True, quad=None):
    """One application of the steady-state equations.

    Returns ``(E, F, A, I, J, U_new)``; without ``onsager`` the reaction term
    ``alpha U A`` is dropped, giving the replica-form fixed point.
    """
    q = _quad(quad)
    A = 1.0 / (sigma2 + alpha * (1.0 - Q))
    g = 1.0 + alpha * U * A if onsager else 1.0
    E = A / g
    F = A * A * (sigma2 + alpha * (1.0 - 2.0 * M + Q)) / (g * g)
    F = max(F, 1e-300)
    I = gauss_expect(np.tanh, E, F, q)
    J = gauss_expect(_tanh2, E, F, q)
    Un = gauss_expect(_sech2, E, F, q)
    return E, F, A, I, J, Un


def solve_equilibrium(alpha, sigma2, init=(0.0, 0.0, 1.0), tol=1e-10, max_iter=20000,
                      damping=0.5, onsager=True, quad=None):
    """Damped fixed-point iteration of the steady-state equations from ``init = (M, Q, U)``.

    The step shrinks by half (down to 0.05) whenever the residual grows and
    recovers towards ``damping`` while it falls.
    """
    _check(alpha, sigma2)
    q = _quad(quad)
    x = np.array(init, dtype=float)
    step = damping
    prev = math.inf
    hist = []
    res = math.inf
    it = 0
    for it in range(1, int(max_iter) + 1):
        E, F, A, I, J, Un = equilibrium_map(x[0], x[1], x[2], alpha, sigma2, onsager, q)
        fx = np.array([I, J, Un])
        res = float(np.max(np.abs(fx - x)))
        hist.append(res)
        if res < tol:
            x = fx
            break
        step = max(0.5 * step, 0.05) if res > prev else min(1.25 * step, damping)
        prev = res
        x = x + step * (fx - x)
    E, F, A, I, J, Un = equilibrium_map(x[0], x[1], x[2], alpha, sigma2, onsager, q)
    res = float(np.max(np.abs(np.array([I, J, Un]) - x)))
    return EquilibriumPoint(M=x[0], Q=x[1], U=x[2], A=A, E=E, F=F, ber=ber_from_EF(E, F),
                            residual=res, iterations=it, converged=res < tol,
                            method="SN" if onsager else "RA",
                            residual_history=tuple(hist))


@dataclass(frozen=True)
class EquilibriumSearch:
    points: tuple                # distinct converged points, ascending BER
    failures: tuple              # non-converged runs (with residual histories)

    @property
    def best(self):
        return self.points[0] if self.points else None

    @property
    def multiple(self):
        return len(self.points) > 1


START_GRID = (0.0, 0.5, 0.99)


def find_equilibria(alpha, sigma2, grid=START_GRID, tol=1e-10, onsager=True, quad=None,
                    max_iter=20000, distinct=1e-6):
    """Multi-start search over ``(M, Q)`` in ``grid x grid`` with ``U = 1 - Q``."""
    found = []
    failed = []
    for M0 in grid:
        for Q0 in grid:
            pt = solve_equilibrium(alpha, sigma2, (M0, Q0, 1.0 - Q0), tol=tol, onsager=onsager,
                                   quad=quad, max_iter=max_iter)
            if not pt.converged:
                failed.append(pt)
                continue
            if all(abs(pt.M - p.M) + abs(pt.Q - p.Q) > distinct for p in found):
                found.append(pt)
    found.sort(key=lambda p: p.ber)
    return EquilibriumSearch(tuple(found), tuple(failed))


def track_equilibrium(alpha, sigma2_list, start=None, onsager=True, quad=None, tol=1e-10):
    """Continue one fixed-point branch along a sequence of noise levels.

    Each solve starts from the previous solution; the first from ``start``
    or the minimum-BER point of a multi-start search.
    """
    out = []
    prev = start
    for s2 in sigma2_list:
        if prev is None:
            srch = find_equilibria(alpha, s2, onsager=onsager, quad=quad, tol=tol)
            pt = srch.best
        else:
            pt = solve_equilibrium(alpha, s2, (prev.M, prev.Q, prev.U), onsager=onsager,
                                   quad=quad, tol=tol)
        out.append(pt)
        prev = pt
    return out


def _steady_state(alpha, sigma2, onsager, quad, method):
    srch = find_equilibria(alpha, sigma2, onsager=onsager, quad=quad)
    if srch.best is None:
        raise RuntimeError(f"no equilibrium converged for alpha={alpha}, sigma2={sigma2}")
    st = srch.best.as_state()
    return replace(st, method=method)
