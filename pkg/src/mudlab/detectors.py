"""Approximate nonlinear-MMSE detectors as fixed-point iterations.

All detectors iterate soft estimates ``m_k = E{d_k | r}`` of the form
``m_k = tanh(lam_k/2 + statistic_k)`` and differ in the statistic:

* ``PDA_FULL``: ``s_k' C_k^{-1} (r - S_k m_k)`` with the Gaussian MAI
  covariance ``C_k = S_k Diag(1 - m_k^2) S_k' + sigma2 I``.
* ``PSPDA`` / ``SSPDA``: ``C_k`` replaced by ``(sigma2 + alpha (1 - Q)) I``,
  updated in parallel (damped by ``omega``) or serially.
* ``MIC``: serial soft cancellation with the per-user residual variance
  ``sigma2 + sum_{j!=k} R_kj^2 (1 - m_j^2)``.
"""

from dataclasses import dataclass, replace
from enum import Enum
import math

import numpy as np

from . import kernels

__all__ = [
    "Kind",
    "Init",
    "DetectorConfig",
    "SoftEstimates",
    "DetectionResult",
    "pda_full_step",
    "pspda_step",
    "pspda_field",
    "sspda_step",
    "mic_step",
    "run_detector",
    "initial_estimates",
    "hard_decision",
    "spda_residual",
    "pda_statistics",
    "mic_variance",
]


class Kind(str, Enum):
    PDA_FULL = "pda"
    PSPDA = "pspda"
    SSPDA = "sspda"
    MIC = "mic"


class Init(str, Enum):
    ZERO = "zero"
    MATCHED_FILTER = "mf"
    PRIOR_TANH = "prior"


@dataclass(frozen=True)
class DetectorConfig:
    kind: Kind = Kind.SSPDA
    omega: float = None
    tol: float = 1e-3
    max_iter: int = 100
    init: Init = Init.ZERO
    # PDA only: rebuild Omega_k from the freshest estimates within a sweep
    pda_fresh: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "init", Init(self.init))
        if self.omega is None:
            object.__setattr__(self, "omega", 0.4 if self.kind is Kind.PSPDA else 0.0)
        object.__setattr__(self, "omega", float(self.omega))
        if not 0.0 <= self.omega < 1.0:
            raise ValueError(f"omega must satisfy 0 <= omega < 1, got {self.omega}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class SoftEstimates:
    m: np.ndarray
    t: int = 0

    @property
    def Q(self):
        """Mean squared estimate; one value per symbol interval when batched."""
        return np.mean(self.m * self.m, axis=0)

    def decisions(self):
        return hard_decision(self.m)


@dataclass(frozen=True)
class DetectionResult:
    state: SoftEstimates
    iterations: int
    converged: bool
    # per symbol interval: first iteration at which that column met the tolerance
    # (max_iter when it never did); columns never interact, so this equals a solo run
    column_iterations: np.ndarray = None

    @property
    def m(self):
        return self.state.m


def hard_decision(m):
    """Sign decisions with ``sign(0) = +1``."""
    return np.where(np.asarray(m) >= 0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _cols(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _lam_half(inst, priors):
    shape = (inst.K, inst.T)
    if priors is None:
        return np.zeros(shape)
    lam = np.asarray(priors, dtype=float)
    if lam.ndim == 1:
        if lam.shape[0] != inst.K:
            raise ValueError(f"priors have {lam.shape[0]} users, instance has {inst.K}")
        lam = np.repeat(lam[:, None], inst.T, axis=1)
    elif lam.shape != shape:
        raise ValueError(f"priors shape {lam.shape} does not match {shape}")
    return 0.5 * lam


def _state_array(inst, state):
    m = state.m if isinstance(state, SoftEstimates) else state
    m = np.array(_cols(m), dtype=float)
    if m.shape != (inst.K, inst.T):
        raise ValueError(f"state shape {m.shape} does not match ({inst.K}, {inst.T})")
    return m


def _shape_like(inst, m):
    return m if inst.batched else m[:, 0]


def _wrap(inst, m, state):
    t = state.t + 1 if isinstance(state, SoftEstimates) else 1
    return SoftEstimates(_shape_like(inst, m), t)


# ---------------------------------------------------------------------------
# full PDA
# ---------------------------------------------------------------------------

def _pda_sweep(inst, lam_half, m, fresh=True, covariance="full", update=True):
    """One serial PDA sweep over users; returns (new m, statistics).

    ``fresh`` uses already-updated estimates for later users; otherwise all
    users see the pre-sweep vector. ``covariance="scalar"`` replaces ``C_k`` by
    ``(sigma2 + alpha (1 - Q)) I`` with ``Q`` taken from the estimates in use.
    With ``update=False`` the estimates are held fixed and only the
    statistics are returned.
    """
    S, sigma2 = inst.S, inst.sigma2
    N, K = S.shape
    r = _cols(inst.r)
    T = r.shape[1]
    ref = m.copy()                       # estimates seen by the statistics
    out = m.copy()
    stats = np.empty((K, T))
    interf = S @ ref
    v = 1.0 - ref * ref
    if covariance == "full":
        C = np.einsum("nk,kt,mk->tnm", S, v, S)
        C[:, np.arange(N), np.arange(N)] += sigma2
    for k in range(K):
        sk = S[:, k]
        resid = r - interf + np.outer(sk, ref[k])
        if covariance == "full":
            Ck = C - v[k][:, None, None] * np.outer(sk, sk)
            x = np.linalg.solve(Ck, np.broadcast_to(sk[:, None], (T, N, 1)))[..., 0]
            stat = np.einsum("tn,nt->t", x, resid)
        else:
            Q = np.mean(ref * ref, axis=0)
            stat = (sk @ resid) / (sigma2 + inst.alpha * (1.0 - Q))
        stats[k] = stat
        if not update:
            continue
        new = np.tanh(lam_half[k] + stat)
        out[k] = new
        if fresh:
            dm = new - ref[k]
            interf += np.outer(sk, dm)
            vn = 1.0 - new * new
            if covariance == "full":
                C += (vn - v[k])[:, None, None] * np.outer(sk, sk)
            v[k] = vn
            ref[k] = new
    return out, stats


def pda_full_step(inst, priors, state, fresh=True, covariance="full"):
    """One serial sweep of the PDA fixed point."""
    m = _state_array(inst, state)
    new, _ = _pda_sweep(inst, _lam_half(inst, priors), m, fresh=fresh, covariance=covariance)
    return _wrap(inst, new, state)


def pda_statistics(inst, m):
    """``s_k' C_k^{-1} (r - S_k m_k)`` for every user at fixed estimates ``m``."""
    m2 = _state_array(inst, m)
    _, stats = _pda_sweep(inst, np.zeros_like(m2), m2, fresh=False, update=False)
    return _shape_like(inst, stats)


# ---------------------------------------------------------------------------
# simplified PDA and MIC
# ---------------------------------------------------------------------------

def _pspda_field(inst, m):
    y = _cols(inst.y)
    R = inst.R
    Q = np.mean(m * m, axis=0)
    c = y - R @ m + np.diag(R)[:, None] * m
    return c / (inst.sigma2 + inst.alpha * (1.0 - Q))


def _pspda_update(inst, lam_half, m, omega):
    return omega * m + (1.0 - omega) * np.tanh(lam_half + _pspda_field(inst, m))


def pspda_field(inst, m):
    """``h_k = (y_k - sum_{j!=k} R_kj m_j) / (sigma2 + alpha (1 - Q))`` at fixed ``m``."""
    m2 = _state_array(inst, m)
    return _shape_like(inst, _pspda_field(inst, m2))


def pspda_step(inst, priors, state, omega=0.4):
    """Simultaneous update of all users from the previous iterate."""
    m = _state_array(inst, state)
    new = _pspda_update(inst, _lam_half(inst, priors), m, omega)
    return _wrap(inst, new, state)


def sspda_step(inst, priors, state, omega=0.0):
    """Serial sweep in user order with the running variance term."""
    m = _state_array(inst, state)
    kernels.sspda_sweep(m, inst.R, np.ascontiguousarray(_cols(inst.y)),
                        _lam_half(inst, priors), inst.sigma2, inst.alpha, omega)
    return _wrap(inst, m, state)


def mic_step(inst, priors, state, omega=0.0):
    """Serial soft cancellation sweep with per-user residual variances."""
    m = _state_array(inst, state)
    kernels.mic_sweep(m, inst.R, np.ascontiguousarray(_cols(inst.y)),
                      _lam_half(inst, priors), inst.sigma2, omega)
    return _wrap(inst, m, state)


def mic_variance(inst, m):
    """``sum_{j != k} R_kj^2 (1 - m_j^2)`` for every user."""
    m2 = _state_array(inst, m)
    R2 = inst.R * inst.R
    var = R2 @ (1.0 - m2 * m2) - np.diag(R2)[:, None] * (1.0 - m2 * m2)
    return _shape_like(inst, var)


def spda_residual(inst, priors, m):
    """Max-norm defect of the simplified-PDA fixed-point equation at ``m``."""
    m2 = _state_array(inst, m)
    target = _pspda_update(inst, _lam_half(inst, priors), m2, 0.0)
    return float(np.max(np.abs(target - m2)))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def initial_estimates(inst, priors, init):
    init = Init(init)
    K, T = inst.K, inst.T
    if init is Init.ZERO:
        m = np.zeros((K, T))
    elif init is Init.MATCHED_FILTER:
        m = np.clip(_cols(inst.y), -1.0, 1.0).copy()
    else:
        m = np.tanh(_lam_half(inst, priors))
    return m


def _step_fn(cfg):
    kind = cfg.kind
    if kind is Kind.PSPDA:
        return lambda inst, lh, m: _pspda_update(inst, lh, m, cfg.omega)
    if kind is Kind.SSPDA:
        def step(inst, lh, m):
            m = m.copy()
            kernels.sspda_sweep(m, inst.R, np.ascontiguousarray(_cols(inst.y)), lh,
                                inst.sigma2, inst.alpha, cfg.omega)
            return m
        return step
    if kind is Kind.MIC:
        def step(inst, lh, m):
            m = m.copy()
            kernels.mic_sweep(m, inst.R, np.ascontiguousarray(_cols(inst.y)), lh,
                              inst.sigma2, cfg.omega)
            return m
        return step

    def step(inst, lh, m):
        new, _ = _pda_sweep(inst, lh, m, fresh=cfg.pda_fresh)
        if cfg.omega:
            new = cfg.omega * m + (1.0 - cfg.omega) * new
        return new
    return step


def _column_subset(inst, idx):
    d, n, r, y = (_cols(a)[:, idx] for a in (inst.d, inst.n, inst.r, inst.y))
    return replace(inst, d=d, n=n, r=r, y=y)


def run_detector(inst, priors, cfg, m0=None, on_step=None):
    """Iterate the configured detector until ``max|m^t - m^(t-1)| < tol``.

    In a batch each column stops at its own first converged iterate, so
    every column equals a solo run. ``on_step(t, m_prev, m_new)`` is called
    after every iteration with ``(K, T)`` arrays. Hitting ``max_iter`` is
    reported through ``converged=False``, not raised.
    """
    lam_half = _lam_half(inst, priors)
    if math.isinf(inst.sigma2):
        # observation carries no information: the posterior mean is the prior mean
        m = np.tanh(lam_half)
        return DetectionResult(SoftEstimates(_shape_like(inst, m), 1), 1, True,
                               np.ones(inst.T, dtype=np.int64))
    if not inst.sigma2 > 0:
        raise ValueError(f"noise variance must be positive, got {inst.sigma2}")
    m = initial_estimates(inst, priors, cfg.init) if m0 is None else _state_array(inst, m0)
    step = _step_fn(cfg)
    converged = False
    it = 0
    cols = np.full(inst.T, int(cfg.max_iter), dtype=np.int64)
    done = np.zeros(inst.T, dtype=bool)
    for it in range(1, int(cfg.max_iter) + 1):
        if done.any():
            idx = np.flatnonzero(~done)
            new = m.copy()
            new[:, idx] = step(_column_subset(inst, idx), lam_half[:, idx], m[:, idx])
        else:
            new = step(inst, lam_half, m)
        dcol = np.max(np.abs(new - m), axis=0) if new.size else np.zeros(inst.T)
        hit = (dcol < cfg.tol) & ~done
        cols[hit] = it
        done |= hit
        if on_step is not None:
            on_step(it, m, new)
        m = new
        if done.all():
            converged = True
            break
    return DetectionResult(SoftEstimates(_shape_like(inst, m), it), it, converged, cols)
