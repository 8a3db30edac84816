"""Soft-input soft-output multiuser detection.

Each block takes prior LLRs, iterates its detector from ``m0 = tanh(lam/2)``
and returns extrinsic LLRs: the detector statistic at the final estimates,
scaled by two, with the prior never added back in.
"""

from dataclasses import dataclass

import numpy as np

from . import detectors as det
from .detectors import DetectorConfig, Init, Kind

__all__ = [
    "LLR_CLIP",
    "SisoOutput",
    "siso_pda",
    "siso_spda",
    "siso_detect",
    "pda_extrinsic",
    "spda_extrinsic",
    "default_siso_config",
]

LLR_CLIP = 50.0


@dataclass(frozen=True)
class SisoOutput:
    extrinsic: np.ndarray
    state: det.SoftEstimates
    iterations: int
    converged: bool


def default_siso_config(kind, **overrides):
    """Warm start from the priors; 3 sweeps for the O(K^2) detectors, full convergence for PDA."""
    kind = Kind(kind)
    base = dict(kind=kind, init=Init.PRIOR_TANH)
    if kind in (Kind.SSPDA, Kind.MIC):
        base["max_iter"] = 3
    base.update(overrides)
    return DetectorConfig(**base)


def pda_extrinsic(inst, m):
    """``2 s_k' C_k^{-1} (r - S_k m_k)`` at fixed estimates."""
    return 2.0 * det.pda_statistics(inst, m)


def spda_extrinsic(inst, m, variance="aggregate"):
    """``2 (y_k - sum_{j!=k} R_kj m_j) / (sigma_k^2 + sigma2)`` at fixed estimates.

    ``variance="aggregate"`` uses ``sigma_k^2 = alpha (1 - Q)``;
    ``"per_user"`` uses ``sum_{j!=k} R_kj^2 (1 - m_j^2)``.
    """
    m = np.asarray(m, dtype=float)
    y = np.asarray(inst.y, dtype=float)
    R = inst.R
    c = y - R @ m + np.diag(R).reshape((-1,) + (1,) * (m.ndim - 1)) * m
    if variance == "aggregate":
        Q = np.mean(m * m, axis=0)
        var = inst.alpha * (1.0 - Q)
    elif variance == "per_user":
        var = det.mic_variance(inst, m)
    else:
        raise ValueError(f"unknown variance model {variance!r}")
    return 2.0 * c / (var + inst.sigma2)


def _clip(x, clip):
    return x if clip is None else np.clip(x, -clip, clip)


def siso_pda(inst, priors, cfg=None, clip=LLR_CLIP):
    cfg = cfg or default_siso_config(Kind.PDA_FULL)
    if cfg.kind is not Kind.PDA_FULL:
        raise ValueError("siso_pda needs a PDA_FULL detector configuration")
    res = det.run_detector(inst, priors, cfg)
    ext = pda_extrinsic(inst, res.m)
    return SisoOutput(_clip(ext, clip), res.state, res.iterations, res.converged)


def siso_spda(inst, priors, cfg=None, clip=LLR_CLIP, variance=None):
    """Simplified-PDA / MIC SISO block.

    ``variance`` defaults to the per-user residual variance for MIC and the
    aggregate ``alpha (1 - Q)`` otherwise.
    """
    cfg = cfg or default_siso_config(Kind.SSPDA)
    if cfg.kind not in (Kind.PSPDA, Kind.SSPDA, Kind.MIC):
        raise ValueError("siso_spda needs a PSPDA, SSPDA or MIC configuration")
    if variance is None:
        variance = "per_user" if cfg.kind is Kind.MIC else "aggregate"
    res = det.run_detector(inst, priors, cfg)
    ext = spda_extrinsic(inst, res.m, variance=variance)
    return SisoOutput(_clip(ext, clip), res.state, res.iterations, res.converged)


def siso_detect(inst, priors, cfg, clip=LLR_CLIP, variance=None):
    if cfg.kind is Kind.PDA_FULL:
        return siso_pda(inst, priors, cfg, clip=clip)
    return siso_spda(inst, priors, cfg, clip=clip, variance=variance)
