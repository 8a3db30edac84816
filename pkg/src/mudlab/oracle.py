"""Exhaustive ground truth for small systems.

Everything here enumerates all ``2**K`` data hypotheses in the log domain.
It is slow on purpose and exists to check the approximate detectors.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .model import strip_user

__all__ = [
    "K_MAX",
    "OracleCostError",
    "ExactPosterior",
    "check_priors",
    "exact_mpm",
    "exact_extrinsic_llr",
    "exact_mai_covariance",
    "approx_mai_covariance",
]

K_MAX = 20


class OracleCostError(ValueError):
    """Raised when exhaustive enumeration is refused for cost reasons."""


@dataclass(frozen=True)
class ExactPosterior:
    m: np.ndarray                 # E{d_k | r}
    pairwise: np.ndarray          # E{d_j d_l | r}
    log_pos: np.ndarray           # log sum over d_k=+1 of the joint
    log_neg: np.ndarray           # log sum over d_k=-1 of the joint

    @property
    def app_llr(self):
        return self.log_pos - self.log_neg


def check_priors(priors, K):
    lam = np.zeros(K) if priors is None else np.asarray(priors, dtype=float)
    if lam.shape != (K,):
        raise ValueError(f"priors must have shape ({K},), got {lam.shape}")
    if not np.all(np.isfinite(lam)):
        raise ValueError("prior LLRs must be finite")
    return lam


def _guard(K, k_max):
    if K > k_max:
        secs = (2.0 ** K) * K * K * 2e-9
        raise OracleCostError(
            f"exact enumeration over 2^{K} = {2 ** K:,} hypotheses refused "
            f"(K_max={k_max}); estimated cost ~{secs:,.0f} s and "
            f"{(2.0 ** K) * K / 2 ** 30:,.1f} GiB-equivalent of work")


def _single(inst):
    if inst.batched:
        raise ValueError("oracle operates on a single symbol interval")
    if not math.isfinite(inst.sigma2) or inst.sigma2 <= 0:
        raise ValueError("oracle needs a finite positive noise variance")


def exact_mpm(inst, priors=None, k_max=K_MAX, pairs=True):
    """Exact conditional means and pairwise second moments of the data."""
    _single(inst)
    _guard(inst.K, k_max)
    lam = check_priors(priors, inst.K)
    lp, ln, pw = kernels.posterior_enumerate(inst.y, inst.R, lam, inst.sigma2, pairs)
    m = np.tanh(0.5 * (lp - ln))
    return ExactPosterior(m=m, pairwise=pw if pairs else None, log_pos=lp, log_neg=ln)


def exact_extrinsic_llr(inst, k=None, priors=None, k_max=K_MAX, posterior=None):
    """``log p(r|d_k=+1) - log p(r|d_k=-1)`` by exact summation.

    Returns all users' values when ``k`` is None.
    """
    lam = check_priors(priors, inst.K)
    if posterior is None:
        posterior = exact_mpm(inst, lam, k_max=k_max, pairs=False)
    ext = posterior.app_llr - lam
    return ext if k is None else float(ext[k])


def exact_mai_covariance(inst, k, posterior):
    """Covariance of the MAI vector of user ``k``, both terms included.

    ``sum_j s_j s_j' (1 - m_j^2) + sum_{j != l} s_j s_l' (E{d_j d_l} - m_j m_l)``
    over interferers ``j, l != k``, i.e. ``S_k (P_k - m_k m_k') S_k'``.
    """
    if posterior.m.shape[0] != inst.K or posterior.pairwise is None:
        raise ValueError("posterior does not match the instance or lacks pairwise moments")
    Sk, keep = strip_user(inst, k)
    mk = posterior.m[keep]
    P = posterior.pairwise[np.ix_(keep, keep)]
    cov = P - np.outer(mk, mk)
    return Sk @ cov @ Sk.T


def approx_mai_covariance(inst, k, m):
    """The same covariance with the cross-user term dropped: ``S_k Diag(1-m_k^2) S_k'``."""
    m = np.asarray(m, dtype=float)
    if m.shape[0] != inst.K:
        raise ValueError("soft estimates do not match the instance")
    Sk, keep = strip_user(inst, k)
    v = 1.0 - m[keep] ** 2
    return (Sk * v) @ Sk.T
