"""Randomly spread, symbol-synchronous CDMA over AWGN.

Chip model ``r = S d + n`` with ``S`` an ``N x K`` matrix of ``+-1/sqrt(N)``
chips and bit-level matched filter ``y = S' r = R d + S' n``.

An instance may carry ``T`` symbol intervals at once (``d`` of shape
``(K, T)``) that share one spreading matrix; this is how coded frames and
batched single-user runs are represented. With ``T`` omitted the vectors are
one-dimensional.
"""

from dataclasses import dataclass
import math

import numpy as np

__all__ = [
    "SystemConfig",
    "SystemInstance",
    "noise_variance",
    "trial_rng",
    "generate_instance",
    "instance_from_arrays",
    "strip_user",
]


def noise_variance(eb_n0_db, rate=1.0):
    """Per-chip noise variance for unit-energy spreading and unit amplitudes.

    ``rate`` is the code rate; coded symbols carry ``rate`` information bits,
    so ``Es/N0 = rate * Eb/N0``. ``-inf`` dB maps to an infinite variance.
    """
    if eb_n0_db == -math.inf:
        return math.inf
    return 10.0 ** (-eb_n0_db / 10.0) / (2.0 * rate)


def trial_rng(seed, *counters):
    """Independent generator for a (seed, counter...) pair.

    Streams are keyed by ``SeedSequence(seed, spawn_key=counters)``, so trial
    ``i`` is reproducible on its own and in any execution order.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in counters)))


@dataclass(frozen=True)
class SystemConfig:
    num_users: int
    processing_gain: int
    eb_n0_db: float
    seed: int = 0

    def __post_init__(self):
        if int(self.num_users) < 1:
            raise ValueError(f"num_users must be >= 1, got {self.num_users}")
        if int(self.processing_gain) < 1:
            raise ValueError(f"processing_gain must be >= 1, got {self.processing_gain}")
        if math.isnan(self.eb_n0_db) or self.eb_n0_db == math.inf:
            raise ValueError(f"eb_n0_db must be finite or -inf, got {self.eb_n0_db}")

    @property
    def load(self):
        return self.num_users / self.processing_gain

    alpha = load

    @property
    def sigma2(self):
        return noise_variance(self.eb_n0_db)

    @classmethod
    def from_load(cls, num_users, alpha, eb_n0_db, seed=0):
        n = int(round(num_users / alpha))
        if n < 1 or not math.isclose(num_users / n, alpha, rel_tol=1e-9):
            raise ValueError(f"load {alpha} is not realisable with K={num_users}")
        return cls(num_users, n, eb_n0_db, seed)


@dataclass(frozen=True, eq=False)
class SystemInstance:
    """One channel realisation. Arrays are read-only after construction."""

    S: np.ndarray
    d: np.ndarray
    n: np.ndarray
    r: np.ndarray
    R: np.ndarray
    y: np.ndarray
    sigma2: float

    @property
    def K(self):
        return self.S.shape[1]

    @property
    def N(self):
        return self.S.shape[0]

    @property
    def alpha(self):
        return self.K / self.N

    @property
    def batched(self):
        return self.d.ndim == 2

    @property
    def T(self):
        return self.d.shape[1] if self.batched else 1


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def instance_from_arrays(S, d, n, sigma2, chips=None):
    """Assemble an instance from explicit arrays (``r`` is formed as ``S d + n``).

    ``chips``, when given, is the integer +-1 chip matrix behind ``S``; it
    lets ``R`` be formed from exact integer inner products.
    """
    S = np.array(S, dtype=float)
    d = np.array(d, dtype=float)
    n = np.array(n, dtype=float)
    N, K = S.shape
    if d.shape[0] != K or n.shape[0] != N or d.shape[1:] != n.shape[1:]:
        raise ValueError(f"shape mismatch: S {S.shape}, d {d.shape}, n {n.shape}")
    r = S @ d + n
    if chips is not None:
        c = np.asarray(chips, dtype=np.float32)
        R = (c.T @ c).astype(float) / N
    else:
        R = S.T @ S
        R = 0.5 * (R + R.T)
    y = S.T @ r
    _freeze(S, d, n, r, R, y)
    return SystemInstance(S=S, d=d, n=n, r=r, R=R, y=y, sigma2=float(sigma2))


def generate_instance(cfg, trial=0, symbols=None, data=None, rng=None):
    """Draw spreading, data and noise for one trial.

    Draw order from the trial stream is chips, data, noise. ``symbols``
    requests a batched instance with that many intervals; ``data`` fixes the
    transmitted symbols (e.g. a coded frame) instead of drawing them.
    With an infinite noise variance the stored noise is zero and detectors
    treat the observation as uninformative.
    """
    if rng is None:
        rng = trial_rng(cfg.seed, trial)
    K, N = cfg.num_users, cfg.processing_gain
    chips = rng.integers(0, 2, size=(N, K), dtype=np.int8) * 2 - 1
    S = chips / math.sqrt(N)
    shape = (K,) if symbols is None else (K, symbols)
    if data is None:
        d = (rng.integers(0, 2, size=shape) * 2 - 1).astype(float)
    else:
        d = np.asarray(data, dtype=float)
        shape = d.shape
    nshape = (N,) + shape[1:]
    sigma2 = cfg.sigma2
    if math.isinf(sigma2):
        n = np.zeros(nshape)
    else:
        n = math.sqrt(sigma2) * rng.standard_normal(nshape)
    return instance_from_arrays(S, d, n, sigma2, chips=chips)


def strip_user(inst, k):
    """Spreading matrix with column ``k`` removed (0-based), and the index map."""
    K = inst.K
    if not 0 <= k < K:
        raise IndexError(f"user index {k} out of range for K={K}")
    keep = np.r_[0:k, k + 1:K]
    return inst.S[:, keep], keep
