"""Coded CDMA: (5,7) convolutional code, per-user interleavers, BCJR, turbo MUD.

Bit/symbol/LLR conventions used throughout: bit 0 maps to symbol +1, and an
LLR is ``log Pr(symbol=+1) / Pr(symbol=-1)``, so a positive LLR favours bit 0.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.stats import norm

from . import kernels
from .detectors import Kind, hard_decision
from .model import instance_from_arrays, noise_variance, trial_rng
from .siso import LLR_CLIP, default_siso_config, siso_detect

__all__ = [
    "TrellisCode",
    "CODE_57",
    "Interleaver",
    "conv_encode",
    "bcjr_decode",
    "CodedFrame",
    "make_frame",
    "CodedSystem",
    "DecodeResult",
    "iterative_decode",
    "single_user_decode",
]


class TrellisCode:
    """Rate-1/n feedforward convolutional code, zero-terminated.

    ``generators`` are octal tap masks, most significant bit on the current
    input. State ``s`` holds the last ``memory`` inputs, newest in the high bit.
    """

    def __init__(self, generators=(0o5, 0o7), constraint_length=3):
        self.generators = tuple(int(g) for g in generators)
        self.constraint_length = int(constraint_length)
        self.memory = self.constraint_length - 1
        self.n_out = len(self.generators)
        self.num_states = 1 << self.memory
        S, L = self.num_states, self.constraint_length
        self.next_state = np.empty((S, 2), dtype=np.int64)
        self.out_bits = np.empty((S, 2, self.n_out), dtype=np.int64)
        for s in range(S):
            for u in range(2):
                reg = (u << self.memory) | s          # [u, s_newest, ..., s_oldest]
                self.next_state[s, u] = reg >> 1
                for i, g in enumerate(self.generators):
                    self.out_bits[s, u, i] = bin(reg & g).count("1") & 1
        self.out_sym = 1.0 - 2.0 * self.out_bits

    @property
    def rate(self):
        return 1.0 / self.n_out

    def code_length(self, n_info):
        return self.n_out * (n_info + self.memory)


CODE_57 = TrellisCode((0o5, 0o7), 3)


def conv_encode(info, code=CODE_57):
    """Encode bits (last axis), appending ``memory`` zero tail bits."""
    info = np.asarray(info, dtype=np.int64)
    lead = info.shape[:-1]
    u = np.concatenate([info, np.zeros(lead + (code.memory,), dtype=np.int64)], axis=-1)
    T = u.shape[-1]
    out = np.empty(lead + (T, code.n_out), dtype=np.int64)
    s = np.zeros(lead, dtype=np.int64)
    for t in range(T):
        ut = u[..., t]
        out[..., t, :] = code.out_bits[s, ut]
        s = code.next_state[s, ut]
    return out.reshape(lead + (T * code.n_out,))


@dataclass(frozen=True)
class Interleaver:
    perm: np.ndarray
    seed: int = None

    @classmethod
    def random(cls, length, rng=None, seed=None):
        if rng is None:
            rng = np.random.default_rng(seed)
        return cls(rng.permutation(length), seed)

    def __len__(self):
        return len(self.perm)

    def interleave(self, x):
        return np.asarray(x)[..., self.perm]

    def deinterleave(self, x):
        x = np.asarray(x)
        out = np.empty_like(x)
        out[..., self.perm] = x
        return out


LLR_INPUT_CAP = 1e6


def bcjr_decode(channel_llr, info_prior=None, code=CODE_57):
    """Exact log-MAP decoding of one or more zero-terminated frames.

    ``channel_llr`` has the code bits on the last axis. Returns
    ``(info_app, code_extrinsic)`` where ``code_extrinsic = APP - channel_llr``.
    Infinite input LLRs are capped at ``+-1e6``.
    """
    Lc = np.asarray(channel_llr, dtype=float)
    single = Lc.ndim == 1
    Lc = np.atleast_2d(Lc)
    B, ncode = Lc.shape
    if ncode % code.n_out:
        raise ValueError(f"code length {ncode} is not a multiple of {code.n_out}")
    n_info = ncode // code.n_out - code.memory
    if n_info < 1:
        raise ValueError(f"code length {ncode} too short for the trellis")
    if info_prior is None:
        La = np.zeros((B, n_info))
    else:
        La = np.atleast_2d(np.asarray(info_prior, dtype=float))
        if La.shape != (B, n_info):
            raise ValueError(f"info prior shape {La.shape} does not match ({B}, {n_info})")
    Lc = np.ascontiguousarray(np.clip(Lc, -LLR_INPUT_CAP, LLR_INPUT_CAP))
    La = np.ascontiguousarray(np.clip(La, -LLR_INPUT_CAP, LLR_INPUT_CAP))
    app, ext = kernels.bcjr_batch(Lc, La, code.next_state, code.out_sym, n_info)
    if single:
        return app[0], ext[0]
    return app, ext


# ---------------------------------------------------------------------------
# frames and the iterative receiver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CodedFrame:
    info: np.ndarray             # (K, n_info) bits
    code: np.ndarray             # (K, n_code) bits
    interleavers: tuple
    symbols: np.ndarray          # (K, n_code) BPSK after interleaving


@dataclass(frozen=True)
class CodedSystem:
    num_users: int = 28
    processing_gain: int = 16
    n_info: int = 1000
    eb_n0_db: float = 5.0
    seed: int = 0
    code: TrellisCode = field(default=CODE_57, repr=False)
    spreading_per_symbol: bool = False

    @property
    def sigma2(self):
        return noise_variance(self.eb_n0_db, rate=self.code.rate)


def make_frame(system, frame_index=0):
    """Draw info bits, interleavers, spreading and noise for one frame.

    Spreading is drawn once per frame unless ``spreading_per_symbol``.
    Returns ``(frame, instances)`` where ``instances`` is a single batched
    instance or a list of per-symbol instances.
    """
    rng = trial_rng(system.seed, frame_index)
    K, N, code = system.num_users, system.processing_gain, system.code
    info = rng.integers(0, 2, size=(K, system.n_info))
    cbits = conv_encode(info, code)
    n_code = cbits.shape[1]
    ils = tuple(Interleaver.random(n_code, rng) for _ in range(K))
    sym = np.stack([1.0 - 2.0 * il.interleave(c) for il, c in zip(ils, cbits)])
    frame = CodedFrame(info=info, code=cbits, interleavers=ils, symbols=sym)
    sigma2 = system.sigma2
    if system.spreading_per_symbol:
        insts = []
        for t in range(n_code):
            chips = rng.integers(0, 2, size=(N, K)) * 2 - 1
            noise = math.sqrt(sigma2) * rng.standard_normal(N)
            insts.append(instance_from_arrays(chips / math.sqrt(N), sym[:, t], noise, sigma2, chips=chips))
        return frame, insts
    chips = rng.integers(0, 2, size=(N, K)) * 2 - 1
    noise = math.sqrt(sigma2) * rng.standard_normal((N, n_code))
    return frame, instance_from_arrays(chips / math.sqrt(N), sym, noise, sigma2, chips=chips)


@dataclass(frozen=True)
class DecodeResult:
    ber: np.ndarray              # (n_iter, K) info-bit BER per user after each outer iteration
    errors: np.ndarray           # (n_iter, K) info-bit error counts
    n_info: int

    @property
    def ber_total(self):
        return self.errors.sum(axis=1) / (self.errors.shape[1] * self.n_info)


def _siso_all(insts, priors, cfg, variance):
    if not isinstance(insts, list):
        return siso_detect(insts, priors, cfg, variance=variance).extrinsic
    out = np.empty_like(priors)
    for t, inst in enumerate(insts):
        out[:, t] = siso_detect(inst, priors[:, t], cfg, variance=variance).extrinsic
    return out


def _matched_filter_y(insts):
    if isinstance(insts, list):
        return np.stack([inst.y for inst in insts], axis=1)
    return np.asarray(insts.y)


def iterative_decode(system, frame, insts, outer_iters=7, det_cfg=None, variance=None):
    """Alternate the multiuser SISO and per-user BCJR decoders.

    Extrinsic LLRs from the SISO are deinterleaved and used directly as
    the decoders' channel LLRs; decoder extrinsics are interleaved back as
    the SISO priors. ``outer_iters=0`` decodes hard matched-filter decisions
    once (LLR magnitude of the equivalent binary symmetric channel).
    """
    code = system.code
    K = system.num_users
    if det_cfg is None:
        det_cfg = default_siso_config(Kind.SSPDA)
    ils = frame.interleavers

    def decode(chan_interleaved):
        chan = np.stack([il.deinterleave(x) for il, x in zip(ils, chan_interleaved)])
        app, ext = bcjr_decode(chan, code=code)
        errs = np.count_nonzero((app < 0) != (frame.info == 1), axis=1)
        return errs, ext

    if outer_iters == 0:
        y = _matched_filter_y(insts)
        alpha = K / system.processing_gain
        p = norm.cdf(-1.0 / math.sqrt(system.sigma2 + alpha))
        mag = math.log((1.0 - p) / p) if p > 0 else LLR_CLIP
        errs, _ = decode(hard_decision(y) * min(mag, LLR_CLIP))
        errors = errs[None, :]
    else:
        priors = np.zeros_like(frame.symbols)
        rows = []
        for _ in range(outer_iters):
            lam_e = _siso_all(insts, priors, det_cfg, variance)
            errs, ext = decode(lam_e)
            rows.append(errs)
            priors = np.clip(np.stack([il.interleave(x) for il, x in zip(ils, ext)]),
                             -LLR_CLIP, LLR_CLIP)
        errors = np.array(rows)
    return DecodeResult(ber=errors / system.n_info, errors=errors, n_info=system.n_info)


def single_user_decode(system, frame_index=0, num_users=None):
    """BCJR over AWGN with exact channel LLRs ``2 y / sigma2``: the single-user reference.

    Each user of the frame sees an interference-free channel.
    """
    rng = trial_rng(system.seed, frame_index, 1)
    K = num_users or system.num_users
    info = rng.integers(0, 2, size=(K, system.n_info))
    cbits = conv_encode(info, system.code)
    x = 1.0 - 2.0 * cbits
    sigma2 = system.sigma2
    y = x + math.sqrt(sigma2) * rng.standard_normal(x.shape)
    app, _ = bcjr_decode(2.0 * y / sigma2, code=system.code)
    return np.count_nonzero((app < 0) != (info == 1), axis=1)
