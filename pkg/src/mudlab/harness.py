"""Monte Carlo experiment engine.

Every trial draws from its own stream ``trial_rng(seed, trial)``, and trials
are reduced in index order in fixed-size blocks, so results do not depend on
the number of worker threads. Sweeps stop at the first trial (in index order)
where the accumulated errors reach the target, or at the trial cap.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
import csv
import io
import math
import os
import time

import numpy as np

from . import analysis
from .coding import CodedSystem, iterative_decode, make_frame, single_user_decode
from .detectors import DetectorConfig, Kind, hard_decision, pspda_field, run_detector
from .model import SystemConfig, generate_instance, noise_variance, trial_rng
from .oracle import K_MAX, OracleCostError, approx_mai_covariance, exact_mai_covariance, exact_mpm
from .siso import default_siso_config

__all__ = [
    "MODES",
    "ExperimentSpec",
    "BerRecord",
    "MacroStatRecord",
    "ConvergenceRecord",
    "PdfExport",
    "CodedRecord",
    "wilson_interval",
    "worker_count",
    "run_uncoded_sweep",
    "run_macro_stats",
    "run_convergence_table",
    "run_pdf_export",
    "run_coded",
    "oracle_compare",
    "predict",
    "write_csv",
    "run_metadata",
    "CSV_SCHEMA",
]

MODES = ("uncoded-ber", "trajectory", "convergence-table", "macro-stats",
         "oracle-compare", "pdf-export", "coded-sim", "predict")

BLOCK = 8                    # trials per reduction block
CSV_SCHEMA = 1               # bumped whenever a record's columns change
Z95 = 1.959963984540054


def worker_count(threads=None):
    if threads is None:
        env = os.environ.get("MUDLAB_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def wilson_interval(errors, bits, z=Z95):
    """Wilson score interval for a binomial proportion."""
    if bits <= 0:
        return 0.0, 1.0
    p = errors / bits
    z2 = z * z
    den = 1.0 + z2 / bits
    mid = (p + z2 / (2 * bits)) / den
    half = z * math.sqrt(p * (1 - p) / bits + z2 / (4 * bits * bits)) / den
    lo = 0.0 if errors == 0 else max(0.0, mid - half)
    hi = 1.0 if errors == bits else min(1.0, mid + half)
    return lo, hi


# ---------------------------------------------------------------------------
# spec
# ---------------------------------------------------------------------------

def _tuple(x, cast=float):
    if isinstance(x, (list, tuple, np.ndarray)):
        return tuple(cast(v) for v in x)
    return (cast(x),)


@dataclass(frozen=True)
class ExperimentSpec:
    mode: str = "uncoded-ber"
    num_users: tuple = (64,)
    alpha: tuple = (1.0,)
    ebn0_db: tuple = (8.0,)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    seed: int = None
    min_errors: int = 100
    max_trials: int = 1000
    symbols_per_trial: int = 1
    stages: int = 10
    method: str = "both"             # predict: ra, sn, both, eq
    seed_groups: int = 10            # pdf-export
    trials_per_group: int = 20
    bins: int = 40
    outer_iters: int = 7             # coded-sim
    n_info: int = 1000
    processing_gain: int = None      # coded-sim and oracle-compare override N directly
    spreading_per_symbol: bool = False
    threads: int = None
    output: str = None

    def __post_init__(self):
        object.__setattr__(self, "num_users", _tuple(self.num_users, int))
        object.__setattr__(self, "alpha", _tuple(self.alpha))
        object.__setattr__(self, "ebn0_db", _tuple(self.ebn0_db))
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not (self.num_users and self.alpha and self.ebn0_db):
            raise ValueError("the sweep needs at least one point")
        if any(k < 1 for k in self.num_users):
            raise ValueError("number of users must be >= 1")
        if any(not a > 0 for a in self.alpha):
            raise ValueError("load alpha must be positive")
        if any(math.isnan(e) or e == math.inf for e in self.ebn0_db):
            raise ValueError("Eb/N0 must be finite or -inf")
        if int(self.min_errors) < 1:
            raise ValueError("error target must be >= 1")
        if int(self.max_trials) < 1:
            raise ValueError("trial cap must be >= 1")
        if int(self.symbols_per_trial) < 1:
            raise ValueError("symbols per trial must be >= 1")
        if int(self.stages) < 1:
            raise ValueError("stages must be >= 1")
        if self.method not in ("ra", "sn", "both", "eq"):
            raise ValueError(f"unknown prediction method {self.method!r}")
        if self.mode not in ("predict",) and self.seed is None:
            raise ValueError(f"mode {self.mode} needs an explicit seed")

    def with_(self, **changes):
        return replace(self, **changes)

    def systems(self, ebn0=None):
        """``SystemConfig`` for every (K, alpha, Eb/N0) sweep point, in order."""
        out = []
        for K in self.num_users:
            for a in self.alpha:
                for e in (self.ebn0_db if ebn0 is None else ebn0):
                    out.append(SystemConfig.from_load(K, a, e, self.seed))
        return out


# ---------------------------------------------------------------------------
# records and CSV
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BerRecord:
    K: int
    N: int
    alpha: float
    ebn0_db: float
    detector: str
    omega: float
    stage: int                      # 0 for the final decisions after convergence
    errors: int
    bits: int
    trials: int
    ber: float
    ci_low: float
    ci_high: float
    mean_iterations: float
    frac_max_iter: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class MacroStatRecord:
    K: int
    alpha: float
    ebn0_db: float
    stage: int                      # t of h^t; m^t is the estimate h^t is built from
    trials: int
    E: float
    F: float
    M: float
    Q: float
    U: float
    E_sn: float
    F_sn: float
    M_sn: float
    Q_sn: float
    U_sn: float


@dataclass(frozen=True)
class ConvergenceRecord:
    K: int
    alpha: float
    ebn0_db: float
    detector: str
    omega: float
    instances: int
    mean_iterations: float
    frac_max_iter: float


@dataclass(frozen=True)
class PdfExport:
    alpha: float
    edges: np.ndarray
    density_exact: np.ndarray
    density_approx: np.ndarray
    tv: float                       # pooled over all groups
    tv_groups: tuple                # one value per seed group


@dataclass(frozen=True)
class CodedRecord:
    K: int
    N: int
    ebn0_db: float
    detector: str
    outer_iter: int                 # 0: single-user reference
    errors: int
    bits: int
    frames: int
    ber: float
    median_ber: float
    ci_low: float
    ci_high: float


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(records, out=None, timing=False, columns=None, meta=None):
    """RFC-4180 CSV with a header row; ``wall_time`` only when ``timing``.

    ``meta`` holds run settings appended to every row as trailing columns.
    """
    rows = [r if isinstance(r, dict) else asdict(r) for r in records]
    if meta:
        rows = [{**r, **meta} for r in rows]
    if columns is None:
        if rows:
            columns = list(rows[0].keys())
        elif records is not None and hasattr(records, "__dataclass_fields__"):
            columns = [f.name for f in fields(records)]
        else:
            columns = []
    if meta:
        columns = [c for c in columns if c not in meta] + list(meta)
    if not timing:
        columns = [c for c in columns if c != "wall_time"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    text = buf.getvalue()
    if out is None:
        return text
    if hasattr(out, "write"):
        out.write(text)
        return text
    try:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write CSV to {out!r}: {exc}") from exc
    return text


def run_metadata(spec, detectors=None):
    """Trailing CSV columns that pin down a simulation run."""
    meta = dict(seed=spec.seed, min_errors=int(spec.min_errors), max_trials=int(spec.max_trials),
                symbols_per_trial=int(spec.symbols_per_trial))
    dets = detectors or [spec.detector]
    if spec.mode == "trajectory":
        meta.update(stages=int(spec.stages), init=dets[0].init.value)
    elif len(dets) == 1:
        meta.update(tol=float(dets[0].tol), max_iter=int(dets[0].max_iter), init=dets[0].init.value)
    meta["schema"] = CSV_SCHEMA
    return meta


# ---------------------------------------------------------------------------
# trial engine
# ---------------------------------------------------------------------------

def _run_blocks(trial_fn, stop_fn, max_trials, threads):
    """Evaluate ``trial_fn(i)`` in index order until ``stop_fn(result)`` or the cap.

    Blocks of ``BLOCK`` trials are computed (possibly concurrently) and then
    folded sequentially, so the set of trials kept never depends on threads.
    """
    kept = []
    nthreads = worker_count(threads)
    pool = ThreadPoolExecutor(nthreads) if nthreads > 1 else None
    try:
        start = 0
        while start < max_trials:
            idx = range(start, min(start + BLOCK, max_trials))
            res = list(pool.map(trial_fn, idx)) if pool else [trial_fn(i) for i in idx]
            for r in res:
                kept.append(r)
                if stop_fn(r):
                    return kept
            start += BLOCK
    finally:
        if pool:
            pool.shutdown()
    return kept


class _ErrorTarget:
    def __init__(self, target, key):
        self.target = target
        self.key = key
        self.total = 0

    def __call__(self, r):
        self.total += self.key(r)
        return self.total >= self.target


def _uncoded_trial(cfg, det, spt, stages):
    """One trial; returns per-stage error counts (or just the final ones)."""
    def fn(i):
        inst = generate_instance(cfg, trial=i, symbols=spt)
        d = np.asarray(inst.d).reshape(inst.K, -1)
        if stages:
            errs = np.zeros(stages, dtype=np.int64)

            def on_step(t, prev, new):
                errs[t - 1] = np.count_nonzero(hard_decision(new) != d)

            res = run_detector(inst, None, det.with_(max_iter=stages, tol=np.finfo(float).tiny),
                               on_step=on_step)
            if math.isinf(inst.sigma2):
                errs[:] = np.count_nonzero(hard_decision(res.m).reshape(d.shape) != d)
        else:
            res = run_detector(inst, None, det)
            errs = np.array([np.count_nonzero(hard_decision(res.m).reshape(d.shape) != d)])
        return errs, res.column_iterations, d.size
    return fn


def run_uncoded_sweep(spec, trajectory=None):
    """BER per sweep point; in trajectory mode one record per detector stage.

    Trajectory mode runs exactly ``spec.stages`` iterations with no early stop
    and stops trials on the last stage's errors.
    """
    if trajectory is None:
        trajectory = spec.mode == "trajectory"
    det = spec.detector
    stages = int(spec.stages) if trajectory else 0
    out = []
    for cfg in spec.systems():
        t0 = time.perf_counter()
        fn = _uncoded_trial(cfg, det, int(spec.symbols_per_trial), stages)
        stop = _ErrorTarget(int(spec.min_errors), lambda r: int(r[0][-1]))
        kept = _run_blocks(fn, stop, int(spec.max_trials), spec.threads)
        errs = np.sum([r[0] for r in kept], axis=0)
        bits = int(sum(r[2] for r in kept))
        iters = np.concatenate([r[1] for r in kept])
        cap = det.max_iter if not trajectory else stages
        mean_it = float(np.mean(iters))
        frac = float(np.mean(iters >= cap))
        wall = time.perf_counter() - t0
        for s, e in enumerate(errs):
            e = int(e)
            lo, hi = wilson_interval(e, bits)
            out.append(BerRecord(
                K=cfg.num_users, N=cfg.processing_gain, alpha=cfg.alpha, ebn0_db=cfg.eb_n0_db,
                detector=det.kind.value, omega=det.omega, stage=s + 1 if trajectory else 0,
                errors=e, bits=bits, trials=len(kept), ber=e / bits, ci_low=lo, ci_high=hi,
                mean_iterations=mean_it, frac_max_iter=frac, wall_time=wall))
    return out


# ---------------------------------------------------------------------------
# macro statistics
# ---------------------------------------------------------------------------

def _sech2(x):
    c = np.cosh(np.clip(x, -350.0, 350.0))
    return 1.0 / (c * c)


def _macro_trial(cfg, stages, spt):
    def fn(i):
        inst = generate_instance(cfg, trial=i, symbols=spt)
        d = np.asarray(inst.d).reshape(inst.K, -1)
        m = np.zeros_like(d)
        u_prev = np.ones(d.shape[1])
        rows = np.empty((stages, 5))
        for t in range(stages):
            h = pspda_field(inst, m if inst.batched else m[:, 0]).reshape(d.shape)
            E = np.mean(d * h, axis=0)
            F = np.mean(h * h, axis=0) - E * E
            rows[t] = [E.mean(), F.mean(), np.mean(d * m), np.mean(m * m), u_prev.mean()]
            u_prev = np.mean(_sech2(h), axis=0)
            m = np.tanh(h)
        return rows
    return fn


def run_macro_stats(spec):
    """Per-stage sample estimates of ``(E, F, M, Q, U)`` along the undamped PSPDA path.

    For stage ``t`` (``m^0 = 0``): ``E = mean d h^t``, ``F = mean (h^t)^2 - E^2``,
    ``M = mean d m^t``, ``Q = mean (m^t)^2`` and ``U = mean sech^2(h^{t-1})``
    (``U^0 = 1``), averaged over users, symbol intervals and then trials.
    Exactly ``max_trials`` trials are used.
    """
    if spec.detector.kind is not Kind.PSPDA or spec.detector.omega != 0:
        raise ValueError("macro statistics follow the undamped PSPDA (omega = 0)")
    stages = int(spec.stages)
    out = []
    for cfg in spec.systems():
        fn = _macro_trial(cfg, stages, int(spec.symbols_per_trial))
        kept = _run_blocks(fn, lambda r: False, int(spec.max_trials), spec.threads)
        avg = np.mean(kept, axis=0)
        sn = analysis.sn_trajectory(cfg.alpha, cfg.sigma2, stages)
        for t in range(stages):
            p = sn[t]
            out.append(MacroStatRecord(
                K=cfg.num_users, alpha=cfg.alpha, ebn0_db=cfg.eb_n0_db, stage=t, trials=len(kept),
                E=avg[t, 0], F=avg[t, 1], M=avg[t, 2], Q=avg[t, 3], U=avg[t, 4],
                E_sn=p.E, F_sn=p.F, M_sn=p.M, Q_sn=p.Q, U_sn=p.U))
    return out


# ---------------------------------------------------------------------------
# convergence table
# ---------------------------------------------------------------------------

def run_convergence_table(spec, detectors=None):
    """Mean iterations to ``max|dm| < tol`` per sweep point and detector, over ``max_trials`` trials."""
    detectors = detectors or [spec.detector]
    out = []
    for cfg in spec.systems():
        for det in detectors:
            def fn(i, det=det, cfg=cfg):
                inst = generate_instance(cfg, trial=i, symbols=int(spec.symbols_per_trial))
                return run_detector(inst, None, det).column_iterations
            kept = _run_blocks(fn, lambda r: False, int(spec.max_trials), spec.threads)
            iters = np.concatenate(kept)
            out.append(ConvergenceRecord(
                K=cfg.num_users, alpha=cfg.alpha, ebn0_db=cfg.eb_n0_db, detector=det.kind.value,
                omega=det.omega, instances=len(iters), mean_iterations=float(np.mean(iters)),
                frac_max_iter=float(np.mean(iters >= det.max_iter))))
    return out


# ---------------------------------------------------------------------------
# covariance histograms
# ---------------------------------------------------------------------------

def _offdiag_pairs(inst, post):
    N = inst.N
    iu = np.triu_indices(N, 1)
    ex, ap = [], []
    for k in range(inst.K):
        ex.append(exact_mai_covariance(inst, k, post)[iu])
        ap.append(approx_mai_covariance(inst, k, post.m)[iu])
    return np.concatenate(ex), np.concatenate(ap)


def _tv(a, b, edges):
    pa = np.histogram(a, edges)[0].astype(float)
    pb = np.histogram(b, edges)[0].astype(float)
    return 0.5 * float(np.sum(np.abs(pa / pa.sum() - pb / pb.sum())))


def run_pdf_export(spec):
    """Histograms of off-diagonal MAI covariance entries, exact vs cross-term dropped.

    Both use the exact posterior means; the approximation omits the
    ``E{d_j d_l} - m_j m_l`` term. Entries of all users' covariance matrices
    are pooled. Bins are shared by the two histograms at each load (``bins``
    equal-width bins over the pooled range) and the total-variation distance
    ``0.5 sum |p - q|`` of the bin masses is reported overall and per seed
    group. Eb/N0 is the first sweep value.
    """
    K = spec.num_users[0]
    if K > K_MAX:
        raise OracleCostError(f"K={K} exceeds the oracle limit K_max={K_MAX}")
    eb = spec.ebn0_db[0]
    out = []
    for ai, a in enumerate(spec.alpha):
        cfg = SystemConfig.from_load(K, a, eb, spec.seed)
        groups = []
        for g in range(int(spec.seed_groups)):
            ex, ap = [], []
            for j in range(int(spec.trials_per_group)):
                rng = trial_rng(spec.seed, ai, g, j)
                inst = generate_instance(cfg, rng=rng)
                post = exact_mpm(inst)
                e, p = _offdiag_pairs(inst, post)
                ex.append(e)
                ap.append(p)
            groups.append((np.concatenate(ex), np.concatenate(ap)))
        allx = np.concatenate([x for x, _ in groups])
        allp = np.concatenate([p for _, p in groups])
        lo = min(allx.min(), allp.min()) if allx.size else -1.0
        hi = max(allx.max(), allp.max()) if allx.size else 1.0
        if not hi > lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, int(spec.bins) + 1)
        tv_groups = tuple(_tv(x, p, edges) if x.size else 0.0 for x, p in groups)
        if allx.size:
            dx = np.histogram(allx, edges, density=True)[0]
            dp = np.histogram(allp, edges, density=True)[0]
            tv = _tv(allx, allp, edges)
        else:
            # a single user has no interferers: all mass at zero
            dx = dp = np.zeros(len(edges) - 1)
            dx[np.searchsorted(edges, 0.0, side="right") - 1] = 1.0 / np.diff(edges)[0]
            tv = 0.0
        out.append(PdfExport(a, edges, dx, dp, tv, tv_groups))
    return out


def pdf_rows(exports):
    rows = []
    for ex in exports:
        for i in range(len(ex.edges) - 1):
            rows.append(dict(alpha=ex.alpha, bin_left=float(ex.edges[i]), bin_right=float(ex.edges[i + 1]),
                             density_exact=float(ex.density_exact[i]),
                             density_approx=float(ex.density_approx[i])))
    return rows


# ---------------------------------------------------------------------------
# coded system
# ---------------------------------------------------------------------------

def run_coded(spec, single_user=True):
    """Iterative multiuser decoding frame by frame until the error target or frame cap.

    The stop test counts final-iteration info-bit errors. With
    ``single_user`` a matching number of single-user AWGN frames is decoded
    as the reference (``outer_iter = 0`` in the output).
    """
    det = default_siso_config(spec.detector.kind)
    N = spec.processing_gain or 16
    out = []
    for K in spec.num_users:
        for eb in spec.ebn0_db:
            system = CodedSystem(num_users=K, processing_gain=N, n_info=int(spec.n_info),
                                 eb_n0_db=eb, seed=spec.seed,
                                 spreading_per_symbol=spec.spreading_per_symbol)

            def fn(f, system=system):
                frame, insts = make_frame(system, f)
                res = iterative_decode(system, frame, insts, int(spec.outer_iters), det)
                su = single_user_decode(system, f) if single_user else None
                return res.errors, su

            stop = _ErrorTarget(int(spec.min_errors), lambda r: int(r[0][-1].sum()))
            kept = _run_blocks(fn, stop, int(spec.max_trials), spec.threads)
            errs = np.stack([r[0] for r in kept])            # (frames, iters, K)
            bits = errs.shape[0] * K * system.n_info
            per_frame = errs.sum(axis=2) / (K * system.n_info)
            rows = [(i + 1, errs[:, i].sum(), np.median(per_frame[:, i])) for i in range(errs.shape[1])]
            if single_user:
                su = np.stack([r[1] for r in kept])
                rows.insert(0, (0, su.sum(), np.median(su.sum(axis=1) / (K * system.n_info))))
            for it, e, med in rows:
                e = int(e)
                lo, hi = wilson_interval(e, bits)
                out.append(CodedRecord(K=K, N=N, ebn0_db=eb, detector=det.kind.value, outer_iter=it,
                                       errors=e, bits=bits, frames=len(kept), ber=e / bits,
                                       median_ber=float(med), ci_low=lo, ci_high=hi))
    return out


# ---------------------------------------------------------------------------
# oracle comparison and predictions
# ---------------------------------------------------------------------------

def oracle_compare(K, N, ebn0_db, seed, trial=0, tol=1e-6):
    """Per-user exact conditional means next to converged PDA and SSPDA estimates."""
    cfg = SystemConfig(K, N, ebn0_db, seed)
    inst = generate_instance(cfg, trial=trial)
    post = exact_mpm(inst, pairs=False)
    m_pda = run_detector(inst, None, DetectorConfig(kind=Kind.PDA_FULL, tol=tol)).m
    m_ss = run_detector(inst, None, DetectorConfig(kind=Kind.SSPDA, tol=tol)).m
    return [dict(user=k + 1, m_oracle=float(post.m[k]), m_pda=float(m_pda[k]), m_sspda=float(m_ss[k]),
                 abs_gap=float(abs(m_pda[k] - post.m[k]))) for k in range(K)]


PREDICT_COLUMNS = ["alpha", "ebn0_db", "omega", "stage", "M", "Q", "E", "F", "U", "ber", "method"]


def predict(alphas, ebn0s, stages=10, method="both", omega=0.0):
    """Rows of large-system predictions; ``stage`` is 1-based (empty for steady states)."""
    rows = []
    for a in alphas:
        for e in ebn0s:
            s2 = noise_variance(e)
            traj = []
            if method in ("ra", "both"):
                traj += analysis.ra_trajectory(a, s2, stages, omega=omega)
            if method in ("sn", "both"):
                traj += analysis.sn_trajectory(a, s2, stages, omega=omega)
            if method == "eq":
                srch = analysis.find_equilibria(a, s2)
                if srch.best is None:
                    raise RuntimeError(f"no equilibrium converged at alpha={a}, Eb/N0={e}")
                traj.append(srch.best.as_state())
            for st in traj:
                rows.append(dict(alpha=a, ebn0_db=e, omega=omega,
                                 stage="" if st.stage is None else st.stage,
                                 M=float(st.M), Q=float(st.Q), E=float(st.E), F=float(st.F),
                                 U=float(st.U), ber=float(st.ber), method=st.method))
    return rows
