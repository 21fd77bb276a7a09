"""Desk-scale experiments. Each ``run_*`` function returns a result object
and, when ``spec.output_path`` is set, writes the experiment's CSV.

CSV schemas (one header row, fixed columns):

* ackley: ``optimizer, scale_factor, step, x0 .. x{d-1}, f, update_flag, jump``.
  Row ``step = t`` holds the iterate entering step ``t``; row 0 is the start
  point and ``jump`` is ``||x_t - x_{t-1}||`` (0 in row 0).
* contraction: ``step, p_norm, ratio`` for ``t = 0 .. steps``.
* mlp: ``optimizer, seed, step, loss`` for ``t = 0 .. steps`` (loss before
  update ``t``, the last row is the final loss). A diverged run stops early.
* ablation: ``variant, seed, initial_loss, final_loss, diverged``.
* complexity: ``rank, n, method, median_seconds, reps``.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..engine import Optimizer, SubTrackConfig
from ..subspace import geodesic_step, init_from_gradient, residual_and_coeffs, tangent_rank1
from .csvio import StepLogWriter, write_csv
from .functions import ackley, ackley_grad
from .spec import ExperimentSpec, warmup_alpha

logger = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6

__all__ = [
    "ABLATION_VARIANTS",
    "AckleyRun",
    "AblationResult",
    "ComplexityResult",
    "ContractionTrace",
    "MlpRun",
    "run_ablation_experiment",
    "run_ackley_experiment",
    "run_complexity_smoke",
    "run_contraction_experiment",
    "run_experiment",
    "run_mlp_experiment",
    "loglog_slope",
    "sign_test_pvalue",
]


def _alpha_for(spec: ExperimentSpec, cfg: SubTrackConfig, t: int) -> float | None:
    warm = int(spec.option("warmup"))
    return warmup_alpha(cfg.alpha, t, warm) if warm > 0 else None


# --- Ackley --------------------------------------------------------------

@dataclass
class AckleyRun:
    optimizer: str
    scale_factor: float
    xs: np.ndarray  # (steps + 1, d) iterates, xs[0] is the start
    fs: np.ndarray  # (steps + 1,)
    update_flags: np.ndarray  # (steps,)
    jumps: np.ndarray  # (steps,) ||x_{t+1} - x_t||

    @property
    def final_f(self) -> float:
        return float(self.fs[-1])

    @property
    def max_jump(self) -> float:
        return float(self.jumps.max())


def _ackley_single(spec: ExperimentSpec, method: str, scale: float, log: StepLogWriter | None) -> AckleyRun:
    shape = tuple(spec.option("shape"))
    start = np.asarray(spec.option("start"), dtype=np.float64)
    if start.size != int(np.prod(shape)):
        raise ValueError(f"start has {start.size} values, shape {shape} needs {int(np.prod(shape))}")
    cfg = replace(spec.cfg, scale=scale)
    noise = float(spec.option("noise"))
    rng = np.random.default_rng(spec.seed)
    flags: list[bool] = []

    def capture(rec):
        flags.append(rec.subspace_updated)
        if log is not None:
            log.sink(f"{method}@{scale:g}")(rec)

    opt = Optimizer(cfg, method, sink=capture)
    W = start.reshape(shape).copy()
    xs = [W.ravel().copy()]
    for t in range(spec.steps):
        G = ackley_grad(W)
        if noise > 0:
            G = G + noise * rng.normal(size=G.shape)
        W = opt.step({"W": W}, {"W": G}, alpha=_alpha_for(spec, cfg, t))["W"]
        xs.append(W.ravel().copy())
    xs = np.array(xs)
    fs = np.array([ackley(x) for x in xs])
    jumps = np.linalg.norm(np.diff(xs, axis=0), axis=1)
    return AckleyRun(method, scale, xs, fs, np.array(flags, dtype=bool), jumps)


def run_ackley_experiment(spec: ExperimentSpec, step_log: StepLogWriter | None = None) -> list[AckleyRun]:
    """Ackley trajectories for tracking and periodic-SVD projection.

    With ``spec.optimizer`` set, a single trajectory at ``spec.cfg.scale`` is
    produced. Otherwise subtrack and galore_like both run at every value in
    the ``scale_factors`` option.
    """
    if spec.optimizer is not None:
        plan = [(spec.optimizer, spec.cfg.scale)]
    else:
        plan = [(m, float(s)) for m in ("subtrack", "galore_like") for s in spec.option("scale_factors")]
    runs = [_ackley_single(spec, m, s, step_log) for m, s in plan]
    if spec.output_path is not None:
        d = runs[0].xs.shape[1]
        header = ["optimizer", "scale_factor", "step", *[f"x{i}" for i in range(d)], "f", "update_flag", "jump"]
        rows = []
        for run in runs:
            for t in range(spec.steps):
                jump = 0.0 if t == 0 else float(run.jumps[t - 1])
                rows.append([run.optimizer, run.scale_factor, t, *run.xs[t], run.fs[t], bool(run.update_flags[t]), jump])
        write_csv(spec.output_path, header, rows)
    return runs


# --- contraction -----------------------------------------------------------

@dataclass
class ContractionTrace:
    norms: np.ndarray  # ||P_t||_F for t = 0 .. steps
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W0: np.ndarray
    S_left: np.ndarray
    S_right: np.ndarray
    mu: float
    kappa: float
    burn_in: int

    @property
    def predicted_factor(self) -> float:
        return 1.0 - self.mu * self.kappa

    @property
    def ratio(self) -> float:
        return float(self.norms[-1] / self.norms[0])

    @property
    def monotone_after_burn_in(self) -> bool:
        tail = self.norms[self.burn_in :]
        return bool(np.all(np.diff(tail) < 0)) if tail.size > 1 else True

    def fitted_factor(self) -> float:
        """Geometric rate from a log-linear fit over the second half of the trace.

        Points below ``1e-12`` times the start are dropped so the rounding
        floor of the model (about ``1e-16`` relative) never enters the fit.
        Returns 1.0 when the trace is constant.
        """
        norms = self.norms
        if norms[0] == 0 or np.all(norms == norms[0]):
            return 1.0
        keep = np.flatnonzero(norms > 1e-12 * norms[0])
        last = int(keep[-1])
        first = max(self.burn_in, last // 2)
        if last - first < 2:
            first = max(0, last - 2)
        t = np.arange(first, last + 1)
        slope = np.polyfit(t, np.log(norms[first : last + 1]), 1)[0]
        return float(math.exp(slope))

    def fitted_kappa(self) -> float:
        return (1.0 - self.fitted_factor()) / self.mu if self.mu > 0 else float("nan")


def _spd(rng, k, lo=1.0, hi=3.0):
    Q, _ = np.linalg.qr(rng.normal(size=(k, k)))
    return (Q * rng.uniform(lo, hi, k)) @ Q.T


def _orthonormal(rng, m, r):
    Q, _ = np.linalg.qr(rng.normal(size=(m, r)))
    return Q


def run_contraction_experiment(spec: ExperimentSpec, mu: float | None = None) -> ContractionTrace:
    """Projected gradient descent on ``G = A + B W C`` with fixed bases.

    The update is ``W <- W - mu S_l P S_r^T`` with ``P = S_l^T G S_r``, so
    ``P`` obeys ``P' = P - mu B_hat P C_hat`` where ``B_hat = S_l^T B S_l``
    and ``C_hat = S_r^T C S_r``. Its slowest mode decays at
    ``1 - mu kappa`` with ``kappa = lambda_min(B_hat) lambda_min(C_hat)``.
    The default step is ``mu = 0.01 / kappa`` (predicted factor 0.99), which
    satisfies the stability bound ``mu lambda_max(B_hat) lambda_max(C_hat) < 2``
    whenever the eigenvalues of ``B`` and ``C`` lie in ``[1, 3]``, and keeps
    2000 steps above the rounding floor.
    """
    m, n, r = int(spec.option("rows")), int(spec.option("cols")), spec.cfg.rank
    if r > min(m, n):
        raise ValueError(f"rank {r} exceeds min(rows, cols) = {min(m, n)}")
    rng = np.random.default_rng(spec.seed)
    B = _spd(rng, m)
    C = _spd(rng, n)
    Sl = _orthonormal(rng, m, r)
    Sr = _orthonormal(rng, n, r)
    A = rng.normal(size=(m, n)) if spec.option("offset") else np.zeros((m, n))
    W0 = Sl @ rng.normal(size=(r, r)) @ Sr.T
    eb = np.linalg.eigvalsh(Sl.T @ B @ Sl)
    ec = np.linalg.eigvalsh(Sr.T @ C @ Sr)
    kappa = float(eb[0] * ec[0])
    if mu is None:
        mu = spec.option("mu")
    if mu is None:
        mu = 0.01 / kappa
    if mu < 0:
        raise ValueError(f"mu must be >= 0, got {mu}")

    W = W0.copy()
    norms = np.empty(spec.steps + 1)
    for t in range(spec.steps + 1):
        P = Sl.T @ (A + B @ W @ C) @ Sr
        norms[t] = np.linalg.norm(P)
        if t < spec.steps:
            W = W - mu * (Sl @ P @ Sr.T)
    trace = ContractionTrace(norms, A, B, C, W0, Sl, Sr, float(mu), kappa, int(spec.option("burn_in")))
    if spec.output_path is not None:
        rows = [(t, v, v / norms[0] if norms[0] > 0 else 0.0) for t, v in enumerate(norms)]
        write_csv(spec.output_path, ["step", "p_norm", "ratio"], rows)
    return trace


# --- tiny MLP ---------------------------------------------------------------

D_IN, D_HIDDEN, D_TEACHER = 64, 32, 16


def make_mlp_task(seed: int, samples: int = 2048, noise: float = 0.1):
    """Seeded regression task: a random tanh teacher plus label noise.

    Returns ``(X, y, params)`` where ``params`` is the student initialization
    (``W1`` is ``32 x 64``, the only matrix large enough for low-rank
    treatment; ``b1``, ``W2`` and ``b2`` use dense Adam).
    """
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(samples, D_IN))
    W_teacher = rng.normal(size=(D_TEACHER, D_IN)) * (2.0 / np.sqrt(D_IN))
    v_teacher = rng.normal(size=(1, D_TEACHER))
    y = np.tanh(X @ W_teacher.T) @ v_teacher.T + noise * rng.normal(size=(samples, 1))
    params = {
        "W1": rng.normal(size=(D_HIDDEN, D_IN)) / np.sqrt(D_IN),
        "b1": np.zeros(D_HIDDEN),
        "W2": rng.normal(size=(1, D_HIDDEN)) / np.sqrt(D_HIDDEN),
        "b2": np.zeros(1),
    }
    return X, y, params


def mlp_loss_and_grads(params, X, y):
    """Half mean squared error of ``tanh(X W1^T + b1) W2^T + b2`` and its gradients."""
    H = np.tanh(X @ params["W1"].T + params["b1"])
    err = H @ params["W2"].T + params["b2"] - y
    loss = 0.5 * float(np.mean(err * err))
    d_out = err / len(y)
    d_hidden = (d_out @ params["W2"]) * (1.0 - H * H)
    grads = {
        "W1": d_hidden.T @ X,
        "b1": d_hidden.sum(axis=0),
        "W2": d_out.T @ H,
        "b2": d_out.sum(axis=0),
    }
    return loss, grads


@dataclass
class MlpRun:
    label: str
    seed: int
    losses: list = field(default_factory=list)
    diverged: bool = False

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


def _train_mlp(label: str, method: str, cfg: SubTrackConfig, seed: int, steps: int, samples: int, warmup: int) -> MlpRun:
    X, y, params = make_mlp_task(seed, samples)
    opt = Optimizer(cfg, method)
    run = MlpRun(label, seed)
    for t in range(steps + 1):
        loss, grads = mlp_loss_and_grads(params, X, y)
        run.losses.append(loss)
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            run.diverged = True
            logger.warning("%s seed %d diverged at step %d (loss %g)", label, seed, t, loss)
            break
        if t < steps:
            alpha = warmup_alpha(cfg.alpha, t, warmup) if warmup > 0 else None
            params = opt.step(params, grads, alpha=alpha)
    return run


def _train_job(job):
    return _train_mlp(*job)


def _run_jobs(jobs, workers: int) -> list[MlpRun]:
    if workers <= 1 or len(jobs) <= 1:
        return [_train_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves job order, so output does not depend on scheduling.
        return list(pool.map(_train_job, jobs))


def _seeds(spec: ExperimentSpec) -> list[int]:
    return [spec.seed + i for i in range(int(spec.option("seeds")))]


def run_mlp_experiment(spec: ExperimentSpec) -> list[MlpRun]:
    """Train the tiny MLP with one or all optimizers under identical budgets."""
    methods = [spec.optimizer] if spec.optimizer else ["subtrack", "galore_like", "full_adam"]
    samples, warmup = int(spec.option("samples")), int(spec.option("warmup"))
    jobs = [(m, m, spec.cfg, s, spec.steps, samples, warmup) for m in methods for s in _seeds(spec)]
    runs = _run_jobs(jobs, int(spec.option("workers")))
    if spec.output_path is not None:
        rows = [(run.label, run.seed, t, loss) for run in runs for t, loss in enumerate(run.losses)]
        write_csv(spec.output_path, ["optimizer", "seed", "step", "loss"], rows)
    return runs


# Label, engine method, config switches.
ABLATION_VARIANTS = (
    ("subtrack++", "subtrack", {}),
    ("tracking+pao", "subtrack", {"recovery_enabled": False}),
    ("tracking+recovery", "subtrack", {"pao_enabled": False}),
    ("tracking", "subtrack", {"recovery_enabled": False, "pao_enabled": False}),
    ("galore_like", "galore_like", {}),
    ("full_adam", "full_adam", {}),
)


def sign_test_pvalue(wins: int, trials: int) -> float:
    """One-sided binomial sign test: P(X >= wins) for X ~ Bin(trials, 1/2)."""
    return sum(math.comb(trials, k) for k in range(wins, trials + 1)) / 2**trials


@dataclass
class AblationResult:
    runs: dict  # label -> list[MlpRun] in seed order

    def finals(self, label: str) -> np.ndarray:
        return np.array([r.final_loss for r in self.runs[label]])

    def median(self, label: str) -> float:
        return float(np.median(self.finals(label)))

    def wins(self, better: str, worse: str) -> int:
        """Number of seeds where ``better`` ends with a loss ``<=`` that of ``worse``."""
        return int(np.sum(self.finals(better) <= self.finals(worse)))

    def orderings(self) -> dict[str, bool]:
        med = self.median
        return {
            "subtrack++ <= tracking+pao": med("subtrack++") <= med("tracking+pao"),
            "tracking+pao <= tracking": med("tracking+pao") <= med("tracking"),
            "subtrack++ <= tracking+recovery": med("subtrack++") <= med("tracking+recovery"),
            "tracking+recovery <= tracking": med("tracking+recovery") <= med("tracking"),
            "subtrack++ <= 1.10 x full_adam": med("subtrack++") <= 1.10 * med("full_adam"),
        }


def run_ablation_experiment(spec: ExperimentSpec) -> AblationResult:
    """Switch tracking, projection-aware moments and recovery on and off."""
    samples, warmup = int(spec.option("samples")), int(spec.option("warmup"))
    seeds = _seeds(spec)
    jobs = []
    for label, method, switches in ABLATION_VARIANTS:
        cfg = replace(spec.cfg, **switches)
        jobs.extend((label, method, cfg, s, spec.steps, samples, warmup) for s in seeds)
    flat = _run_jobs(jobs, int(spec.option("workers")))
    runs: dict[str, list[MlpRun]] = {}
    for run in flat:
        runs.setdefault(run.label, []).append(run)
    if spec.output_path is not None:
        rows = [(r.label, r.seed, r.losses[0], r.final_loss, r.diverged) for r in flat]
        write_csv(spec.output_path, ["variant", "seed", "initial_loss", "final_loss", "diverged"], rows)
    return AblationResult(runs)


# --- complexity -------------------------------------------------------------

def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


@dataclass
class ComplexityResult:
    sizes: tuple
    ranks: tuple
    medians: dict  # (method, rank, n) -> seconds

    def series(self, method: str, rank: int) -> np.ndarray:
        return np.array([self.medians[method, rank, n] for n in self.sizes])

    def slope(self, method: str, rank: int) -> float:
        return loglog_slope(self.sizes, self.series(method, rank))


def _median_time(fn, reps: int) -> float:
    fn()  # warm caches and lazy imports
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run_complexity_smoke(spec: ExperimentSpec) -> ComplexityResult:
    """Median wall time of one tracking update versus one SVD re-initialization.

    ``spec.steps`` is the number of timed repetitions per point.
    """
    m = int(spec.option("rows"))
    sizes = tuple(int(n) for n in spec.option("sizes"))
    ranks = tuple(int(r) for r in spec.option("ranks"))
    rng = np.random.default_rng(spec.seed)
    eta = spec.cfg.eta
    medians = {}
    for r in ranks:
        for n in sizes:
            G = rng.normal(size=(m, n))
            S = init_from_gradient(rng.normal(size=(m, n)), r)

            def track():
                A, R = residual_and_coeffs(S, G)
                geodesic_step(S, tangent_rank1(R, A), eta)

            def reinit():
                init_from_gradient(G, r)

            medians["tracking", r, n] = _median_time(track, spec.steps)
            medians["svd", r, n] = _median_time(reinit, spec.steps)
    result = ComplexityResult(sizes, ranks, medians)
    if spec.output_path is not None:
        rows = [(r, n, meth, medians[meth, r, n], spec.steps) for r in ranks for n in sizes for meth in ("tracking", "svd")]
        write_csv(spec.output_path, ["rank", "n", "method", "median_seconds", "reps"], rows)
    return result


def run_experiment(spec: ExperimentSpec, step_log: StepLogWriter | None = None):
    """Dispatch on ``spec.experiment``."""
    if spec.experiment == "ackley":
        return run_ackley_experiment(spec, step_log)
    if spec.experiment == "contraction":
        return run_contraction_experiment(spec)
    if spec.experiment == "mlp":
        return run_mlp_experiment(spec)
    if spec.experiment == "ablation":
        return run_ablation_experiment(spec)
    return run_complexity_smoke(spec)
