"""Two-phase training: a search phase at fixed temperature, then a hardening
phase that anneals the temperature geometrically while ramping entropy and
binarity penalties, and finally snaps the selectors one-hot.

Gradients are full-batch; a trial owns its parameters and optimizer state, so
any number of trials can run concurrently against shared immutable specs and
datasets.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import analysis
from .arch import ArchitectureSpec, harden
from .diff import TrainingDivergence, grad_norms, loss_and_grad
from .expr import Expr
from .ops import Saturation
from .targets import Dataset


class InitStrategy(str, Enum):
    GAUSS_SMALL = "gauss_small"  # N(0, 0.1^2)
    GAUSS_WIDE = "gauss_wide"  # N(0, 0.5^2)
    UNIFORM_SYM = "uniform_sym"  # U(-1, 1)
    ZERO_CENTERED = "zero_centered"  # N(0, 0.01^2) jitter
    EQ6_PAPER = "eq6_paper"  # N(0, 0.1^2), no bias terms


# rng stream index per strategy, so (seed, strategy) fully determines the draw
STRATEGY_INDEX = {s: i for i, s in enumerate(InitStrategy)}

DEFAULT_SYMMETRIC_STRATEGIES = (
    InitStrategy.GAUSS_SMALL,
    InitStrategy.GAUSS_WIDE,
    InitStrategy.UNIFORM_SYM,
    InitStrategy.ZERO_CENTERED,
)

DEFAULT_TRACE_ITERS = (100, 500, 1000, 2000, 4000, 6000)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    search_iters: int = 6000
    harden_iters: int = 2000
    tau_start: float = 2.5
    tau_end: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    penalty_max: float = 0.1
    seed: int = 0
    init_strategy: InitStrategy = InitStrategy.EQ6_PAPER
    trace_iters: tuple[int, ...] = DEFAULT_TRACE_ITERS
    # Optional training-landscape stabilizers, all inert by default: a finite
    # exp_arg_max / nonzero ln_floor trains against bounded operator variants
    # (ops.Saturation), and grad_clip_norm > 0 clips the global gradient norm
    # before the Adam update.  They reshape which formulas the search finds,
    # so the defaults keep the plain protocol.
    exp_arg_max: float = math.inf
    ln_floor: float = 0.0
    grad_clip_norm: float = 0.0

    @property
    def saturation(self) -> Saturation | None:
        if math.isinf(self.exp_arg_max) and self.ln_floor == 0.0:
            return None
        return Saturation(self.exp_arg_max, self.ln_floor)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (self.tau_start > self.tau_end > 0):
            raise ValueError("need tau_start > tau_end > 0")
        if self.search_iters <= 0 or self.harden_iters <= 0:
            raise ValueError("iteration counts must be positive")

    def with_overrides(self, **kw) -> "TrainConfig":
        if "init_strategy" in kw:
            kw["init_strategy"] = InitStrategy(kw["init_strategy"])
        return replace(self, **kw)


@dataclass(frozen=True)
class TraceSample:
    iteration: int
    ratio: float
    grad_norm_x: float
    grad_norm_y: float


@dataclass(frozen=True)
class GradientTrace:
    samples: tuple[TraceSample, ...] = ()

    def at(self, iteration: int) -> TraceSample | None:
        for s in self.samples:
            if s.iteration == iteration:
                return s
        return None


@dataclass(frozen=True)
class TrialResult:
    hardened: Expr
    recovered: bool
    structural_match: bool
    rmse: float
    final_loss: float
    trace: GradientTrace
    seed: int
    init_strategy: InitStrategy
    wall_time: float = field(compare=False, default=0.0)
    diverged: bool = False


def init_params(spec: ArchitectureSpec, strategy: InitStrategy, rng) -> np.ndarray:
    n = spec.param_count
    strategy = InitStrategy(strategy)
    if strategy in (InitStrategy.EQ6_PAPER, InitStrategy.GAUSS_SMALL):
        return rng.normal(0.0, 0.1, n)
    if strategy is InitStrategy.GAUSS_WIDE:
        return rng.normal(0.0, 0.5, n)
    if strategy is InitStrategy.UNIFORM_SYM:
        return rng.uniform(-1.0, 1.0, n)
    return rng.normal(0.0, 0.01, n)  # ZERO_CENTERED


def tau_schedule(config: TrainConfig, k: int) -> float:
    """Temperature at hardening step k (0..harden_iters); the search phase
    stays at tau_start."""
    if k <= 0:
        return config.tau_start
    k = min(k, config.harden_iters)
    ratio = config.tau_end / config.tau_start
    return config.tau_start * ratio ** (k / config.harden_iters)


class Adam:
    """Plain Adam with bias correction, operating on one flat vector."""

    def __init__(self, n: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(n)
        self.v = np.zeros(n)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _rng_for(config: TrainConfig, stream: int):
    return np.random.default_rng(
        [int(config.seed) & 0x7FFFFFFFFFFFFFFF, STRATEGY_INDEX[config.init_strategy], stream]
    )


def run_trial(
    spec: ArchitectureSpec,
    dataset: Dataset,
    config: TrainConfig,
    telemetry_path=None,
) -> TrialResult:
    """Run one seeded trial end to end and verify the hardened expression
    against the dataset's target.  Divergence is recorded, never raised."""
    t0 = time.perf_counter()
    rng = _rng_for(config, 0)
    params = init_params(spec, config.init_strategy, rng)
    opt = Adam(
        spec.param_count,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    )
    sat = config.saturation
    clip = config.grad_clip_norm
    trace: list[TraceSample] = []
    trace_at = set(i for i in config.trace_iters if i <= config.search_iters)
    telemetry = _Telemetry(telemetry_path)
    diverged = False

    def clipped(g):
        norm = float(np.linalg.norm(g))
        if clip > 0 and norm > clip:
            return g * (clip / norm)
        return g

    try:
        for it in range(1, config.search_iters + 1):
            loss, grad = loss_and_grad(
                spec, params, config.tau_start, dataset, saturation=sat
            )
            if not math.isfinite(loss) or not np.isfinite(grad).all():
                diverged = True
                break
            if it in trace_at:
                gx, gy = grad_norms(grad, spec)
                ratio = gx / gy if gy > 0 else math.inf
                trace.append(TraceSample(it, ratio, gx, gy))
            telemetry.emit(it, loss, config.tau_start, grad, spec)
            params = opt.step(params, clipped(grad))

        if not diverged:
            for k in range(1, config.harden_iters + 1):
                tau = tau_schedule(config, k)
                weight = config.penalty_max * k / config.harden_iters
                loss, grad = loss_and_grad(
                    spec, params, tau, dataset, weight, saturation=sat
                )
                if not math.isfinite(loss) or not np.isfinite(grad).all():
                    diverged = True
                    break
                telemetry.emit(config.search_iters + k, loss, tau, grad, spec)
                params = opt.step(params, clipped(grad))
    except TrainingDivergence:
        diverged = True
    finally:
        telemetry.close()

    hardened = harden(spec, np.nan_to_num(params))
    recovered = False
    structural = False
    rmse = math.inf
    final_loss = math.inf
    if not diverged:
        try:
            verdict = analysis.exact_recovery(
                hardened, dataset.expr, _rng_for(config, 1)
            )
            recovered = verdict.numeric_match
            structural = verdict.structural_match
            rmse = verdict.rmse
        except analysis.VerificationImpossible:
            pass
        try:
            final_loss, _ = loss_and_grad(spec, params, config.tau_end, dataset)
        except TrainingDivergence:
            final_loss = math.inf

    return TrialResult(
        hardened=hardened,
        recovered=recovered,
        structural_match=structural,
        rmse=rmse,
        final_loss=final_loss,
        trace=GradientTrace(tuple(trace)),
        seed=config.seed,
        init_strategy=config.init_strategy,
        wall_time=time.perf_counter() - t0,
        diverged=diverged,
    )


class _Telemetry:
    """Optional per-iteration CSV stream for a single trial."""

    def __init__(self, path):
        self._fh = None
        self._writer = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(
                ["iteration", "loss", "tau", "ratio", "grad_norm_x", "grad_norm_y"]
            )

    def emit(self, iteration, loss, tau, grad, spec):
        if self._writer is None:
            return
        gx, gy = grad_norms(grad, spec)
        ratio = gx / gy if gy > 0 else math.inf
        self._writer.writerow([iteration, repr(loss), repr(tau), repr(ratio), repr(gx), repr(gy)])

    def close(self):
        if self._fh is not None:
            self._fh.close()
