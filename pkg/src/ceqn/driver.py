"""Outer-loop orchestration: pairs, operator rebuilds, engine steps, telemetry.

One driver owns one run: it wraps the (immutable, shareable) problem in a
counting oracle, rebuilds the inverse-Hessian operator every iteration from
sampled or historical curvature pairs, delegates the step to the configured
engine, and records one trace row per executed iteration. Runs are
deterministic given (problem, config): the seed feeds a private generator
used only for direction sampling, and wall-clock time is the sole
nondeterministic trace column.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .hessian import (
    KIND_EXACT,
    STRATEGY_HISTORY,
    STRATEGY_SAMPLED,
    ApproxConfig,
    CurvaturePair,
    DenseInverseOperator,
    PairBuffer,
    ScaledIdentityOperator,
    rebuild_operator,
    sample_pairs,
)
from .problems import CountingOracle, ProblemOracle, Vector
from .steps import (
    MODE_DUAL,
    MODE_REG,
    AdaptiveParams,
    CeqnParams,
    IndefiniteOperatorError,
    StepResult,
    adaptive_iteration,
    ceqn_step,
    fixed_step_iteration,
)

METHOD_CEQN = "CEQN"
METHOD_ADAPTIVE_DUAL = "ADAPTIVE_DUAL"
METHOD_ADAPTIVE_REG = "ADAPTIVE_REG"
METHOD_FIXED = "FIXED"
METHODS = (METHOD_CEQN, METHOD_ADAPTIVE_DUAL, METHOD_ADAPTIVE_REG, METHOD_FIXED)

TERM_GRAD_TOL = "GRAD_TOL"
TERM_MAX_ITERS = "MAX_ITERS"
TERM_TIMEOUT = "TIMEOUT"
TERM_STATIONARY = "STATIONARY"

X0_ALL_ONES = "ALL_ONES"
X0_ZERO = "ZERO"


@dataclass
class SolverConfig:
    """Everything one run needs; exactly one engine block matches ``method``."""

    method: str
    approx: ApproxConfig = field(default_factory=ApproxConfig)
    ceqn: CeqnParams | None = None
    adaptive: AdaptiveParams | None = None
    fixed_l: float | None = None
    max_iters: int = 500
    grad_tol: float = 1e-12
    max_seconds: float = math.inf
    seed: int = 0
    x0: str | np.ndarray = X0_ALL_ONES

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        blocks = {
            METHOD_CEQN: self.ceqn,
            METHOD_ADAPTIVE_DUAL: self.adaptive,
            METHOD_ADAPTIVE_REG: self.adaptive,
            METHOD_FIXED: self.fixed_l,
        }
        if blocks[self.method] is None:
            raise ValueError(f"method {self.method} is missing its parameter block")
        others = [
            name
            for name, value in (
                ("ceqn", self.ceqn),
                ("adaptive", self.adaptive),
                ("fixed_l", self.fixed_l),
            )
            if value is not None and value is not blocks[self.method]
        ]
        if others:
            raise ValueError(
                f"method {self.method} does not use parameter block(s) {others}"
            )
        if self.method == METHOD_ADAPTIVE_DUAL and self.adaptive.mode != MODE_DUAL:
            raise ValueError("ADAPTIVE_DUAL requires adaptive mode DUAL")
        if self.method == METHOD_ADAPTIVE_REG and self.adaptive.mode != MODE_REG:
            raise ValueError("ADAPTIVE_REG requires adaptive mode REG")
        if self.method == METHOD_FIXED and self.fixed_l <= 0:
            raise ValueError(f"fixed_l must be positive, got {self.fixed_l}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.grad_tol < 0:
            raise ValueError(f"grad_tol must be nonnegative, got {self.grad_tol}")
        if self.max_seconds <= 0:
            raise ValueError(f"max_seconds must be positive, got {self.max_seconds}")
        if isinstance(self.x0, str):
            if self.x0 not in (X0_ALL_ONES, X0_ZERO):
                raise ValueError(f"unknown start point {self.x0!r}")
        else:
            self.x0 = np.asarray(self.x0, dtype=np.float64)


@dataclass
class TraceRecord:
    """Telemetry for one executed outer iteration.

    ``f_value``/``grad_norm_sq``/``grad_dual_norm`` describe the iterate the
    step departed from; counters are cumulative oracle totals once the
    iteration (including its post-step evaluations) completed.
    """

    iter: int
    wall_seconds: float
    f: float
    grad_norm_sq: float
    grad_dual_norm: float
    eta: float
    alpha: float
    inner_count: int
    skipped_pairs: int
    fallback: bool
    n_value: int
    n_grad: int
    n_hvp: int


@dataclass
class RunResult:
    """Full record of one run: per-iteration trace plus final state."""

    trace: list[TraceRecord]
    termination: str
    x_final: Vector
    f_final: float
    grad_norm_sq_final: float
    config: SolverConfig
    seed: int
    wall_seconds: float
    n_value: int
    n_grad: int
    n_hvp: int
    final_alpha: float | None = None


class NumericalFailureError(RuntimeError):
    """The objective or gradient became non-finite; carries the partial run."""

    def __init__(self, message: str, result: RunResult):
        super().__init__(message)
        self.result = result


def check_termination(
    k: int, grad_norm_sq: float, elapsed: float, config: SolverConfig
) -> str | None:
    """Termination decision with precedence GRAD_TOL > MAX_ITERS > TIMEOUT."""
    if grad_norm_sq <= config.grad_tol:
        return TERM_GRAD_TOL
    if k >= config.max_iters:
        return TERM_MAX_ITERS
    if elapsed >= config.max_seconds:
        return TERM_TIMEOUT
    return None


def _start_point(config: SolverConfig, dimension: int) -> Vector:
    if isinstance(config.x0, str):
        if config.x0 == X0_ALL_ONES:
            return np.ones(dimension)
        return np.zeros(dimension)
    x0 = np.asarray(config.x0, dtype=np.float64)
    if x0.shape != (dimension,):
        raise ValueError(
            f"explicit start point has shape {x0.shape}, expected ({dimension},)"
        )
    return x0.copy()


def run_solver(problem: ProblemOracle, config: SolverConfig) -> RunResult:
    """Run the configured method on the problem until a termination fires.

    Per iteration: obtain curvature pairs (fresh Gaussian probes at the
    current iterate, or the history buffer), rebuild the operator, take one
    engine iteration, and append a trace record. On an indefinite operator
    the iteration is redone with the scaled-identity fallback and flagged.
    Raises NumericalFailureError (carrying the partial result) as soon as the
    objective or gradient stops being finite.
    """
    oracle = CountingOracle(problem)
    rng = np.random.default_rng(config.seed)
    x = _start_point(config, oracle.dimension)
    t0 = time.perf_counter()
    trace: list[TraceRecord] = []

    alpha = config.adaptive.alpha0 if config.adaptive is not None else None

    def partial(x_cur, f_cur, gns_cur) -> RunResult:
        return RunResult(
            trace=trace,
            termination="NUMERICAL_FAILURE",
            x_final=x_cur,
            f_final=float(f_cur),
            grad_norm_sq_final=float(gns_cur),
            config=config,
            seed=config.seed,
            wall_seconds=time.perf_counter() - t0,
            n_value=oracle.n_value,
            n_grad=oracle.n_grad,
            n_hvp=oracle.n_hvp,
            final_alpha=alpha,
        )

    f = oracle.value(x)
    g = oracle.gradient(x)
    gns = float(g @ g)
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalFailureError(
            "objective or gradient non-finite at the start point",
            partial(x, f, gns),
        )

    buffer = (
        PairBuffer(config.approx.memory)
        if config.approx.pair_strategy == STRATEGY_HISTORY
        else None
    )
    k = 0
    while True:
        gns = float(g @ g)
        termination = check_termination(k, gns, time.perf_counter() - t0, config)
        if termination is not None:
            break

        if config.approx.kind == KIND_EXACT:
            operator = DenseInverseOperator(oracle, x)
        elif config.approx.pair_strategy == STRATEGY_SAMPLED:
            pairs = sample_pairs(oracle, x, config.approx.memory, rng)
            operator = rebuild_operator(config.approx, pairs)
        else:
            operator = rebuild_operator(config.approx, buffer.pairs)
        fallback = operator.fallback
        skipped_pairs = operator.skipped

        try:
            result, alpha_next = _engine_iteration(config, oracle, operator, x, g, f, alpha)
        except IndefiniteOperatorError:
            operator = ScaledIdentityOperator(config.approx.h0_scale)
            fallback = True
            result, alpha_next = _engine_iteration(config, oracle, operator, x, g, f, alpha)

        x_next = result.x_next
        f_next = result.f_next if result.f_next is not None else oracle.value(x_next)
        g_next = result.g_next if result.g_next is not None else oracle.gradient(x_next)

        trace.append(
            TraceRecord(
                iter=k,
                wall_seconds=time.perf_counter() - t0,
                f=float(f),
                grad_norm_sq=gns,
                grad_dual_norm=float(result.dual_norm_before),
                eta=float(result.eta),
                alpha=float(result.alpha_used),
                inner_count=result.inner_count,
                skipped_pairs=skipped_pairs,
                fallback=bool(fallback),
                n_value=oracle.n_value,
                n_grad=oracle.n_grad,
                n_hvp=oracle.n_hvp,
            )
        )

        if not math.isfinite(f_next) or not np.all(np.isfinite(g_next)):
            raise NumericalFailureError(
                f"objective or gradient non-finite at iteration {k}",
                partial(x_next, f_next, float(g_next @ g_next)),
            )

        stalled = np.array_equal(x_next, x)
        if buffer is not None and not stalled:
            buffer.push(CurvaturePair(x_next - x, g_next - g))
        x, f, g = x_next, f_next, g_next
        alpha = alpha_next
        k += 1
        if stalled:
            gns = float(g @ g)
            if gns > config.grad_tol:
                termination = TERM_STATIONARY
                break

    return RunResult(
        trace=trace,
        termination=termination,
        x_final=x,
        f_final=float(f),
        grad_norm_sq_final=float(g @ g),
        config=config,
        seed=config.seed,
        wall_seconds=time.perf_counter() - t0,
        n_value=oracle.n_value,
        n_grad=oracle.n_grad,
        n_hvp=oracle.n_hvp,
        final_alpha=alpha,
    )


def _engine_iteration(
    config: SolverConfig,
    oracle: CountingOracle,
    operator,
    x: Vector,
    g: Vector,
    f: float,
    alpha: float | None,
) -> tuple[StepResult, float | None]:
    if config.method == METHOD_CEQN:
        return ceqn_step(config.ceqn, oracle, operator, x, g), alpha
    if config.method == METHOD_FIXED:
        return fixed_step_iteration(config.fixed_l, oracle, operator, x, g), alpha
    return adaptive_iteration(config.adaptive, oracle, operator, x, g, f, alpha)
