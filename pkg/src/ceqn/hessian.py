"""Limited-memory inverse-Hessian operators built from curvature pairs.

Two update rules are provided: a compact recursive SR1 form and the classical
BFGS two-loop recursion. Both start from a scaled identity H0 = c*I and apply
H to vectors without ever materializing a matrix. Curvature pairs come either
from the optimization history (FIFO buffer) or from Hessian-vector probes
along fresh Gaussian directions.

SR1 may produce an indefinite operator; definiteness safeguards live in the
stepsize engines, not here.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .problems import ProblemOracle, Vector, _check_dim

KIND_LSR1 = "LSR1"
KIND_LBFGS = "LBFGS"
KIND_EXACT = "EXACT"
STRATEGY_HISTORY = "HISTORY"
STRATEGY_SAMPLED = "SAMPLED"


@dataclass(frozen=True)
class CurvaturePair:
    """Displacement s and the matching gradient or Hessian-action difference y."""

    s: Vector
    y: Vector

    def __post_init__(self):
        if self.s.shape != self.y.shape or self.s.ndim != 1:
            raise ValueError(
                f"pair vectors must share one dimension, got {self.s.shape} / {self.y.shape}"
            )


@dataclass
class ApproxConfig:
    """How to build the inverse-Hessian operator each outer iteration.

    ``kind`` EXACT assembles the true Hessian by d probes and inverts it with
    a dense factorization; LSR1/LBFGS build limited-memory approximations from
    ``memory`` curvature pairs starting at H0 = h0_scale * I.
    """

    memory: int = 10
    h0_scale: float = 1e-4
    kind: str = KIND_LSR1
    pair_strategy: str = STRATEGY_SAMPLED
    sr1_skip_tol: float = 1e-8
    bfgs_curvature_tol: float = 1e-12

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError(f"memory must be >= 1, got {self.memory}")
        if self.h0_scale <= 0:
            raise ValueError(f"h0_scale must be positive, got {self.h0_scale}")
        if self.kind not in (KIND_LSR1, KIND_LBFGS, KIND_EXACT):
            raise ValueError(f"unknown approximation kind {self.kind!r}")
        if self.pair_strategy not in (STRATEGY_HISTORY, STRATEGY_SAMPLED):
            raise ValueError(f"unknown pair strategy {self.pair_strategy!r}")
        if self.sr1_skip_tol <= 0 or self.bfgs_curvature_tol <= 0:
            raise ValueError("skip tolerances must be positive")


class PairBuffer:
    """Bounded FIFO of curvature pairs; full buffer evicts the oldest."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._pairs: deque[CurvaturePair] = deque(maxlen=capacity)

    def push(self, pair: CurvaturePair) -> None:
        self._pairs.append(pair)

    @property
    def pairs(self) -> tuple[CurvaturePair, ...]:
        return tuple(self._pairs)

    def __len__(self) -> int:
        return len(self._pairs)


def collect_history_pair(
    buffer: PairBuffer,
    x_prev: Vector,
    x_next: Vector,
    g_prev: Vector,
    g_next: Vector,
) -> None:
    """Push the trajectory pair (x_next - x_prev, g_next - g_prev)."""
    buffer.push(CurvaturePair(x_next - x_prev, g_next - g_prev))


def sample_pairs(
    oracle: ProblemOracle, x: Vector, m: int, rng: np.random.Generator
) -> list[CurvaturePair]:
    """Draw m standard-normal directions d_i and pair them with hvp(x, d_i).

    Decouples curvature estimation from the trajectory; costs exactly m
    Hessian-vector products. Deterministic given the generator state.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    pairs = []
    for _ in range(m):
        d = rng.standard_normal(oracle.dimension)
        pairs.append(CurvaturePair(d, oracle.hvp(x, d)))
    return pairs


class ScaledIdentityOperator:
    """H = c * I; the empty-memory operator and the driver's fallback."""

    def __init__(self, scale: float):
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        self.scale = scale
        self.skipped = 0
        self.fallback = False

    def apply(self, g: Vector) -> Vector:
        return self.scale * g


class Lsr1Operator:
    """Compact recursive limited-memory SR1 inverse approximation.

    Builds rank-one update vectors v_i = s_i - H_i y_i incrementally (each
    needs the partial operator applied to y_i, O(i d); O(m^2 d) total) and
    caches (v_i, v_i^T y_i) so each later application costs O(m d). A pair is
    skipped when |v_i^T y_i| <= skip_tol ||v_i|| ||y_i||, the standard SR1
    safeguard against a vanishing denominator.
    """

    def __init__(self, pairs, scale: float, skip_tol: float = 1e-8):
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        self.scale = scale
        self.skipped = 0
        self._updates: list[tuple[Vector, float]] = []
        self._dim = pairs[0].s.shape[0] if pairs else None
        for pair in pairs:
            if pair.s.shape[0] != self._dim:
                raise ValueError("curvature pairs have inconsistent dimensions")
            # a vanished displacement or curvature carries no information and
            # would inject a singular direction the denominator rule misses
            if not np.any(pair.s) or not np.any(pair.y):
                self.skipped += 1
                continue
            v = pair.s - self.apply(pair.y)
            vty = float(v @ pair.y)
            if abs(vty) <= skip_tol * np.linalg.norm(v) * np.linalg.norm(pair.y):
                self.skipped += 1
                continue
            self._updates.append((v, vty))
        self.fallback = bool(pairs) and not self._updates

    def apply(self, g: Vector) -> Vector:
        if self._updates and g.shape[0] != self._dim:
            raise ValueError(f"vector has dimension {g.shape[0]}, expected {self._dim}")
        out = self.scale * g
        for v, vty in self._updates:
            out = out + (float(v @ g) / vty) * v
        return out


class LbfgsOperator:
    """Classical two-loop recursion over positive-curvature pairs.

    Pairs with s^T y <= curvature_tol ||s|| ||y|| are dropped from both loops,
    preserving positive definiteness. With at least one usable pair the
    initial matrix is the standard scaling (s_m^T y_m)/(y_m^T y_m) * I built
    from the newest pair; with none it falls back to h0 = scale * I.
    """

    def __init__(self, pairs, scale: float, curvature_tol: float = 1e-12):
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        self.scale = scale
        self.skipped = 0
        kept = []
        dim = pairs[0].s.shape[0] if pairs else None
        for pair in pairs:
            if pair.s.shape[0] != dim:
                raise ValueError("curvature pairs have inconsistent dimensions")
            sty = float(pair.s @ pair.y)
            if sty <= curvature_tol * np.linalg.norm(pair.s) * np.linalg.norm(pair.y):
                self.skipped += 1
                continue
            kept.append((pair.s, pair.y, 1.0 / sty))
        self._kept = kept
        self.fallback = bool(pairs) and not kept
        self._dim = dim

    def apply(self, g: Vector) -> Vector:
        if not self._kept:
            return self.scale * g
        if g.shape[0] != self._dim:
            raise ValueError(f"vector has dimension {g.shape[0]}, expected {self._dim}")
        q = g.astype(np.float64, copy=True)
        alphas = []
        for s, y, rho in reversed(self._kept):
            a = rho * float(s @ q)
            q -= a * y
            alphas.append(a)
        alphas.reverse()
        s_last, y_last, _ = self._kept[-1]
        b0 = float(y_last @ y_last) / float(s_last @ y_last)
        r = q / b0
        for (s, y, rho), a in zip(self._kept, alphas):
            beta = rho * float(y @ r)
            r += s * (a - beta)
        return r


class DenseInverseOperator:
    """Exact inverse Hessian at a point, assembled column by column.

    Costs d Hessian-vector products plus one Cholesky factorization; only
    meant for small problems and for exact-Hessian reference runs.
    """

    def __init__(self, oracle: ProblemOracle, x: Vector):
        d = oracle.dimension
        _check_dim(x, d)
        hess = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            hess[:, j] = oracle.hvp(x, e)
        self._factor = scipy.linalg.cho_factor((hess + hess.T) / 2.0)
        self.skipped = 0
        self.fallback = False

    def apply(self, g: Vector) -> Vector:
        return scipy.linalg.cho_solve(self._factor, g)


def lsr1_apply(
    pairs, c: float, g: Vector, skip_tol: float = 1e-8
) -> tuple[Vector, int]:
    """One-shot SR1 application H g; returns the result and the skip count."""
    op = Lsr1Operator(pairs, c, skip_tol)
    return op.apply(g), op.skipped


def lbfgs_two_loop(
    pairs, g: Vector, curvature_tol: float = 1e-12, c: float = 1.0
) -> tuple[Vector, int]:
    """One-shot two-loop application H g; returns the result and the skip count."""
    op = LbfgsOperator(pairs, c, curvature_tol)
    return op.apply(g), op.skipped


def rebuild_operator(config: ApproxConfig, pairs):
    """Build the configured limited-memory operator from a pair source."""
    if isinstance(pairs, PairBuffer):
        pairs = pairs.pairs
    if config.kind == KIND_LSR1:
        return Lsr1Operator(pairs, config.h0_scale, config.sr1_skip_tol)
    if config.kind == KIND_LBFGS:
        return LbfgsOperator(pairs, config.h0_scale, config.bfgs_curvature_tol)
    raise ValueError(
        f"operator kind {config.kind!r} is not pair-based; build it in the driver"
    )
