"""
Radii regression losses with analytic gradients.

All gradients are taken with respect to the estimated radii. The subgradient
of |x| at 0 is 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .errors import ArgumentError, DivergenceError
from .keypoints import RadiiMatrix

logger = logging.getLogger(__name__)

SCHEDULE_SWITCH_EPOCH = 100
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ArgumentError(f"loss weights must lie in [0, 1], got {self.alpha}, {self.beta}")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ArgumentError(f"alpha + beta must equal 1, got {self.alpha + self.beta}")


@dataclass(frozen=True, eq=False)
class LossValueGrad:
    value: float
    grad: NDArray[np.float64]


class LossKind(str, Enum):
    RESIDUAL = "residual"
    COMBINED = "combined"


def smooth_l1(x):
    """
    Smooth L1 with transition at 1.

    Works elementwise on arrays. Returns (value, derivative).
    """
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    quadratic = ax < 1.0
    value = np.where(quadratic, 0.5 * x * x, ax - 0.5)
    deriv = np.where(quadratic, x, np.sign(x))
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def _values(m: RadiiMatrix | NDArray) -> NDArray[np.float64]:
    return m.values if isinstance(m, RadiiMatrix) else np.asarray(m, dtype=np.float64)


def _pair(estimated, gt) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    est, ref = _values(estimated), _values(gt)
    if est.shape != ref.shape or est.ndim != 2:
        raise ArgumentError(f"radii shapes differ: {est.shape} vs {ref.shape}")
    return est, ref


def residual_loss(estimated, gt) -> LossValueGrad:
    """Mean over all M x K entries of SL1(|r_hat - r|)."""
    est, ref = _pair(estimated, gt)
    eps = est - ref
    value, deriv = smooth_l1(np.abs(eps))
    n = eps.size
    return LossValueGrad(float(value.sum() / n), deriv * np.sign(eps) / n)


def radial_pair_diff(r_i, r_j):
    return np.abs(np.subtract(r_i, r_j))


def radial_pair_loss(estimated, gt) -> LossValueGrad:
    """
    Mean over all unordered keypoint pairs (i < j) and rows of
    SL1(| |r_i - r_j| - |r_hat_i - r_hat_j| |), normalised by 2 / (M K (K - 1)).
    """
    est, ref = _pair(estimated, gt)
    M, K = est.shape
    if K < 2:
        raise ArgumentError(f"radial pair loss needs K >= 2, got {K}")
    ii, jj = np.triu_indices(K, k=1)
    delta = radial_pair_diff(ref[:, ii], ref[:, jj])
    diff_hat = est[:, ii] - est[:, jj]
    delta_hat = np.abs(diff_hat)
    x = delta - delta_hat
    value, deriv = smooth_l1(np.abs(x))
    norm = 2.0 / (M * K * (K - 1))
    # d/d delta_hat of SL1(|x|) = -SL1'(|x|) sign(x)
    g_pair = -deriv * np.sign(x) * np.sign(diff_hat) * norm
    grad = np.zeros_like(est)
    for p, (i, j) in enumerate(zip(ii, jj)):
        grad[:, i] += g_pair[:, p]
        grad[:, j] -= g_pair[:, p]
    return LossValueGrad(float(value.sum() * norm), grad)


def combined_loss(estimated, gt, w: LossWeights) -> LossValueGrad:
    res = residual_loss(estimated, gt)
    pair = radial_pair_loss(estimated, gt)
    return LossValueGrad(
        w.alpha * res.value + w.beta * pair.value,
        w.alpha * res.grad + w.beta * pair.grad,
    )


def weight_schedule(epoch: int) -> LossWeights:
    """(0.8, 0.2) for the first 100 epochs, (0.2, 0.8) afterwards."""
    if epoch < 0:
        raise ArgumentError(f"epoch must be >= 0, got {epoch}")
    if epoch < SCHEDULE_SWITCH_EPOCH:
        return LossWeights(0.8, 0.2)
    return LossWeights(0.2, 0.8)


def bce_loss(probabilities: Sequence[float], labels: Sequence[int]) -> float:
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ArgumentError(f"{p.size} probabilities but {y.size} labels")
    if p.size == 0:
        raise ArgumentError("bce_loss needs at least one sample")
    p = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclass(frozen=True)
class FitStep:
    step: int
    loss: float
    residual: float
    alpha: float
    beta: float


def toy_fit(
    gt,
    init,
    loss_kind: LossKind | str,
    steps: int,
    lr: float,
    clamp: bool = False,
) -> Tuple[NDArray[np.float64], List[FitStep]]:
    """
    Plain gradient descent on the radii themselves.

    ``residual`` descends the residual loss alone; ``combined`` descends
    alpha * residual + beta * pair with the epoch schedule, one step per epoch.
    With ``clamp`` the radii are projected onto r >= 0 after every step.

    Returns:
        Final M x K estimates (negative entries possible without ``clamp``)
        and one FitStep per step (loss recorded before the update)

    Raises:
        DivergenceError: the loss stops being finite
    """
    kind = LossKind(loss_kind)
    if steps < 1:
        raise ArgumentError("steps must be >= 1")
    if not lr > 0:
        raise ArgumentError("lr must be positive")
    start, ref = _pair(init, gt)
    est = start.copy()
    trace: List[FitStep] = []
    for step in range(steps):
        res = residual_loss(est, ref)
        if kind is LossKind.RESIDUAL:
            w = LossWeights(1.0, 0.0)
            total = res
        else:
            w = weight_schedule(step)
            total = combined_loss(est, ref, w)
        if not (np.isfinite(total.value) and np.all(np.isfinite(total.grad))):
            raise DivergenceError(f"loss became non-finite at step {step}", step=step)
        trace.append(FitStep(step, total.value, res.value, w.alpha, w.beta))
        est = est - lr * total.grad
        if clamp:
            est = np.maximum(est, 0.0)
        if not np.all(np.isfinite(est)):
            raise DivergenceError(f"radii became non-finite at step {step}", step=step)
    logger.debug(f"toy_fit[{kind.value}] finished: residual={trace[-1].residual:.3e}")
    return est, trace


def steps_to_reach(trace: Sequence[FitStep], threshold: float) -> int | None:
    """First step whose residual loss is below ``threshold``."""
    for entry in trace:
        if entry.residual < threshold:
            return entry.step
    return None
