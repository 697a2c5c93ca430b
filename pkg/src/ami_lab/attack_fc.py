"""Adversary built from two crafted fully-connected layers.

The first layer holds ``[I; -I]`` with bias ``[-T; T]`` so that its ReLU
outputs sum to ``||X - T||_1``. The second layer's first neuron subtracts that
sum from its bias ``tau``, so after the ReLU it fires only for inputs strictly
inside the L1 ball of radius ``tau`` around the target.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatch, InvalidTau, ShapeMismatch, SingletonAlphabet


def flatten_point(x) -> np.ndarray:
    """Column-major flattening, so pattern ``j`` occupies one contiguous block."""
    return np.asarray(x, dtype=float).ravel(order="F")


@dataclass(frozen=True)
class FcAttackParams:
    w1: np.ndarray
    b1: np.ndarray
    w2_row: np.ndarray
    b2_1: float

    @property
    def d_t(self) -> int:
        return self.w1.shape[1]

    @property
    def target(self) -> np.ndarray:
        return -self.b1[: self.d_t]


@dataclass(frozen=True)
class FcGradientReport:
    grad_b2_1: float
    activated_count: int
    batch_size: int


def fc_craft(target, tau: float) -> FcAttackParams:
    if not tau > 0:
        raise InvalidTau(f"tau must be > 0, got {tau}")
    t = flatten_point(target) if np.ndim(target) == 2 else np.asarray(target, dtype=float).ravel()
    d = t.size
    eye = np.eye(d)
    return FcAttackParams(
        w1=np.vstack([eye, -eye]),
        b1=np.concatenate([-t, t]),
        w2_row=-np.ones(2 * d),
        b2_1=float(tau),
    )


def _hidden(params: FcAttackParams, x: np.ndarray) -> np.ndarray:
    return np.maximum(params.w1 @ x + params.b1, 0.0)


def fc_pre_activation(params: FcAttackParams, x) -> float:
    """Second-layer input to the first neuron, before its ReLU."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != params.d_t:
        raise ShapeMismatch(f"input has {x.size} entries, attack expects {params.d_t}")
    return float(params.w2_row @ _hidden(params, x) + params.b2_1)


def fc_forward_z0(params: FcAttackParams, x) -> float:
    """``max{tau - ||x - T||_1, 0}`` computed through both layers."""
    return max(fc_pre_activation(params, x), 0.0)


def fc_client_gradients(params: FcAttackParams, batch) -> FcGradientReport:
    """Gradient of ``L = mean(z0)`` with respect to the second-layer bias.

    ``dz0/db2_1`` is the ReLU indicator, so the gradient is the fraction of
    batch elements that activate. It is returned as ``count / n``: a single
    rounding of an exact rational, hence zero exactly when nothing fired.
    """
    rows = [flatten_point(x) if np.ndim(x) == 2 else np.asarray(x, dtype=float).ravel() for x in batch]
    if not rows:
        raise EmptyBatch("gradient requested on an empty batch")
    count = sum(1 for x in rows if fc_pre_activation(params, x) > 0.0)
    return FcGradientReport(count / len(rows), count, len(rows))


def fc_loss(params: FcAttackParams, batch) -> float:
    """Client loss whose bias gradient is read by the server."""
    rows = [flatten_point(x) if np.ndim(x) == 2 else x for x in batch]
    return float(np.mean([fc_forward_z0(params, x) for x in rows]))


def fc_guess(report: FcGradientReport) -> int:
    return int(report.grad_b2_1 != 0.0)


def fc_select_tau(stats) -> float:
    """Detection radius: half the minimum L1 distance of the alphabet."""
    if not stats.delta_x > 0:
        raise SingletonAlphabet("alphabet separation must be positive to pick tau")
    return float(stats.delta_x)
