"""Adversary built from a crafted four-head self-attention layer.

Heads 1 and 2 are both put in "memorization mode" (``W_K^T W_Q = beta * P``
for a rank ``d_x - 1`` orthogonal projector ``P``), but head 1's projector
removes the target direction ``v``. A pattern equal to ``v`` therefore gets a
flat softmax in head 1 (output: the mean pattern) while head 2 still
retrieves it. Heads 3 and 4 copy 1 and 2 so the output layer can threshold
``|Z1 - Z2|`` in both signs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .bounds import check_separation_condition, delta_bar, separation_rhs
from .errors import EmptyBatch, InvalidParams, NoFeasibleBeta, RankDeficient, ShapeMismatch
from .numerics import RngStream, pseudo_inverse, qr_factorize, softmax_columns

MAX_CRAFT_RETRIES = 16


@dataclass(frozen=True)
class AttnAttackParams:
    w_q: tuple
    w_k: tuple
    w_o: np.ndarray
    b_o: np.ndarray
    beta: float
    gamma: float
    v: np.ndarray

    @property
    def d_x(self) -> int:
        return self.v.size

    @property
    def d_attn(self) -> int:
        return self.d_x - 1

    @property
    def beta_effective(self) -> float:
        return self.beta / math.sqrt(self.d_attn)

    def w_v(self, h: int) -> np.ndarray:
        return np.eye(self.d_x)

    def with_w_o(self, w_o) -> "AttnAttackParams":
        return replace(self, w_o=np.asarray(w_o, dtype=float))


@dataclass(frozen=True)
class AttnGradientReport:
    grad_wo_inf: float
    max_gap: float
    grad_wo: np.ndarray | None = None


def output_matrix(d_x: int) -> np.ndarray:
    eye, zero = np.eye(d_x), np.zeros((d_x, d_x))
    return np.block([[eye, -eye, zero, zero], [zero, zero, -eye, eye]])


def beta_from_effective(beta_effective: float, d_x: int) -> float:
    return beta_effective * math.sqrt(d_x - 1)


def _craft_once(v, d_x, beta, stream: RngStream):
    w = stream.standard_normal((d_x, d_x))
    w[:, 0] = v
    q, _ = qr_factorize(w)
    w_q1 = q[:, 1:].T.copy()
    w_q2 = stream.standard_normal((d_x - 1, d_x))
    w_k1 = beta * pseudo_inverse(w_q1).T
    w_k2 = beta * pseudo_inverse(w_q2).T
    return w_q1, w_q2, w_k1, w_k2


def attn_craft(v, d_x: int | None = None, beta: float | None = None, gamma: float = 1e-3,
               stream: RngStream | None = None, beta_effective: float | None = None) -> AttnAttackParams:
    """Craft all attention weights for target pattern ``v``.

    Pass either the raw ``beta`` (baked into ``W_K``) or ``beta_effective``
    (``beta / sqrt(d_x - 1)``, the temperature seen after the attention
    scaling). Rank-deficient random draws are re-drawn from child streams.
    """
    v = np.asarray(v, dtype=float).ravel()
    d_x = v.size if d_x is None else d_x
    if v.size != d_x:
        raise ShapeMismatch(f"target has {v.size} entries, d_x = {d_x}")
    if d_x < 2:
        raise InvalidParams("attention attack needs d_x >= 2")
    if not np.linalg.norm(v) > 0:
        raise InvalidParams("target pattern must be non-zero")
    if beta_effective is not None:
        beta = beta_from_effective(beta_effective, d_x)
    if beta is None or not beta > 0 or not gamma > 0:
        raise InvalidParams("beta and gamma must be > 0")
    stream = stream if stream is not None else RngStream(0)
    for attempt in range(MAX_CRAFT_RETRIES):
        try:
            w_q1, w_q2, w_k1, w_k2 = _craft_once(v, d_x, beta, stream.child(attempt))
            break
        except RankDeficient:
            continue
    else:
        raise RankDeficient(f"no full-rank draw after {MAX_CRAFT_RETRIES} attempts")
    return AttnAttackParams(
        w_q=(w_q1, w_q2, w_q1, w_q2),
        w_k=(w_k1, w_k2, w_k1, w_k2),
        w_o=output_matrix(d_x),
        b_o=np.full(2 * d_x, -float(gamma)),
        beta=float(beta),
        gamma=float(gamma),
        v=v.copy(),
    )


def head_projector(params: AttnAttackParams, h: int) -> np.ndarray:
    """``(1/beta) W_K^T W_Q`` for head ``h`` (1-based)."""
    return params.w_k[h - 1].T @ params.w_q[h - 1] / params.beta


def _check_input(params: AttnAttackParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != params.d_x:
        raise ShapeMismatch(f"input must have {params.d_x} rows, got shape {x.shape}")
    return x


def attn_head_forward(params: AttnAttackParams, h: int, x_eps) -> np.ndarray:
    """``Z^h = X softmax_cols(X^T W_K^T W_Q X / sqrt(d_attn))`` with ``W_V = I``."""
    x = _check_input(params, x_eps)
    logits = (x.T @ params.w_k[h - 1].T) @ (params.w_q[h - 1] @ x) / math.sqrt(params.d_attn)
    return x @ softmax_columns(logits)


def stacked_heads(params: AttnAttackParams, x_eps) -> np.ndarray:
    x = _check_input(params, x_eps)
    z1 = attn_head_forward(params, 1, x)
    z2 = attn_head_forward(params, 2, x)
    # heads 3 and 4 share weights with 1 and 2, so their outputs are identical
    return np.vstack([z1, z2, z1, z2])


def attn_combined_forward(params: AttnAttackParams, x_eps) -> np.ndarray:
    """``Y = ReLU(W_O [Z1; Z2; Z3; Z4] + b_O)``, shape ``(2 d_x, n_x)``."""
    s = stacked_heads(params, x_eps)
    return np.maximum(params.w_o @ s + params.b_o[:, None], 0.0)


def attn_loss(params: AttnAttackParams, batch) -> float:
    return float(sum(attn_combined_forward(params, x).sum() for x in batch))


def attn_client_gradients(params: AttnAttackParams, batch, keep_matrix: bool = False) -> AttnGradientReport:
    """Gradient of ``L = sum(Y)`` over the batch with respect to ``W_O``."""
    batch = list(batch)
    if not batch:
        raise EmptyBatch("gradient requested on an empty batch")
    d = params.d_x
    grad = np.zeros_like(params.w_o)
    max_gap = 0.0
    for x in batch:
        s = stacked_heads(params, x)
        pre = params.w_o @ s + params.b_o[:, None]
        mask = (pre > 0.0).astype(float)
        if mask.any():
            grad += mask @ s.T
        gap = np.abs(s[:d] - s[d:2 * d]).max()
        max_gap = max(max_gap, float(gap))
    return AttnGradientReport(float(np.abs(grad).max()), max_gap, grad if keep_matrix else None)


def attn_guess(report: AttnGradientReport) -> int:
    return int(report.grad_wo_inf > 0.0)


# ---------------------------------------------------------------- hyperparameters


@dataclass(frozen=True)
class AttnHyperparams:
    beta: float
    beta_effective: float
    gamma: float
    mode: str
    condition_holds: bool | None = None
    delta_bar: float | None = None


BETA_GRID = np.logspace(-3, 4, 1401)
GAMMA_MARGIN = 1e-9


def smallest_feasible_beta(delta_eps: float, n_x: int, m_eps: float, grid=BETA_GRID) -> float:
    """Smallest effective beta on ``grid`` meeting the separation condition.

    Only the branch where the log term is positive is searched: below
    ``1 / (2 (n_x - 1) n_x M^2)`` the condition holds vacuously and says
    nothing about retrieval.
    """
    if n_x <= 1:
        return float(grid[0])
    floor = 1.0 / (2.0 * (n_x - 1) * n_x * m_eps ** 2)
    for b in grid:
        if b > floor and check_separation_condition(delta_eps, b, n_x, m_eps):
            return float(b)
    raise NoFeasibleBeta(f"no beta in [{grid[0]:g}, {grid[-1]:g}] satisfies the separation condition "
                         f"(delta={delta_eps:.4g}, n_x={n_x}, M={m_eps:.4g})")


def attn_select_hyperparams(stats, n_x: int, r_eps: float, mode: str, d_x: int,
                            beta_effective: float | None = None, beta: float | None = None,
                            calibrate=None) -> AttnHyperparams:
    """Pick ``(beta, gamma)`` for the attention adversary.

    ``theorem`` mode uses the given beta (or the smallest feasible one) and
    ``gamma = 2 * delta_bar + margin``. ``default`` mode uses raw
    ``beta = 0.01`` unless overridden and asks ``calibrate(beta)`` for gamma.
    """
    scale = math.sqrt(d_x - 1)
    if beta is not None and beta_effective is None:
        beta_effective = beta / scale
    m_eps = math.hypot(stats.m, r_eps)
    if mode == "theorem":
        if beta_effective is None:
            beta_effective = smallest_feasible_beta(stats.delta, n_x, m_eps)
        ok = check_separation_condition(stats.delta, beta_effective, n_x, m_eps)
        if not ok:
            raise NoFeasibleBeta(f"beta_effective={beta_effective:g} violates the separation condition "
                                 f"(needs delta >= {separation_rhs(beta_effective, n_x, m_eps):.4g}, "
                                 f"have {stats.delta:.4g})")
        dbar = delta_bar(m_eps, n_x, beta_effective, stats.delta)
        return AttnHyperparams(beta_effective * scale, beta_effective, 2.0 * dbar + GAMMA_MARGIN,
                               mode, True, dbar)
    if mode == "default":
        if beta_effective is None:
            beta_effective = 0.01 / scale
        if calibrate is None:
            raise InvalidParams("default mode needs a calibration routine for gamma")
        raw = beta_effective * scale
        return AttnHyperparams(raw, beta_effective, float(calibrate(raw)), mode)
    raise InvalidParams(f"unknown hyperparameter mode {mode!r}")
