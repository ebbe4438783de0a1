"""Pairwise global loss, FC weight decay, and the Adam optimizer.

The batch objective pushes the ensemble of pair similarities apart by
class: it penalizes the population variance of the matching and
non-matching similarity groups and hinges on the gap between their means,

    J = (var+ + var-) + lambda * max(0, margin - (mean+ - mean-)).

The subgradient at the hinge kink is taken as zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.6
    lambda_weight: float = 0.35
    l2_coeff: float = 0.005

    def __post_init__(self):
        if not 0.0 < self.margin <= 1.0:
            raise ValidationError("margin must be in (0, 1]")
        if self.lambda_weight < 0.0 or self.l2_coeff < 0.0:
            raise ValidationError("lambda_weight and l2_coeff must be >= 0")


def global_loss(similarities, match_flags, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to each similarity.

    Means and (population) variances are taken per pair class; the batch
    must contain at least one matching and one non-matching pair.
    """
    s = np.asarray(similarities, dtype=np.float64)
    m = np.asarray(match_flags, dtype=bool)
    if s.shape != m.shape or s.ndim != 1:
        raise ValidationError("similarities and match_flags must be equal-length vectors")
    n_pos = int(m.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("batch must contain both matching and non-matching pairs")
    s_pos = s[m]
    s_neg = s[~m]
    mu_pos = s_pos.mean()
    mu_neg = s_neg.mean()
    var_pos = np.mean((s_pos - mu_pos) ** 2)
    var_neg = np.mean((s_neg - mu_neg) ** 2)
    slack = cfg.margin - (mu_pos - mu_neg)
    hinge_active = slack > 0.0
    loss = var_pos + var_neg + cfg.lambda_weight * max(slack, 0.0)

    grad = np.empty_like(s)
    grad[m] = 2.0 * (s_pos - mu_pos) / n_pos
    grad[~m] = 2.0 * (s_neg - mu_neg) / n_neg
    if hinge_active:
        grad[m] -= cfg.lambda_weight / n_pos
        grad[~m] += cfg.lambda_weight / n_neg
    return float(loss), grad


def l2_penalty(fc_weights, coeff: float) -> tuple[float, np.ndarray]:
    """coeff * ||w||^2 with gradient 2 coeff w (bias is not included)."""
    w = np.asarray(fc_weights, dtype=np.float64)
    return float(coeff * np.sum(w**2)), 2.0 * coeff * w


@dataclass
class AdamState:
    """First/second moment accumulators shaped like the parameter list."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], learning_rate: float = 0.001) -> "AdamState":
        return cls(
            learning_rate=learning_rate,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays.

    The moment accumulators in `state` are advanced in place.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValidationError("parameter/gradient/state length mismatch")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ValidationError(f"gradient shape {np.shape(g)} != parameter {np.shape(p)}")
    state.step += 1
    t = state.step
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g**2
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        out.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return out
