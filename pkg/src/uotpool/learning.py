"""Unconstrained reparametrization of the solver weights, a finite-difference
gradient oracle, and a small synthetic-task trainer.

Solver weights must stay strictly positive and priors must stay on the
simplex, so learnable parameters live in an unconstrained space:
``alpha_i = softplus(beta_i)``, ``rho = softplus(tau)``, and priors are
either fixed or produced by softmax attention scorers. Gradients are plain
central differences through the unrolled solver; at desk-scale parameter
counts this is exact enough for training and avoids hand-deriving
backpropagation through the iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np

from .numerics import softmax, softplus, softplus_inverse
from .pooling import (
    AttentionParams,
    UotBadmmPooling,
    UotSinkhornPooling,
    attention_weights,
    pool_with_plan,
)
from .solvers import Regularizer, SolverKind, UotParams, _solve_core

__all__ = [
    "FixedUniform",
    "LearnedAttention",
    "MaxThreshold",
    "MeanThreshold",
    "NonFiniteLossError",
    "PriorMode",
    "ReparamState",
    "SyntheticTask",
    "fd_gradient",
    "generate_task_data",
    "materialize_params",
    "train_synthetic",
]


@dataclass(frozen=True)
class FixedUniform:
    """Priors fixed to uniform distributions; the input matrix is ignored."""


@dataclass(frozen=True)
class LearnedAttention:
    """Priors produced by attention scorers over the input matrix."""

    params: AttentionParams


PriorMode = Union[FixedUniform, LearnedAttention]


@dataclass(frozen=True)
class ReparamState:
    """Unconstrained solver parameters: four length-K vectors plus a prior mode.

    The flat-vector layout used by :meth:`to_vector`, :meth:`from_vector`
    and :func:`fd_gradient` is ``beta0 | beta1 | beta2 | tau`` followed, in
    attention mode, by ``v_mat`` (row-major), ``w_vec`` and ``u_mat``
    (row-major, only if present).
    """

    beta0: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    tau: np.ndarray
    prior_mode: PriorMode = FixedUniform()

    def __post_init__(self):
        k = np.asarray(self.beta0, dtype=np.float64).shape
        for name in ("beta0", "beta1", "beta2", "tau"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.ndim != 1 or v.shape != k:
                raise ValueError(f"{name} must be a 1-D vector of length {k[0] if k else 0}")
            object.__setattr__(self, name, v)

    @property
    def k_iters(self) -> int:
        return self.beta0.shape[0]

    def to_vector(self) -> np.ndarray:
        parts = [self.beta0, self.beta1, self.beta2, self.tau]
        if isinstance(self.prior_mode, LearnedAttention):
            att = self.prior_mode.params
            parts.append(np.asarray(att.v_mat, dtype=np.float64).ravel())
            parts.append(np.asarray(att.w_vec, dtype=np.float64))
            if att.u_mat is not None:
                parts.append(np.asarray(att.u_mat, dtype=np.float64).ravel())
        return np.concatenate(parts)

    def from_vector(self, vec: np.ndarray) -> "ReparamState":
        """Rebuild a state with this one's shapes from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        k = self.k_iters
        expected = 4 * k
        if isinstance(self.prior_mode, LearnedAttention):
            att = self.prior_mode.params
            d = np.asarray(att.w_vec).shape[0]
            expected += d * d + d + (d * d if att.u_mat is not None else 0)
        if vec.shape != (expected,):
            raise ValueError(f"expected a flat vector of length {expected}, got shape {vec.shape}")
        b0, b1, b2, t = (vec[i * k:(i + 1) * k] for i in range(4))
        mode: PriorMode = self.prior_mode
        if isinstance(self.prior_mode, LearnedAttention):
            att = self.prior_mode.params
            d = np.asarray(att.w_vec).shape[0]
            rest = vec[4 * k:]
            v_mat = rest[: d * d].reshape(d, d)
            w_vec = rest[d * d: d * d + d]
            u_mat = None
            if att.u_mat is not None:
                u_mat = rest[d * d + d:].reshape(d, d)
            mode = LearnedAttention(AttentionParams(v_mat=v_mat, w_vec=w_vec, u_mat=u_mat))
        return ReparamState(beta0=b0, beta1=b1, beta2=b2, tau=t, prior_mode=mode)


def materialize_params(
    state: ReparamState,
    x: np.ndarray,
    reg: Regularizer = Regularizer.ENTROPIC,
) -> UotParams:
    """Turn an unconstrained state into strictly positive solver parameters.

    Weights go through softplus; priors are uniform in fixed mode, or
    softmax outputs of the attention scorers (``u_mat`` for the feature
    prior when present, the tanh scorer for the sample prior).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"input must be a 2-D matrix, got {x.ndim} dimensions")
    d, n = x.shape
    if isinstance(state.prior_mode, LearnedAttention):
        att = state.prior_mode.params
        q0 = attention_weights(x, att)
        if att.u_mat is not None:
            u = np.asarray(att.u_mat, dtype=np.float64)
            if u.shape != (d, d):
                raise ValueError(f"u_mat must be ({d}, {d}) for a {d}-row input, got {u.shape}")
            p0 = softmax(u @ x.sum(axis=-1))
        else:
            p0 = np.full(d, 1.0 / d)
    else:
        p0 = np.full(d, 1.0 / d)
        q0 = np.full(n, 1.0 / n)
    return UotParams(
        k_iters=state.k_iters,
        alpha0=softplus(state.beta0),
        alpha1=softplus(state.beta1),
        alpha2=softplus(state.beta2),
        rho=softplus(state.tau),
        p0=p0,
        q0=q0,
        reg=reg,
    )


def _central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    Raises if any probe returns a non-finite value, naming the coordinate.
    """
    grad = np.zeros_like(x)
    for j in range(x.size):
        probe = x.copy()
        probe[j] = x[j] + eps
        f_plus = f(probe)
        probe[j] = x[j] - eps
        f_minus = f(probe)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"loss returned a non-finite value at a probe of coordinate {j}")
        grad[j] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def fd_gradient(
    loss: Callable[[ReparamState], float],
    state: ReparamState,
    eps: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of ``loss`` with respect to the flat state vector.

    The entry order matches :meth:`ReparamState.to_vector`. Every probe is
    an independent loss evaluation, so the result is deterministic for a
    pure loss.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = float(loss(state))
    if not np.isfinite(base):
        raise ValueError("loss is non-finite at the given state")
    vec = state.to_vector()
    return _central_difference(lambda v: float(loss(state.from_vector(v))), vec, eps)


# ---- synthetic bag-classification tasks ----

@dataclass(frozen=True)
class MaxThreshold:
    """Positive label iff the per-bag maximum of one feature exceeds a threshold."""

    feature: int
    threshold: float = 0.9


@dataclass(frozen=True)
class MeanThreshold:
    """Positive label iff the per-bag mean of one feature exceeds a threshold."""

    feature: int
    threshold: float = 0.5


@dataclass(frozen=True)
class SyntheticTask:
    n_bags: int
    bag_size: int
    dim: int
    rule: MaxThreshold | MeanThreshold
    seed: int = 0


def generate_task_data(task: SyntheticTask) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic bags with labels that satisfy the rule by construction.

    Returns ``(x, y)`` with ``x`` of shape (n_bags, dim, bag_size) and
    labels in {-1, +1}, alternating so the classes are balanced. Bags are
    uniform noise on [0, 1] except for the rule's feature row, which is
    rewritten with a margin: for a max rule, positive bags get one entry
    well above the threshold and all other entries below it, while
    negative bags stay below two thirds of the threshold; for a mean rule,
    the whole feature row is shifted above or below the threshold.
    """
    rng = np.random.default_rng(task.seed)
    b, d, n = task.n_bags, task.dim, task.bag_size
    j = task.rule.feature
    if not 0 <= j < d:
        raise ValueError(f"rule feature {j} out of range for dim {d}")
    tau = float(task.rule.threshold)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"rule threshold must lie in (0, 1), got {tau}")
    x = rng.uniform(0.0, 1.0, (b, d, n))
    y = np.where(np.arange(b) % 2 == 0, 1.0, -1.0)
    if isinstance(task.rule, MaxThreshold):
        pos_low = tau + 0.5 * (1.0 - tau)
        neg_cap = 2.0 * tau / 3.0
        for i in range(b):
            if y[i] > 0:
                hit = rng.integers(n)
                x[i, j, hit] = rng.uniform(pos_low, 1.0)
                over = x[i, j, :] >= tau
                over[hit] = False
                x[i, j, over] = rng.uniform(0.0, tau, over.sum())
            else:
                over = x[i, j, :] >= neg_cap
                x[i, j, over] = rng.uniform(0.0, neg_cap, over.sum())
    else:
        for i in range(b):
            if y[i] > 0:
                x[i, j, :] = tau + (1.0 - tau) * rng.uniform(0.1, 1.0, n)
            else:
                x[i, j, :] = tau * rng.uniform(0.0, 0.9, n)
    return x, y


class NonFiniteLossError(RuntimeError):
    """Training aborted because the loss left the finite range.

    Attributes:
        trace: per-epoch losses recorded before the abort.
    """

    def __init__(self, epoch: int, trace: np.ndarray):
        self.epoch = int(epoch)
        self.trace = np.asarray(trace, dtype=np.float64)
        super().__init__(f"loss became non-finite at epoch {self.epoch}")


# Pooled features inherit the input's uniform [0, 1] scale, so the readout
# standardizes them with that distribution's mean 1/2 and std 1/sqrt(12).
_READOUT_CENTER = 0.5
_READOUT_SCALE = float(np.sqrt(12.0))


def train_synthetic(
    task: SyntheticTask,
    spec: UotSinkhornPooling | UotBadmmPooling,
    epochs: int = 30,
    lr: float = 3.0,
) -> np.ndarray:
    """Jointly train solver weights and a linear readout on a synthetic task.

    The loss is the mean logistic loss of ``w . standardized(pooled) + c``
    against the bag labels. All parameters (the unconstrained solver
    weights and the readout) move by plain gradient descent on a
    central-difference gradient, one full-batch step per epoch. Returns
    the loss trace of length ``epochs + 1``, starting with the initial
    loss; raises :class:`NonFiniteLossError` if the loss diverges.
    """
    if not isinstance(spec, (UotSinkhornPooling, UotBadmmPooling)):
        raise TypeError("training requires a transport pooling specification")
    kind = SolverKind.SINKHORN if isinstance(spec, UotSinkhornPooling) else SolverKind.BADMM
    base = spec.params
    d, n = task.dim, task.bag_size
    if base.p0.shape[0] != d or base.q0.shape[0] != n:
        raise ValueError(
            f"pooling priors sized ({base.p0.shape[0]}, {base.q0.shape[0]}) do not match "
            f"task dims ({d}, {n})"
        )
    x, y = generate_task_data(task)
    k = base.k_iters

    theta0 = np.concatenate([
        softplus_inverse(base.alpha0),
        softplus_inverse(base.alpha1),
        softplus_inverse(base.alpha2),
        softplus_inverse(base.rho),
    ])
    vec = np.concatenate([theta0, np.zeros(d), np.zeros(1)])

    def loss_of(v: np.ndarray) -> float:
        weights = softplus(v[: 4 * k]).reshape(4, k)
        params = UotParams(
            k_iters=k,
            alpha0=weights[0], alpha1=weights[1], alpha2=weights[2], rho=weights[3],
            p0=base.p0, q0=base.q0, reg=base.reg,
        )
        plan, _ = _solve_core(x, params, kind)
        pooled = pool_with_plan(x, plan)
        features = (pooled - _READOUT_CENTER) * _READOUT_SCALE
        logits = features @ v[4 * k: 4 * k + d] + v[-1]
        return float(np.logaddexp(0.0, -y * logits).mean())

    trace = [loss_of(vec)]
    if not np.isfinite(trace[0]):
        raise NonFiniteLossError(0, np.array([]))
    for epoch in range(int(epochs)):
        # A divergent step can underflow a softplus weight to exactly zero,
        # which the parameter validation rejects; report that the same way
        # as a NaN loss so callers see one abort signal.
        try:
            if lr != 0.0:
                grad = _central_difference(loss_of, vec, 1e-5)
                vec = vec - lr * grad
            current = loss_of(vec)
        except ValueError as exc:
            raise NonFiniteLossError(epoch + 1, np.asarray(trace)) from exc
        if not np.isfinite(current):
            raise NonFiniteLossError(epoch + 1, np.asarray(trace))
        trace.append(current)
    return np.asarray(trace)
