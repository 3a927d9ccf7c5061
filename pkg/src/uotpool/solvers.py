"""Unrolled solvers for the regularized unbalanced optimal transport problem.

The problem solved here, for a cost-like input matrix ``X`` (features x
samples) and prior marginals ``p0`` (over the D feature dimensions) and
``q0`` (over the N samples), is

    minimize_{P >= 0}  <-X, P> + a0*R(P) + a1*KL(P 1_N | p0) + a2*KL(P^T 1_D | q0)

with ``R`` either the entropic regularizer <P, log P - 1> or the quadratic
regularizer <P, P>, and KL the generalized (unnormalized) divergence. Two
fixed-depth iterative schemes are provided, each executing exactly
``k_iters`` modules with per-module weights:

* :func:`sinkhorn_uot` -- alternating damped dual updates on a log-domain
  kernel anchored at the prior product ``p0 q0^T`` (entropic only);
* :func:`badmm_uot` -- a Bregman ADMM splitting with auxiliary plan ``S``
  and relaxed marginals ``mu``, ``eta``, all updates in the log domain
  (entropic or quadratic).

Solvers never raise on numerical blow-up: overflow and NaN propagate to the
returned plan and are reported through :class:`SolverDiagnostics.has_nan`.
All public solver entry points take a single (D, N) matrix; the module-level
step functions broadcast over leading batch axes and are reused verbatim by
the batch experiment drivers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.special import rel_entr, xlogy

from .numerics import logsumexp_cols, logsumexp_rows, validate_simplex

__all__ = [
    "BadmmState",
    "Regularizer",
    "SinkhornState",
    "SolverDiagnostics",
    "SolverKind",
    "UotParams",
    "badmm_auxiliary_update",
    "badmm_dual_update",
    "badmm_init",
    "badmm_primal_update",
    "badmm_uot",
    "sinkhorn_init",
    "sinkhorn_step",
    "sinkhorn_uot",
    "uot_objective",
]


class Regularizer(Enum):
    """Smoothing term applied to the transport plan."""

    ENTROPIC = "entropic"
    QUADRATIC = "quadratic"


class SolverKind(Enum):
    """Which unrolled scheme computes the plan."""

    SINKHORN = "sinkhorn"
    BADMM = "badmm"


@dataclass(frozen=True)
class UotParams:
    """Parameter bundle for one unrolled solve.

    ``alpha0``, ``alpha1``, ``alpha2`` and ``rho`` are per-module weight
    vectors of length ``k_iters`` (``rho`` is only consumed by the BADMM
    scheme). ``p0`` and ``q0`` are probability vectors over the feature and
    sample axes respectively; their lengths fix the (D, N) shape the solve
    expects.
    """

    k_iters: int
    alpha0: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    rho: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    reg: Regularizer = Regularizer.ENTROPIC

    def __post_init__(self):
        k = int(self.k_iters)
        if k < 1:
            raise ValueError(f"k_iters must be a positive integer, got {self.k_iters}")
        object.__setattr__(self, "k_iters", k)
        for name in ("alpha0", "alpha1", "alpha2", "rho"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if w.ndim == 0:
                w = np.full(k, float(w))
            if w.shape != (k,):
                raise ValueError(f"{name} must be scalar or length {k}, got shape {w.shape}")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError(f"{name} entries must be finite and strictly positive")
            w.flags.writeable = False
            object.__setattr__(self, name, w)
        for name in ("p0", "q0"):
            v = validate_simplex(getattr(self, name), name).copy()
            v.flags.writeable = False
            object.__setattr__(self, name, v)

    @classmethod
    def constant(
        cls,
        p0: np.ndarray,
        q0: np.ndarray,
        *,
        k_iters: int = 4,
        alpha0: float | np.ndarray = 1.0,
        alpha1: float | np.ndarray = 1.0,
        alpha2: float | np.ndarray = 1.0,
        rho: float | np.ndarray = 1.0,
        reg: Regularizer = Regularizer.ENTROPIC,
    ) -> "UotParams":
        """Build a parameter bundle, broadcasting scalar weights to all modules."""
        return cls(
            k_iters=k_iters,
            alpha0=np.asarray(alpha0, dtype=np.float64),
            alpha1=np.asarray(alpha1, dtype=np.float64),
            alpha2=np.asarray(alpha2, dtype=np.float64),
            rho=np.asarray(rho, dtype=np.float64),
            p0=p0,
            q0=q0,
            reg=reg,
        )

    @classmethod
    def uniform(
        cls,
        d: int,
        n: int,
        *,
        k_iters: int = 4,
        alpha0: float | np.ndarray = 1.0,
        alpha1: float | np.ndarray = 1.0,
        alpha2: float | np.ndarray = 1.0,
        rho: float | np.ndarray = 1.0,
        reg: Regularizer = Regularizer.ENTROPIC,
    ) -> "UotParams":
        """Constant weights with uniform priors over ``d`` features and ``n`` samples."""
        return cls.constant(
            np.full(d, 1.0 / d),
            np.full(n, 1.0 / n),
            k_iters=k_iters,
            alpha0=alpha0,
            alpha1=alpha1,
            alpha2=alpha2,
            rho=rho,
            reg=reg,
        )


@dataclass
class SolverDiagnostics:
    """Health report for one solve.

    ``objective_trace`` holds the objective value after each of the
    ``k_iters`` modules, evaluated with that module's weights. ``has_nan``
    is set when the final plan or any trace entry is NaN or infinite.
    """

    has_nan: bool
    total_mass: float
    objective_trace: np.ndarray
    marginal_gap_row: float
    marginal_gap_col: float


@dataclass
class SinkhornState:
    """Dual variables ``a`` (length D), ``b`` (length N) and the log-domain
    kernel ``y`` they induce. Freshly initialized states carry ``a = b = 0``
    and ``y`` equal to the scaled cost ``X / alpha0[0]``; each step rebuilds
    ``y`` from the duals before using it."""

    a: np.ndarray
    b: np.ndarray
    y: np.ndarray


@dataclass
class BadmmState:
    """Log-domain primal plan, auxiliary copies and scaled dual variables."""

    log_p: np.ndarray
    log_s: np.ndarray
    log_mu: np.ndarray
    log_eta: np.ndarray
    z_mat: np.ndarray
    z1: np.ndarray
    z2: np.ndarray


def _log_prior(v: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(v)


def _kernel(
    x: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    alpha0_k: float,
    log_p0: np.ndarray,
    log_q0: np.ndarray,
) -> np.ndarray:
    """Log-domain kernel: scaled cost plus prior-anchored duals on both axes."""
    return x / alpha0_k + (log_p0 + a)[..., :, None] + (log_q0 + b)[..., None, :]


def sinkhorn_init(x: np.ndarray, params: UotParams) -> SinkhornState:
    """Zero duals and the scaled cost as the initial kernel."""
    x = np.asarray(x, dtype=np.float64)
    a = np.zeros(x.shape[:-1])
    b = np.zeros(x.shape[:-2] + x.shape[-1:])
    with np.errstate(all="ignore"):
        y = x / float(params.alpha0[0])
    return SinkhornState(a=a, b=b, y=y)


def sinkhorn_step(
    state: SinkhornState,
    x: np.ndarray,
    alpha0_k: float,
    alpha1_k: float,
    alpha2_k: float,
    p0: np.ndarray,
    q0: np.ndarray,
) -> SinkhornState:
    """One module of damped alternating dual updates.

    The row dual moves toward the value that matches the row marginal to
    ``p0``, damped by ``alpha1 / (alpha0 + alpha1)``; when ``alpha1``
    dominates ``alpha0`` a single half step pins the row marginal to ``p0``
    exactly. The column dual follows with the freshly rebuilt kernel and
    damping ``alpha2 / (alpha0 + alpha2)``.
    """
    g1 = alpha1_k / (alpha0_k + alpha1_k)
    g2 = alpha2_k / (alpha0_k + alpha2_k)
    log_p0 = _log_prior(p0)
    log_q0 = _log_prior(q0)
    a, b = state.a, state.b
    with np.errstate(all="ignore"):
        y = _kernel(x, a, b, alpha0_k, log_p0, log_q0)
        a = g1 * (a + log_p0 - logsumexp_rows(y))
        y = _kernel(x, a, b, alpha0_k, log_p0, log_q0)
        b = g2 * (b + log_q0 - logsumexp_cols(y))
        y = _kernel(x, a, b, alpha0_k, log_p0, log_q0)
    return SinkhornState(a=a, b=b, y=y)


def badmm_init(x: np.ndarray, params: UotParams) -> BadmmState:
    """Product of the priors as both plans, priors as marginals, zero duals."""
    x = np.asarray(x, dtype=np.float64)
    batch = x.shape[:-2]
    d, n = x.shape[-2], x.shape[-1]
    log_p0 = _log_prior(params.p0)
    log_q0 = _log_prior(params.q0)
    log_joint = np.broadcast_to(log_p0[:, None] + log_q0[None, :], batch + (d, n)).copy()
    return BadmmState(
        log_p=log_joint,
        log_s=log_joint.copy(),
        log_mu=np.broadcast_to(log_p0, batch + (d,)).copy(),
        log_eta=np.broadcast_to(log_q0, batch + (n,)).copy(),
        z_mat=np.zeros(batch + (d, n)),
        z1=np.zeros(batch + (d,)),
        z2=np.zeros(batch + (n,)),
    )


def badmm_primal_update(
    state: BadmmState,
    x: np.ndarray,
    alpha0_k: float,
    rho_k: float,
    reg: Regularizer,
) -> BadmmState:
    """Update the primal plan and project its row sums onto ``mu``.

    The unconstrained minimizer lives at ``y``; adding the row-wise
    normalizer ``log_mu - logsumexp(y)`` makes ``exp(log_p)`` satisfy
    ``P 1_N = mu`` exactly, by construction.
    """
    with np.errstate(all="ignore"):
        if reg is Regularizer.ENTROPIC:
            y = state.log_s + (x - state.z_mat) / rho_k
        else:
            s = np.exp(state.log_s)
            y = state.log_s + (x - alpha0_k * s - state.z_mat) / rho_k
        log_p = (state.log_mu - logsumexp_rows(y))[..., :, None] + y
    return replace(state, log_p=log_p)


def badmm_auxiliary_update(
    state: BadmmState,
    alpha0_k: float,
    alpha1_k: float,
    alpha2_k: float,
    rho_k: float,
    p0: np.ndarray,
    q0: np.ndarray,
    reg: Regularizer,
) -> BadmmState:
    """Update the auxiliary plan and the relaxed marginals.

    ``exp(log_s)`` is projected so its column sums equal the incoming
    ``eta``; the marginals then move toward the priors as weighted
    geometric means. Must run after :func:`badmm_primal_update` within a
    module, while ``log_s`` and ``log_eta`` still hold the previous
    module's values.
    """
    log_p0 = _log_prior(p0)
    log_q0 = _log_prior(q0)
    with np.errstate(all="ignore"):
        if reg is Regularizer.ENTROPIC:
            y = (state.z_mat + rho_k * state.log_p) / (alpha0_k + rho_k)
        else:
            s = np.exp(state.log_s)
            y = state.log_p + (state.z_mat - alpha0_k * s) / rho_k
        log_s = (state.log_eta - logsumexp_cols(y))[..., None, :] + y
        log_mu = (rho_k * state.log_mu + alpha1_k * log_p0 - state.z1) / (rho_k + alpha1_k)
        log_eta = (rho_k * state.log_eta + alpha2_k * log_q0 - state.z2) / (rho_k + alpha2_k)
    return replace(state, log_s=log_s, log_mu=log_mu, log_eta=log_eta)


def badmm_dual_update(state: BadmmState, alpha0_k: float, rho_k: float) -> BadmmState:
    """Additive dual steps on the plan gap and both marginal gaps.

    Exponentiates the current log-domain variables; the plan dual moves
    with step ``alpha0_k``, the marginal duals with step ``rho_k``.
    """
    with np.errstate(all="ignore"):
        p = np.exp(state.log_p)
        s = np.exp(state.log_s)
        z_mat = state.z_mat + alpha0_k * (p - s)
        z1 = state.z1 + rho_k * (np.exp(state.log_mu) - p.sum(axis=-1))
        z2 = state.z2 + rho_k * (np.exp(state.log_eta) - s.sum(axis=-2))
    return replace(state, z_mat=z_mat, z1=z1, z2=z2)


def _objective_core(
    x: np.ndarray,
    p: np.ndarray,
    alpha0: float,
    alpha1: float,
    alpha2: float,
    p0: np.ndarray,
    q0: np.ndarray,
    reg: Regularizer,
) -> np.ndarray:
    """Objective value(s); never raises, NaN and infinities pass through."""
    with np.errstate(all="ignore"):
        cost = -(x * p).sum(axis=(-2, -1))
        if reg is Regularizer.ENTROPIC:
            r = xlogy(p, p).sum(axis=(-2, -1)) - p.sum(axis=(-2, -1))
        else:
            r = (p * p).sum(axis=(-2, -1))
        row = p.sum(axis=-1)
        col = p.sum(axis=-2)
        kl_row = rel_entr(row, p0).sum(axis=-1) - row.sum(axis=-1) + p0.sum()
        kl_col = rel_entr(col, q0).sum(axis=-1) - col.sum(axis=-1) + q0.sum()
        return cost + alpha0 * r + alpha1 * kl_row + alpha2 * kl_col


def uot_objective(
    x: np.ndarray,
    p: np.ndarray,
    alpha0: float,
    alpha1: float,
    alpha2: float,
    p0: np.ndarray,
    q0: np.ndarray,
    reg: Regularizer,
) -> float:
    """Evaluate the transport objective at a given plan.

    Validating wrapper around the same evaluator the solvers use for their
    traces: rejects non-finite inputs, negative plan entries and priors
    with zero mass anywhere.
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if x.shape != p.shape:
        raise ValueError(f"input and plan shapes differ: {x.shape} vs {p.shape}")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(p)):
        raise ValueError("objective inputs must be finite")
    if np.any(p < 0):
        raise ValueError("plan entries must be nonnegative")
    p0 = np.asarray(p0, dtype=np.float64)
    q0 = np.asarray(q0, dtype=np.float64)
    if p0.shape != x.shape[-2:-1] or q0.shape != x.shape[-1:]:
        raise ValueError("prior lengths must match the plan dimensions")
    if np.any(p0 <= 0) or np.any(q0 <= 0):
        raise ValueError("priors must be strictly positive")
    return float(_objective_core(x, p, alpha0, alpha1, alpha2, p0, q0, reg))


def _solve_core(
    x: np.ndarray,
    params: UotParams,
    kind: SolverKind,
) -> tuple[np.ndarray, np.ndarray]:
    """Run all modules on a (possibly batched) input.

    Returns the final plan with shape matching ``x`` and the objective
    trace with shape ``(k_iters,) + batch_shape``.
    """
    x = np.asarray(x, dtype=np.float64)
    trace = []
    plan = None
    if kind is SolverKind.SINKHORN:
        state = sinkhorn_init(x, params)
        for k in range(params.k_iters):
            state = sinkhorn_step(
                state, x,
                float(params.alpha0[k]), float(params.alpha1[k]), float(params.alpha2[k]),
                params.p0, params.q0,
            )
            with np.errstate(all="ignore"):
                plan = np.exp(state.y)
            trace.append(_objective_core(
                x, plan,
                float(params.alpha0[k]), float(params.alpha1[k]), float(params.alpha2[k]),
                params.p0, params.q0, params.reg,
            ))
    else:
        state = badmm_init(x, params)
        for k in range(params.k_iters):
            a0 = float(params.alpha0[k])
            a1 = float(params.alpha1[k])
            a2 = float(params.alpha2[k])
            rho = float(params.rho[k])
            state = badmm_primal_update(state, x, a0, rho, params.reg)
            state = badmm_auxiliary_update(state, a0, a1, a2, rho, params.p0, params.q0, params.reg)
            state = badmm_dual_update(state, a0, rho)
            with np.errstate(all="ignore"):
                plan = np.exp(state.log_p)
            trace.append(_objective_core(x, plan, a0, a1, a2, params.p0, params.q0, params.reg))
    return plan, np.stack(trace, axis=0)


def _check_solver_input(x: np.ndarray, params: UotParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"input must be a 2-D matrix, got {x.ndim} dimensions")
    d, n = params.p0.shape[0], params.q0.shape[0]
    if x.shape != (d, n):
        raise ValueError(
            f"input shape {x.shape} does not match prior dimensions ({d}, {n})"
        )
    return x


def _diagnostics(plan: np.ndarray, trace: np.ndarray, params: UotParams) -> SolverDiagnostics:
    finite = bool(np.isfinite(plan).all()) and bool(np.isfinite(trace).all())
    with np.errstate(invalid="ignore"):
        return SolverDiagnostics(
            has_nan=not finite,
            total_mass=float(np.abs(plan).sum()),
            objective_trace=trace,
            marginal_gap_row=float(np.abs(plan.sum(axis=-1) - params.p0).sum()),
            marginal_gap_col=float(np.abs(plan.sum(axis=-2) - params.q0).sum()),
        )


def sinkhorn_uot(x: np.ndarray, params: UotParams) -> tuple[np.ndarray, SolverDiagnostics]:
    """Solve with the damped dual-update scheme (entropic regularizer only).

    Returns the nonnegative plan ``exp(y)`` after the last module together
    with diagnostics. Numerical failure never raises; inspect
    ``diagnostics.has_nan``.
    """
    if params.reg is not Regularizer.ENTROPIC:
        raise ValueError("the Sinkhorn scheme supports only the entropic regularizer")
    x = _check_solver_input(x, params)
    plan, trace = _solve_core(x, params, SolverKind.SINKHORN)
    return plan, _diagnostics(plan, trace, params)


def badmm_uot(x: np.ndarray, params: UotParams) -> tuple[np.ndarray, SolverDiagnostics]:
    """Solve with the Bregman ADMM scheme (entropic or quadratic regularizer)."""
    x = _check_solver_input(x, params)
    plan, trace = _solve_core(x, params, SolverKind.BADMM)
    return plan, _diagnostics(plan, trace, params)
