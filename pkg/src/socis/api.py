"""Approximate policy iteration for the log and quadratic control formulations.

Each sweep estimates the cost of the current feedback policy at a set of
evaluation points by Monte Carlo, projects the estimates onto an RBF basis by
least squares and takes the next policy from the gradient of the fit:

* LOG: ``c = -lam sigma^T grad J_hat`` with paths driven by ``b + sigma c``.
* QUAD: ``c = 1/2 sigma^T grad log Q_hat`` with paths driven by ``b - sigma c``
  and weights ``exp(int |c|^2 dt)``. The control is clipped at ``delta``; the
  run stops as diverged when the unclipped update exceeds ``delta``.
"""
from __future__ import annotations

import csv
import dataclasses
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import rng
from .costs import (CostSpecLog, CostSpecQuad, FeedbackPolicy, McParams, eval_J1,
                    eval_J2, eval_J2_reweighted)
from .errors import InvalidArgument, NonpositiveValue, NoValidSamples
from .rbf import ParametricFunction, RbfBasis, fit_least_squares
from .sde import ExitStatus, SdeModel


class Formulation(str, Enum):
    LOG = "LOG"
    QUAD = "QUAD"


class ApiStatus(str, Enum):
    CONVERGED = "CONVERGED"
    MAX_ITERS = "MAX_ITERS"
    DIVERGED_CONTROL_CAP = "DIVERGED_CONTROL_CAP"
    DIVERGED_BLOWUP = "DIVERGED_BLOWUP"


@dataclass(frozen=True)
class ApiConfig:
    """Settings of one policy-iteration run.

    Parameters
    ----------
    formulation : Formulation
    basis : RbfBasis
    eval_points : array_like
        Scalar coordinates (radii, or ``x`` in one dimension). Point ``r`` is
        started at ``r e_1``; points on the domain boundary get their exact
        boundary cost with zero standard error.
    mc : McParams
        ``n_paths`` is per evaluation point.
    tol : float
        Stop when the Euclidean change of the cost vector is ``<= tol``.
    max_iters : int
        Maximum number of cost evaluations after the initial one.
    lam : float
        LOG only.
    epsilon_reg : float
        Regularization of the committor boundary data.
    control_cap : float, optional
        ``delta``; required for QUAD, optional clip for LOG.
    cost : CostSpecLog or CostSpecQuad, optional
        Overrides the default regularized committor cost.
    init : {"auto", "random", "zero"}
        ``random`` draws ``theta_0`` from a standard normal fixed by the seed
        and starts from ``c = -sigma^T grad(theta_0 . phi)``; ``zero`` starts
        from the zero control. ``auto`` is ``random`` for LOG and ``zero``
        for QUAD, whose exponential weights need a small initial control.
    init_policy : FeedbackPolicy, optional
        Start from this policy instead (e.g. an analytic optimum).
    radialize : bool
        Fit on ``|x|`` (else ``x_1``).
    quad_sampling : {"minus", "reweighted"}
        QUAD only. ``minus`` samples ``g^2 exp(int |c|^2)`` along paths with
        drift ``b - sigma c``; ``reweighted`` samples ``(g / L)^2`` along
        paths with drift ``b + sigma c``. Both estimate the same cost.
    """

    formulation: Formulation
    basis: RbfBasis
    eval_points: tuple
    mc: McParams
    tol: float = 0.1
    max_iters: int = 10
    lam: float = 1.0
    epsilon_reg: float = 0.1
    control_cap: Optional[float] = None
    cost: Optional[object] = None
    init: str = "auto"
    init_policy: Optional[Callable] = None
    radialize: bool = True
    blowup_threshold: float = 0.5
    quad_sampling: str = "minus"

    def __post_init__(self):
        object.__setattr__(self, "formulation", Formulation(self.formulation))
        pts = tuple(float(p) for p in np.atleast_1d(self.eval_points))
        object.__setattr__(self, "eval_points", pts)
        if not pts:
            raise InvalidArgument("need at least one evaluation point")
        if not self.tol > 0:
            raise InvalidArgument("tol must be positive")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")
        if self.formulation is Formulation.LOG and not self.lam > 0:
            raise InvalidArgument("lambda must be positive")
        if self.control_cap is not None and not self.control_cap > 0:
            raise InvalidArgument("control_cap must be positive")
        if self.formulation is Formulation.QUAD and self.control_cap is None:
            raise InvalidArgument("QUAD runs need a control cap")
        if self.init not in ("auto", "random", "zero"):
            raise InvalidArgument(f"unknown init {self.init!r}")
        if self.quad_sampling not in ("minus", "reweighted"):
            raise InvalidArgument(f"unknown quad_sampling {self.quad_sampling!r}")

    def cost_spec(self):
        if self.cost is not None:
            return self.cost
        if self.formulation is Formulation.LOG:
            return CostSpecLog.committor(self.epsilon_reg, self.lam)
        return CostSpecQuad.committor(self.epsilon_reg)


@dataclass
class ApiIteration:
    """One policy evaluation: costs at the evaluation points and the fit."""

    k: int
    theta: np.ndarray
    cost: np.ndarray
    std_error: np.ndarray
    delta_cost: float
    control_norm: np.ndarray
    censored_fraction: np.ndarray
    blowup_fraction: np.ndarray
    exact: np.ndarray

    @property
    def max_control_norm(self):
        return float(np.max(self.control_norm))


@dataclass
class ApiTrace:
    formulation: Formulation
    eval_points: np.ndarray
    iterations: list = field(default_factory=list)
    status: Optional[ApiStatus] = None
    notes: list = field(default_factory=list)

    def __len__(self):
        return len(self.iterations)

    @property
    def n_iterations(self):
        """Number of policy updates that were evaluated."""
        return max(len(self.iterations) - 1, 0)

    @property
    def final(self):
        return self.iterations[-1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            write_trace_rows(csv.writer(fh), self)


TRACE_COLUMNS = ["iteration", "point", "coordinate", "cost", "std_error", "delta_cost",
                 "control_norm", "censored_fraction", "blowup_fraction"]


def write_trace_rows(writer, trace):
    writer.writerow(TRACE_COLUMNS)
    for it in trace.iterations:
        for i, r in enumerate(trace.eval_points):
            writer.writerow([it.k, i, repr(float(r)), repr(float(it.cost[i])),
                             repr(float(it.std_error[i])), repr(float(it.delta_cost)),
                             repr(float(it.control_norm[i])),
                             repr(float(it.censored_fraction[i])),
                             repr(float(it.blowup_fraction[i]))])


def _states(coords, dim):
    x = np.zeros((len(coords), dim))
    x[:, 0] = coords
    return x


def _norms(c):
    return np.sqrt(np.einsum("ij,ij->i", c, c))


def _initial_value(config, model):
    L = len(config.basis)
    init = config.init
    if init == "auto":
        init = "zero" if config.formulation is Formulation.QUAD else "random"
    if init == "zero":
        theta = np.zeros(L)
    else:
        theta = np.random.default_rng(rng.derive_seed(config.mc.seed, 0xB0)).standard_normal(L)
    return ParametricFunction(config.basis, theta, config.radialize)


def _log_update(value, lam, model, cap):
    def control(x):
        return -lam * model.sigma_t_dot(x, value.grad(x))

    return FeedbackPolicy(control, cap)


def _quad_update(value, model, cap):
    def control(x):
        q = value(x)
        return 0.5 * model.sigma_t_dot(x, value.grad(x)) / q[:, None]

    return FeedbackPolicy(control, cap)


def _evaluate(config, model, domain, policy, k, states, boundary):
    """Cost estimates at the evaluation points under ``policy``."""
    spec = config.cost_spec()
    n = states.shape[0]
    cost = np.zeros(n)
    se = np.zeros(n)
    cens = np.zeros(n)
    blow = np.zeros(n)
    quad = config.formulation is Formulation.QUAD
    if not quad:
        estimator = eval_J1
    elif config.quad_sampling == "minus":
        estimator = eval_J2
    else:
        estimator = eval_J2_reweighted
    for i in range(n):
        x = states[i:i + 1]
        if boundary[i] != ExitStatus.INTERIOR:
            g = spec.terminal(x, np.array([boundary[i]]))[0]
            cost[i] = g * g if quad else g
            continue
        mc = dataclasses.replace(config.mc, seed=rng.derive_seed(config.mc.seed, k, i))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                est = estimator(spec, model, domain, policy, x[0], mc)
            except NoValidSamples as exc:
                if not exc.blowup_fraction:
                    raise
                cost[i] = se[i] = np.nan
                cens[i], blow[i] = exc.censored_fraction, exc.blowup_fraction
                continue
        cost[i], se[i] = est.estimate, est.std_error
        cens[i], blow[i] = est.censored_fraction, est.blowup_fraction
    return cost, se, cens, blow


def _run(config: ApiConfig, model: SdeModel, domain):
    quad = config.formulation is Formulation.QUAD
    coords = np.asarray(config.eval_points)
    states = _states(coords, model.dim)
    boundary = domain.classify(states)
    trace = ApiTrace(config.formulation, coords)
    cap = config.control_cap

    if config.init_policy is not None:
        policy = config.init_policy
        theta_prev = np.full(len(config.basis), np.nan)
    else:
        v0 = _initial_value(config, model)
        theta_prev = v0.theta
        policy = _log_update(v0, config.lam if not quad else 1.0, model, cap)
    if not isinstance(policy, FeedbackPolicy):
        policy = FeedbackPolicy(policy, cap)

    value = None
    prev = None
    for k in range(config.max_iters + 1):
        cost, se, cens, blow = _evaluate(config, model, domain, policy, k, states, boundary)
        delta = np.nan if prev is None else float(np.linalg.norm(cost - prev))
        cnorm = _norms(policy(states))
        diverged = np.any(blow > config.blowup_threshold) or np.any(np.isnan(cost))
        if diverged:
            theta = np.full(len(config.basis), np.nan)
        else:
            value = fit_least_squares(config.basis, states, cost, config.radialize)
            theta = value.theta.copy()
        trace.iterations.append(ApiIteration(k, theta, cost, se, delta, cnorm,
                                             cens, blow, boundary != ExitStatus.INTERIOR))
        if diverged:
            trace.status = ApiStatus.DIVERGED_BLOWUP
            break
        if prev is not None and delta <= config.tol:
            trace.status = ApiStatus.CONVERGED
            break
        if k == config.max_iters:
            trace.status = ApiStatus.MAX_ITERS
            break
        prev = cost
        if quad:
            qhat = value(states)
            if np.any(qhat <= 0):
                raise NonpositiveValue(
                    f"fitted second moment is nonpositive at iteration {k}",
                    iteration=k, trace=trace)
            policy = _quad_update(value, model, cap)
            raw = policy.max_norm(states)
            if raw > cap:
                trace.status = ApiStatus.DIVERGED_CONTROL_CAP
                trace.notes.append(f"unclipped control norm {raw:.4g} exceeds cap {cap:.4g}")
                break
        else:
            policy = _log_update(value, config.lam, model, cap)
    return policy, value, trace


def api_run_log(config: ApiConfig, model: SdeModel, domain):
    """Policy iteration for the log-form cost.

    Returns
    -------
    policy : FeedbackPolicy
        Policy derived from the last fit (or the last evaluated policy when the
        run stopped on a guard).
    value : ParametricFunction or None
        Last fitted cost ``J_hat``; None if the first evaluation blew up.
    trace : ApiTrace
    """
    if config.formulation is not Formulation.LOG:
        raise InvalidArgument("api_run_log needs formulation LOG")
    return _run(config, model, domain)


def api_run_quad(config: ApiConfig, model: SdeModel, domain):
    """Policy iteration for the quadratic-form cost.

    Raises
    ------
    NonpositiveValue
        If the fitted second moment is ``<= 0`` at an evaluation point; the
        exception carries the iteration index and the partial trace.
    """
    if config.formulation is not Formulation.QUAD:
        raise InvalidArgument("api_run_quad needs formulation QUAD")
    return _run(config, model, domain)


@dataclass
class MonotonicityReport:
    per_point: np.ndarray
    aggregate: float
    defined: bool


def monotonicity_report(trace: ApiTrace, n_sigma=3.0):
    """Fraction of consecutive pairs with ``J^{k+1} <= J^k + n_sigma * combined SE``.

    Boundary points (exact costs) are left out. With fewer than two
    iterations the report is empty and flagged undefined.
    """
    its = trace.iterations
    interior = ~its[0].exact if its else np.zeros(0, dtype=bool)
    if len(its) < 2 or not interior.any():
        return MonotonicityReport(np.full(int(interior.sum()), np.nan), float("nan"), False)
    hits = np.zeros(int(interior.sum()))
    for a, b in zip(its[:-1], its[1:]):
        tol = n_sigma * np.hypot(a.std_error, b.std_error)
        hits += (b.cost <= a.cost + tol)[interior]
    per = hits / (len(its) - 1)
    return MonotonicityReport(per, float(per.mean()), True)
