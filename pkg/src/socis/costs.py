"""Cost functionals of the two control formulations and their optimal policies.

The log (moment generating function) form minimizes

    J1(x, u) = E[ int (|u|^2 / (2 lam) + f) dt + g(X_tau) ]

under ``dX = (b + sigma u) dt + sigma dB``; the quadratic (second moment)
form minimizes

    J2(x, u) = E[ g(Y_tau)^2 exp(int |u|^2 dt) ]

under ``dY = (b - sigma u) dt + sigma dB``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, InvalidArgument, NonpositiveValue, NoValidSamples
from .benchmarks import _radial
from .sde import ControlSign, ExitStatus, SdeModel, mean_and_se, sample_batch

#: Per-path log-weights above this are flagged as overflowing.
LOG_WEIGHT_LIMIT = 700.0


class ExcessCensoringWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FeedbackPolicy:
    """Stationary feedback ``c(x)``, optionally clipped to ``|c(x)| <= bound``."""

    control: Callable
    bound: Optional[float] = None

    def __post_init__(self):
        if self.bound is not None and not self.bound > 0:
            raise InvalidArgument("bound must be positive")

    def raw(self, x):
        return np.asarray(self.control(np.atleast_2d(x)), dtype=float)

    def __call__(self, x):
        c = self.raw(x)
        if self.bound is None:
            return c
        norm = np.sqrt(np.einsum("ij,ij->i", c, c))
        over = norm > self.bound
        if over.any():
            c = c.copy()
            c[over] *= (self.bound / norm[over])[:, None]
        return c

    def max_norm(self, x, clipped=False):
        c = self(x) if clipped else self.raw(x)
        return float(np.max(np.sqrt(np.einsum("ij,ij->i", c, c))))

    @classmethod
    def zero(cls, noise_dim):
        return cls(lambda x: np.zeros((x.shape[0], noise_dim)))


@dataclass(frozen=True)
class AnalyticFunction:
    """A value function given by closed-form ``value`` and ``grad`` callables on batches."""

    value: Callable
    grad: Callable

    def __call__(self, x):
        return np.asarray(self.value(np.atleast_2d(x)), dtype=float)


@dataclass(frozen=True)
class McParams:
    dt: float
    n_paths: int
    max_steps: int
    seed: int = 0
    threads: int = 1
    censor_threshold: float = 0.01

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidArgument("dt must be positive")
        if self.n_paths < 1 or self.max_steps < 1:
            raise InvalidArgument("n_paths and max_steps must be >= 1")


@dataclass
class McEstimate:
    """Monte Carlo estimate with diagnostics; unpacks as ``(estimate, std_error)``."""

    estimate: float
    std_error: float
    n_valid: int
    censored_fraction: float
    blowup_fraction: float = 0.0
    overflow: bool = False
    warnings: list = field(default_factory=list)

    def __iter__(self):
        yield self.estimate
        yield self.std_error


def indicator_b(exit_codes):
    return (np.asarray(exit_codes) == ExitStatus.HIT_B).astype(float)


@dataclass(frozen=True)
class CostSpecLog:
    """Log-form cost: ``lam``, running cost ``f(x)`` and terminal cost ``g(x_final, exit)``."""

    lam: float = 1.0
    running_f: Optional[Callable] = None
    terminal_g: Optional[Callable] = None
    epsilon_reg: float = 0.0

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidArgument("lambda must be positive")
        if self.epsilon_reg < 0:
            raise InvalidArgument("epsilon_reg must be nonnegative")

    @classmethod
    def committor(cls, epsilon, lam=1.0):
        """``f = 0``, ``g = -log(1_B + eps)``; requires ``eps > 0``."""
        if not epsilon > 0:
            raise InvalidArgument("log-form committor cost needs epsilon > 0")
        eps = float(epsilon)
        return cls(lam=lam, terminal_g=lambda x, e: -np.log(indicator_b(e) + eps),
                   epsilon_reg=eps)

    @classmethod
    def exit_time(cls, lam=1.0):
        """``f = 1``, ``g = 0``: the cost is the exit time."""
        return cls(lam=lam, running_f=lambda x: np.ones(x.shape[0]))

    def terminal(self, x, e):
        if self.terminal_g is None:
            return np.zeros(len(e))
        return np.asarray(self.terminal_g(x, e), dtype=float)


@dataclass(frozen=True)
class CostSpecQuad:
    """Quadratic-form cost with terminal data ``g(x_final, exit) >= 0``."""

    terminal_g: Optional[Callable] = None
    epsilon_reg: float = 0.0

    def __post_init__(self):
        if self.epsilon_reg < 0:
            raise InvalidArgument("epsilon_reg must be nonnegative")

    @classmethod
    def committor(cls, epsilon=0.0):
        """``g = 1_B + eps``."""
        eps = float(epsilon)
        return cls(terminal_g=lambda x, e: indicator_b(e) + eps, epsilon_reg=eps)

    @classmethod
    def constant(cls, c):
        return cls(terminal_g=lambda x, e: np.full(len(e), float(c)))

    def terminal(self, x, e):
        if self.terminal_g is None:
            return np.zeros(len(e))
        g = np.asarray(self.terminal_g(x, e), dtype=float)
        if np.any(g < 0):
            raise DomainError("quadratic-form terminal data must be nonnegative")
        return g


def _summarize(vals, batch, mc, overflow=False):
    if np.size(vals) == 0:
        raise NoValidSamples("all paths censored or blown up", batch.censored_fraction,
                             batch.blowup_fraction)
    est, se = mean_and_se(vals)
    cens = batch.censored_fraction
    notes = []
    if cens > mc.censor_threshold:
        msg = f"EXCESS_CENSORING: {cens:.3%} of paths hit the step cap"
        notes.append(msg)
        warnings.warn(msg, ExcessCensoringWarning, stacklevel=3)
    if overflow:
        notes.append("OVERFLOW: per-path log-weight above 700")
    return McEstimate(est, se, int(vals.size), cens, batch.blowup_fraction,
                      overflow, notes)


def log_cost_samples(spec: CostSpecLog, batch):
    """Per-path ``int (|u|^2/(2 lam) + f) dt + g`` over the exited paths."""
    sub = batch[batch.valid]
    return (sub.run_cost_u2 / (2.0 * spec.lam) + sub.run_cost_f
            + spec.terminal(sub.x_final, sub.exit))


def quad_cost_samples(spec: CostSpecQuad, batch):
    """Per-path ``g^2 exp(int |u|^2 dt)`` over the exited paths, and the overflow flag."""
    sub = batch[batch.valid]
    g = spec.terminal(sub.x_final, sub.exit)
    overflow = bool(np.any(sub.run_cost_u2 > LOG_WEIGHT_LIMIT))
    with np.errstate(over="ignore"):
        return g * g * np.exp(sub.run_cost_u2), overflow


def eval_J1(spec: CostSpecLog, model, domain, policy, x0, mc: McParams):
    """Monte Carlo estimate of the log-form cost under ``policy`` (PLUS dynamics)."""
    batch = sample_batch(model, domain, policy, ControlSign.PLUS, x0, mc.dt,
                         mc.max_steps, mc.n_paths, mc.seed,
                         running_f=spec.running_f, threads=mc.threads)
    return _summarize(log_cost_samples(spec, batch), batch, mc)


def eval_J2(spec: CostSpecQuad, model, domain, policy, x0, mc: McParams):
    """Monte Carlo estimate of the quadratic-form cost under ``policy`` (MINUS dynamics)."""
    batch = sample_batch(model, domain, policy, ControlSign.MINUS, x0, mc.dt,
                         mc.max_steps, mc.n_paths, mc.seed, threads=mc.threads)
    vals, overflow = quad_cost_samples(spec, batch)
    return _summarize(vals, batch, mc, overflow)


def eval_J2_reweighted(spec: CostSpecQuad, model, domain, policy, x0, mc: McParams):
    """Same quantity as :func:`eval_J2`, sampled under PLUS dynamics.

    Uses ``E_Y[g^2 exp(int |u|^2)] = E_{X^u}[(g / L_tau)^2]``. The per-path
    value is constant under the optimal policy, so the sampling error
    vanishes there, unlike the MINUS representation.
    """
    batch = sample_batch(model, domain, policy, ControlSign.PLUS, x0, mc.dt,
                         mc.max_steps, mc.n_paths, mc.seed, threads=mc.threads)
    sub = batch[batch.valid]
    g = spec.terminal(sub.x_final, sub.exit)
    overflow = bool(np.any(-2.0 * sub.log_lr > LOG_WEIGHT_LIMIT))
    with np.errstate(over="ignore"):
        vals = g * g * np.exp(-2.0 * sub.log_lr)
    return _summarize(vals, batch, mc, overflow)


def _sigma_t(sigma, x, g):
    if isinstance(sigma, SdeModel):
        return sigma.sigma_t_dot(x, g)
    return float(sigma) * g


def optimal_control_log(value_v1, lam, sigma, bound=None):
    """Policy ``c(x) = -lam sigma(x)^T grad v1(x)``.

    ``sigma`` is a scalar or an :class:`SdeModel`; ``value_v1`` exposes ``grad``.
    """
    lam = float(lam)

    def control(x):
        return -lam * _sigma_t(sigma, x, value_v1.grad(x))

    return FeedbackPolicy(control, bound)


def optimal_control_quad(value_v2, sigma, bound=None):
    """Policy ``c(x) = sigma(x)^T grad v2(x) / (2 v2(x))``.

    Raises
    ------
    NonpositiveValue
        When ``v2 <= 0`` at an evaluation point.
    """

    def control(x):
        v = np.asarray(value_v2(x), dtype=float)
        if np.any(v <= 0):
            raise NonpositiveValue("value function must be positive for the quadratic control")
        return 0.5 * _sigma_t(sigma, x, value_v2.grad(x)) / v[:, None]

    return FeedbackPolicy(control, bound)


def transform_check(psi_values, mode, lam=1.0):
    """Map solutions of the linear problem to value functions.

    ``mode="log"`` gives ``-log(psi) / lam``; ``mode="sqrt"`` gives ``psi**2``
    (the inverse of the square-root transformation).
    """
    psi = np.asarray(psi_values, dtype=float)
    if mode == "log":
        if not lam > 0:
            raise InvalidArgument("lambda must be positive")
        if np.any(psi <= 0):
            raise DomainError("log transformation needs positive inputs")
        return -np.log(psi) / lam
    if mode == "sqrt":
        return psi * psi
    raise InvalidArgument(f"unknown transformation {mode!r}")


def shell_log_value(problem):
    """``v1 = -log(Psi + eps)`` for a :class:`~socis.benchmarks.ShellProblem`."""


    def value(x):
        r = np.sqrt(np.einsum("ij,ij->i", x, x))
        return -np.log(_radial(problem, r)[0] + problem.epsilon_reg)

    def grad(x):
        r = np.sqrt(np.einsum("ij,ij->i", x, x))
        psi, dpsi = _radial(problem, r)
        return x * (-dpsi / (psi + problem.epsilon_reg) / r)[:, None]

    return AnalyticFunction(value, grad)


def shell_quad_value(problem):
    """``v2 = (Psi + eps)^2`` for a :class:`~socis.benchmarks.ShellProblem`."""


    def value(x):
        r = np.sqrt(np.einsum("ij,ij->i", x, x))
        return (_radial(problem, r)[0] + problem.epsilon_reg) ** 2

    def grad(x):
        r = np.sqrt(np.einsum("ij,ij->i", x, x))
        psi, dpsi = _radial(problem, r)
        return x * (2.0 * (psi + problem.epsilon_reg) * dpsi / r)[:, None]

    return AnalyticFunction(value, grad)
