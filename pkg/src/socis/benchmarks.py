"""Closed-form and quadrature oracles for the benchmark problems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import DomainError, InvalidArgument, SingularPoint
from .sde import ControlSign, SdeModel, StopDomain


@dataclass(frozen=True)
class ShellProblem:
    """Brownian motion ``X = x + sigma B`` between the spheres ``|x| = R1`` and ``|x| = R2``.

    The committor does not depend on ``sigma``.
    """

    dim: int
    R1: float
    R2: float
    sigma: float = 1.0
    epsilon_reg: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidArgument("dim must be >= 1")
        if not 0 < self.R1 < self.R2:
            raise InvalidArgument("need 0 < R1 < R2")
        if self.sigma <= 0:
            raise InvalidArgument("sigma must be positive")
        if self.epsilon_reg < 0:
            raise InvalidArgument("epsilon_reg must be nonnegative")

    def model(self):
        return SdeModel.brownian(self.dim, self.sigma)

    def domain(self):
        return StopDomain.shell(self.R1, self.R2)


def _radial(p, r):
    """Committor and its radial derivative (no bounds check)."""
    d, a, b = p.dim, p.R1, p.R2
    if d == 2:
        den = np.log(b) - np.log(a)
        return (np.log(r) - np.log(a)) / den, 1.0 / (r * den)
    if d == 1:
        return (r - a) / (b - a), np.ones_like(r) / (b - a)
    e = 2 - d
    den = b ** e - a ** e
    return (r ** e - a ** e) / den, e * r ** (e - 1) / den


def shell_committor_exact(p: ShellProblem, r):
    """Probability of reaching ``|x| = R2`` before ``|x| = R1`` from radius ``r``."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < p.R1) or np.any(r_arr > p.R2) or np.any(~np.isfinite(r_arr)):
        raise DomainError(f"radius outside [{p.R1}, {p.R2}]")
    psi, _ = _radial(p, r_arr)
    # pin boundary values exactly
    psi = np.where(r_arr == p.R1, 0.0, np.where(r_arr == p.R2, 1.0, psi))
    return float(psi) if np.ndim(psi) == 0 else psi


def shell_committor_derivative(p: ShellProblem, r):
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < p.R1) or np.any(r_arr > p.R2):
        raise DomainError(f"radius outside [{p.R1}, {p.R2}]")
    return _radial(p, r_arr)[1]


def shell_optimal_control(p: ShellProblem, x):
    """Zero-variance feedback ``sigma (x/|x|) d/dr log(Psi + eps)`` at each state.

    Defined on the closed shell; on ``|x| = R1`` it needs ``eps > 0``.

    ``x`` is one state ``(dim,)`` or a batch ``(n, dim)``; the result has the
    same shape. In one dimension the direction is ``sign(x)``.
    """
    xa = np.asarray(x, dtype=float)
    single = xa.ndim == 1
    xb = np.atleast_2d(xa)
    r = np.sqrt(np.einsum("ij,ij->i", xb, xb))
    if np.any(r < p.R1) or np.any(r > p.R2):
        raise DomainError("state outside the shell")
    psi, dpsi = _radial(p, r)
    denom = psi + p.epsilon_reg
    if np.any(denom <= 0):
        raise SingularPoint("committor vanishes and no regularization is set")
    mag = p.sigma * dpsi / denom
    out = xb * (mag / r)[:, None]
    return out[0] if single else out


def shell_control_magnitude(p: ShellProblem, r):
    """Radial component of :func:`shell_optimal_control` as a function of ``r``."""
    r = np.asarray(r, dtype=float)
    psi, dpsi = _radial(p, r)
    return p.sigma * dpsi / (psi + p.epsilon_reg)


def radial_laplacian(f, r, h, dim):
    """Central-difference ``f'' + (dim - 1)/r f'``."""
    f0, fp, fm = f(r), f(r + h), f(r - h)
    return (fp - 2 * f0 + fm) / h ** 2 + (dim - 1) / r * (fp - fm) / (2 * h)


@dataclass(frozen=True)
class DoubleWellProblem:
    """``dX = -V'(X) dt + sqrt(2/beta) dB`` with ``V = (x^2 - 1)^2 / 2``.

    A is ``x <= -barrier_pos`` and B is ``x >= barrier_pos``.
    """

    beta: float = 4.0
    barrier_pos: float = 1.5
    epsilon_reg: float = 0.2

    def __post_init__(self):
        if self.beta <= 0:
            raise InvalidArgument("beta must be positive")
        if self.barrier_pos <= 0:
            raise InvalidArgument("barrier_pos must be positive")

    @property
    def a(self):
        return -self.barrier_pos

    @property
    def b(self):
        return self.barrier_pos

    @property
    def sigma(self):
        return float(np.sqrt(2.0 / self.beta))

    @staticmethod
    def potential(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * (x * x - 1.0) ** 2

    @staticmethod
    def grad_potential(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x * (x * x - 1.0)

    def model(self):
        return SdeModel.gradient(self.grad_potential, self.beta, dim=1,
                                 potential=self.potential)

    def domain(self):
        return StopDomain.half_lines(self.a, self.b)


def double_well_committor_1d(p: DoubleWellProblem, x, grid=100_001):
    """Committor ``int_a^x e^{beta V} / int_a^b e^{beta V}`` by trapezoid quadrature.

    Both integrals use ``grid`` nodes.
    """
    grid = int(grid)
    if grid < 10:
        raise InvalidArgument("quadrature grid needs at least 10 points")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < p.a) or np.any(xs > p.b):
        raise DomainError(f"x outside [{p.a}, {p.b}]")
    # shift exponent by its maximum for stability
    vmax = max(p.potential(p.a), p.potential(p.b), p.potential(0.0))
    w = lambda s: np.exp(p.beta * (p.potential(s) - vmax))
    full = np.linspace(p.a, p.b, grid)
    total = trapezoid(w(full), full)
    out = np.empty_like(xs)
    for i, xi in enumerate(xs):
        if xi == p.a:
            out[i] = 0.0
        elif xi == p.b:
            out[i] = 1.0
        else:
            s = np.linspace(p.a, xi, grid)
            out[i] = trapezoid(w(s), s) / total
    return float(out[0]) if np.ndim(x) == 0 else out


def double_well_committor_derivative(p: DoubleWellProblem, x, grid=100_001):
    """``phi'(x) = e^{beta V(x)} / int_a^b e^{beta V}``."""
    vmax = max(p.potential(p.a), p.potential(p.b), p.potential(0.0))
    full = np.linspace(p.a, p.b, int(grid))
    total = trapezoid(np.exp(p.beta * (p.potential(full) - vmax)), full)
    return np.exp(p.beta * (p.potential(np.asarray(x, dtype=float)) - vmax)) / total


def double_well_biased_potential(p: DoubleWellProblem, x, sign, grid=100_001):
    """Potential whose negative gradient is the optimally controlled drift.

    PLUS (log transformation, ``b + sigma c``) gives ``V - 2/beta log phi_eps``,
    which is repelled from A; MINUS (square-root transformation,
    ``b - sigma c``) gives ``V + 2/beta log phi_eps``, which is attracted to A.
    """
    sign = ControlSign(sign)
    phi = double_well_committor_1d(p, x, grid) + p.epsilon_reg
    if np.any(np.asarray(phi) <= 0):
        raise DomainError("regularized committor must be positive")
    bias = 2.0 / p.beta * np.log(phi)
    v = p.potential(x)
    return v - bias if sign is ControlSign.PLUS else v + bias


def double_well_optimal_control(p: DoubleWellProblem, x, grid=100_001):
    """``sigma (log phi_eps)'`` at 1D points."""
    x = np.asarray(x, dtype=float)
    phi = double_well_committor_1d(p, x, grid) + p.epsilon_reg
    return p.sigma * double_well_committor_derivative(p, x, grid) / phi


def bm_interval_mfet_exact(a, b, x, sigma=1.0):
    """Mean exit time ``(x - a)(b - x) / sigma^2`` of ``sigma B`` from ``(a, b)``."""
    if not a < b:
        raise InvalidArgument("need a < b")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < a) or np.any(xa > b):
        raise DomainError(f"x outside [{a}, {b}]")
    out = (xa - a) * (b - xa) / sigma ** 2
    return float(out) if np.ndim(out) == 0 else out
