"""Controlled Euler-Maruyama integration with exit-time stopping.

States are handled in batches of shape ``(n, dim)``. Drift, diffusion,
policies and domain membership are all vectorized over the leading axis.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import rng
from .errors import InvalidArgument, NoValidSamples, NumericalBlowup

#: Paths per work unit in :func:`sample_batch`. Fixed so that chunking never
#: depends on the thread count.
CHUNK_SIZE = 4096


class ExitStatus(IntEnum):
    INTERIOR = 0
    HIT_A = 1
    HIT_B = 2
    CENSORED = 3
    BLOWUP = 4


class ControlSign(IntEnum):
    """PLUS: drift ``b + sigma u``. MINUS: drift ``b - sigma u``."""

    PLUS = 1
    MINUS = -1


@dataclass(frozen=True)
class SdeModel:
    """Time-homogeneous SDE ``dX = b(X) dt + sigma(X) dB``.

    Parameters
    ----------
    dim : int
        State dimension.
    drift : callable or None
        Maps ``(n, dim)`` states to ``(n, dim)`` drifts. ``None`` means zero.
    diffusion : float or callable
        A float is a constant isotropic ``sigma * I`` (then ``noise_dim == dim``).
        A callable maps ``(n, dim)`` to ``(n, dim, noise_dim)``.
    noise_dim : int, optional
        Brownian dimension, defaults to ``dim``.
    potential : callable, optional
        ``V`` for gradient models; informational.
    """

    dim: int
    drift: Optional[Callable] = None
    diffusion: Union[float, Callable] = 1.0
    noise_dim: Optional[int] = None
    potential: Optional[Callable] = None

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidArgument("dim must be a positive integer")
        k = self.dim if self.noise_dim is None else self.noise_dim
        if not 1 <= k <= self.dim:
            raise InvalidArgument("noise_dim must satisfy 1 <= noise_dim <= dim")
        if self.scalar_diffusion and k != self.dim:
            raise InvalidArgument("scalar diffusion requires noise_dim == dim")
        object.__setattr__(self, "noise_dim", k)

    @property
    def scalar_diffusion(self) -> bool:
        return not callable(self.diffusion)

    @classmethod
    def brownian(cls, dim, sigma=1.0):
        return cls(dim=dim, drift=None, diffusion=float(sigma))

    @classmethod
    def gradient(cls, grad_potential, beta, dim=1, potential=None):
        """Overdamped Langevin ``dX = -grad V dt + sqrt(2/beta) dB``."""
        if beta <= 0:
            raise InvalidArgument("beta must be positive")

        def drift(x):
            return -grad_potential(x)

        return cls(dim=dim, drift=drift, diffusion=float(np.sqrt(2.0 / beta)),
                   potential=potential)

    def drift_at(self, x):
        x = np.atleast_2d(x)
        if self.drift is None:
            return np.zeros_like(x, dtype=float)
        return np.asarray(self.drift(x), dtype=float)

    def sigma_at(self, x):
        """Full diffusion matrices, shape ``(n, dim, noise_dim)``."""
        x = np.atleast_2d(x)
        if self.scalar_diffusion:
            eye = np.eye(self.dim) * float(self.diffusion)
            return np.broadcast_to(eye, (x.shape[0], self.dim, self.dim)).copy()
        return np.asarray(self.diffusion(x), dtype=float)

    def sigma_dot(self, x, v):
        """``sigma(x) @ v`` row-wise; ``v`` has shape ``(n, noise_dim)``."""
        if self.scalar_diffusion:
            return float(self.diffusion) * v
        s = self.diffusion(x)
        return (s * v[:, None, :]).sum(axis=2)

    def sigma_t_dot(self, x, g):
        """``sigma(x).T @ g`` row-wise; ``g`` has shape ``(n, dim)``."""
        if self.scalar_diffusion:
            return float(self.diffusion) * g
        s = self.diffusion(x)
        return (s * g[:, :, None]).sum(axis=1)


@dataclass(frozen=True)
class StopDomain:
    """Open set ``D`` with its exterior split into targets A and B.

    ``membership`` maps ``(n, dim)`` states to an integer array of
    :class:`ExitStatus` codes (INTERIOR, HIT_A or HIT_B).
    """

    membership: Callable
    description: str = ""

    def classify(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.membership(x), dtype=np.int8)

    @classmethod
    def shell(cls, r1, r2):
        """``{r1 < |x| < r2}``; A is the inner ball, B the outside."""
        if not 0 < r1 < r2:
            raise InvalidArgument("shell radii must satisfy 0 < R1 < R2")
        r1sq, r2sq = r1 * r1, r2 * r2

        def membership(x):
            rsq = np.einsum("ij,ij->i", x, x)
            out = np.zeros(x.shape[0], dtype=np.int8)
            out[rsq <= r1sq] = ExitStatus.HIT_A
            out[rsq >= r2sq] = ExitStatus.HIT_B
            return out

        return cls(membership, f"shell R1={r1!r} R2={r2!r}")

    @classmethod
    def interval(cls, a, b):
        """1D interval ``(a, b)``; A is ``x <= a``, B is ``x >= b``."""
        if not a < b:
            raise InvalidArgument("interval requires a < b")

        def membership(x):
            x0 = x[:, 0]
            out = np.zeros(x.shape[0], dtype=np.int8)
            out[x0 <= a] = ExitStatus.HIT_A
            out[x0 >= b] = ExitStatus.HIT_B
            return out

        return cls(membership, f"interval ({a!r}, {b!r})")

    @classmethod
    def half_lines(cls, a_upper, b_lower):
        """Complement of the half-lines ``A = (-inf, a_upper]`` and ``B = [b_lower, inf)``."""
        dom = cls.interval(a_upper, b_lower)
        return cls(dom.membership, f"A=(-inf,{a_upper!r}] B=[{b_lower!r},inf)")

    @classmethod
    def ball(cls, radius):
        """``{|x| < radius}``; every exit counts as HIT_B."""
        if radius <= 0:
            raise InvalidArgument("radius must be positive")
        rsq = radius * radius

        def membership(x):
            out = np.zeros(x.shape[0], dtype=np.int8)
            out[np.einsum("ij,ij->i", x, x) >= rsq] = ExitStatus.HIT_B
            return out

        return cls(membership, f"ball R={radius!r}")


@dataclass(frozen=True)
class StoppedPath:
    exit: ExitStatus
    tau: float
    x_final: np.ndarray
    run_cost_f: float
    run_cost_u2: float
    log_lr: float
    martingale: float
    n_steps: int


@dataclass
class PathBatch:
    """Struct-of-arrays view of many :class:`StoppedPath` records.

    Attribute names match :class:`StoppedPath`, so vectorized payoffs can be
    written once, e.g. ``lambda p: p.exit == ExitStatus.HIT_B``.
    """

    exit: np.ndarray
    n_steps: np.ndarray
    x_final: np.ndarray
    run_cost_f: np.ndarray
    run_cost_u2: np.ndarray
    log_lr: np.ndarray
    martingale: np.ndarray
    dt: float
    x0: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def tau(self):
        return self.n_steps * self.dt

    @property
    def valid(self):
        """Mask of paths that exited through A or B."""
        return (self.exit == ExitStatus.HIT_A) | (self.exit == ExitStatus.HIT_B)

    @property
    def censored_fraction(self):
        return float(np.mean(self.exit == ExitStatus.CENSORED)) if len(self) else 0.0

    @property
    def blowup_fraction(self):
        return float(np.mean(self.exit == ExitStatus.BLOWUP)) if len(self) else 0.0

    def __len__(self):
        return self.exit.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return StoppedPath(
                exit=ExitStatus(int(self.exit[i])),
                tau=float(self.n_steps[i] * self.dt),
                x_final=self.x_final[i].copy(),
                run_cost_f=float(self.run_cost_f[i]),
                run_cost_u2=float(self.run_cost_u2[i]),
                log_lr=float(self.log_lr[i]),
                martingale=float(self.martingale[i]),
                n_steps=int(self.n_steps[i]),
            )
        return PathBatch(
            exit=self.exit[i], n_steps=self.n_steps[i], x_final=self.x_final[i],
            run_cost_f=self.run_cost_f[i], run_cost_u2=self.run_cost_u2[i],
            log_lr=self.log_lr[i], martingale=self.martingale[i], dt=self.dt,
            x0=None if self.x0 is None else self.x0[i],
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def concatenate(cls, batches: Sequence["PathBatch"]):
        if not batches:
            raise InvalidArgument("nothing to concatenate")
        names = ["exit", "n_steps", "x_final", "run_cost_f", "run_cost_u2",
                 "log_lr", "martingale"]
        kw = {n: np.concatenate([getattr(b, n) for b in batches]) for n in names}
        x0 = None
        if all(b.x0 is not None for b in batches):
            x0 = np.concatenate([b.x0 for b in batches])
        return cls(dt=batches[0].dt, x0=x0, **kw)

    @classmethod
    def from_paths(cls, paths: Sequence[StoppedPath], dt=None):
        paths = list(paths)
        if not paths:
            raise InvalidArgument("empty path list")
        if dt is None:
            p = next((p for p in paths if p.n_steps > 0), paths[0])
            dt = p.tau / p.n_steps if p.n_steps else 0.0
        return cls(
            exit=np.array([int(p.exit) for p in paths], dtype=np.int8),
            n_steps=np.array([p.n_steps for p in paths], dtype=np.int64),
            x_final=np.array([p.x_final for p in paths], dtype=float),
            run_cost_f=np.array([p.run_cost_f for p in paths]),
            run_cost_u2=np.array([p.run_cost_u2 for p in paths]),
            log_lr=np.array([p.log_lr for p in paths]),
            martingale=np.array([p.martingale for p in paths]),
            dt=dt,
        )


def _check_common(dt, max_steps):
    if not np.isfinite(dt) or dt <= 0:
        raise InvalidArgument(f"dt must be positive, got {dt!r}")
    if int(max_steps) < 1:
        raise InvalidArgument(f"max_steps must be >= 1, got {max_steps!r}")


def simulate_paths(model, domain, policy, sign, x0s, dt, max_steps, keys,
                   running_f=None, cv_grad=None):
    """Integrate a batch of paths until each leaves the domain.

    Parameters
    ----------
    model : SdeModel
    domain : StopDomain
    policy : callable or None
        Feedback control ``(n, dim) -> (n, noise_dim)``; ``None`` is the zero policy.
    sign : ControlSign
    x0s : (n, dim) array
        Initial states; all must be interior.
    dt : float
    max_steps : int
    keys : (n,) uint64 array
        Per-path noise keys (see :mod:`socis.rng`).
    running_f : callable, optional
        Running cost ``(n, dim) -> (n,)`` accumulated as a left-point sum.
    cv_grad : callable, optional
        Gradient of a control-variate integrand, ``(n, dim) -> (n, dim)``;
        accumulates ``sum sigma^T grad(X_n) . dB_n``.

    Returns
    -------
    PathBatch
        Paths hitting non-finite states are flagged ``BLOWUP`` with ``n_steps``
        set to the failing step and ``x_final`` to the last finite state.
    """
    _check_common(dt, max_steps)
    sgn = float(ControlSign(sign))
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    n, d = x0s.shape
    if d != model.dim:
        raise InvalidArgument(f"initial states have dim {d}, model has {model.dim}")
    keys = np.asarray(keys, dtype=np.uint64)
    if keys.shape != (n,):
        raise InvalidArgument("need one key per path")
    start = domain.classify(x0s)
    if np.any(start != ExitStatus.INTERIOR):
        raise InvalidArgument("initial states must lie in the domain interior")

    k = model.noise_dim
    sq = np.sqrt(dt)
    exit_ = np.zeros(n, dtype=np.int8)
    nsteps = np.zeros(n, dtype=np.int64)
    xfin = x0s.copy()
    out_f = np.zeros(n)
    out_u2 = np.zeros(n)
    out_lr = np.zeros(n)
    out_m = np.zeros(n)

    act = np.arange(n)
    xa = x0s.copy()
    ka = keys
    acc_f = np.zeros(n)
    acc_u2 = np.zeros(n)
    acc_lr = np.zeros(n)
    acc_m = np.zeros(n)

    step = 0
    while act.size and step < max_steps:
        db = rng.normals(ka, step, k)
        db *= sq
        if model.drift is None:
            inc = None
        else:
            inc = model.drift_at(xa) * dt
        if policy is not None:
            u = np.asarray(policy(xa), dtype=float)
            uu = np.einsum("ij,ij->i", u, u)
            su = u if sgn > 0 else -u
            acc_u2 += uu * dt
            acc_lr += 0.5 * uu * dt + np.einsum("ij,ij->i", su, db)
            ctl = model.sigma_dot(xa, su) * dt
            inc = ctl if inc is None else inc + ctl
        if running_f is not None:
            acc_f += np.asarray(running_f(xa), dtype=float) * dt
        if cv_grad is not None:
            g = model.sigma_t_dot(xa, np.asarray(cv_grad(xa), dtype=float))
            acc_m += np.einsum("ij,ij->i", g, db)
        noise = model.sigma_dot(xa, db)
        xn = xa + noise if inc is None else xa + inc + noise
        step += 1

        ok = np.isfinite(xn).all(axis=1)
        cls = np.full(xn.shape[0], ExitStatus.BLOWUP, dtype=np.int8)
        if ok.all():
            cls = domain.classify(xn)
        else:
            cls[ok] = domain.classify(xn[ok])
        done = cls != ExitStatus.INTERIOR
        if done.any():
            idx = act[done]
            exit_[idx] = cls[done]
            nsteps[idx] = step
            bad = ~ok[done]
            xf = xn[done]
            if bad.any():
                xf[bad] = xa[done][bad]
            xfin[idx] = xf
            out_f[idx] = acc_f[done]
            out_u2[idx] = acc_u2[done]
            out_lr[idx] = acc_lr[done]
            out_m[idx] = acc_m[done]
            keep = ~done
            act = act[keep]
            xa = xn[keep]
            ka = ka[keep]
            acc_f = acc_f[keep]
            acc_u2 = acc_u2[keep]
            acc_lr = acc_lr[keep]
            acc_m = acc_m[keep]
        else:
            xa = xn

    if act.size:
        exit_[act] = ExitStatus.CENSORED
        nsteps[act] = step
        xfin[act] = xa
        out_f[act] = acc_f
        out_u2[act] = acc_u2
        out_lr[act] = acc_lr
        out_m[act] = acc_m

    return PathBatch(exit=exit_, n_steps=nsteps, x_final=xfin, run_cost_f=out_f,
                     run_cost_u2=out_u2, log_lr=out_lr, martingale=out_m, dt=dt,
                     x0=x0s)


def simulate_until_exit(model, domain, policy, sign, x0, dt, max_steps, seed,
                        running_f=None, cv_grad=None):
    """Single path; ``seed`` is used directly as the 64-bit noise key.

    Raises
    ------
    NumericalBlowup
        If the state becomes non-finite; carries the step index.
    """
    key = np.array([int(seed) & ((1 << 64) - 1)], dtype=np.uint64)
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    batch = simulate_paths(model, domain, policy, sign, x0, dt, max_steps, key,
                           running_f=running_f, cv_grad=cv_grad)
    if batch.exit[0] == ExitStatus.BLOWUP:
        raise NumericalBlowup(int(batch.n_steps[0]))
    return batch[0]


def simulate_starts(model, domain, policy, sign, x0s, dt, max_steps, base_seed,
                    running_f=None, cv_grad=None, threads=1, first_index=0):
    """Simulate one path per row of ``x0s``; row ``i`` uses key ``(base_seed, first_index + i)``.

    Work is split into fixed-size chunks, so results are bitwise identical for
    any ``threads``.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    n = x0s.shape[0]
    if n < 1:
        raise InvalidArgument("need at least one path")
    keys = rng.path_keys(base_seed, np.arange(first_index, first_index + n))
    bounds = [(s, min(s + CHUNK_SIZE, n)) for s in range(0, n, CHUNK_SIZE)]

    def run(b):
        s, e = b
        return simulate_paths(model, domain, policy, sign, x0s[s:e], dt, max_steps,
                              keys[s:e], running_f=running_f, cv_grad=cv_grad)

    if threads <= 1 or len(bounds) == 1:
        parts = [run(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            parts = list(pool.map(run, bounds))
    return PathBatch.concatenate(parts)


def sample_batch(model, domain, policy, sign, x0, dt, max_steps, n_paths, base_seed,
                 running_f=None, cv_grad=None, threads=1):
    """``n_paths`` independent paths from the same start.

    Path ``i`` has noise key ``rng.path_keys(base_seed, i)``; blow-ups are
    flagged per path rather than aborting the batch.
    """
    if int(n_paths) < 1:
        raise InvalidArgument("n_paths must be >= 1")
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    x0s = np.repeat(x0, int(n_paths), axis=0)
    return simulate_starts(model, domain, policy, sign, x0s, dt, max_steps, base_seed,
                           running_f=running_f, cv_grad=cv_grad, threads=threads)


def _as_batch(paths):
    if isinstance(paths, PathBatch):
        return paths
    return PathBatch.from_paths(paths)


def reweighted_expectation(paths, payoff):
    """Girsanov-reweighted mean of ``payoff(paths) * exp(-log_lr)``.

    Parameters
    ----------
    paths : PathBatch or sequence of StoppedPath
        Sampled under a common policy.
    payoff : callable
        Vectorized: receives a :class:`PathBatch` restricted to the exited
        paths and returns one value per path.

    Returns
    -------
    estimate, std_error : float
    """
    batch = _as_batch(paths)
    valid = batch.valid
    if not valid.any():
        raise NoValidSamples("all paths censored or blown up")
    sub = batch[valid]
    vals = np.asarray(payoff(sub), dtype=float) * np.exp(-sub.log_lr)
    return mean_and_se(vals)


def mean_and_se(vals):
    vals = np.asarray(vals, dtype=float)
    m = vals.size
    if m == 0:
        raise NoValidSamples("no samples")
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(m)) if m > 1 else float("inf")
    return est, se
