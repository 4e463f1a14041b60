"""Control variates for mean first exit times and the scaled log MGF of the exit time.

For a smooth ``Phi`` with ``L Phi = -f`` in ``D`` and ``Phi = g`` on the
boundary, Ito's formula gives ``Phi(x) = W - M_tau`` pathwise, where
``W = int f dt + g(X_tau)`` and ``M_tau = int sigma^T grad Phi . dB``. The
paired estimator ``W - M_tau`` therefore has zero variance for the exact
``Phi`` and stays unbiased for any ``Phi`` since ``E[M_tau] = 0``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .costs import ExcessCensoringWarning, FeedbackPolicy, McParams
from .errors import DegenerateEstimate, InvalidArgument, NoValidSamples
from .sde import ControlSign, SdeModel, StopDomain, mean_and_se, sample_batch


@dataclass(frozen=True)
class ControlVariateSpec:
    """Integrand ``Phi`` (value and gradient on batches) and the functional ``W``.

    ``running_f`` defaults to 1 and ``terminal_g`` to 0, i.e. ``W = tau``.
    """

    phi: Optional[Callable] = None
    grad_phi: Optional[Callable] = None
    running_f: Optional[Callable] = None
    terminal_g: Optional[Callable] = None

    def f(self):
        if self.running_f is None:
            return lambda x: np.ones(x.shape[0])
        return self.running_f

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def bm_interval(cls, a, b, sigma=1.0):
        """Exact mean exit time ``(x - a)(b - x) / sigma^2`` of ``sigma B`` from ``(a, b)``."""
        s2 = float(sigma) ** 2
        return cls(phi=lambda x: (x[:, 0] - a) * (b - x[:, 0]) / s2,
                   grad_phi=lambda x: ((a + b - 2.0 * x[:, :1]) / s2))


@dataclass(frozen=True)
class OuModel:
    """``dX = -A X dt + sqrt(2/beta) dB`` stopped on leaving ``|x| < R``.

    ``A`` defaults to the tridiagonal matrix with 2 on the diagonal and -1
    next to it; any supplied ``A`` must be symmetric positive definite.
    """

    dim: int
    beta: float
    R: float
    A: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidArgument("dim must be >= 1")
        if not self.beta > 0 or not self.R > 0:
            raise InvalidArgument("beta and R must be positive")
        a = self.matrix()
        if not np.allclose(a, a.T):
            raise InvalidArgument("A must be symmetric")
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise InvalidArgument("A must be positive definite") from None

    def matrix(self):
        if self.A is not None:
            return np.asarray(self.A, dtype=float)
        d = self.dim
        return 2.0 * np.eye(d) - np.eye(d, k=1) - np.eye(d, k=-1)

    def model(self):
        if self.A is None:
            def drift(x):
                # -A x for the default tridiagonal A, without a matmul
                out = -2.0 * x
                out[:, 1:] += x[:, :-1]
                out[:, :-1] += x[:, 1:]
                return out
        else:
            a = self.matrix()

            def drift(x):
                return -x @ a.T
        return SdeModel(self.dim, drift, float(np.sqrt(2.0 / self.beta)))

    def domain(self):
        return StopDomain.ball(self.R)

    def approximate_cv(self):
        """``Phi = (R^2 - |x|^2) / (2 d / beta)``, exact only in the isotropic large-``d`` limit."""
        c = self.beta / (2.0 * self.dim)
        r2 = self.R ** 2
        return ControlVariateSpec(phi=lambda x: c * (r2 - np.einsum("ij,ij->i", x, x)),
                                  grad_phi=lambda x: -2.0 * c * x)


@dataclass
class CvEstimate:
    """Paired control-variate and crude estimates from the same paths."""

    estimate: float
    std_error: float
    crude_estimate: float
    crude_std_error: float
    n_valid: int
    censored_fraction: float
    martingale_mean: float
    martingale_se: float
    notes: list = field(default_factory=list)

    def __iter__(self):
        yield from (self.estimate, self.std_error, self.crude_estimate, self.crude_std_error)

    def interval(self, z=1.96):
        return self.estimate - z * self.std_error, self.estimate + z * self.std_error

    def crude_interval(self, z=1.96):
        return (self.crude_estimate - z * self.crude_std_error,
                self.crude_estimate + z * self.crude_std_error)


def cv_samples(model, domain, spec: ControlVariateSpec, x0, mc: McParams):
    """Per-path ``W`` and ``M_tau`` over the exited paths, plus the batch."""
    grad = spec.grad_phi
    if grad is None:
        grad = lambda x: np.zeros_like(x)  # noqa: E731
    batch = sample_batch(model, domain, None, ControlSign.PLUS, x0, mc.dt, mc.max_steps,
                         mc.n_paths, mc.seed, running_f=spec.f(), cv_grad=grad,
                         threads=mc.threads)
    sub = batch[batch.valid]
    w = sub.run_cost_f.copy()
    if spec.terminal_g is not None:
        w = w + np.asarray(spec.terminal_g(sub.x_final, sub.exit), dtype=float)
    return w, sub.martingale, batch


def mfet_control_variate(model, domain, spec: ControlVariateSpec, x0, mc: McParams):
    """Control-variate estimate ``mean(W - M_tau)`` with the crude ``mean(W)``.

    Both use the same uncontrolled paths; ``M_tau`` is a left-point sum over
    the increments that drive the state. With ``Phi = 0`` the two estimates
    coincide bitwise.

    Returns
    -------
    CvEstimate
        Unpacks as ``(estimate, std_error, crude_estimate, crude_std_error)``.
    """
    w, m, batch = cv_samples(model, domain, spec, x0, mc)
    if w.size == 0:
        raise NoValidSamples("all paths censored")
    notes = []
    cens = batch.censored_fraction
    if cens > mc.censor_threshold:
        msg = f"EXCESS_CENSORING: {cens:.3%} of paths hit the step cap"
        notes.append(msg)
        warnings.warn(msg, ExcessCensoringWarning, stacklevel=2)
    est, se = mean_and_se(w - m)
    crude, crude_se = mean_and_se(w)
    mm, mse = mean_and_se(m)
    return CvEstimate(est, se, crude, crude_se, int(w.size), cens, mm, mse, notes)


def cv_seed_table(model, domain, spec, x0, mc: McParams, seeds):
    """One :class:`CvEstimate` per seed, in order."""
    from dataclasses import replace
    return [mfet_control_variate(model, domain, spec, x0, replace(mc, seed=int(s)))
            for s in seeds]


def mgf_from_batch(batch, lam):
    """``-log(mean(exp(-lam tau) / L)) / lam`` and its delta-method standard error."""
    if not lam > 0:
        raise InvalidArgument("lambda must be positive")
    sub = batch[batch.valid]
    if len(sub) == 0:
        raise NoValidSamples("all paths censored")
    vals = np.exp(-lam * sub.run_cost_f - sub.log_lr)
    m, se = mean_and_se(vals)
    if not m > 0:
        raise DegenerateEstimate("reweighted mean of exp(-lam tau) is not positive")
    return -np.log(m) / lam, se / (lam * m)


def mgf_tau_estimate(model, domain, policy, x0, lam, mc: McParams):
    """Scaled log moment generating function ``-log E[exp(-lam tau)] / lam``.

    Paths are drawn under ``policy`` (PLUS dynamics) and reweighted by the
    likelihood ratio; ``policy=None`` is plain Monte Carlo.

    Raises
    ------
    DegenerateEstimate
        If the (reweighted) batch mean is not positive.
    """
    if not lam > 0:
        raise InvalidArgument("lambda must be positive")
    batch = sample_batch(model, domain, policy, ControlSign.PLUS, x0, mc.dt, mc.max_steps,
                         mc.n_paths, mc.seed, running_f=lambda x: np.ones(x.shape[0]),
                         threads=mc.threads)
    return mgf_from_batch(batch, lam)


def mgf_sweep(model, domain, policy, x0, lams, mc: McParams):
    """MGF estimates for several ``lam`` on one common set of paths.

    Common paths make the estimates nondecreasing as ``lam`` decreases and
    bounded by the sample mean of ``tau`` (Jensen, path by path).

    Returns
    -------
    list of (lam, estimate, std_error), and the sample mean and SE of ``tau``.
    """
    batch = sample_batch(model, domain, policy, ControlSign.PLUS, x0, mc.dt, mc.max_steps,
                         mc.n_paths, mc.seed, running_f=lambda x: np.ones(x.shape[0]),
                         threads=mc.threads)
    rows = [(float(l), *mgf_from_batch(batch, l)) for l in lams]
    sub = batch[batch.valid]
    tau_mean = mean_and_se(sub.run_cost_f * np.exp(-sub.log_lr))
    return rows, tau_mean


def second_moment_mfet_demo(model, domain, mfet, x0, deltas, mc: McParams):
    """Censoring under the second-moment optimal control for the exit time.

    The control ``sigma^T grad log E[tau]`` points into the domain and blows
    up at its boundary, so sampled paths stop leaving as the clip level
    ``delta`` grows. This is a demonstration, not an estimator.

    Parameters
    ----------
    mfet : object with ``value`` and ``grad``
        Mean exit time and its gradient on batches.
    deltas : sequence of float
        Clip levels.

    Returns
    -------
    list of (delta, censored_fraction, mean_steps)
    """
    out = []
    for dlt in deltas:
        def control(x):
            return model.sigma_t_dot(x, mfet.grad(x) / mfet.value(x)[:, None])

        pol = FeedbackPolicy(control, float(dlt))
        batch = sample_batch(model, domain, pol, ControlSign.PLUS, x0, mc.dt, mc.max_steps,
                             mc.n_paths, mc.seed, threads=mc.threads)
        out.append((float(dlt), batch.censored_fraction, float(np.mean(batch.n_steps))))
    return out
