"""Target posteriors p(theta | x) proportional to exp(-psi(theta)).

Every target exposes the potential psi, its gradient, the dimension, a fixed
mean, and declared regularity constants. Algorithms only ever touch psi and
grad_psi; curvature information is obtained through central gradient
differences (``hessian_vector_fd``), never through an exact Hessian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, MatrixError, NumericError


@dataclass(frozen=True)
class RegularityConstants:
    """Declared regularity of psi.

    alpha: strong-convexity modulus, > 0.
    lipschitz: smoothness constant L with alpha <= L.
    hessian_lipschitz: Lipschitz constant of the Hessian (0 for quadratics).
    contraction: modulus rho in [0, 1) of the expected-Hessian map, or None
        when no contraction claim is made.
    """

    alpha: float
    lipschitz: float
    hessian_lipschitz: float = 0.0
    contraction: float | None = None

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ContractViolation(f"alpha must be positive, got {self.alpha}")
        if self.lipschitz < self.alpha:
            raise ContractViolation(
                f"lipschitz constant {self.lipschitz} below alpha {self.alpha}"
            )
        if self.hessian_lipschitz < 0:
            raise ContractViolation("hessian_lipschitz must be nonnegative")
        if self.contraction is not None and not (0 <= self.contraction < 1):
            raise ContractViolation(f"contraction must lie in [0, 1), got {self.contraction}")


class TargetPosterior:
    """Base class: psi value/gradient oracle with a fixed mean.

    Subclasses set ``d``, ``mean`` (shape (d,)), ``regularity`` and implement
    ``psi`` / ``grad_psi``; both accept a single point of shape (d,) or a
    batch of shape (m, d) and return matching shapes. Targets are immutable
    after construction and safe to share across threads.
    """

    d: int
    mean: np.ndarray
    regularity: RegularityConstants

    def psi(self, theta):
        raise NotImplementedError

    def grad_psi(self, theta):
        raise NotImplementedError

    def _check_point(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.d:
            raise ContractViolation(
                f"theta has dimension {theta.shape[-1]}, target expects {self.d}"
            )
        if not np.all(np.isfinite(theta)):
            raise ContractViolation("theta contains non-finite entries")
        return theta


class GaussianTarget(TargetPosterior):
    """Quadratic potential psi(theta) = 0.5 (theta-mu)' Omega (theta-mu).

    The precision is stored in factored form Omega = alpha*I + B diag(lam) B',
    with B a d x r semi-orthonormal basis and lam >= 0 sorted descending, so
    gradients cost O(d r) and the exact spectrum is available to oracles.
    """

    def __init__(self, alpha, basis, eigenvalues, mean=None):
        basis = np.atleast_2d(np.asarray(basis, dtype=float))
        eigenvalues = np.asarray(eigenvalues, dtype=float).ravel()
        d, r = basis.shape
        if eigenvalues.shape != (r,):
            raise ContractViolation("one eigenvalue per basis column required")
        if r and np.any(np.diff(eigenvalues) > 1e-12):
            raise ContractViolation("eigenvalues must be sorted descending")
        if np.any(eigenvalues < -1e-12):
            raise ContractViolation("low-rank eigenvalues must be nonnegative")
        if r:
            gram = basis.T @ basis
            if np.max(np.abs(gram - np.eye(r))) > 1e-10:
                raise ContractViolation("basis columns are not orthonormal to 1e-10")
        if not (alpha > 0):
            raise ContractViolation("alpha must be positive")
        self.d = d
        self.alpha = float(alpha)
        self.basis = basis
        self.eigenvalues = np.maximum(eigenvalues, 0.0)
        self.mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
        if self.mean.shape != (d,):
            raise ContractViolation("mean has wrong shape")
        lmax = float(self.eigenvalues[0]) if r else 0.0
        self.regularity = RegularityConstants(
            alpha=self.alpha, lipschitz=self.alpha + lmax, hessian_lipschitz=0.0,
            contraction=0.0,
        )

    def psi(self, theta):
        theta = self._check_point(theta)
        c = theta - self.mean
        proj = c @ self.basis
        return 0.5 * (
            self.alpha * np.sum(c * c, axis=-1)
            + np.sum(self.eigenvalues * proj * proj, axis=-1)
        )

    def grad_psi(self, theta):
        theta = self._check_point(theta)
        c = theta - self.mean
        return self.alpha * c + (c @ self.basis) * self.eigenvalues @ self.basis.T

    def precision_dense(self):
        return self.alpha * np.eye(self.d) + (self.basis * self.eigenvalues) @ self.basis.T

    def full_spectrum(self):
        """All d eigenvalues of Omega, sorted descending."""
        lam = np.full(self.d, self.alpha)
        lam[: self.eigenvalues.size] += self.eigenvalues
        return lam


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticTarget(TargetPosterior):
    """Bayesian logistic regression with prior N(mu, (1/prior_precision) I).

    psi(theta) = sum_i [log(1 + exp(x_i' theta)) - y_i x_i' theta]
                 + prior_precision/2 * ||theta - mu||^2

    Declared constants: alpha = prior_precision,
    L = max-eig(X'X)/4 + prior_precision. The Hessian-Lipschitz constant has
    no tight closed form; we default to hess_scale * sum_i ||x_i||^3 with
    hess_scale = 0.1 (only used to pick finite-difference steps).
    """

    def __init__(self, X, y, prior_precision, mean=None, hess_scale=0.1,
                 contraction=0.9):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ContractViolation("X must be a 2-d design matrix")
        n, d = X.shape
        y = np.asarray(y, dtype=float).ravel()
        if n and y.shape != (n,):
            raise ContractViolation("y must have one label per row of X")
        if n and not np.all(np.isin(y, (0.0, 1.0))):
            raise ContractViolation("labels must be 0/1")
        if not np.all(np.isfinite(X)):
            raise ContractViolation("X contains non-finite entries")
        if not (prior_precision > 0):
            raise ContractViolation("prior_precision must be positive")
        self.d = d
        self.n = n
        self.X = X
        self.y = y
        self.prior_precision = float(prior_precision)
        self.mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
        if n:
            gram_top = float(np.linalg.eigvalsh(X.T @ X)[-1])
        else:
            gram_top = 0.0
        norms = np.linalg.norm(X, axis=1) if n else np.zeros(0)
        self.regularity = RegularityConstants(
            alpha=self.prior_precision,
            lipschitz=0.25 * gram_top + self.prior_precision,
            hessian_lipschitz=hess_scale * float(np.sum(norms**3)),
            contraction=contraction,
        )

    def psi(self, theta):
        theta = self._check_point(theta)
        c = theta - self.mean
        prior = 0.5 * self.prior_precision * np.sum(c * c, axis=-1)
        if self.n == 0:
            return prior
        z = theta @ self.X.T
        return np.sum(np.logaddexp(0.0, z) - self.y * z, axis=-1) + prior

    def grad_psi(self, theta):
        theta = self._check_point(theta)
        g = self.prior_precision * (theta - self.mean)
        if self.n == 0:
            return g
        z = theta @ self.X.T
        return (_sigmoid(z) - self.y) @ self.X + g


class LinearRegressionTarget(TargetPosterior):
    """Linear-regression posterior precision target: psi = 0.5 theta' A theta
    with A = sum_i x_i x_i' (uniform prior, centered).

    Used for frequentist uncertainty quantification: (1/n) * fitted precision
    estimates the data covariance. ``omega_star`` optionally stores the true
    covariance for error measurement.
    """

    def __init__(self, X, bound, omega_star=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ContractViolation("X must be a nonempty 2-d array of datapoints")
        sq = np.sum(X * X, axis=1)
        if np.any(sq > bound * (1 + 1e-12)):
            raise ContractViolation("a datapoint violates the norm bound R")
        self.n, self.d = X.shape
        self.X = X
        self.bound = float(bound)
        self.gram = X.T @ X
        self.omega_star = None if omega_star is None else np.asarray(omega_star, dtype=float)
        self.mean = np.zeros(self.d)
        eigs = np.linalg.eigvalsh(self.gram)
        # empirical Gram can be singular (n < d); floor keeps alpha positive
        alpha = max(float(eigs[0]), 1e-12 * max(1.0, float(eigs[-1])))
        self.regularity = RegularityConstants(
            alpha=alpha, lipschitz=max(float(eigs[-1]), alpha), hessian_lipschitz=0.0,
            contraction=0.0,
        )

    def psi(self, theta):
        theta = self._check_point(theta)
        return 0.5 * np.sum((theta @ self.gram) * theta, axis=-1)

    def grad_psi(self, theta):
        theta = self._check_point(theta)
        return theta @ self.gram


class FunctionTarget(TargetPosterior):
    """Adapter for ad-hoc potentials given as plain callables."""

    def __init__(self, d, psi_fn, grad_fn, regularity, mean=None):
        self.d = d
        self._psi = psi_fn
        self._grad = grad_fn
        self.regularity = regularity
        self.mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)

    def psi(self, theta):
        return self._psi(self._check_point(theta))

    def grad_psi(self, theta):
        return self._grad(self._check_point(theta))


def psi_grad(target, theta):
    """Gradient of psi at a single point, with contract checks."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (target.d,):
        raise ContractViolation(
            f"theta must have shape ({target.d},), got {theta.shape}"
        )
    return target.grad_psi(theta)


def hessian_vector_fd(target, theta, u, delta):
    """Hessian-vector product estimate by central gradient difference.

    Returns (grad psi(theta + delta*u) - grad psi(theta - delta*u)) / (2 delta);
    the error against the true product is at most hessian_lipschitz * delta.
    ``theta`` may be a batch of shape (m, d).
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (target.d,):
        raise ContractViolation(f"u must have shape ({target.d},)")
    if np.linalg.norm(u) > 1 + 1e-9:
        raise ContractViolation("u must have norm at most 1")
    if not (delta > 0):
        raise ContractViolation("delta must be positive")
    theta = np.asarray(theta, dtype=float)
    step = delta * u
    diff = (target.grad_psi(theta + step) - target.grad_psi(theta - step)) / (2.0 * delta)
    if not np.all(np.isfinite(diff)):
        raise NumericError("non-finite gradient difference")
    return diff


def expected_hessian_mc(target, omega, samples, seed, delta=1e-4):
    """Monte-Carlo estimate of E_{theta ~ N(mean, omega^-1)}[hessian of psi].

    Draws ``samples`` points by Cholesky factorisation of omega, builds the
    matrix column-by-column from ``hessian_vector_fd`` against the standard
    basis, and symmetrises the result.
    """
    omega = np.asarray(omega, dtype=float)
    d = target.d
    if omega.shape != (d, d):
        raise MatrixError(f"omega must be {d}x{d}")
    try:
        chol = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise MatrixError("omega is not symmetric positive definite") from exc
    if samples < 1:
        raise ContractViolation("samples must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((samples, d))
    # theta = mean + L^-T z has covariance omega^-1 for omega = L L'
    theta = target.mean + np.linalg.solve(chol.T, z.T).T
    hess = np.empty((d, d))
    eye = np.eye(d)
    for i in range(d):
        cols = hessian_vector_fd(target, theta, eye[i], delta)
        hess[:, i] = cols.mean(axis=0) if cols.ndim == 2 else cols
    return 0.5 * (hess + hess.T)
