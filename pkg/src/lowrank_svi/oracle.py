"""Ground-truth computations the stochastic components are tested against.

Everything here works on dense matrices and deliberately avoids the factored
code paths of the main algorithms, so the two routes stay independent.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ContractViolation, MatrixError, NonConvergence, NumericError
from .targets import expected_hessian_mc


class DenseSpectrum(NamedTuple):
    eigenvalues: np.ndarray    # sorted descending
    vectors: np.ndarray        # orthonormal columns, matching order


def dense_eig(a):
    """Full spectrum of a symmetric matrix, eigenvalues sorted descending."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation("dense_eig expects a square matrix")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ContractViolation("matrix is not symmetric within 1e-10")
    vals, vecs = np.linalg.eigh(a)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    recon = (vecs * vals) @ vecs.T
    norm = max(np.linalg.norm(a), 1e-300)
    if np.linalg.norm(recon - a) > 1e-8 * norm:
        raise NumericError("eigendecomposition failed reconstruction check")
    return DenseSpectrum(vals, vecs)


class TruncationFloor(NamedTuple):
    exact: float        # minimal KL over the rank-p family
    quadratic: float    # sum_{k>p} lam_k^2 / (2 alpha^2) upper-bound surrogate


def kl_truncation_floor(spectrum, alpha, p):
    """Best-achievable KL for a rank-p fit of a Gaussian with the given spectrum.

    ``spectrum`` is the full precision spectrum (from :func:`dense_eig` on
    Omega_inf); the low-rank part eigenvalues are lam_k = eig_k - alpha. The
    optimal member matches the top-p eigenpairs exactly and pays
    g(lam_k/alpha) with g(x) = (x - log(1+x))/2 for every truncated direction.
    """
    eig = np.asarray(spectrum.eigenvalues, dtype=float)
    d = eig.size
    if not (0 <= p <= d):
        raise ContractViolation(f"p must lie in [0, {d}]")
    lam = np.maximum(eig - alpha, 0.0)
    tail = lam[p:]
    x = tail / alpha
    exact = float(0.5 * np.sum(x - np.log1p(x)))
    quadratic = float(np.sum(tail**2) / (2.0 * alpha**2))
    return TruncationFloor(exact, quadratic)


def kl_gaussian_dense(omega_q, omega_p):
    """Dense-matrix KL between centered Gaussians given their precisions."""
    omega_q = np.asarray(omega_q, dtype=float)
    omega_p = np.asarray(omega_p, dtype=float)
    d = omega_q.shape[0]
    sign_q, logdet_q = np.linalg.slogdet(omega_q)
    sign_p, logdet_p = np.linalg.slogdet(omega_p)
    if sign_q <= 0 or sign_p <= 0:
        raise MatrixError("precision matrices must be positive definite")
    trace = float(np.trace(np.linalg.solve(omega_q, omega_p)))
    return 0.5 * (logdet_q - logdet_p - d + trace)


def fixed_point_precision(target, damping=0.5, tol=1e-6, max_iter=100,
                          mc_samples=50_000, seed=0, fd_step=1e-4):
    """Damped fixed-point solve of Omega = E_{N(mean, Omega^-1)}[hessian psi].

    This is the KL-optimal full-rank Gaussian precision for the target and
    serves as the baseline that replaces a long MCMC run. The expected
    Hessian is the Monte-Carlo estimate of :func:`expected_hessian_mc` with a
    fixed seed, so the iterated map is deterministic.
    """
    if not (0 < damping <= 1):
        raise ContractViolation("damping must lie in (0, 1]")
    rho = target.regularity.contraction
    if rho is None or not (rho < 1):
        raise ContractViolation("target must claim a contraction modulus rho < 1")
    omega = target.regularity.alpha * np.eye(target.d)
    residual = np.inf
    for _ in range(max_iter):
        hess = expected_hessian_mc(target, omega, mc_samples, seed, delta=fd_step)
        nxt = (1.0 - damping) * omega + damping * hess
        residual = float(np.linalg.norm(nxt - omega))
        if residual < tol:
            return omega
        omega = nxt
    raise NonConvergence(residual, max_iter)


def deterministic_power_iteration(a, p, iterations):
    """T rounds of U <- QR(A U) from the first-p-coordinates start."""
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    u = np.eye(d)[:, :p]
    for _ in range(iterations):
        q, r = np.linalg.qr(a @ u)
        sign = np.sign(np.diag(r))
        sign[sign == 0] = 1.0
        u = q * sign
    return u


def projector_distance(u, v):
    """Frobenius distance between the orthogonal projectors onto two column spans."""
    return float(np.linalg.norm(u @ u.T - v @ v.T))


def save_precision_json(omega, path, scale=1.0):
    """Write a dense precision matrix as the baseline-comparison JSON format."""
    import json

    doc = {"omega": np.asarray(omega, dtype=float).tolist()}
    if scale != 1.0:
        doc["scale"] = float(scale)
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path
