"""The diagonal-plus-low-rank Gaussian family.

A member is N(mu, Omega^-1) with Omega = alpha*I + U diag(lam) U' for a
semi-orthonormal U (d x p). Sampling, KL against a Gaussian target, and
Rayleigh quotients all run through the factored form in O(d p) per vector;
the dense precision is only assembled on demand.
"""

from __future__ import annotations

import json
import logging

import numpy as np

from .errors import ContractViolation
from .targets import GaussianTarget

log = logging.getLogger(__name__)

# smallest admissible alpha + lam_k, as a fraction of alpha
EIGENVALUE_FLOOR = 1e-6


def clamp_eigenvalues(lam, alpha):
    """Clamp eigenvalue estimates below -alpha*(1 - floor) up to the floor.

    The stochastic eigenvalue readout can dip slightly below -alpha; values
    at or below -alpha would make the precision indefinite and are rejected.
    """
    lam = np.asarray(lam, dtype=float)
    floor = -alpha * (1.0 - EIGENVALUE_FLOOR)
    if np.any(lam <= -alpha):
        raise ContractViolation("eigenvalue at or below -alpha: precision not SPD")
    low = lam < floor
    if np.any(low):
        log.warning("clamping %d eigenvalue(s) to the SPD floor %.3e", low.sum(), floor)
        lam = np.where(low, floor, lam)
    return lam


class LowRankGaussian:
    """Variational state (mean, alpha, U, lam). Immutable once constructed."""

    __slots__ = ("mean", "alpha", "basis", "lam", "d", "rank")

    def __init__(self, mean, alpha, basis, lam):
        mean = np.asarray(mean, dtype=float)
        basis = np.asarray(basis, dtype=float)
        if basis.ndim == 1:
            basis = basis.reshape(-1, 1)
        d = mean.shape[0]
        if basis.size == 0:
            basis = basis.reshape(d, 0)
        if basis.shape[0] != d:
            raise ContractViolation("basis rows must match mean dimension")
        p = basis.shape[1]
        if p > d:
            raise ContractViolation(f"rank {p} exceeds dimension {d}")
        if not (alpha > 0):
            raise ContractViolation("alpha must be positive")
        lam = clamp_eigenvalues(np.asarray(lam, dtype=float).ravel(), alpha)
        if lam.shape != (p,):
            raise ContractViolation("lam must have one entry per basis column")
        if p:
            gram = basis.T @ basis
            err = np.max(np.abs(gram - np.eye(p)))
            if err > 1e-8:
                raise ContractViolation(f"basis not semi-orthonormal (deviation {err:.2e})")
        self.mean = mean
        self.alpha = float(alpha)
        self.basis = basis
        self.lam = lam
        self.d = d
        self.rank = p

    def sample(self, count, seed):
        """Draw ``count`` i.i.d. points from N(mean, Omega^-1).

        Uses the factored square root
            x = mean + (z - U diag(1 - sqrt(alpha/(alpha+lam))) U' z) / sqrt(alpha)
        so the cost is O(count * d * rank) and Omega is never materialised.
        Fixed seed gives bit-identical output.
        """
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((count, self.d))
        if self.rank == 0:
            return self.mean + z / np.sqrt(self.alpha)
        shrink = 1.0 - np.sqrt(self.alpha / (self.alpha + self.lam))
        zu = z @ self.basis
        return self.mean + (z - (zu * shrink) @ self.basis.T) / np.sqrt(self.alpha)

    def precision_dense(self):
        omega = self.alpha * np.eye(self.d)
        if self.rank:
            omega += (self.basis * self.lam) @ self.basis.T
        return omega

    def apply_precision(self, vecs):
        """Omega @ vecs for vecs of shape (d,) or (d, k), in O(d * rank * k)."""
        out = self.alpha * vecs
        if self.rank:
            out = out + self.basis @ (self.lam[:, None] * (self.basis.T @ vecs)
                                      if vecs.ndim == 2 else self.lam * (self.basis.T @ vecs))
        return out

    def log_det_precision(self):
        return self.d * np.log(self.alpha) + float(np.sum(np.log1p(self.lam / self.alpha)))

    def to_json_dict(self):
        return {
            "mu": self.mean.tolist(),
            "alpha": self.alpha,
            "U": self.basis.tolist(),
            "lambda": self.lam.tolist(),
        }

    @classmethod
    def from_json_dict(cls, doc):
        d = len(doc["mu"])
        basis = np.asarray(doc["U"], dtype=float).reshape(d, -1)
        return cls(doc["mu"], doc["alpha"], basis, doc["lambda"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


class PrecisionView:
    """Lazily assembled dense precision of a LowRankGaussian."""

    def __init__(self, state):
        self.state = state
        self._dense = None

    @property
    def dense(self):
        if self._dense is None:
            self._dense = self.state.precision_dense()
        return self._dense

    def spectrum_consistent(self, tol=1e-8):
        """Check eigenvalues are {alpha + lam_k} plus alpha (multiplicity d-p)."""
        expected = np.full(self.state.d, self.state.alpha)
        expected[: self.state.rank] += np.sort(self.state.lam)[::-1]
        actual = np.linalg.eigvalsh(self.dense)[::-1]
        return bool(np.max(np.abs(np.sort(expected) - np.sort(actual))) <= tol)


def kl_gaussian(q, p_target):
    """KL(q || p) for a Gaussian target with the same (fixed) mean.

    0.5 * (log|Omega_q| - log|Omega_p| - d + tr(Omega_q^-1 Omega_p)),
    evaluated through the factored forms; clamped at zero against roundoff.
    """
    if not isinstance(p_target, GaussianTarget):
        raise ContractViolation("kl_gaussian requires a GaussianTarget")
    if q.d != p_target.d:
        raise ContractViolation("dimension mismatch")
    if np.max(np.abs(q.mean - p_target.mean)) > 1e-9:
        raise ContractViolation("means differ; mean learning is out of scope")
    d = q.d
    a_q, a_p = q.alpha, p_target.alpha
    m = p_target.eigenvalues            # (r,)
    logdet_q = q.log_det_precision()
    logdet_p = d * np.log(a_p) + float(np.sum(np.log1p(m / a_p)))
    # tr(Omega_q^-1 Omega_p) with Omega_q^-1 = (I - U diag(g) U')/alpha_q
    trace_p = d * a_p + float(np.sum(m))
    if q.rank:
        g = q.lam / (a_q + q.lam)
        w = p_target.basis.T @ q.basis  # (r, p)
        rq = a_p + (m @ (w * w) if m.size else np.zeros(q.rank))
        trace = (trace_p - float(np.sum(g * rq))) / a_q
    else:
        trace = trace_p / a_q
    return max(0.0, 0.5 * (logdet_q - logdet_p - d + trace))


def frobenius_precision_error(q, reference, scale=1.0):
    """|| reference - scale * (alpha I + U diag(lam) U') ||_F."""
    reference = np.asarray(reference, dtype=float)
    if reference.shape != (q.d, q.d):
        raise ContractViolation("reference has wrong shape")
    return float(np.linalg.norm(reference - scale * q.precision_dense()))


def rayleigh_quotients(q, p_target):
    """u_k' Omega_inf u_k for each basis column of q."""
    if q.d != p_target.d:
        raise ContractViolation("dimension mismatch")
    if q.rank == 0:
        return np.zeros(0)
    w = p_target.basis.T @ q.basis
    m = p_target.eigenvalues
    return p_target.alpha + (m @ (w * w) if m.size else np.zeros(q.rank))
