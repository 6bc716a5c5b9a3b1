"""Two-stage stochastic variational inference for low-rank Gaussian families.

Stage 1 learns the semi-orthonormal basis U by a stochastic power method:
sample theta_j from the sampling distribution, apply the empirical matrix
(1/N) sum_j grad_psi(theta_j) (theta_j - mu)' Omega to U, QR-orthonormalise.
Stage 2 reads the eigenvalues off central gradient differences along each
learned direction. For general (non-Gaussian) targets an outer loop feeds the
fitted precision back in as the next sampling distribution.

With unit step size and unit eigenvalues the preconditioned-SGD update and
the power-method update produce the same iterates; both step functions are
exposed so the equivalence can be tested on shared draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (BudgetInfeasible, ConfigError, ContractViolation,
                     DegenerateIterate, MatrixError)
from .lowrank import (LowRankGaussian, clamp_eigenvalues, frobenius_precision_error,
                      kl_gaussian, rayleigh_quotients)
from .targets import GaussianTarget, expected_hessian_mc
from .trace import RunTrace

MODE_GAUSS = "gauss-fixed-input"
MODE_GENERAL = "general-tracking"


@dataclass
class SviConfig:
    """Hyperparameters of one SVI_Gauss run.

    rank: number of learned eigenpairs p (0 = diagonal-only family).
    n_samples: stochastic gradient samples N per stage-1 iteration.
    n_iterations: stage-1 iterations T.
    n_eig_samples: stage-2 samples M.
    fd_step: finite-difference step for the eigenvalue readout.
    step_size: stage-1 step size; 1.0 selects the power-method form,
        anything else the preconditioned-SGD form.
    mode: "gauss-fixed-input" samples stage 1 and stage 2 from the fixed
        input precision (the Gaussian-posterior algorithm); "general-tracking"
        samples from the current state.
    input_omega_mode: with fixed-input mode, "identity" uses Omega = I unless
        an explicit matrix is supplied to the run.
    deterministic: replace sampled update matrices by their expectation
        (exact for Gaussian targets, Monte-Carlo with det_hessian_samples
        otherwise); used by oracle tests as the infinite-sample limit.
        Gradient accounting still charges the nominal stochastic cost so
        traces remain budget-comparable.
    strict_stage2_accounting: charge 2*M*rank gradient evaluations for
        stage 2 instead of the default 2*M convention.
    random_init: draw a random orthonormal U0 instead of the first p
        coordinate vectors (for targets whose top eigenspace is orthogonal
        to the coordinate block).
    """

    rank: int
    n_samples: int = 64
    n_iterations: int = 50
    n_eig_samples: int = 64
    fd_step: float = 1e-3
    step_size: float = 1.0
    seed: int = 0
    mode: str = MODE_GAUSS
    input_omega_mode: str = "identity"
    deterministic: bool = False
    det_hessian_samples: int = 100_000
    strict_stage2_accounting: bool = False
    random_init: bool = False
    log_stride: int = 1

    def __post_init__(self):
        if self.rank < 0:
            raise ConfigError("rank must be nonnegative")
        if min(self.n_samples, self.n_iterations, self.n_eig_samples) < 1:
            raise ConfigError("n_samples, n_iterations, n_eig_samples must be >= 1")
        if not (self.fd_step > 0):
            raise ConfigError("fd_step must be positive")
        if self.mode not in (MODE_GAUSS, MODE_GENERAL):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.input_omega_mode not in ("identity", "current-state"):
            raise ConfigError(f"unknown input_omega_mode {self.input_omega_mode!r}")
        if self.log_stride < 1:
            raise ConfigError("log_stride must be >= 1")


@dataclass
class OuterLoopConfig:
    n_rounds: int
    inner: SviConfig

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ConfigError("outer loop needs at least one round")


class OracleMonitor:
    """Per-iteration diagnostics against a known Gaussian target.

    During stage 1 the state has unit eigenvalues, so the logged KL is the
    KL of the mid-run state as the algorithm actually holds it; the final
    record after stage 2 uses the fitted eigenvalues.
    """

    def __init__(self, target: GaussianTarget, rayleigh=True, kl=True, frob=True):
        self.target = target
        self.rayleigh = rayleigh
        self.kl = kl
        self.frob = frob
        self._dense = target.precision_dense() if frob else None

    def evaluate(self, state: LowRankGaussian):
        rq = tuple(rayleigh_quotients(state, self.target)) if self.rayleigh else None
        kl = kl_gaussian(state, self.target) if self.kl else None
        frob = (frobenius_precision_error(state, self._dense)
                if self.frob else None)
        return rq, kl, frob


def qr_orthonormalize(matrix):
    """QR with the R diagonal forced positive; returns (Q, |diag R|)."""
    q, r = np.linalg.qr(matrix)
    diag = np.diag(r)
    sign = np.sign(diag)
    sign[sign == 0] = 1.0
    return q * sign, np.abs(diag)


def initial_basis(d, p, random_init=False, seed=0):
    if p > d:
        raise ConfigError(f"rank {p} exceeds dimension {d}")
    if p == 0:
        return np.zeros((d, 0))
    if not random_init:
        return np.eye(d)[:, :p]
    rng = np.random.default_rng(seed)
    q, _ = qr_orthonormalize(rng.standard_normal((d, p)))
    return q


def power_method_step(grads, centered, omega_times_u):
    """(1/N) sum_j grad_j centered_j' (Omega U), for stacked rows."""
    return grads.T @ (centered @ omega_times_u) / grads.shape[0]


def preconditioned_sgd_step(u, lam, step_size, grads, centered):
    """U - h U diag(lam) + (h/N) sum_j grad_j centered_j' U diag(lam)."""
    n = grads.shape[0]
    update = grads.T @ (centered @ u) / n
    return u - step_size * (u * lam) + step_size * (update * lam)


class _Sampler:
    """Draws from N(mean, Omega^-1) for a fixed dense or factored Omega."""

    def __init__(self, mean, omega=None, state: LowRankGaussian | None = None):
        self.mean = mean
        self.d = mean.shape[0]
        self.state = state
        self.omega = None
        self._chol = None
        if state is None:
            if omega is None:
                self.omega = np.eye(self.d)
                self._identity = True
            else:
                omega = np.asarray(omega, dtype=float)
                if omega.shape != (self.d, self.d):
                    raise MatrixError("input precision has wrong shape")
                try:
                    self._chol = np.linalg.cholesky(omega)
                except np.linalg.LinAlgError as exc:
                    raise MatrixError("input precision is not SPD") from exc
                self.omega = omega
                self._identity = False

    def draw(self, count, rng):
        if self.state is not None:
            z = rng.standard_normal((count, self.d))
            lam, basis = self.state.lam, self.state.basis
            if self.state.rank == 0:
                return self.mean + z / np.sqrt(self.state.alpha)
            shrink = 1.0 - np.sqrt(self.state.alpha / (self.state.alpha + lam))
            return self.mean + (z - ((z @ basis) * shrink) @ basis.T) / np.sqrt(
                self.state.alpha)
        z = rng.standard_normal((count, self.d))
        if self._identity:
            return self.mean + z
        return self.mean + np.linalg.solve(self._chol.T, z.T).T

    def apply_omega(self, vecs):
        if self.state is not None:
            return self.state.apply_precision(vecs)
        if self._identity:
            return vecs
        return self.omega @ vecs

    def dense_omega(self):
        if self.state is not None:
            return self.state.precision_dense()
        return self.omega


def _resolve_sampler(target, cfg, input_omega, state):
    if cfg.mode == MODE_GENERAL:
        return _Sampler(target.mean, state=state)
    if input_omega is not None:
        if isinstance(input_omega, LowRankGaussian):
            return _Sampler(target.mean, state=input_omega)
        return _Sampler(target.mean, omega=input_omega)
    return _Sampler(target.mean)  # identity


def _expected_update_matrix(target, sampler, cfg):
    """Deterministic-mode replacement for the sampled update matrix."""
    if isinstance(target, GaussianTarget):
        return target.precision_dense()
    return expected_hessian_mc(target, sampler.dense_omega(),
                               cfg.det_hessian_samples, cfg.seed,
                               delta=cfg.fd_step)


def stage1_eigvectors(target, init: LowRankGaussian, cfg: SviConfig,
                      input_omega=None, monitor: OracleMonitor | None = None,
                      trace: RunTrace | None = None, rng=None, det_matrix=None):
    """Stage 1: optimise the basis U, eigenvalues held at their init values.

    Returns (U, RunTrace). The sampling distribution and the matrix applied
    in the update follow cfg.mode / cfg.input_omega_mode; see module
    docstring. Raises DegenerateIterate if a QR step collapses.
    """
    if init.rank != cfg.rank:
        raise ConfigError("init state rank does not match cfg.rank")
    if cfg.rank > target.d:
        raise ConfigError(f"rank {cfg.rank} exceeds dimension {target.d}")
    if init.rank:
        gram = init.basis.T @ init.basis
        if np.max(np.abs(gram - np.eye(init.rank))) > 1e-8:
            raise ContractViolation("init basis not semi-orthonormal")
    trace = trace or RunTrace(rank=cfg.rank)
    if monitor is not None and trace.initial_overlap is None and cfg.rank:
        top = monitor.target.basis[:, :cfg.rank]
        if top.shape[1] == cfg.rank:
            trace.initial_overlap = float(
                np.linalg.svd(top.T @ init.basis, compute_uv=False)[-1])
    rng = rng or np.random.default_rng(cfg.seed)
    u = init.basis.copy()
    lam = init.lam.copy()
    evals = trace.grad_evals

    if cfg.rank == 0:
        if monitor is not None:
            rq, kl, frob = monitor.evaluate(_state(target, init.alpha, u, lam))
            trace.log(0, evals, rq, kl, frob)
        return u, trace

    tracking = cfg.mode == MODE_GENERAL
    sampler = _resolve_sampler(target, cfg, input_omega,
                               _state(target, init.alpha, u, lam))
    if cfg.deterministic and not tracking and det_matrix is None:
        det_matrix = _expected_update_matrix(target, sampler, cfg)

    if cfg.deterministic and cfg.step_size != 1.0:
        raise ConfigError("deterministic mode supports step_size=1.0 only")
    iter_offset = trace.records[-1].iteration if trace.records else 0
    if monitor is not None and not trace.records:
        rq, kl, frob = monitor.evaluate(_state(target, init.alpha, u, lam))
        trace.log(0, evals, rq, kl, frob)
    for t in range(cfg.n_iterations):
        if tracking:
            sampler = _Sampler(target.mean, state=_state(target, init.alpha, u, lam))
        if cfg.deterministic:
            f = det_matrix if det_matrix is not None else _expected_update_matrix(
                target, sampler, cfg)
            tilde = f @ u
        else:
            theta = sampler.draw(cfg.n_samples, rng)
            grads = target.grad_psi(theta)
            centered = theta - target.mean
            if cfg.step_size == 1.0:
                tilde = power_method_step(grads, centered, sampler.apply_omega(u))
            else:
                tilde = preconditioned_sgd_step(u, lam, cfg.step_size, grads, centered)
        u, rdiag = qr_orthonormalize(tilde)
        if np.min(rdiag) <= 1e-12 * max(np.max(rdiag), 1e-300):
            raise DegenerateIterate(t)
        evals += cfg.n_samples
        if (t + 1) % cfg.log_stride == 0 or t + 1 == cfg.n_iterations:
            if monitor is not None:
                rq, kl, frob = monitor.evaluate(_state(target, init.alpha, u, lam))
                trace.log(iter_offset + t + 1, evals, rq, kl, frob)
            else:
                trace.log(iter_offset + t + 1, evals)
    return u, trace


def _state(target, alpha, u, lam):
    return LowRankGaussian(target.mean, alpha, u, lam)


def stage2_eigvalues(target, u, sampling, cfg: SviConfig, alpha=None, rng=None,
                     det_matrix=None):
    """Stage 2: eigenvalue readout along each column of U.

    lam_k = (1/M) sum_j u_k' (grad psi(theta_j + D u_k) - grad psi(theta_j - D u_k)) / (2 D)
            - alpha,
    with one batch of M samples drawn from ``sampling`` (a LowRankGaussian or
    a dense precision) and reused across all k. Values are clamped to the SPD
    floor. Exact for quadratic targets regardless of M, fd_step, or seed.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1)
    p = u.shape[1]
    if p == 0:
        return np.zeros(0)
    if isinstance(sampling, LowRankGaussian):
        alpha = sampling.alpha if alpha is None else alpha
        sampler = _Sampler(target.mean, state=sampling)
    else:
        if alpha is None:
            raise ConfigError("alpha required when sampling from a dense precision")
        sampler = _Sampler(target.mean, omega=np.asarray(sampling, dtype=float))
    if cfg.deterministic:
        hbar = det_matrix if det_matrix is not None else _expected_update_matrix(
            target, sampler, cfg)
        lam = np.einsum("dk,dc,ck->k", u, hbar, u) - alpha
        return clamp_eigenvalues(lam, alpha)
    rng = rng or np.random.default_rng(cfg.seed + 1)
    theta = sampler.draw(cfg.n_eig_samples, rng)
    lam = np.empty(p)
    for k in range(p):
        step = cfg.fd_step * u[:, k]
        diff = (target.grad_psi(theta + step) - target.grad_psi(theta - step)) / (
            2.0 * cfg.fd_step)
        lam[k] = float(np.mean(diff @ u[:, k]))
    return clamp_eigenvalues(lam - alpha, alpha)


def stage2_cost(cfg: SviConfig):
    mult = cfg.rank if cfg.strict_stage2_accounting else 1
    return 2 * cfg.n_eig_samples * mult if cfg.rank else 0


def svi_gauss(target, input_omega=None, cfg: SviConfig = None, alpha=None,
              monitor: OracleMonitor | None = None, trace: RunTrace | None = None,
              rng=None):
    """Both stages against a fixed input precision (the Gaussian-posterior form).

    ``input_omega`` may be None (identity), a dense SPD matrix, or a
    LowRankGaussian whose precision is used. ``alpha`` defaults to the
    target's strong-convexity modulus. Returns (state, trace); the state's
    columns are ordered by descending fitted eigenvalue.
    """
    if cfg is None:
        raise ConfigError("cfg is required")
    alpha = target.regularity.alpha if alpha is None else float(alpha)
    init = _state(target, alpha, initial_basis(target.d, cfg.rank, cfg.random_init,
                                               cfg.seed),
                  np.ones(cfg.rank))
    trace = trace or RunTrace(rank=cfg.rank)
    rng = rng or np.random.default_rng(cfg.seed)
    det_matrix = None
    if cfg.deterministic and cfg.mode == MODE_GAUSS:
        # stage 1 and stage 2 share the sampling distribution in fixed-input
        # mode, so the expected update matrix is computed once
        det_matrix = _expected_update_matrix(
            target, _resolve_sampler(target, cfg, input_omega, None), cfg)
    u, trace = stage1_eigvectors(target, init, cfg, input_omega=input_omega,
                                 monitor=monitor, trace=trace, rng=rng,
                                 det_matrix=det_matrix)
    if cfg.rank == 0:
        state = _state(target, alpha, u, np.zeros(0))
        if not trace.records:
            trace.log(0, trace.grad_evals)
        trace.final_state = state
        return state, trace
    sampling = input_omega
    if cfg.mode == MODE_GENERAL:
        sampling = _state(target, alpha, u, init.lam)
    elif sampling is None:
        sampling = np.eye(target.d)
    lam = stage2_eigvalues(target, u, sampling, cfg, alpha=alpha, rng=rng,
                           det_matrix=det_matrix)
    order = np.argsort(-lam, kind="stable")
    state = _state(target, alpha, u[:, order], lam[order])
    evals = trace.grad_evals + stage2_cost(cfg)
    last_iter = trace.records[-1].iteration if trace.records else cfg.n_iterations
    if monitor is not None:
        rq, kl, frob = monitor.evaluate(state)
        trace.log(last_iter, evals, rq, kl, frob)
    else:
        trace.log(last_iter, evals)
    trace.final_state = state
    return state, trace


def svi_general(target, outer: OuterLoopConfig,
                monitor: OracleMonitor | None = None):
    """Outer fixed-point loop: Omega_k = fitted precision, refit against it.

    Flags non-contraction (three consecutive increases of the Frobenius step
    size) as a trace warning.
    """
    if target.regularity is None:
        raise ConfigError("target regularity constants required")
    cfg = outer.inner
    alpha = target.regularity.alpha
    state = _state(target, alpha,
                   initial_basis(target.d, cfg.rank, cfg.random_init, cfg.seed),
                   np.ones(cfg.rank))
    trace = RunTrace(rank=cfg.rank)
    rng = np.random.default_rng(cfg.seed)
    prev_step = None
    increases = 0
    for k in range(outer.n_rounds):
        prev_omega = state.precision_dense()
        state, trace = svi_gauss(target, input_omega=state, cfg=cfg, alpha=alpha,
                                 monitor=monitor, trace=trace, rng=rng)
        step = float(np.linalg.norm(state.precision_dense() - prev_omega))
        if prev_step is not None and step > prev_step:
            increases += 1
            if increases >= 3:
                trace.warnings.append(
                    f"non-contraction: step size grew for {increases} consecutive "
                    f"rounds (round {k}, step {step:.3e})")
        else:
            increases = 0
        prev_step = step
    trace.final_state = state
    return state, trace


@dataclass(frozen=True)
class AllocationConstants:
    """Proportionality constants of the budget allocation rule (all 1 by default)."""

    c_samples: float = 1.0
    c_eig: float = 1.0


def allocate_budget(budget, p, d, alpha, lipschitz, delta_prob,
                    constants: AllocationConstants = AllocationConstants(),
                    strict_stage2=False):
    """Split a gradient budget into (N, T, M) by the optimal-order rule.

    N ~ budget^(2/3) (pd)^(1/3) (L/alpha)^(2/3) / delta^(1/6)
    M ~ budget^(2/3) p^(1/3) d^(-2/3) (alpha/L)^(4/3) delta^(1/3)
    T takes whatever budget remains, which keeps N*T + 2M <= budget and
    preserves T ~ budget^(1/3). Raises BudgetInfeasible (naming the minimal
    feasible budget) if no iteration fits.
    """
    if p < 1 or d < 1:
        raise ConfigError("allocation requires p >= 1 and d >= 1")
    if not (0 < delta_prob < 1):
        raise ConfigError("delta_prob must lie in (0, 1)")
    ratio = lipschitz / alpha
    if ratio < 1:
        raise ConfigError("lipschitz must be at least alpha")

    def split(pi):
        n = max(1, int(math.floor(
            constants.c_samples * pi ** (2.0 / 3.0) * (p * d) ** (1.0 / 3.0)
            * ratio ** (2.0 / 3.0) / delta_prob ** (1.0 / 6.0) + 0.5)))
        m = max(1, int(math.floor(
            constants.c_eig * pi ** (2.0 / 3.0) * p ** (1.0 / 3.0)
            / d ** (2.0 / 3.0) / ratio ** (4.0 / 3.0)
            * delta_prob ** (1.0 / 3.0) + 0.5)))
        stage2 = 2 * m * (p if strict_stage2 else 1)
        t = int((pi - stage2) // n)
        return n, t, m

    n, t, m = split(budget)
    if t < 1:
        lo, hi = budget, max(budget, 1)
        while split(hi)[1] < 1:
            hi *= 2
        while hi - lo > max(1.0, 1e-9 * hi):
            mid = (lo + hi) / 2
            if split(mid)[1] >= 1:
                hi = mid
            else:
                lo = mid
        raise BudgetInfeasible(budget, math.ceil(hi))
    return n, t, m


def run_with_budget(target, p, budget, alpha=None, lipschitz=None,
                    delta_prob=0.1, mode="gauss", cfg_overrides=None,
                    constants: AllocationConstants = AllocationConstants(),
                    n_rounds=5, monitor=None):
    """Allocate (N, T, M) from a total gradient budget and run.

    mode "gauss" runs svi_gauss once with the full allocation; "general"
    splits the budget evenly over ``n_rounds`` outer rounds. The returned
    trace never exceeds the budget in cumulative gradient evaluations.
    """
    alpha = target.regularity.alpha if alpha is None else alpha
    lipschitz = target.regularity.lipschitz if lipschitz is None else lipschitz
    overrides = dict(cfg_overrides or {})
    reserved = {"rank", "n_samples", "n_iterations", "n_eig_samples"}
    if reserved & overrides.keys():
        raise ConfigError("allocation-controlled fields cannot be overridden")
    strict = bool(overrides.get("strict_stage2_accounting", False))
    if mode == "general":
        per_round = budget / n_rounds
    elif mode == "gauss":
        per_round = budget
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    n, t, m = allocate_budget(per_round, p, target.d, alpha, lipschitz,
                              delta_prob, constants, strict_stage2=strict)
    cfg = SviConfig(rank=p, n_samples=n, n_iterations=t, n_eig_samples=m,
                    **overrides)
    spent = (n * t + stage2_cost(cfg)) * (n_rounds if mode == "general" else 1)
    assert spent <= budget, "allocation exceeded the budget"
    if mode == "general":
        state, trace = svi_general(target, OuterLoopConfig(n_rounds, cfg),
                                   monitor=monitor)
    else:
        state, trace = svi_gauss(target, cfg=cfg, alpha=alpha, monitor=monitor)
    assert trace.grad_evals <= budget
    return state, trace


def fit_meanfield_diagonal(target, cfg: SviConfig, alpha=None):
    """Mean-field-style fit: stage-2 readout against every coordinate vector.

    Returns a full-basis state (U = I, lam_i = readout_i - alpha), the
    diagonal-precision member the sweep harness uses for rank 0.
    """
    alpha = target.regularity.alpha if alpha is None else float(alpha)
    d = target.d
    base = LowRankGaussian(target.mean, alpha, np.zeros((d, 0)), np.zeros(0))
    probe = replace(cfg, rank=d)
    lam = stage2_eigvalues(target, np.eye(d), base, probe, alpha=alpha)
    state = LowRankGaussian(target.mean, alpha, np.eye(d), lam)
    trace = RunTrace(rank=0)
    trace.log(0, 2 * cfg.n_eig_samples * (d if cfg.strict_stage2_accounting else 1))
    trace.final_state = state
    return state, trace
