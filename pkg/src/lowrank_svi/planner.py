"""Closed-form rank and budget selection under power-law spectra.

All order-level relations are evaluated with proportionality constant 1;
the constants can be overridden where they appear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError

BETA_EQUAL_TOL = 1e-9


@dataclass(frozen=True)
class SpectrumModel:
    """Power-law precision spectrum lam_k = scale * k^(-decay), decay > 1/2."""

    decay: float     # beta
    scale: float     # c
    d: int

    def __post_init__(self):
        if not (self.decay > 0.5):
            raise ConfigError(f"decay exponent must exceed 1/2, got {self.decay}")
        if not (self.scale > 0):
            raise ConfigError("scale must be positive")
        if self.d < 1:
            raise ConfigError("d must be >= 1")


@dataclass(frozen=True)
class PlannerInputs:
    """Resources and tolerances for the rank/budget rules.

    budget: total gradient evaluations available (Pi).
    tolerance: target error (nu_KL for the KL rules, nu_UQ for the
        frequentist rule).
    n / c_x: sample count and norm-scale constant (||x||^2 <= c_x * d),
        required only by the frequentist rule.
    """

    budget: float
    tolerance: float
    alpha: float
    lipschitz: float
    delta_prob: float
    n: int | None = None
    c_x: float | None = None

    def __post_init__(self):
        if self.budget <= 0 or self.tolerance <= 0 or self.alpha <= 0:
            raise ConfigError("budget, tolerance and alpha must be positive")
        if self.lipschitz < self.alpha:
            raise ConfigError("lipschitz must be at least alpha")
        if not (0 < self.delta_prob < 1):
            raise ConfigError("delta_prob must lie in (0, 1)")


def _round_clamp(x, d):
    # nearest integer, ties up, clamped to [1, d]
    return int(min(max(math.floor(x + 0.5), 1), d))


def optimal_rank_kl(spec: SpectrumModel, inputs: PlannerInputs):
    """Rank minimising approximation + optimisation error at a fixed budget."""
    beta, c, d = spec.decay, spec.scale, spec.d
    pi = inputs.budget
    if abs(beta - 1.0) < BETA_EQUAL_TOL:
        return _round_clamp(min((pi / d) ** 0.25, d), d)
    ratio_c = c / inputs.alpha
    ratio_a = inputs.alpha / inputs.lipschitz
    if beta > 1:
        denom = 6 * beta - 2
        raw = ((pi / d) ** (1 / denom)
               * ratio_c ** (1 / (2 * beta - 2 / 3))
               * ratio_a ** (5 / denom)
               * inputs.delta_prob ** (1 / (12 * beta - 4)))
    else:
        denom = 3 * beta + 1
        raw = ((pi / d) ** (1 / denom)
               * ratio_c ** (1 / (beta + 1 / 3))
               * ratio_a ** (5 / denom)
               * inputs.delta_prob ** (1 / (6 * beta + 2)))
    return _round_clamp(raw, d)


def min_budget_kl(spec: SpectrumModel, inputs: PlannerInputs):
    """Budget needed to reach the KL tolerance at the optimal rank; linear in d."""
    beta, c, d = spec.decay, spec.scale, spec.d
    nu = inputs.tolerance
    ratio_l = inputs.lipschitz / inputs.alpha
    ratio_c = c / inputs.alpha
    if beta >= 1:
        exponent = 3 + 1 / (2 * beta - 1)
        c_exp = 3 + 2 / (2 * beta - 1)
    else:
        exponent = (3 * beta + 1) / (2 * beta - 1)
        c_exp = 5 / (2 * beta - 1)
    return (d * nu ** (-exponent) * ratio_l ** 5 * ratio_c ** c_exp
            / math.sqrt(inputs.delta_prob))


def optimal_rank_uq(spec: SpectrumModel, inputs: PlannerInputs):
    """Minimal rank keeping the frequentist error at its statistical order."""
    if inputs.n is None:
        raise ConfigError("optimal_rank_uq requires the sample count n")
    beta, c, d = spec.decay, spec.scale, spec.d
    c_x = 1.0 if inputs.c_x is None else inputs.c_x
    if abs(beta - 1.0) < BETA_EQUAL_TOL:
        return _round_clamp(min(inputs.n / d**2, d), d)
    raw = ((inputs.n / d**2) * (c / c_x) ** 2 / (2 * beta - 1)) ** (1 / (2 * beta - 1))
    return _round_clamp(raw, d)


def combined_rank(spec: SpectrumModel, inputs: PlannerInputs):
    """min of the budget-optimal and statistically minimal ranks."""
    return min(optimal_rank_kl(spec, inputs), optimal_rank_uq(spec, inputs))


def _partial_power_sum(p, beta):
    # sum_{k<=p} k^(-beta), continuous surrogate used by the error reports
    if abs(beta - 1.0) < BETA_EQUAL_TOL:
        return math.log(p) + 1.0
    return (1 - p ** (1 - beta)) / (beta - 1) + 1.0 if beta > 1 else \
        p ** (1 - beta) / (1 - beta)


def approximation_error_bound(spec: SpectrumModel, inputs: PlannerInputs, p):
    """Order-level truncation-error surrogate used in planner reports."""
    beta, c, d = spec.decay, spec.scale, spec.d
    tail = max(d ** (1 - 2 * beta) / (1 - 2 * beta),
               p ** (1 - 2 * beta) / (2 * beta - 1))
    return (c / inputs.alpha) ** 2 * tail


def optimization_error_bound(spec: SpectrumModel, inputs: PlannerInputs, p):
    """Order-level optimisation-error surrogate used in planner reports."""
    beta, c, d = spec.decay, spec.scale, spec.d
    head = _partial_power_sum(p, beta)
    return ((c / inputs.alpha) * (p * d / inputs.budget) ** (1 / 3)
            * (inputs.lipschitz / inputs.alpha) ** (5 / 3)
            * inputs.delta_prob ** (-1 / 6) * head)
