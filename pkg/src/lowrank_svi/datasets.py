"""Dataset ingestion and synthetic instance generation.

Synthetic families cover the experiment suite: random low-rank-plus-diagonal
Gaussian precisions, bounded-support linear-regression draws, and the
cardiac-arrhythmia CSV loader for the logistic study (file supplied by path,
never downloaded).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError
from .targets import GaussianTarget, LinearRegressionTarget, LogisticTarget

# generated low-rank eigenvalues must stay bounded away from zero
SPECTRUM_FLOOR_FRACTION = 0.1


@dataclass(frozen=True)
class UniformSpectrum:
    lo: float = 1.0
    hi: float = 5.0


@dataclass(frozen=True)
class PowerLawSpectrum:
    decay: float
    scale: float


@dataclass(frozen=True)
class ExplicitSpectrum:
    values: tuple

    def __init__(self, values):
        object.__setattr__(self, "values", tuple(float(v) for v in values))


def spectrum_from_dict(doc):
    kind = doc.get("kind")
    if kind == "uniform":
        return UniformSpectrum(doc.get("lo", 1.0), doc.get("hi", 5.0))
    if kind == "power-law":
        return PowerLawSpectrum(doc["decay"], doc["scale"])
    if kind == "explicit":
        return ExplicitSpectrum(doc["values"])
    raise ConfigError(f"unknown spectrum kind {kind!r}")


@dataclass(frozen=True)
class SyntheticGaussianSpec:
    d: int
    true_rank: int
    alpha_star: float = 1.0
    spectrum: object = field(default_factory=UniformSpectrum)
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.true_rank <= self.d):
            raise ConfigError("true_rank must lie in [0, d]")
        if not (self.alpha_star > 0):
            raise ConfigError("alpha_star must be positive")


def _draw_eigenvalues(spec: SyntheticGaussianSpec, rng):
    r = spec.true_rank
    if isinstance(spec.spectrum, UniformSpectrum):
        lam = rng.uniform(spec.spectrum.lo, spec.spectrum.hi, r)
    elif isinstance(spec.spectrum, PowerLawSpectrum):
        lam = spec.spectrum.scale * np.arange(1, r + 1, dtype=float) ** -spec.spectrum.decay
    elif isinstance(spec.spectrum, ExplicitSpectrum):
        lam = np.asarray(spec.spectrum.values, dtype=float)
        if lam.size != r:
            raise ConfigError("explicit spectrum length must equal true_rank")
    else:
        raise ConfigError(f"unsupported spectrum {spec.spectrum!r}")
    lam = np.sort(lam)[::-1]
    floor = SPECTRUM_FLOOR_FRACTION * spec.alpha_star
    if r and lam[-1] < floor:
        raise ConfigError(
            f"spectrum dips to {lam[-1]:.4g}, below the floor {floor:.4g} "
            "(nonzero eigenvalues must stay bounded away from zero)")
    return lam


def gen_gaussian_target(spec: SyntheticGaussianSpec):
    """Random rank-p* precision alpha*I + B diag(lam) B' with stored spectrum."""
    rng = np.random.default_rng(spec.seed)
    lam = _draw_eigenvalues(spec, rng)
    if spec.true_rank == 0:
        return GaussianTarget(spec.alpha_star, np.zeros((spec.d, 0)), np.zeros(0))
    raw = rng.standard_normal((spec.d, spec.true_rank))
    q, r = np.linalg.qr(raw)
    sign = np.sign(np.diag(r))
    sign[sign == 0] = 1.0
    return GaussianTarget(spec.alpha_star, q * sign, lam)


def gen_linear_regression_data(d, n, covariance, bound, seed):
    """Zero-mean draws with covariance ``covariance``, rejection-clipped to
    ||x||^2 <= bound. The requested covariance is stored as omega_star."""
    covariance = np.asarray(covariance, dtype=float)
    if covariance.ndim == 1:
        cov_dense = np.diag(covariance)
        factor = np.diag(np.sqrt(covariance))
    else:
        cov_dense = covariance
        vals, vecs = np.linalg.eigh(covariance)
        if np.min(vals) <= 0:
            raise ConfigError("covariance must be positive definite")
        factor = vecs * np.sqrt(vals)
    if cov_dense.shape != (d, d):
        raise ConfigError("covariance has wrong shape")
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal((max(1000, min(n, 100_000)), d)) @ factor.T
    acceptance = float(np.mean(np.sum(probe * probe, axis=1) <= bound))
    if acceptance < 0.01:
        raise ConfigError(
            f"bound {bound:g} keeps only {acceptance:.2%} of draws; "
            "increase it relative to the covariance trace")
    rows = [probe[np.sum(probe * probe, axis=1) <= bound][:n]]
    have = rows[0].shape[0]
    while have < n:
        x = rng.standard_normal((n - have, d)) @ factor.T
        keep = x[np.sum(x * x, axis=1) <= bound]
        rows.append(keep)
        have += keep.shape[0]
    X = np.vstack(rows)[:n]
    return LinearRegressionTarget(X, bound, omega_star=cov_dense)


@dataclass(frozen=True)
class ArrhythmiaConfig:
    """Preprocessing recipe for the cardiac-arrhythmia CSV.

    Missing entries ('?') are imputed by column medians; the binary label is
    class 1 (absence) = 0 versus every other class (presence) = 1; the
    ``feature_count`` columns most correlated (point-biserial) with the label
    are kept and z-scored. Ties in |correlation| resolve to the lower column
    index; ``seed`` is accepted for interface stability but unused by the
    deterministic tie-break.
    """

    csv_path: str
    feature_count: int = 110
    zscore: bool = True
    prior_precision: float = 1.0
    seed: int = 0


def _read_numeric_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            parsed = []
            for j, cell in enumerate(row, start=1):
                cell = cell.strip()
                if cell in ("?", ""):
                    parsed.append(np.nan)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError as exc:
                    raise ParseError(f"non-numeric cell {cell!r}", row=i, column=j) from exc
            rows.append(parsed)
    if not rows:
        raise ParseError(f"no data rows in {path}")
    width = len(rows[0])
    for i, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ParseError("ragged row", row=i)
    return np.asarray(rows, dtype=float)


def point_biserial(column, labels):
    """Pearson correlation between a numeric column and a 0/1 label."""
    c = column - column.mean()
    l = labels - labels.mean()
    denom = math.sqrt(float(c @ c) * float(l @ l))
    if denom == 0:
        return 0.0
    return float(c @ l) / denom


def load_arrhythmia(cfg: ArrhythmiaConfig):
    """Build the logistic-regression target from the raw arrhythmia CSV."""
    data = _read_numeric_csv(cfg.csv_path)
    labels_raw = data[:, -1]
    if np.any(np.isnan(labels_raw)):
        raise ParseError("missing class labels")
    y = (labels_raw != 1.0).astype(float)   # class 1 = absence
    features = data[:, :-1]
    n, width = features.shape
    usable = []
    for j in range(width):
        col = features[:, j]
        missing = np.isnan(col)
        if np.all(missing):
            continue
        if np.any(missing):
            col = col.copy()
            col[missing] = np.median(col[~missing])
            features[:, j] = col
        if np.var(col) <= 0:
            continue
        usable.append(j)
    if len(usable) < cfg.feature_count:
        raise ConfigError(
            f"only {len(usable)} usable feature columns, need {cfg.feature_count}")
    corr = np.array([abs(point_biserial(features[:, j], y)) for j in usable])
    order = np.argsort(-corr, kind="stable")[: cfg.feature_count]
    chosen = [usable[k] for k in order]
    X = features[:, chosen]
    if cfg.zscore:
        X = (X - X.mean(axis=0)) / X.std(axis=0)
    return LogisticTarget(X, y, prior_precision=cfg.prior_precision)


def config_digest(cfg):
    doc = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def save_design_cache(target: LogisticTarget, path, cfg: ArrhythmiaConfig):
    """Binary cache of the normalised design matrix plus a JSON sidecar."""
    np.savez(path, X=target.X, y=target.y)
    with open(str(path) + ".json", "w") as fh:
        json.dump({"config_sha256": config_digest(cfg)}, fh)


def load_design_cache(path, cfg: ArrhythmiaConfig):
    with open(str(path) + ".json") as fh:
        sidecar = json.load(fh)
    if sidecar.get("config_sha256") != config_digest(cfg):
        raise ConfigError("design cache was built with a different configuration")
    npz_path = str(path) if str(path).endswith(".npz") else str(path) + ".npz"
    arrays = np.load(npz_path)
    return LogisticTarget(arrays["X"], arrays["y"], prior_precision=cfg.prior_precision)
