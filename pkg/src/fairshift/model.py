"""Weighted logistic regression with a boundary-fairness penalty."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dataset import EncodedDataset

PENALTY_FORMS = ("paper_literal", "hinge_squared")


@dataclass
class ModelParams:
    """Classifier weight vector; the intercept rides on the bias column."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1:
            raise ValueError("w must be a vector")
        if not np.isfinite(self.w).all():
            raise ValueError("w contains non-finite entries")

    def to_dict(self, feature_names=None) -> dict:
        d = {"w": self.w.tolist()}
        if feature_names is not None:
            d["feature_names"] = list(feature_names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(w=np.array(d["w"], dtype=np.float64))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PenaltyConfig:
    """Fairness penalty: strength beta, slack sigma, and the penalty shape.

    ``paper_literal`` charges beta * (C - sigma)^2, which is nonzero even at
    C = 0; ``hinge_squared`` charges beta * max(|C| - sigma, 0)^2, the
    symmetric relaxation of the constraint |C| <= sigma.
    """

    beta: float = 1.0
    sigma: float = 0.2
    penalty_form: str = "paper_literal"

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be finite and >= 0")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("sigma must be finite and >= 0")
        if self.penalty_form not in PENALTY_FORMS:
            raise ValueError(f"penalty_form must be one of {PENALTY_FORMS}")


def decision_value(params: ModelParams, x) -> float:
    """Signed distance w.x of one sample to the decision boundary."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != params.w.shape:
        raise ValueError(f"dimension mismatch: x has {x.shape}, w has {params.w.shape}")
    return float(params.w @ x)


def decision_values(params: ModelParams, data: EncodedDataset) -> np.ndarray:
    if data.n_features != params.w.shape[0]:
        raise ValueError(
            f"dimension mismatch: data has d={data.n_features}, "
            f"w has {params.w.shape[0]}"
        )
    return data.features @ params.w


def predict(params: ModelParams, x):
    """(label, probability) for one sample; w.x = 0 ties resolve to label 1."""
    z = decision_value(params, x)
    return (1 if z >= 0 else 0), float(expit(z))


def predict_labels(params: ModelParams, data: EncodedDataset) -> np.ndarray:
    return (decision_values(params, data) >= 0).astype(np.int64)


def predict_proba(params: ModelParams, data: EncodedDataset) -> np.ndarray:
    return expit(decision_values(params, data))


def sample_losses(params: ModelParams, data: EncodedDataset) -> np.ndarray:
    """Per-sample logistic negative log-likelihood, always >= 0."""
    z = decision_values(params, data)
    # softplus(z) - y*z, stable for any logit magnitude
    return np.logaddexp(0.0, z) - data.labels * z


def _check_weights(v, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError(f"weight vector must have length {n}")
    if (v <= 0).any():
        raise ValueError("adversarial weights must be positive")
    return v


def weighted_loss(params: ModelParams, data: EncodedDataset, v) -> float:
    """Mean of per-sample losses scaled by the adversarial weights v."""
    v = _check_weights(v, data.n_samples)
    return float(np.mean(v * sample_losses(params, data)))


def protected_mean(data: EncodedDataset) -> float:
    """Unweighted mean of the protected attribute (a-bar)."""
    return float(data.protected.mean())


def boundary_covariance(params: ModelParams, data: EncodedDataset, v) -> float:
    """Weighted covariance between the protected attribute and w.x.

    C = mean((a_i - a_bar) * v_i * w.x_i), with a_bar the unweighted mean.
    With v all ones this is the plain boundary-fairness covariance.
    """
    v = _check_weights(v, data.n_samples)
    a = data.protected.astype(np.float64)
    a_bar = a.mean()
    if a_bar in (0.0, 1.0):
        warnings.warn(
            "all samples are in one protected group; the fairness term is vacuous",
            stacklevel=2,
        )
        return 0.0
    return float(np.mean((a - a_bar) * v * decision_values(params, data)))


def penalty_value(c: float, cfg: PenaltyConfig) -> float:
    """Penalty charged for a covariance value c."""
    if cfg.penalty_form == "paper_literal":
        return cfg.beta * (c - cfg.sigma) ** 2
    excess = max(abs(c) - cfg.sigma, 0.0)
    return cfg.beta * excess * excess


def penalty_slope(c: float, cfg: PenaltyConfig) -> float:
    """d(penalty)/dC at covariance c; continuous for both penalty forms."""
    if cfg.penalty_form == "paper_literal":
        return 2.0 * cfg.beta * (c - cfg.sigma)
    excess = max(abs(c) - cfg.sigma, 0.0)
    return 2.0 * cfg.beta * excess * np.sign(c)


def penalty_objective(
    params: ModelParams, data: EncodedDataset, v, cfg: PenaltyConfig
) -> float:
    """Weighted loss plus the fairness penalty."""
    c = boundary_covariance(params, data, v)
    return weighted_loss(params, data, v) + penalty_value(c, cfg)


def loss_gradient(params: ModelParams, data: EncodedDataset, v) -> np.ndarray:
    """Gradient of the weighted loss: mean of v_i (p_i - y_i) x_i."""
    v = _check_weights(v, data.n_samples)
    p = predict_proba(params, data)
    resid = v * (p - data.labels)
    return data.features.T @ resid / data.n_samples


def covariance_gradient(data: EncodedDataset, v) -> np.ndarray:
    """Gradient of the covariance in w: mean of (a_i - a_bar) v_i x_i."""
    v = _check_weights(v, data.n_samples)
    a = data.protected.astype(np.float64)
    coeff = (a - a.mean()) * v
    return data.features.T @ coeff / data.n_samples


def gradient(
    params: ModelParams, data: EncodedDataset, v, cfg: PenaltyConfig
) -> np.ndarray:
    """Exact gradient of :func:`penalty_objective` in w."""
    c = boundary_covariance(params, data, v)
    g = loss_gradient(params, data, v)
    slope = penalty_slope(c, cfg)
    if slope != 0.0:
        g = g + slope * covariance_gradient(data, v)
    return g
