"""Concrete SLS models and a JSON-spec builder."""

from __future__ import annotations

import os

import numpy as np

from ..errors import ValidationError
from .base import ConditionConstants, SlsModel, as_rng
from .histogram import (HistogramModel, histogram_phi, histogram_third_bound,
                        histogram_third_dir)
from .logdensity import (LogDensity1D, logdensity_condition_constants,
                         logdensity_moment_ratios, logdensity_phi)
from .logistic import (LogisticModel, design_delta0, logistic_conditions,
                       logistic_dir_deriv, logistic_loss_grad_hess,
                       logistic_phi_derivs, logistic_variability)
from .precision import (PrecisionModel, precision_constants,
                        precision_dir_derivs, precision_loss_grad_hess, smat,
                        svec)
from .quadratic import QuadraticModel

__all__ = [
    "ConditionConstants", "SlsModel", "as_rng", "HistogramModel",
    "histogram_phi", "histogram_third_bound", "histogram_third_dir",
    "LogDensity1D", "logdensity_condition_constants",
    "logdensity_moment_ratios", "logdensity_phi", "LogisticModel",
    "design_delta0", "logistic_conditions", "logistic_dir_deriv",
    "logistic_loss_grad_hess", "logistic_phi_derivs", "logistic_variability",
    "PrecisionModel", "precision_constants", "precision_dir_derivs",
    "precision_loss_grad_hess", "smat", "svec", "QuadraticModel",
    "sphere_design", "build_model",
]


def sphere_design(n, p, seed, scale=None):
    """n rows uniform on the sphere of radius ``scale`` (default sqrt(p))."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((int(n), int(p)))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X * (np.sqrt(p) if scale is None else scale)


def _array(v, base_dir, name):
    if isinstance(v, str):
        path = v if os.path.isabs(v) else os.path.join(base_dir, v)
        try:
            return np.loadtxt(path, delimiter=",", ndmin=1, comments="#")
        except OSError as exc:
            raise ValidationError(f"cannot read {name} from {path}: {exc}") from exc
    if v is None:
        raise ValidationError(f"missing field {name!r}")
    return np.asarray(v, dtype=float)


def _design(spec, base_dir):
    d = spec.get("design")
    if isinstance(d, dict):
        kind = d.get("kind", "sphere")
        if kind != "sphere":
            raise ValidationError(f"unknown design kind {kind!r}")
        return sphere_design(d["n"], d["p"], d.get("seed", 0), d.get("scale"))
    X = _array(d, base_dir, "design")
    return X[:, None] if X.ndim == 1 else X


def build_model(spec: dict, base_dir: str = ".") -> SlsModel:
    """Construct a model from a JSON-like dict; arrays may be inline lists or
    CSV paths relative to ``base_dir``."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValidationError("model spec must be an object with a 'kind'")
    kind = spec["kind"]
    try:
        if kind == "logistic":
            X = _design(spec, base_dir)
            if "truth" in spec:
                u = _array(spec["truth"], base_dir, "truth")
                if u.size == 1 and X.shape[1] > 1:
                    u = np.full(X.shape[1], float(u))
                return LogisticModel.from_truth(X, u)
            return LogisticModel(X, _array(spec.get("theta_star"), base_dir, "theta_star"))
        if kind == "histogram":
            return HistogramModel(_array(spec.get("theta_star"), base_dir, "theta_star"),
                                  int(spec["n"]))
        if kind == "logdensity":
            truth = _array(spec.get("truth"), base_dir, "truth")
            return LogDensity1D.trapezoid(spec.get("a", 0.0), spec.get("b", 1.0),
                                          spec.get("m", 2001), spec.get("basis", "poly"),
                                          truth, int(spec["n"]))
        if kind == "precision":
            if "sigma" in spec:
                S = _array(spec["sigma"], base_dir, "sigma")
            else:
                S = np.eye(int(spec["p"]))
            return PrecisionModel(np.atleast_2d(S), int(spec["n"]))
        if kind == "quadratic":
            return QuadraticModel(_design(spec, base_dir),
                                  _array(spec.get("truth"), base_dir, "truth"),
                                  float(spec.get("sigma", 1.0)))
    except KeyError as exc:
        raise ValidationError(f"model spec missing field {exc}") from exc
    raise ValidationError(f"unknown model kind {kind!r}")
