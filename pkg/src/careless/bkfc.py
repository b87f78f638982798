"""Beyond-knowledge feature carelessness (BKFC).

A logistic model of first-attempt correctness from the PFA knowledge
estimate plus behavior::

    logit(p_correct) = beta0 + beta1 * p(m) + omega
    omega = sum_k b_k * x_k          (18 encoded behavioral predictors)

The model is fitted on every first attempt. For an incorrect attempt, the
behavioral score is negated and mapped to a probability of carelessness
with the standard normal CDF: behavior that usually goes with correct
answers (high omega) makes an error look less careless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.special import ndtr

from careless.errors import ManifestMismatch, SchemaError, ZeroVariance
from careless.events import Dataset
from careless.features import COLUMNS, FeatureMatrix, manifest_hash
from careless.logistic import OptSpec, fit_logistic
from careless.pfa import PfaTrace


@dataclass(frozen=True)
class BkfcModel:
    """Fitted coefficients.

    ``center`` is subtracted from the encoded features before the dot
    product (zeros for the published coefficients). ``beta0``/``beta1`` are
    None when only the behavioral part is known.
    """

    omega_betas: np.ndarray
    beta0: float | None = None
    beta1: float | None = None
    columns: tuple[str, ...] = COLUMNS
    center: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        b = np.asarray(self.omega_betas, dtype=float)
        if b.shape != (len(self.columns),) or not np.all(np.isfinite(b)):
            raise SchemaError(f"expected {len(self.columns)} finite omega coefficients")
        object.__setattr__(self, "omega_betas", b)
        c = np.zeros_like(b) if self.center is None else np.asarray(self.center, dtype=float)
        if c.shape != b.shape:
            raise SchemaError("center has the wrong length")
        object.__setattr__(self, "center", c)

    @property
    def manifest(self) -> str:
        return manifest_hash(self.columns)

    def to_dict(self) -> dict:
        return {
            "beta0": self.beta0,
            "beta1": self.beta1,
            "columns": list(self.columns),
            "manifest": self.manifest,
            "omega_betas": [float(v) for v in self.omega_betas],
            "center": [float(v) for v in self.center],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, blob) -> "BkfcModel":
        try:
            columns = tuple(blob.get("columns", COLUMNS))
            betas = blob["omega_betas"]
            if len(betas) != len(columns) or any(
                not isinstance(v, (int, float)) or isinstance(v, bool) for v in betas
            ):
                raise SchemaError(f"expected {len(columns)} numeric omega coefficients")
            if "manifest" in blob and blob["manifest"] != manifest_hash(columns):
                raise SchemaError("manifest hash does not match columns")
            return cls(
                omega_betas=np.array(betas, dtype=float),
                beta0=blob.get("beta0"),
                beta1=blob.get("beta1"),
                columns=columns,
                center=blob.get("center"),
                diagnostics=blob.get("diagnostics", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad BKFC model: {exc}") from None


def _design(p_m, X: FeatureMatrix, center):
    return np.column_stack([np.ones(len(X)), p_m, X.values - center])


def fit_bkfc(
    d: Dataset,
    pfa: PfaTrace,
    X: FeatureMatrix,
    opt: OptSpec = OptSpec(),
    center: bool = True,
) -> BkfcModel:
    """Logistic regression of correctness on [1, p(m), features] over all
    first attempts.

    Features with zero variance are held at a zero coefficient. With
    ``center`` the features are measured from their means over ``d`` so that
    omega is zero for average behavior; slopes are unaffected.
    """
    if len(X) != d.n_events or len(pfa) != d.n_events:
        raise ValueError("PFA estimates and features must be aligned to the dataset")
    c = X.values.mean(axis=0) if center else np.zeros(X.values.shape[1])
    Z = _design(pfa.p_m, X, c)
    active = np.ones(Z.shape[1], dtype=bool)
    active[2:] = X.values.std(axis=0) > 0
    fit = fit_logistic(Z, d.correct.astype(float), opt, active=active)
    return BkfcModel(
        omega_betas=fit.coef[2:],
        beta0=float(fit.coef[0]),
        beta1=float(fit.coef[1]),
        columns=X.columns,
        center=c,
        diagnostics={**fit.diagnostics(), "manifest": X.manifest},
    )


def omega(x, model: BkfcModel):
    """Behavioral score. ``x`` is a FeatureMatrix (manifest checked) or an
    encoded vector / array of vectors in the model's column order."""
    if isinstance(x, FeatureMatrix):
        if x.manifest != model.manifest:
            raise ManifestMismatch(f"features {x.manifest} vs model {model.manifest}")
        x = x.values
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != len(model.omega_betas):
        raise ManifestMismatch(f"expected {len(model.omega_betas)} features, got {x.shape[-1]}")
    return (x - model.center) @ model.omega_betas


def predict_correct(model: BkfcModel, p_m, X: FeatureMatrix):
    if model.beta0 is None or model.beta1 is None:
        raise SchemaError("model has no intercept/knowledge weight; omega scoring only")
    z = model.beta0 + model.beta1 * np.asarray(p_m) + omega(X, model)
    return 1.0 / (1.0 + np.exp(-z))


def carelessness_from_omega(omegas, mode: str = "raw") -> np.ndarray:
    """Probability of carelessness for incorrect attempts.

    ``raw``: Phi(-omega). ``standardized``: Phi of -omega standardized by the
    sample mean and SD of -omega over the given set.
    """
    neg = -np.asarray(omegas, dtype=float)
    if mode == "raw":
        return ndtr(neg)
    if mode == "standardized":
        sd = neg.std(ddof=1) if neg.size > 1 else 0.0
        if not sd > 0:
            raise ZeroVariance("omega is constant over the incorrect attempts")
        return ndtr((neg - neg.mean()) / sd)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class CarelessnessEstimate:
    event: int
    student_id: str
    seq_index: int
    skills: tuple
    omega: float
    probability: float
    model: str = "bkfc"


def bkfc_estimates(d: Dataset, X: FeatureMatrix, model: BkfcModel, mode: str = "raw"):
    """Carelessness estimate for every incorrect event (no lookahead needed)."""
    idx = np.flatnonzero(~d.correct)
    om = omega(X.rows(idx), model)
    probs = carelessness_from_omega(om, mode)
    return [
        CarelessnessEstimate(
            int(i), d.events[i].student_id, d.events[i].seq_index, d.events[i].skills,
            float(o), float(p),
        )
        for i, o, p in zip(idx, om, probs)
    ]


def load_published_model(path=None) -> BkfcModel:
    """Load the published behavioral coefficients (or a file of the same
    schema). Exactly 18 numeric coefficients are required."""
    if path is None:
        text = resources.files("careless").joinpath("data/table1_coefficients.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        blob = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(str(exc)) from None
    if len(blob.get("omega_betas", [])) != len(COLUMNS):
        raise SchemaError(f"expected {len(COLUMNS)} coefficients")
    return BkfcModel.from_dict(blob)


def save_model(model: BkfcModel, path, provenance=None):
    blob = model.to_dict()
    if provenance:
        blob["provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)


def load_model(path) -> BkfcModel:
    with open(path) as fh:
        return BkfcModel.from_dict(json.load(fh))
