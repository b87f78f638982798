"""Bernoulli maximum-likelihood fitting shared by PFA and BKFC.

Damped Newton ascent on column-equilibrated predictors. The likelihood is
invariant to column scaling, so coefficients are mapped back exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from careless.errors import CollinearityWarning, NonConvergence, SeparationWarning


@dataclass(frozen=True)
class OptSpec:
    """Convergence contract. ``tol`` bounds the gradient norm of the mean
    log-likelihood over the column-equilibrated design."""

    tol: float = 1e-8
    max_iter: int = 500
    cap: float = 25.0
    cond_max: float = 1e10
    ridge: float = 1e-8


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    loglik: float
    grad_norm: float
    n_iter: int
    separated: bool
    collinear: bool
    active: np.ndarray

    def diagnostics(self) -> dict:
        return {
            "loglik": self.loglik,
            "grad_norm": self.grad_norm,
            "n_iter": self.n_iter,
            "separated": self.separated,
            "collinear": self.collinear,
            "dropped_columns": [int(i) for i in np.flatnonzero(~self.active)],
        }


def loglik(coef, X, y) -> float:
    """Sum of y log p + (1 - y) log(1 - p) with p = sigmoid(X coef)."""
    z = X @ coef
    return float(np.sum(y * log_expit(z) + (1.0 - y) * log_expit(-z)))


def gradient(coef, X, y) -> np.ndarray:
    return X.T @ (y - expit(X @ coef))


def _diverging(w, cap) -> bool:
    return bool(w.size) and bool(np.any(np.abs(w) > 0.5 * cap))


def fit_logistic(X, y, opt: OptSpec = OptSpec(), active=None) -> LogisticFit:
    """Maximize the Bernoulli log-likelihood of ``y`` given design ``X``.

    Columns outside ``active`` are held at zero. Coefficients are clipped to
    ``[-cap, cap]``; reaching the cap means the data are (quasi-)separable and
    emits :class:`SeparationWarning`. Because the gradient of a separable
    fit vanishes geometrically, a coefficient past half the cap keeps the
    ascent going until the cap (or a stall) even when ``tol`` is met. A
    cross-product condition number above ``cond_max`` adds a ridge of
    ``opt.ridge`` and emits :class:`CollinearityWarning`. Raises
    :class:`NonConvergence` when ``max_iter`` is exhausted.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if active is None:
        active = np.any(X != 0.0, axis=0)
    active = np.asarray(active, dtype=bool)
    Xa = X[:, active]
    scale = np.max(np.abs(Xa), axis=0)
    scale[scale == 0] = 1.0
    Xs = Xa / scale
    cap = opt.cap * scale

    H0 = Xs.T @ Xs
    collinear = bool(np.linalg.cond(H0) > opt.cond_max) if Xs.shape[1] else False
    ridge = opt.ridge if collinear else 0.0
    if collinear:
        warnings.warn("near-collinear design; ridge jitter applied", CollinearityWarning)

    w = np.zeros(Xs.shape[1])
    ll = loglik(w, Xs, y)
    separated = False
    it = 0
    g = gradient(w, Xs, y) / n
    gnorm = float(np.linalg.norm(g))
    while gnorm > opt.tol or _diverging(w, cap):
        if it >= opt.max_iter:
            raise NonConvergence(gnorm, it)
        it += 1
        pr = expit(Xs @ w)
        H = (Xs * (pr * (1.0 - pr))[:, None]).T @ Xs / n
        H[np.diag_indices_from(H)] += ridge + 1e-300
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            w_new = np.clip(w + t * step, -cap, cap)
            ll_new = loglik(w_new, Xs, y)
            if ll_new >= ll or t < 1e-10:
                break
            t *= 0.5
        if ll_new < ll:
            # no ascent possible at machine precision
            break
        hit_cap = np.any(np.abs(w_new) >= cap)
        improvement = ll_new - ll
        w, ll = w_new, ll_new
        g = gradient(w, Xs, y) / n
        gnorm = float(np.linalg.norm(g))
        if hit_cap:
            separated = True
            if improvement <= 1e-12 * max(1.0, abs(ll)) or it >= opt.max_iter:
                break
        elif improvement == 0.0 and gnorm < 1e-6:
            break
    if separated:
        warnings.warn("coefficients reached the magnitude cap (separable data)", SeparationWarning)

    coef = np.zeros(p)
    coef[active] = w / scale
    return LogisticFit(
        coef=coef,
        loglik=loglik(coef, X, y),
        grad_norm=gnorm,
        n_iter=it,
        separated=separated,
        collinear=collinear,
        active=active,
    )
