"""Comparison statistics: Spearman correlation, OLS with inference,
student-level aggregation, and distribution summaries."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps
from scipy.stats import rankdata

from careless.errors import ConstantInput, RankDeficient
from careless.events import Dataset


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    p_value: float
    n: int

    def to_dict(self):
        return {"rho": self.rho, "p": self.p_value, "n": self.n}


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    return float(np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b)))


def spearman(x, y, exact_below: int = 10) -> SpearmanResult:
    """Spearman's rho (average ranks for ties) with a two-sided p-value.

    The p-value uses the t approximation with n - 2 df; for n below
    ``exact_below`` it is the exact permutation p-value instead.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d and the same length")
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 pairs")
    rx, ry = rankdata(x), rankdata(y)
    if rx.std() == 0 or ry.std() == 0:
        raise ConstantInput("an input has zero rank variance")
    rho = max(-1.0, min(1.0, _pearson(rx, ry)))
    if n < exact_below:
        stats = np.array([_pearson(rx, ry[list(p)]) for p in itertools.permutations(range(n))])
        p = float(np.mean(np.abs(stats) >= abs(rho) - 1e-12))
    elif abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * np.sqrt((n - 2) / (1.0 - rho**2))
        p = float(2.0 * sps.t.sf(abs(t), n - 2))
    return SpearmanResult(rho, p, n)


@dataclass(frozen=True)
class OlsResult:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    r_squared: float
    f_statistic: float
    f_p_value: float
    df_model: int
    df_resid: int
    residuals: np.ndarray

    def to_dict(self):
        return {
            "r_squared": self.r_squared,
            "F": self.f_statistic,
            "F_p": self.f_p_value,
            "df": [self.df_model, self.df_resid],
            "coefficients": {
                name: {"b": float(b), "se": float(s), "t": float(t), "p": float(p)}
                for name, b, s, t, p in zip(self.names, self.coef, self.se, self.t, self.p)
            },
        }


def ols(y, X, names=None, intercept: bool = True) -> OlsResult:
    """Least squares of ``y`` on ``X`` (an intercept column is prepended).

    Standard errors from sigma^2 (X'X)^-1 with sigma^2 = RSS / (n - p - 1).
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    k = X.shape[1]
    names = tuple(names) if names is not None else tuple(f"x{i + 1}" for i in range(k))
    if intercept:
        X = np.column_stack([np.ones(len(y)), X])
        names = ("intercept",) + names
    n, p = X.shape
    df_model = p - 1 if intercept else p
    df_resid = n - p
    if df_resid <= 0:
        raise RankDeficient(f"n={n} too small for {p} coefficients")
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficient("design matrix is not full rank")
    xtx = X.T @ X
    coef = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ coef
    rss = float(resid @ resid)
    sigma2 = rss / df_resid
    cov = sigma2 * np.linalg.inv(xtx)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / se
    pvals = 2.0 * sps.t.sf(np.abs(t), df_resid)
    tss = float(((y - y.mean()) ** 2).sum()) if intercept else float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    if df_model > 0 and rss > 0:
        f = ((tss - rss) / df_model) / sigma2
        fp = float(sps.f.sf(f, df_model, df_resid))
    else:
        f, fp = float("inf"), 0.0
    return OlsResult(names, coef, se, t, pvals, r2, float(f), fp, df_model, df_resid, resid)


@dataclass(frozen=True)
class StudentMeans:
    student_ids: tuple[str, ...]
    means: np.ndarray
    counts: np.ndarray
    excluded: tuple[str, ...]

    def as_dict(self):
        return dict(zip(self.student_ids, self.means))


def student_level_carelessness(estimates, d: Dataset) -> StudentMeans:
    """Mean estimate per student; students without any estimate are
    excluded and listed."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for e in estimates:
        sums[e.student_id] = sums.get(e.student_id, 0.0) + e.probability
        counts[e.student_id] = counts.get(e.student_id, 0) + 1
    kept = tuple(sid for sid in d.student_ids if sid in counts)
    excluded = tuple(sid for sid in d.student_ids if sid not in counts)
    return StudentMeans(
        kept,
        np.array([sums[s] / counts[s] for s in kept]),
        np.array([counts[s] for s in kept]),
        excluded,
    )


def final_knowledge(d: Dataset, per_event) -> np.ndarray:
    """Per student, the mean over practiced skills of ``per_event`` at the
    student's last opportunity on each skill (NaN for students with none).

    Pass ``KnowledgeTrace.prior`` for BKT or ``PfaTrace.p_m`` for PFA.
    """
    per_event = np.asarray(per_event, dtype=float)
    out = np.full(len(d.students), np.nan)
    i = 0
    for k, st in enumerate(d.students):
        last: dict[str, float] = {}
        for ev in st.events:
            for sk in ev.skills:
                last[sk] = per_event[i]
            i += 1
        if last:
            out[k] = float(np.mean([last[sk] for sk in sorted(last)]))
    return out


@dataclass(frozen=True)
class DistributionSummary:
    n: int
    mean: float
    sd: float
    histogram: tuple[int, ...]
    tail_mass: float
    mid_mass: float

    def to_dict(self):
        return {
            "n": self.n,
            "mean": self.mean,
            "sd": self.sd,
            "histogram": list(self.histogram),
            "bin_edges": [round(k / 20, 2) for k in range(21)],
            "tail_mass": self.tail_mass,
            "mid_mass": self.mid_mass,
        }


def summarize_distribution(probabilities) -> DistributionSummary:
    """Mean, SD (n - 1), a 20-bin histogram on [0, 1], the mass in
    [0, 0.1] U [0.9, 1] and the mass in [0.4, 0.6]."""
    p = np.asarray(probabilities, dtype=float)
    if p.size == 0:
        raise ValueError("no values")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("values must lie in [0, 1]")
    hist, _ = np.histogram(p, bins=20, range=(0.0, 1.0))
    return DistributionSummary(
        n=int(p.size),
        mean=float(p.mean()),
        sd=float(p.std(ddof=1)) if p.size > 1 else 0.0,
        histogram=tuple(int(h) for h in hist),
        tail_mass=float(np.mean((p <= 0.1) | (p >= 0.9))),
        mid_mass=float(np.mean((p >= 0.4) & (p <= 0.6))),
    )


def rmse(pred, y) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred, dtype=float) - np.asarray(y, dtype=float)) ** 2)))
