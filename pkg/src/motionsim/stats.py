"""Statistics for the motion-bias analysis.

Gaussian-identity GLM with z-based inference, percent thickness loss,
Benjamini-Hochberg FDR, Spearman rank correlation and ICC(2,k) rater
reliability, plus the per-structure GLM sweep with FDR correction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import special
from scipy import stats as sps


@dataclass(frozen=True)
class GlmFit:
    names: tuple
    coef: np.ndarray
    se: np.ndarray
    z: np.ndarray
    pvalues: np.ndarray
    pseudo_r2: float
    n: int
    n_params: int


@dataclass(frozen=True)
class IccResult:
    icc: float
    p_value: float
    ci95: tuple


def fit_glm(y, X, names=None) -> GlmFit:
    """Least-squares fit with normal-theory z inference.

    X must include the intercept column. SEs come from sigma^2 (X'X)^-1
    with sigma^2 = RSS/(n-p); p-values are two-sided normal.
    Pseudo-R^2 is 1 - RSS/TSS.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if names is None:
        names = tuple(f"x{i}" for i in range(p))
    if n <= p:
        raise ValueError(f"need more observations ({n}) than parameters ({p})")
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        # name a column whose removal restores full rank
        for j in range(p):
            reduced = np.delete(X, j, axis=1)
            if np.linalg.matrix_rank(reduced) == rank:
                raise ValueError(f"design matrix is rank-deficient; column '{names[j]}' is collinear")
        raise ValueError("design matrix is rank-deficient")

    q, r = np.linalg.qr(X)
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - X @ coef
    rss = float(resid @ resid)
    tss = float(np.sum((y - y.mean()) ** 2))
    sigma2 = rss / (n - p)
    rinv = np.linalg.inv(r)
    cov = sigma2 * (rinv @ rinv.T)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, coef / se, 0.0)
    pvals = special.erfc(np.abs(z) / np.sqrt(2.0))
    pseudo_r2 = 1.0 - rss / tss if tss > 0 else 0.0
    return GlmFit(tuple(names), coef, se, z, pvals, float(pseudo_r2), n, p)


def percent_loss(orig: float, synth: float) -> float:
    """Percent change of a measurement relative to its motion-free value."""
    if orig == 0:
        raise ValueError("original value must be nonzero")
    return (synth - orig) / orig * 100.0


def bh_fdr(pvals) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(pvals, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("pvals must be 1D")
    if np.any((p < 0) | (p > 1)) or np.any(~np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(ranked[::-1])[::-1]
    adjusted = np.minimum(adjusted, 1.0)
    out = np.empty(m)
    out[order] = adjusted
    return out


def spearman(x, y) -> float:
    """Spearman rank correlation with midrank (average) tie handling."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 3:
        raise ValueError("x and y must be equal-length vectors of size >= 3")
    rx = sps.rankdata(x, method="average")
    ry = sps.rankdata(y, method="average")
    sx, sy = rx.std(), ry.std()
    if sx == 0 or sy == 0:
        raise ValueError("rank variance is zero; correlation undefined")
    return float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))


def icc_2k(ratings) -> IccResult:
    """ICC(2,k): two-way random effects, average measures, absolute agreement.

    Returns the ICC, the p-value of F = MSR/MSE on (n-1, (n-1)(k-1))
    d.f., and the 95% CI obtained by the Shrout-Fleiss construction for
    single measures transformed to average measures by Spearman-Brown.
    """
    m = np.asarray(ratings, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise ValueError("ratings must be an n x k matrix with n, k >= 2")
    if np.any(~np.isfinite(m)):
        raise ValueError("ratings matrix must be complete")
    n, k = m.shape
    grand = m.mean()
    row_means = m.mean(axis=1)
    col_means = m.mean(axis=0)
    ssr = k * np.sum((row_means - grand) ** 2)
    ssc = n * np.sum((col_means - grand) ** 2)
    sst = np.sum((m - grand) ** 2)
    sse = sst - ssr - ssc
    msr = ssr / (n - 1)
    msc = ssc / (k - 1)
    mse = sse / ((n - 1) * (k - 1))

    denom = msr + (msc - mse) / n
    if denom == 0:
        raise ValueError("degenerate ratings matrix: ICC denominator is zero")
    icc_k = (msr - mse) / denom

    df1, df2 = n - 1, (n - 1) * (k - 1)
    if mse == 0:
        p_value = 0.0
    else:
        f_obs = msr / mse
        # F survival function via the regularized incomplete beta function
        x = df2 / (df2 + df1 * f_obs)
        p_value = float(special.betainc(df2 / 2.0, df1 / 2.0, x))

    ci = _icc2k_ci(msr, msc, mse, n, k)
    return IccResult(float(icc_k), p_value, ci)


def _icc2k_ci(msr, msc, mse, n, k, alpha=0.05):
    # Shrout & Fleiss (1979) single-measure bounds, Spearman-Brown scaled.
    if mse == 0:
        return (1.0, 1.0)
    single = (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n)
    fj = msc / mse
    rho = max(min(single, 1 - 1e-12), -1 + 1e-12)
    a = k * rho / (n * (1 - rho))
    b = 1 + k * rho * (n - 1) / (n * (1 - rho))
    v = (a * fj + b) ** 2 / (a**2 * fj**2 / (k - 1) + b**2 / (n - 1))
    v = max(v, 1.0)
    f_low = sps.f.ppf(1 - alpha / 2, n - 1, v)
    f_up = sps.f.ppf(1 - alpha / 2, v, n - 1)
    lower1 = n * (msr - f_low * mse) / (f_low * (k * msc + (k * n - k - n) * mse) + n * msr)
    upper1 = n * (f_up * msr - mse) / (k * msc + (k * n - k - n) * mse + n * f_up * msr)

    def to_avg(r):
        r = max(min(r, 1.0), -1.0)
        return k * r / (1 + (k - 1) * r)

    return (to_avg(lower1), to_avg(upper1))


def analyze_dataset(table: pd.DataFrame, thickness_columns=None, alpha: float = 0.05) -> pd.DataFrame:
    """Per-structure GLM sweep: thickness ~ age + sex + motion, FDR-corrected.

    Fits the model for every thickness column, applies BH-FDR over the
    motion p-values of all fitted models, and reports one row per
    structure. The returned frame carries the fraction of significant
    structures in ``df.attrs['percent_significant']``.
    """
    required = {"age", "sex", "motion"}
    missing = required - set(table.columns)
    if missing:
        raise ValueError(f"table is missing required columns: {sorted(missing)}")
    if thickness_columns is None:
        skip = required | {"subject_id"}
        thickness_columns = [c for c in table.columns if c not in skip]
    if not thickness_columns:
        raise ValueError("no thickness columns to analyze")

    X = np.column_stack(
        [
            np.ones(len(table)),
            table["age"].to_numpy(dtype=np.float64),
            table["sex"].to_numpy(dtype=np.float64),
            table["motion"].to_numpy(dtype=np.float64),
        ]
    )
    names = ("intercept", "age", "sex", "motion")
    rows = []
    for col in thickness_columns:
        y = table[col].to_numpy(dtype=np.float64)
        if np.any(~np.isfinite(y)):
            raise ValueError(f"thickness column '{col}' contains non-finite values")
        try:
            fit = fit_glm(y, X, names)
        except ValueError as exc:
            raise ValueError(f"GLM fit failed for column '{col}': {exc}") from exc
        rows.append(
            {
                "structure": col,
                "motion_coef": fit.coef[3],
                "motion_se": fit.se[3],
                "p_raw": fit.pvalues[3],
                "pseudo_r2": fit.pseudo_r2,
            }
        )
    report = pd.DataFrame(rows)
    report["p_fdr"] = bh_fdr(report["p_raw"].to_numpy())
    report["significant"] = report["p_fdr"] < alpha
    report.attrs["percent_significant"] = 100.0 * report["significant"].mean()
    report.attrs["sex_coding"] = "0/1 as provided in the input table"
    report.attrs["pseudo_r2_variant"] = "1 - RSS/TSS (ordinary R^2)"
    return report
