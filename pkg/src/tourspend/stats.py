"""Least squares with optional absorbed fixed effects, and correlation tests.

OLS is solved through a QR factorisation.  Fixed effects are absorbed by
(alternating) within-demeaning; the dummy-expanded design is kept as a
fallback and as a cross-check.  Inference uses classical homoskedastic
standard errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import f_sf, t_sf_two_sided


class CollinearityError(ValueError):
    """The design matrix does not have full column rank."""


@dataclass
class DesignMatrix:
    """Response, named regressors and optional fixed-effect labelings."""

    response: np.ndarray
    columns: dict[str, np.ndarray]
    fe_groups: dict[str, np.ndarray] = field(default_factory=dict)
    response_name: str = "y"

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=float)
        n = self.response.shape[0]
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        self.fe_groups = {k: np.asarray(v) for k, v in self.fe_groups.items()}
        for name, col in [*self.columns.items(), *self.fe_groups.items()]:
            if col.shape != (n,):
                raise ValueError(f"column {name!r} has shape {col.shape}, expected ({n},)")
        if not np.all(np.isfinite(self.response)):
            raise ValueError("response contains non-finite values")
        for name, col in self.columns.items():
            if not np.all(np.isfinite(col)):
                raise ValueError(f"regressor {name!r} contains non-finite values")

    @property
    def n_obs(self) -> int:
        return self.response.shape[0]

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def matrix(self) -> np.ndarray:
        if not self.columns:
            return np.empty((self.n_obs, 0))
        return np.column_stack(list(self.columns.values()))


@dataclass
class FitResult:
    coefficients: dict[str, float]
    std_errors: dict[str, float]
    p_values: dict[str, float]
    r_squared: float
    adj_r_squared: float
    residual_std_error: float
    f_statistic: float
    f_p_value: float
    df_model: int
    df_resid: int
    n_obs: int
    fe_absorbed: dict[str, int] = field(default_factory=dict)
    within_r_squared: float | None = None
    response_name: str = "y"
    residuals: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """JSON-ready layout: one block per coefficient plus fit statistics."""
        coefs = []
        for name, est in self.coefficients.items():
            se = self.std_errors.get(name, math.nan)
            p = self.p_values.get(name, math.nan)
            coefs.append({
                "name": name,
                "estimate": _num(est),
                "std_error": _num(se),
                "p_value": _num(p),
                "stars": stars(p),
            })
        return {
            "dependent": self.response_name,
            "coefficients": coefs,
            "fixed_effects": {k: v for k, v in self.fe_absorbed.items()},
            "statistics": {
                "observations": self.n_obs,
                "r_squared": _num(self.r_squared),
                "adj_r_squared": _num(self.adj_r_squared),
                "within_r_squared": _num(self.within_r_squared) if self.within_r_squared is not None else None,
                "residual_std_error": _num(self.residual_std_error),
                "df_resid": self.df_resid,
                "f_statistic": _num(self.f_statistic),
                "f_df": [self.df_model, self.df_resid],
                "f_p_value": _num(self.f_p_value),
                "f_stars": stars(self.f_p_value),
            },
            "note": "*p<0.1; **p<0.05; ***p<0.01",
        }


def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def stars(p: float | None) -> str:
    if p is None or math.isnan(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def _check_rank(xmat: np.ndarray, names: Sequence[str]) -> None:
    """Raise CollinearityError naming columns that add no rank."""
    if xmat.shape[1] == 0:
        return
    scale = np.linalg.norm(xmat, axis=0)
    scale[scale == 0] = 1.0
    xmat_scaled = xmat / scale
    tol = max(xmat.shape) * np.finfo(float).eps * 1e3
    bad = []
    rank = 0
    for j in range(xmat_scaled.shape[1]):
        r = np.linalg.matrix_rank(xmat_scaled[:, : j + 1], tol=tol)
        if r == rank:
            bad.append(names[j])
        rank = r
    if bad:
        raise CollinearityError(f"collinear columns: {', '.join(bad)}")


def _qr_solve(xmat: np.ndarray, y: np.ndarray, names: Sequence[str]):
    q_mat, r_mat = np.linalg.qr(xmat, mode="reduced")
    diag = np.abs(np.diag(r_mat))
    if diag.size and diag.min() <= diag.max() * xmat.shape[0] * np.finfo(float).eps * 1e3:
        _check_rank(xmat, names)
        raise CollinearityError("design matrix is rank deficient")
    coef = np.linalg.solve(r_mat, q_mat.T @ y) if r_mat.size else np.empty(0)
    r_inv = np.linalg.solve(r_mat, np.eye(r_mat.shape[0])) if r_mat.size else np.empty((0, 0))
    return coef, r_inv @ r_inv.T


def _assemble(names, coef, xtx_inv, resid, y, df_model, df_resid, *, has_const,
              response_name, fe_absorbed=None, within_r2=None, inference=None) -> FitResult:
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum()) if has_const else float(y @ y)
    if tss <= 0:
        r2 = 0.0
    else:
        r2 = min(max(1.0 - rss / tss, 0.0), 1.0)
    n = y.shape[0]
    if df_resid > 0:
        sigma2 = rss / df_resid
        adj = 1.0 - (1.0 - r2) * (n - (1 if has_const else 0)) / df_resid
    else:
        sigma2 = math.nan
        adj = math.nan
    adj = min(adj, r2) if not math.isnan(adj) else adj
    inference = inference if inference is not None else names
    se, pv = {}, {}
    for j, name in enumerate(names):
        if name in inference and df_resid > 0:
            s = math.sqrt(max(sigma2 * xtx_inv[j, j], 0.0))
            se[name] = s
            if s > 0:
                pv[name] = t_sf_two_sided(coef[j] / s, df_resid)
            else:
                pv[name] = 0.0 if coef[j] != 0 else 1.0
        else:
            se[name] = math.nan
            pv[name] = math.nan
    if df_model > 0 and df_resid > 0:
        if rss > 0:
            fstat = ((tss - rss) / df_model) / (rss / df_resid)
            fp = f_sf(fstat, df_model, df_resid)
        else:
            fstat, fp = math.inf, 0.0
    else:
        fstat, fp = math.nan, math.nan
    return FitResult(
        coefficients={k: float(b) for k, b in zip(names, coef)},
        std_errors=se,
        p_values=pv,
        r_squared=r2,
        adj_r_squared=adj,
        residual_std_error=math.sqrt(sigma2) if not math.isnan(sigma2) else math.nan,
        f_statistic=fstat,
        f_p_value=fp,
        df_model=int(df_model),
        df_resid=int(df_resid),
        n_obs=int(n),
        fe_absorbed=dict(fe_absorbed or {}),
        within_r_squared=within_r2,
        response_name=response_name,
        residuals=resid,
    )


def ols_fit(design: DesignMatrix, intercept: bool = True) -> FitResult:
    """Ordinary least squares of the response on the design's columns."""
    if design.fe_groups:
        raise ValueError("design has fixed-effect groups; use fe_ols_fit")
    names = (["const"] if intercept else []) + design.names
    xmat = design.matrix()
    if intercept:
        xmat = np.column_stack([np.ones(design.n_obs), xmat])
    n, k = xmat.shape
    if n <= k:
        raise ValueError(f"need more observations ({n}) than parameters ({k})")
    y = design.response
    _check_constant_columns(design, intercept)
    coef, xtx_inv = _qr_solve(xmat, y, names)
    resid = y - xmat @ coef
    return _assemble(names, coef, xtx_inv, resid, y, k - (1 if intercept else 0), n - k,
                     has_const=intercept, response_name=design.response_name)


def _check_constant_columns(design: DesignMatrix, intercept: bool) -> None:
    if not intercept:
        return
    const = [name for name, col in design.columns.items() if np.ptp(col) == 0]
    if const:
        raise CollinearityError(f"collinear columns (constant alongside intercept): {', '.join(const)}")


# --- fixed effects ---------------------------------------------------------

def _codes(labels: np.ndarray) -> tuple[np.ndarray, int]:
    _, codes = np.unique(labels, return_inverse=True)
    return codes.ravel(), int(codes.max()) + 1 if codes.size else 0


def _demean_once(mat: np.ndarray, codes: np.ndarray, n_levels: int) -> np.ndarray:
    counts = np.bincount(codes, minlength=n_levels).astype(float)
    out = np.empty_like(mat)
    for j in range(mat.shape[1]):
        sums = np.bincount(codes, weights=mat[:, j], minlength=n_levels)
        out[:, j] = mat[:, j] - (sums / counts)[codes]
    return out


def demean(mat: np.ndarray, groups: Sequence[tuple[np.ndarray, int]],
           tol: float = 1e-14, max_iter: int = 100_000) -> tuple[np.ndarray, bool]:
    """Project columns of ``mat`` off the span of the group dummies.

    One grouping is a single pass; several use alternating projections until
    the largest update falls below ``tol`` relative to the column scale.
    Returns the demeaned matrix and a convergence flag.
    """
    mat = np.array(mat, dtype=float, copy=True)
    if len(groups) == 1:
        return _demean_once(mat, *groups[0]), True
    scale = np.maximum(np.abs(mat).max(axis=0, initial=0.0), 1.0)
    for _ in range(max_iter):
        prev = mat
        for codes, n_levels in groups:
            mat = _demean_once(mat, codes, n_levels)
        if np.all(np.abs(mat - prev).max(axis=0, initial=0.0) <= tol * scale):
            return mat, True
    return mat, False


def _absorbed_rank(groups: Sequence[tuple[np.ndarray, int]]) -> int:
    """Rank of [1, D_1, ..., D_g] for the fixed-effect dummies."""
    if not groups:
        return 1
    if len(groups) == 1:
        return groups[0][1]
    if len(groups) == 2:
        (a, na), (b, nb) = groups
        # levels of the two groupings form a bipartite graph; each connected
        # component loses one degree of freedom
        parent = list(range(na + nb))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, j in zip(a, b + na):
            ri, rj = find(int(i)), find(int(j))
            if ri != rj:
                parent[ri] = rj
        components = len({find(i) for i in range(na + nb)})
        return na + nb - components
    dummies = np.column_stack([np.ones(len(groups[0][0]))] + [np.eye(n)[c] for c, n in groups])
    return int(np.linalg.matrix_rank(dummies))


def dummy_design(design: DesignMatrix, drop_first: bool = True) -> tuple[np.ndarray, list[str]]:
    """Intercept, regressors, then one dummy per non-reference FE level."""
    cols = [np.ones(design.n_obs)]
    names = ["const"]
    for name, col in design.columns.items():
        cols.append(col)
        names.append(name)
    for gname, labels in design.fe_groups.items():
        levels = np.unique(labels)
        for lvl in levels[1:] if drop_first else levels:
            cols.append((labels == lvl).astype(float))
            names.append(f"{gname}[{lvl}]")
    return np.column_stack(cols), names


def fe_ols_fit(design: DesignMatrix, method: str = "within") -> FitResult:
    """OLS with the design's fixed-effect groups absorbed.

    Slopes equal those of the dummy-expanded regression.  ``const`` is the
    intercept under reference-level (first sorted level) dummy coding.  R^2,
    adjusted R^2 and the F statistic describe the full model including the
    fixed effects; ``within_r_squared`` describes the demeaned regression.
    ``method`` is ``"within"`` (default) or ``"dummy"``.
    """
    if not design.fe_groups:
        return ols_fit(design, intercept=True)
    groups = [_codes(labels) for labels in design.fe_groups.values()]
    fe_absorbed = {name: g[1] for name, g in zip(design.fe_groups, groups)}
    absorbed = _absorbed_rank(groups)
    n, k = design.n_obs, len(design.columns)
    df_resid = n - absorbed - k
    if df_resid <= 0:
        raise ValueError(f"not identifiable: {n} observations for {absorbed + k} parameters")
    y = design.response
    xmat = design.matrix()

    converged = False
    if method == "within":
        Z, converged = demean(np.column_stack([y, xmat]), groups)
    elif method != "dummy":
        raise ValueError(f"unknown method {method!r}")

    if converged:
        yt, xmat_within = Z[:, 0], Z[:, 1:]
        for j, name in enumerate(design.names):
            if np.abs(xmat_within[:, j]).max(initial=0.0) <= 1e-10 * max(np.abs(xmat[:, j]).max(), 1.0):
                raise CollinearityError(f"collinear columns (constant within fixed effects): {name}")
        coef, xtx_inv = _qr_solve(xmat_within, yt, design.names) if k else (np.empty(0), np.empty((0, 0)))
        resid = yt - xmat_within @ coef
        # the absorbed effects of the reference cell give the constant
        fe_part = y - xmat @ coef - resid
        const = _reference_constant(fe_part, design)
        within_tss = float(yt @ yt)
        within_r2 = 1.0 - float(resid @ resid) / within_tss if within_tss > 0 else 0.0
        names = ["const", *design.names]
        full_beta = np.concatenate([[const], coef])
        cov = np.zeros((k + 1, k + 1))
        cov[1:, 1:] = xtx_inv
        cov[0, 0] = math.nan
        return _assemble(names, full_beta, cov, resid, y, absorbed - 1 + k, df_resid,
                         has_const=True, response_name=design.response_name,
                         fe_absorbed=fe_absorbed, within_r2=within_r2,
                         inference=design.names)

    Xd, names = dummy_design(design)
    try:
        coef, xtx_inv = _qr_solve(Xd, y, names)
    except CollinearityError as exc:
        offending = [c for c in design.names if c in str(exc)]
        if offending:
            raise CollinearityError(f"collinear columns (constant within fixed effects): {', '.join(offending)}") from exc
        # dummies for disconnected FE components are not full rank; drop redundant ones
        keep = _independent_columns(Xd)
        if any(j not in keep for j in range(1 + k)):
            bad = [names[j] for j in range(1, 1 + k) if j not in keep]
            raise CollinearityError(f"collinear columns (constant within fixed effects): {', '.join(bad)}") from exc
        Xd = Xd[:, keep]
        names = [names[j] for j in keep]
        coef, xtx_inv = _qr_solve(Xd, y, names)
    resid = y - Xd @ coef
    inference = ["const", *design.names]
    fit = _assemble(names, coef, xtx_inv, resid, y, Xd.shape[1] - 1, n - Xd.shape[1],
                    has_const=True, response_name=design.response_name,
                    fe_absorbed=fe_absorbed, inference=inference)
    keep_names = set(inference)
    fit.coefficients = {k_: v for k_, v in fit.coefficients.items() if k_ in keep_names}
    fit.std_errors = {k_: v for k_, v in fit.std_errors.items() if k_ in keep_names}
    fit.p_values = {k_: v for k_, v in fit.p_values.items() if k_ in keep_names}
    Xw, _ = demean(design.matrix(), groups) if k else (np.empty((n, 0)), True)
    yw, _ = demean(y[:, None], groups)
    wtss = float((yw[:, 0] ** 2).sum())
    fit.within_r_squared = 1.0 - float(resid @ resid) / wtss if wtss > 0 else 0.0
    return fit


def _independent_columns(xmat: np.ndarray) -> list[int]:
    keep: list[int] = []
    tol = max(xmat.shape) * np.finfo(float).eps * 1e3
    for j in range(xmat.shape[1]):
        cand = keep + [j]
        if np.linalg.matrix_rank(xmat[:, cand], tol=tol) == len(cand):
            keep = cand
    return keep


def _reference_constant(fe_part: np.ndarray, design: DesignMatrix) -> float:
    """Sum of fixed effects at each grouping's reference level.

    ``fe_part`` is the fitted fixed-effect component per observation.  Under
    additive effects the value at the all-reference cell is identified when
    the grouping graph is connected; it is recovered by solving the dummy
    system on the (few) levels.
    """
    Xd, _ = dummy_design(DesignMatrix(fe_part, {}, design.fe_groups))
    coef, *_ = np.linalg.lstsq(Xd, fe_part, rcond=None)
    return float(coef[0])


# --- correlation -----------------------------------------------------------

@dataclass(frozen=True)
class CorrResult:
    coefficient: float
    p_value: float
    n: int


def _corr_p(r: float, n: int) -> float:
    df = n - 2
    if abs(r) >= 1.0:
        return 0.0
    stat = r * math.sqrt(df / ((1.0 - r) * (1.0 + r)))
    return t_sf_two_sided(stat, df)


def pearson_corr(x, y) -> CorrResult:
    """Product-moment correlation with a two-sided t-test p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and equally long")
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 observations")
    xm = x - x.mean()
    ym = y - y.mean()
    sxx = float(xm @ xm)
    syy = float(ym @ ym)
    if sxx <= 0 or syy <= 0:
        raise ValueError("zero variance input")
    r = float(xm @ ym) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    return CorrResult(r, _corr_p(r, n), n)


def rankdata(x) -> np.ndarray:
    """1-based ranks with ties given their average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size, dtype=float)
    i = 0
    while i < xs.size:
        j = i
        while j + 1 < xs.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_corr(x, y) -> CorrResult:
    """Pearson correlation of mid-ranks, same t-test p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 observations")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("all values tied")
    return pearson_corr(rankdata(x), rankdata(y))

