"""Local linear kernel regression of pseudo-outcomes on the effect modifier.

Provides the Epanechnikov kernel, weighted least-squares fits at single
points, K-fold least-squares cross-validation of a global bandwidth, the
sandwich variance of the local intercept and a scikit-learn style
``LocalLinearRegression`` estimator that assembles pointwise Wald intervals.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_vector
from .exceptions import BandwidthError, DegenerateWindowError, InputError

JITTER = 1e-10
Z_975 = 1.96


@dataclass(frozen=True)
class KernelSpec:
    """Epanechnikov kernel K(u) = 0.75 (1 - u^2) on [-1, 1]."""

    kind: str = "epanechnikov"
    integral: float = 1.0
    second_moment: float = 0.2  # int u^2 K(u) du
    roughness: float = 0.6  # int K(u)^2 du

    def __post_init__(self):
        if self.kind != "epanechnikov":
            raise InputError(f"unsupported kernel {self.kind!r}")


EPANECHNIKOV = KernelSpec()


def kernel_eval(u):
    u = np.asarray(u, dtype=float)
    out = np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)
    return float(out) if out.ndim == 0 else out


def kernel_weights(v_data, v, h):
    """K_h(V_i - v) = K((V_i - v)/h) / h."""
    return kernel_eval((np.asarray(v_data) - v) / h) / h


@dataclass(frozen=True)
class BandwidthSpec:
    """Either ``fixed`` with bandwidth ``h`` or ``cv`` over ``grid``.

    A ``cv`` spec without a grid uses :func:`default_bandwidth_grid`.
    """

    mode: str = "cv"
    h: float = None
    grid: tuple = None
    folds: int = 5
    interior: float = 0.05

    def __post_init__(self):
        if self.mode == "fixed":
            if self.h is None or not self.h > 0:
                raise InputError("fixed bandwidth needs h > 0")
        elif self.mode == "cv":
            if self.grid is not None:
                grid = tuple(float(g) for g in self.grid)
                if not grid or any(g <= 0 for g in grid) or list(grid) != sorted(grid):
                    raise InputError("bandwidth grid must be non-empty, positive and ascending")
                object.__setattr__(self, "grid", grid)
            if self.folds < 2:
                raise InputError("cv folds must be >= 2")
            if not 0.0 <= self.interior < 0.5:
                raise InputError("cv interior fraction must lie in [0, 0.5)")
        else:
            raise InputError(f"unknown bandwidth mode {self.mode!r}")


def default_bandwidth_grid(v, size=30):
    """Log-spaced grid on [0.1 sd(V) n^(-1/5), 3 sd(V)]."""
    v = np.asarray(v, dtype=float)
    sd = float(np.std(v, ddof=1))
    if not sd > 0:
        raise BandwidthError("effect modifier has zero spread")
    return np.geomspace(0.1 * sd * v.size ** -0.2, 3.0 * sd, size)


def _moments(d, w, xi):
    s0 = w.sum()
    s1 = w @ d
    s2 = w @ (d * d)
    t0 = w @ xi
    t1 = w @ (d * xi)
    return s0, s1, s2, t0, t1


def _solve_2x2(s0, s1, s2, t0, t1):
    det = s0 * s2 - s1 * s1
    jittered = False
    if not det > 1e-13 * max(s0 * s2, 1e-300):
        s0j, s2j = s0 + JITTER, s2 + JITTER
        det = s0j * s2j - s1 * s1
        jittered = True
        return (s2j * t0 - s1 * t1) / det, (s0j * t1 - s1 * t0) / det, jittered
    return (s2 * t0 - s1 * t1) / det, (s0 * t1 - s1 * t0) / det, jittered


def _window(v_data, v, h):
    w = kernel_weights(v_data, v, h)
    inside = w > 0
    distinct = np.unique(v_data[inside]).size
    return w, inside, distinct


def local_linear_fit(v_data, xi, v, h, return_flags=False):
    """Kernel-weighted least squares of ``xi`` on (1, V - v).

    Returns ``(theta, slope)``; ``theta`` is the fitted value at ``v``.
    Raises :class:`DegenerateWindowError` when fewer than two distinct
    ``V`` values get positive weight.
    """
    if not h > 0:
        raise InputError("bandwidth must be positive")
    v_data = np.asarray(v_data, dtype=float)
    xi = np.asarray(xi, dtype=float)
    w, inside, distinct = _window(v_data, v, h)
    if distinct < 2:
        raise DegenerateWindowError(
            f"{int(inside.sum())} point(s), {distinct} distinct value(s) in window at v={v}, h={h}",
            count=int(inside.sum()),
        )
    d = v_data[inside] - v
    theta, slope, jittered = _solve_2x2(*_moments(d, w[inside], xi[inside]))
    if return_flags:
        return theta, slope, jittered
    return theta, slope


def sandwich_variance(v_data, xi, v, h, beta_hat):
    """(1,1) element of P_n[phi phi^T] with phi = D^-1 g(V) K_h(V-v) (xi - g(V)^T beta).

    ``D`` is estimated by P_n[g(V) K_h(V-v) g(V)^T] over all ``n`` points;
    the standard error of theta is sqrt(result / n).
    """
    v_data = np.asarray(v_data, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n = v_data.size
    k = kernel_weights(v_data, v, h)
    d = v_data - v
    D = np.array([[k.sum(), k @ d], [k @ d, k @ (d * d)]]) / n
    if not np.linalg.det(D) > 1e-13 * max(D[0, 0] * D[1, 1], 1e-300):
        D = D + JITTER * np.eye(2)
    theta, slope = beta_hat
    resid = k * (xi - theta - slope * d)
    score = np.vstack([resid, resid * d])  # g(V) K_h (xi - g'beta), shape (2, n)
    row = np.linalg.solve(D, np.eye(2))[0]  # first row of D^-1
    phi1 = row @ score
    return float(phi1 @ phi1 / n)


def smoothing_bias_reference(theta_second_derivative, h, kernel=EPANECHNIKOV):
    """Leading smoothing bias theta''(v) (h^2 / 2) int u^2 K(u) du."""
    return theta_second_derivative * (h * h / 2.0) * kernel.second_moment


def _cv_folds(v_data, xi, folds, seed):
    # folds are dealt over the points sorted by (v, xi), so the split does
    # not depend on the order in which rows arrive
    n = v_data.size
    order = np.lexsort((xi, v_data))
    rng = np.random.default_rng(seed)
    fold = np.empty(n, dtype=int)
    fold[order[rng.permutation(n)]] = np.arange(n) % folds
    return fold


def cv_scores(v_data, xi, grid, folds=5, seed=0, interior=0.0):
    """Out-of-fold mean squared prediction error for each bandwidth in ``grid``.

    Held-out points whose training window is degenerate are predicted by
    the training-fold mean. Returns ``(scores, usable)`` where ``usable[j]``
    records whether any held-out point was predicted by a genuine local
    fit at ``grid[j]``.

    ``interior`` in [0, 0.5) drops held-out points whose ``v`` lies outside
    the ``(interior, 1 - interior)`` sample quantiles from the loss, so the
    sparse tails do not drive the choice of h.
    """
    v_data = check_vector(v_data, "v")
    xi = check_vector(xi, "xi", length=v_data.size)
    grid = np.asarray(grid, dtype=float)
    n = v_data.size
    if folds < 2 or folds > n:
        raise InputError("cv folds must satisfy 2 <= folds <= n")
    if not 0.0 <= interior < 0.5:
        raise InputError("interior must lie in [0, 0.5)")
    # canonical (v, xi) order makes every sum, and so the selected h,
    # independent of the order in which rows arrive
    order = np.lexsort((xi, v_data))
    v_data, xi = v_data[order], xi[order]
    fold = _cv_folds(v_data, xi, folds, seed)
    lo, hi = np.quantile(v_data, [interior, 1.0 - interior]) if interior > 0 else (-np.inf, np.inf)
    scored = (v_data >= lo) & (v_data <= hi)
    sse = np.zeros(grid.size)
    usable = np.zeros(grid.size, dtype=bool)
    for f in range(folds):
        test, train = fold == f, fold != f
        vt, vr, xr = v_data[test], v_data[train], xi[train]
        fallback = xr.mean()
        d2 = (vr[None, :] - vt[:, None]) ** 2
        basis = np.column_stack([np.ones_like(vr), vr, vr * vr, xr, vr * xr])
        for j, h in enumerate(grid):
            w = np.maximum(1.0 - d2 * (1.0 / (h * h)), 0.0)
            m = w @ basis
            s0, t0 = m[:, 0], m[:, 3]
            s1 = m[:, 1] - vt * s0
            s2 = m[:, 2] - 2.0 * vt * m[:, 1] + vt * vt * s0
            t1 = m[:, 4] - vt * t0
            det = s0 * s2 - s1 * s1
            ok = (np.count_nonzero(w, axis=1) >= 2) & (det > 1e-12 * np.maximum(s0 * s2, 1e-300))
            pred = np.full(vt.size, fallback)
            pred[ok] = (s2[ok] * t0[ok] - s1[ok] * t1[ok]) / det[ok]
            keep = scored[test]
            sse[j] += np.sum((xi[test][keep] - pred[keep]) ** 2)
            usable[j] |= ok.any()
    return sse / max(int(scored.sum()), 1), usable


def select_bandwidth_cv(v_data, xi, grid, folds=5, seed=0, interior=0.0):
    """Grid bandwidth with the smallest CV score (ties go to the smaller h)."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InputError("bandwidth grid is empty")
    if grid.size == 1:
        return float(grid[0])
    scores, usable = cv_scores(v_data, xi, grid, folds, seed, interior)
    return _argmin_bandwidth(grid, scores, usable)


def _argmin_bandwidth(grid, scores, usable):
    if not usable.any():
        raise BandwidthError("every candidate bandwidth was degenerate on every fold")
    scores = np.where(usable, scores, np.inf)
    order = np.argsort(grid, kind="stable")
    best = order[np.argmin(scores[order])]
    return float(grid[best])


@dataclass
class CateCurve:
    grid: np.ndarray
    theta_hat: np.ndarray
    slope_hat: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    bandwidth: float
    n_effective: np.ndarray
    flags: list = field(default_factory=list)
    n: int = 0

    COLUMNS = ("v", "theta_hat", "slope_hat", "se", "ci_lower", "ci_upper", "n_effective", "flags")

    def rows(self):
        for i in range(self.grid.size):
            yield (
                self.grid[i],
                self.theta_hat[i],
                self.slope_hat[i],
                self.se[i],
                self.ci_lower[i],
                self.ci_upper[i],
                int(self.n_effective[i]),
                self.flags[i],
            )

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows():
            w.writerow([_num(x) for x in row[:6]] + [row[6], row[7]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self):
        return {
            "bandwidth": self.bandwidth,
            "n": self.n,
            "points": [dict(zip(self.COLUMNS, (*map(_json_num, r[:6]), r[6], r[7]))) for r in self.rows()],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _num(x):
    return "nan" if math.isnan(x) else format(float(x), ".17g")


def _json_num(x):
    return None if math.isnan(x) else float(x)


class LocalLinearRegression(RegressorMixin, BaseEstimator):
    """Local linear smoother with a global bandwidth.

    Parameters
    ----------
    bandwidth : float or "cv"
    bandwidth_grid : array-like, optional
        Candidates for ``"cv"``; defaults to :func:`default_bandwidth_grid`.
    cv_folds : int
    cv_interior : float
        Tail fraction of V excluded (on each side) from the CV loss.
    widen_factor : float
        Factor by which the bandwidth grows at a grid point whose window is
        degenerate.
    max_widen : int
        Number of widening attempts before the point is reported as NaN.
    random_state : int
        Seed for the CV fold split.
    """

    def __init__(self, bandwidth="cv", bandwidth_grid=None, cv_folds=5, cv_interior=0.05, widen_factor=1.5,
                 max_widen=3, random_state=0):
        self.bandwidth = bandwidth
        self.bandwidth_grid = bandwidth_grid
        self.cv_folds = cv_folds
        self.cv_interior = cv_interior
        self.widen_factor = widen_factor
        self.max_widen = max_widen
        self.random_state = random_state

    def fit(self, v, xi):
        v = np.asarray(v, dtype=float)
        if v.ndim == 2 and v.shape[1] == 1:
            v = v.ravel()
        v = check_vector(v, "v")
        xi = check_vector(xi, "xi", length=v.size)
        if v.size < 2:
            raise InputError("need at least two observations")
        self.v_, self.xi_ = v, xi
        if self.bandwidth == "cv":
            grid = self.bandwidth_grid
            if grid is None:
                grid = default_bandwidth_grid(v)
            self.bandwidth_grid_ = np.asarray(grid, dtype=float)
            if self.bandwidth_grid_.size == 1:
                self.cv_scores_ = np.full(1, np.nan)
                self.bandwidth_ = float(self.bandwidth_grid_[0])
            else:
                self.cv_scores_, usable = cv_scores(
                    v, xi, self.bandwidth_grid_, self.cv_folds, self.random_state, self.cv_interior
                )
                self.bandwidth_ = _argmin_bandwidth(self.bandwidth_grid_, self.cv_scores_, usable)
        else:
            h = float(self.bandwidth)
            if not h > 0:
                raise InputError("bandwidth must be positive")
            self.bandwidth_ = h
        return self

    def _point(self, x):
        """Fit at one point, widening the window if needed."""
        h = self.bandwidth_
        flags = []
        for attempt in range(self.max_widen + 1):
            try:
                theta, slope, jittered = local_linear_fit(self.v_, self.xi_, x, h, return_flags=True)
            except DegenerateWindowError:
                if attempt == self.max_widen:
                    n_eff = int(np.count_nonzero(kernel_weights(self.v_, x, h)))
                    return math.nan, math.nan, math.nan, h, n_eff, flags + ["degenerate"]
                h *= self.widen_factor
                continue
            if attempt:
                flags.append(f"widened_x{attempt}")
            if jittered:
                flags.append("jitter")
            s2 = sandwich_variance(self.v_, self.xi_, x, h, (theta, slope))
            n_eff = int(np.count_nonzero(kernel_weights(self.v_, x, h)))
            return theta, slope, s2, h, n_eff, flags
        raise AssertionError("unreachable")

    def predict(self, v):
        check_is_fitted(self, "bandwidth_")
        v = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
        return np.array([self._point(x)[0] for x in v])

    def curve(self, grid):
        """Estimates, standard errors and 95% Wald intervals on ``grid``."""
        check_is_fitted(self, "bandwidth_")
        grid = np.atleast_1d(np.asarray(grid, dtype=float)).ravel()
        n = self.v_.size
        lo_v, hi_v = self.v_.min(), self.v_.max()
        m = grid.size
        theta, slope, se, n_eff = np.empty(m), np.empty(m), np.empty(m), np.zeros(m, dtype=int)
        flags = []
        for i, x in enumerate(grid):
            t, b, s2, _, ne, fl = self._point(x)
            theta[i], slope[i], n_eff[i] = t, b, ne
            se[i] = math.sqrt(s2 / n) if not math.isnan(s2) else math.nan
            if x < lo_v or x > hi_v:
                fl = ["extrapolation"] + fl
            flags.append("|".join(fl))
        return CateCurve(
            grid=grid,
            theta_hat=theta,
            slope_hat=slope,
            se=se,
            ci_lower=theta - Z_975 * se,
            ci_upper=theta + Z_975 * se,
            bandwidth=self.bandwidth_,
            n_effective=n_eff,
            flags=flags,
            n=n,
        )


def estimate_cate_curve(pseudo, grid, bw=None, seed=0):
    """Local linear CATE curve from pseudo-outcomes."""
    bw = bw or BandwidthSpec()
    if bw.mode == "fixed":
        model = LocalLinearRegression(bandwidth=bw.h, random_state=seed)
    else:
        model = LocalLinearRegression(bandwidth="cv", bandwidth_grid=bw.grid, cv_folds=bw.folds, cv_interior=bw.interior,
                                      random_state=seed)
    return model.fit(pseudo.v, pseudo.xi).curve(grid)
