"""Independent reference computations used as test oracles.

Nothing here imports the package's numerical code: each function is a
deliberately naive, loop-based restatement of a formula so that agreement
with the vectorised implementation means something.
"""

import math

import numpy as np


def epanechnikov(u):
    return 0.75 * (1.0 - u * u) if abs(u) <= 1.0 else 0.0


def riesz(s, a, p_s, p_a1):
    if s == 0:
        return 0.0
    received = p_a1 if a == 1 else 1.0 - p_a1
    sign = 1.0 if a == 1 else -1.0
    return sign / (p_s * received)


def xi_cate(s, a, y, p_s, p_a1, g1, g0):
    if s == 0:
        return g1 - g0
    gamma_obs = g1 if a == 1 else g0
    return riesz(s, a, p_s, p_a1) * (y - gamma_obs) + g1 - g0


def xi_arm(s, a, y, p_s, p_a1, g1, g0, arm):
    gamma = g1 if arm == 1 else g0
    if s == 0 or a != arm:
        return gamma
    p_arm = p_a1 if arm == 1 else 1.0 - p_a1
    return (y - gamma) / (p_s * p_arm) + gamma


def weighted_line(v, xi, v0, h):
    """(theta, slope) from lstsq on sqrt-weighted rows with weights K((v-v0)/h)/h."""
    rows, rhs = [], []
    for vi, xii in zip(v, xi):
        w = epanechnikov((vi - v0) / h) / h
        if w > 0:
            r = math.sqrt(w)
            rows.append([r, r * (vi - v0)])
            rhs.append(r * xii)
    sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    return float(sol[0]), float(sol[1])


def sandwich(v, xi, v0, h, beta):
    """(1,1) element of mean(phi phi^T), phi_i = D^{-1} g_i K_i (xi_i - g_i^T beta)."""
    n = len(v)
    D = np.zeros((2, 2))
    for vi in v:
        g = np.array([1.0, vi - v0])
        D += np.outer(g, g) * epanechnikov((vi - v0) / h) / h
    D /= n
    Dinv = np.linalg.inv(D)
    M = np.zeros((2, 2))
    for vi, xii in zip(v, xi):
        g = np.array([1.0, vi - v0])
        k = epanechnikov((vi - v0) / h) / h
        phi = Dinv @ (g * k * (xii - g @ np.asarray(beta)))
        M += np.outer(phi, phi)
    return float((M / n)[0, 0])


def cv_score(v, xi, fold, h, interior=0.0):
    """Exhaustive K-fold CV loss of the local linear fit at one bandwidth."""
    v, xi = np.asarray(v, dtype=float), np.asarray(xi, dtype=float)
    if interior > 0:
        lo, hi = np.quantile(v, [interior, 1.0 - interior])
    else:
        lo, hi = -np.inf, np.inf
    total, count = 0.0, 0
    for f in np.unique(fold):
        train = fold != f
        vt, xt = v[train], xi[train]
        for i in np.flatnonzero(fold == f):
            if not lo <= v[i] <= hi:
                continue
            inside = [j for j in range(vt.size) if abs(vt[j] - v[i]) < h]
            if len(inside) >= 2 and np.ptp(vt[inside]) > 0:
                pred, _ = weighted_line(vt, xt, v[i], h)
            else:
                pred = xt.mean()
            total += (xi[i] - pred) ** 2
            count += 1
    return total / count


def simplex_grid_search(P, t, resolution):
    """Best objective ||P w - t||^2 over a regular grid on the simplex (K = 2 or 3)."""
    K = P.shape[1]
    steps = int(round(1.0 / resolution))
    best, best_w = np.inf, None
    if K == 2:
        candidates = ((i / steps, 1 - i / steps) for i in range(steps + 1))
    elif K == 3:
        candidates = (
            (i / steps, j / steps, (steps - i - j) / steps)
            for i in range(steps + 1)
            for j in range(steps + 1 - i)
        )
    else:
        raise ValueError("grid search oracle supports K = 2 or 3")
    for w in candidates:
        w = np.array(w)
        obj = float(np.sum((P @ w - t) ** 2))
        if obj < best:
            best, best_w = obj, w
    return best, best_w


def boosted_stumps(x, y, n_rounds, rate, n_thresholds=50):
    """Least-squares gradient boosting of single-split stumps on one feature.

    Each round searches the split exhaustively over ``n_thresholds`` evenly
    spaced thresholds. Returns a predictor function.
    """
    thresholds = np.linspace(x.min(), x.max(), n_thresholds + 2)[1:-1]
    base = y.mean()
    fit = np.full(y.size, base)
    stumps = []
    for _ in range(n_rounds):
        r = y - fit
        best = None
        for c in thresholds:
            left = x <= c
            if left.all() or not left.any():
                continue
            ml, mr = r[left].mean(), r[~left].mean()
            sse = np.sum((r[left] - ml) ** 2) + np.sum((r[~left] - mr) ** 2)
            if best is None or sse < best[0]:
                best = (sse, c, ml, mr)
        _, c, ml, mr = best
        stumps.append((c, rate * ml, rate * mr))
        fit = fit + np.where(x <= c, rate * ml, rate * mr)

    def predict(z):
        out = np.full(z.size, base)
        for c, lv, rv in stumps:
            out += np.where(z <= c, lv, rv)
        return out

    return predict


def trapezoid(f, a, b, step):
    grid = np.arange(a, b + step / 2, step)
    vals = f(grid)
    return float(step * (vals.sum() - 0.5 * (vals[0] + vals[-1])))
