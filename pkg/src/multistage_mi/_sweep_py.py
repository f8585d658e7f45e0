"""Pure numpy chained-equations kernel.

Reference implementation of the compiled ``_csweep`` module and the fallback
when the extension is not built.  Both consume identical pre-drawn noise, so
they agree up to floating point rounding.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import SingularDesign, TooFewObserved

NORM = 0
PMM = 1
PIVOT_TOL = 1e-12


def _chol(a: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise SingularDesign("cross-product matrix is not positive definite") from None
    if np.any(np.diag(L) ** 2 <= PIVOT_TOL):
        raise SingularDesign("cross-product matrix is numerically singular")
    return L


def fit_parts(x_obs: np.ndarray, y_obs: np.ndarray, ridge: float):
    """Ridged least squares with intercept.

    Returns ``(beta_hat, V, sse, chol(V))`` with
    ``V = (X'X + ridge*diag(X'X))^-1``, computed on unit-diagonal scaled
    cross-products.
    """
    n_obs, q = x_obs.shape
    if n_obs < q + 3:
        raise TooFewObserved(f"{n_obs} observed rows for {q} predictors (need {q + 3})")
    x = np.empty((n_obs, q + 1))
    x[:, 0] = 1.0
    x[:, 1:] = x_obs
    xtx = x.T @ x
    d = np.sqrt(np.diag(xtx))
    if np.any(d == 0):
        raise SingularDesign("all-zero predictor column")
    c = xtx / np.outer(d, d)
    c[np.diag_indices_from(c)] += ridge
    L = _chol(c)
    linv = np.linalg.solve(L, np.eye(q + 1))
    cinv = linv.T @ linv
    v = cinv / np.outer(d, d)
    beta = v @ (x.T @ y_obs)
    resid = y_obs - x @ beta
    return beta, v, float(resid @ resid), _chol(cinv) / d[:, None]


def posterior_beta(beta: np.ndarray, chol_v: np.ndarray, sse: float, g: float, z: np.ndarray):
    """Draw (beta*, sigma*) given a chi-square draw ``g`` and normals ``z``."""
    sigma = math.sqrt(sse / g)
    return beta + sigma * (chol_v @ z), sigma


def _predict(beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    return beta[0] + x @ beta[1:]


def norm_core(x_obs, y_obs, x_mis, g, z, eps, ridge):
    beta, _, sse, chol_v = fit_parts(x_obs, y_obs, ridge)
    if x_mis.shape[0] == 0:
        return np.empty(0)
    bstar, sigma = posterior_beta(beta, chol_v, sse, g, z)
    return _predict(bstar, x_mis) + sigma * eps


def pmm_core(x_obs, y_obs, x_mis, g, z, u, donors, ridge):
    """Type-1 matching: beta* for the missing rows, beta-hat for donors."""
    n_obs = x_obs.shape[0]
    if n_obs < donors:
        raise TooFewObserved(f"{n_obs} observed rows for {donors} donors")
    beta, _, sse, chol_v = fit_parts(x_obs, y_obs, ridge)
    if x_mis.shape[0] == 0:
        return np.empty(0)
    bstar, _ = posterior_beta(beta, chol_v, sse, g, z)
    eta_obs = _predict(beta, x_obs)
    eta_mis = _predict(bstar, x_mis)
    out = np.empty(x_mis.shape[0])
    for i in range(x_mis.shape[0]):
        dist = np.abs(eta_mis[i] - eta_obs)
        nearest = np.argsort(dist, kind="stable")[:donors]
        pick = min(int(u[i] * donors), donors - 1)
        out[i] = y_obs[nearest[pick]]
    return out


def run_chain(values, observed, targets, pred_ptr, pred_idx, methods, donors, ridge, chi2, z, noise):
    """Run ``chi2.shape[0]`` sweeps over ``targets`` in place on ``values``.

    ``observed`` is the original mask; missing cells of every target must
    already hold starting values.  ``noise[it, j]`` holds standard normals
    for norm targets and uniforms for pmm targets, one per missing row.
    """
    iterations, nt = chi2.shape
    obs_rows = []
    mis_rows = []
    for j in range(nt):
        col = observed[:, targets[j]].astype(bool)
        obs_rows.append(np.flatnonzero(col))
        mis_rows.append(np.flatnonzero(~col))
    for it in range(iterations):
        for j in range(nt):
            t = targets[j]
            preds = pred_idx[pred_ptr[j] : pred_ptr[j + 1]]
            k = len(preds) + 1
            obs, mis = obs_rows[j], mis_rows[j]
            x_obs = values[np.ix_(obs, preds)]
            y_obs = values[obs, t]
            x_mis = values[np.ix_(mis, preds)]
            if methods[j] == PMM:
                imp = pmm_core(x_obs, y_obs, x_mis, chi2[it, j], z[it, j, :k], noise[it, j, : len(mis)], donors, ridge)
            else:
                imp = norm_core(x_obs, y_obs, x_mis, chi2[it, j], z[it, j, :k], noise[it, j, : len(mis)], ridge)
            values[mis, t] = imp
