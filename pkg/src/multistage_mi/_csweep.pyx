# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled chained-equations kernel; mirrors ``_sweep_py.run_chain``."""

from libc.math cimport sqrt, fabs
from libc.stdlib cimport malloc, free

from .errors import SingularDesign, TooFewObserved

cdef enum:
    KMAX = 32

cdef enum:
    OK = 0
    ERR_SINGULAR = 1
    ERR_TOO_FEW = 2

cdef double PIVOT_TOL = 1e-12


cdef int chol_inplace(double* a, int k) noexcept nogil:
    """Lower Cholesky factor of the k x k row-major matrix ``a``, in place."""
    cdef int i, j, l
    cdef double s
    for j in range(k):
        s = a[j * k + j]
        for l in range(j):
            s -= a[j * k + l] * a[j * k + l]
        if not s > PIVOT_TOL:
            return ERR_SINGULAR
        a[j * k + j] = sqrt(s)
        for i in range(j + 1, k):
            s = a[i * k + j]
            for l in range(j):
                s -= a[i * k + l] * a[j * k + l]
            a[i * k + j] = s / a[j * k + j]
        for i in range(j):
            a[i * k + j] = 0.0
    return OK


cdef int draw_step(
    double[:, ::1] values, int t, long* preds, int q,
    long* obs, int n_obs, long* mis, int n_mis,
    int method, int donors, double ridge,
    double g, const double[::1] z, const double[::1] noise,
    double* scratch, double* eta_obs, long* best, double* bestd,
) noexcept nogil:
    cdef int k = q + 1
    cdef int i, j, l, r, row, m, pick, nb
    cdef double s, xi, sse, sigma, eta, dist
    cdef double* xtx = scratch
    cdef double* d = scratch + KMAX * KMAX
    cdef double* xty = d + KMAX
    cdef double* beta = xty + KMAX
    cdef double* bstar = beta + KMAX
    cdef double* lv = bstar + KMAX
    cdef double* tmp = lv + KMAX * KMAX
    cdef double* xrow = tmp + KMAX * KMAX

    if n_obs < q + 3 or (method == 1 and n_obs < donors):
        return ERR_TOO_FEW

    # cross-products with intercept
    for i in range(k * k):
        xtx[i] = 0.0
    for i in range(k):
        xty[i] = 0.0
    xrow[0] = 1.0
    for r in range(n_obs):
        row = obs[r]
        for i in range(q):
            xrow[i + 1] = values[row, preds[i]]
        s = values[row, t]
        for i in range(k):
            xi = xrow[i]
            xty[i] += xi * s
            for l in range(i + 1):
                xtx[i * k + l] += xi * xrow[l]
    for i in range(k):
        for l in range(i):
            xtx[l * k + i] = xtx[i * k + l]

    # scale to unit diagonal, ridge, factor
    for i in range(k):
        if xtx[i * k + i] <= 0.0:
            return ERR_SINGULAR
        d[i] = sqrt(xtx[i * k + i])
    for i in range(k):
        for l in range(k):
            tmp[i * k + l] = xtx[i * k + l] / (d[i] * d[l])
        tmp[i * k + i] += ridge
    if chol_inplace(tmp, k) != OK:
        return ERR_SINGULAR

    # Linv (lower) into lv; C^-1 = Linv' Linv into tmp; V = C^-1 / (d d') into xtx
    for i in range(k * k):
        lv[i] = 0.0
    for j in range(k):
        for i in range(j, k):
            s = 1.0 if i == j else 0.0
            for l in range(j, i):
                s -= tmp[i * k + l] * lv[l * k + j]
            lv[i * k + j] = s / tmp[i * k + i]
    for i in range(k):
        for l in range(k):
            s = 0.0
            for m in range(k):
                s += lv[m * k + i] * lv[m * k + l]
            tmp[i * k + l] = s
            xtx[i * k + l] = s / (d[i] * d[l])

    for i in range(k):
        s = 0.0
        for l in range(k):
            s += xtx[i * k + l] * xty[l]
        beta[i] = s

    sse = 0.0
    for r in range(n_obs):
        row = obs[r]
        eta = beta[0]
        for i in range(q):
            eta += beta[i + 1] * values[row, preds[i]]
        s = values[row, t] - eta
        sse += s * s
        if method == 1:
            eta_obs[r] = eta

    if n_mis == 0:
        return OK

    # chol(V) = diag(1/d) chol(C^-1)
    sigma = sqrt(sse / g)
    if chol_inplace(tmp, k) != OK:
        return ERR_SINGULAR
    for i in range(k):
        s = 0.0
        for l in range(i + 1):
            s += tmp[i * k + l] * z[l]
        bstar[i] = beta[i] + sigma * s / d[i]

    if method == 0:
        for r in range(n_mis):
            row = mis[r]
            eta = bstar[0]
            for i in range(q):
                eta += bstar[i + 1] * values[row, preds[i]]
            values[row, t] = eta + sigma * noise[r]
        return OK

    # predictive mean matching; insertion keeps the earlier donor on ties
    for r in range(n_mis):
        row = mis[r]
        eta = bstar[0]
        for i in range(q):
            eta += bstar[i + 1] * values[row, preds[i]]
        nb = 0
        for j in range(n_obs):
            dist = fabs(eta - eta_obs[j])
            if nb == donors and not dist < bestd[nb - 1]:
                continue
            if nb < donors:
                nb += 1
            l = nb - 1
            while l > 0 and dist < bestd[l - 1]:
                bestd[l] = bestd[l - 1]
                best[l] = best[l - 1]
                l -= 1
            bestd[l] = dist
            best[l] = j
        pick = <int>(noise[r] * donors)
        if pick > donors - 1:
            pick = donors - 1
        values[row, t] = values[obs[best[pick]], t]
    return OK


def run_chain(
    double[:, ::1] values,
    const unsigned char[:, ::1] observed,
    const long[::1] targets,
    const long[::1] pred_ptr,
    const long[::1] pred_idx,
    const long[::1] methods,
    int donors,
    double ridge,
    const double[:, ::1] chi2,
    const double[:, :, ::1] z,
    const double[:, :, ::1] noise,
):
    """Run ``chi2.shape[0]`` sweeps over ``targets`` in place on ``values``."""
    cdef int n = values.shape[0]
    cdef int iterations = chi2.shape[0]
    cdef int nt = chi2.shape[1]
    cdef int it, j, r, q, t, status = OK, failed = -1
    cdef long* rows = NULL
    cdef int* n_obs = NULL
    cdef double* scratch = NULL
    cdef double* eta_obs = NULL
    cdef long* best = NULL
    cdef double* bestd = NULL

    if donors < 1:
        raise ValueError("donors must be positive")
    for j in range(nt):
        if pred_ptr[j + 1] - pred_ptr[j] + 1 > KMAX:
            raise ValueError(f"at most {KMAX - 1} predictors per target")

    rows = <long*> malloc(nt * n * sizeof(long))
    n_obs = <int*> malloc(nt * sizeof(int))
    scratch = <double*> malloc((4 * KMAX * KMAX + 5 * KMAX) * sizeof(double))
    eta_obs = <double*> malloc(n * sizeof(double))
    best = <long*> malloc(donors * sizeof(long))
    bestd = <double*> malloc(donors * sizeof(double))
    if not (rows and n_obs and scratch and eta_obs and best and bestd):
        free(rows); free(n_obs); free(scratch); free(eta_obs); free(best); free(bestd)
        raise MemoryError()
    try:
        with nogil:
            # per target: observed row indices first, then missing ones
            for j in range(nt):
                t = targets[j]
                q = 0
                for r in range(n):
                    if observed[r, t]:
                        rows[j * n + q] = r
                        q += 1
                n_obs[j] = q
                for r in range(n):
                    if not observed[r, t]:
                        rows[j * n + q] = r
                        q += 1
            for it in range(iterations):
                for j in range(nt):
                    status = draw_step(
                        values, targets[j], <long*> &pred_idx[pred_ptr[j]],
                        pred_ptr[j + 1] - pred_ptr[j],
                        rows + j * n, n_obs[j], rows + j * n + n_obs[j], n - n_obs[j],
                        methods[j], donors, ridge,
                        chi2[it, j], z[it, j], noise[it, j],
                        scratch, eta_obs, best, bestd,
                    )
                    if status != OK:
                        failed = j
                        break
                if status != OK:
                    break
    finally:
        free(rows); free(n_obs); free(scratch); free(eta_obs); free(best); free(bestd)
    if status == ERR_SINGULAR:
        raise SingularDesign(f"collinear imputation model for column index {targets[failed]}")
    if status == ERR_TOO_FEW:
        raise TooFewObserved(f"too few observed rows to impute column index {targets[failed]}")
