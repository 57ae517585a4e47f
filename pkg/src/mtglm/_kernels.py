"""Compiled inner loops: quintic Hermite table lookup and coordinate descent."""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def hermite_eval(x, x0, h, f, d1, d2, out_f, out_d1, out_d2):
    """Evaluate a C2 quintic Hermite interpolant on a uniform grid.

    Outside the grid the function is extended linearly with the boundary
    slope; on the lower side it is floored at zero (slope zero once floored).
    """
    m = f.shape[0]
    lo = x0
    hi = x0 + h * (m - 1)
    for k in range(x.shape[0]):
        xv = x[k]
        if xv <= lo:
            val = f[0] + d1[0] * (xv - lo)
            if val <= 0.0:
                out_f[k] = 0.0
                out_d1[k] = 0.0
            else:
                out_f[k] = val
                out_d1[k] = d1[0]
            out_d2[k] = 0.0 if xv < lo else d2[0]
            continue
        if xv >= hi:
            out_f[k] = f[m - 1] + d1[m - 1] * (xv - hi)
            out_d1[k] = d1[m - 1]
            out_d2[k] = 0.0 if xv > hi else d2[m - 1]
            continue
        r = (xv - lo) / h
        j = int(r + 0.5)
        if abs(r - j) < 1e-9:
            # grid nodes return the tabulated values exactly
            out_f[k] = f[j]
            out_d1[k] = d1[j]
            out_d2[k] = d2[j]
            continue
        i = int(r)
        if i > m - 2:
            i = m - 2
        t = (xv - (lo + i * h)) / h
        t2 = t * t
        t3 = t2 * t
        t4 = t3 * t
        t5 = t4 * t
        f0 = f[i]
        f1 = f[i + 1]
        a0 = h * d1[i]
        a1 = h * d1[i + 1]
        b0 = h * h * d2[i]
        b1 = h * h * d2[i + 1]

        H0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5
        H1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5
        H2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5)
        H3 = 0.5 * (t3 - 2.0 * t4 + t5)
        H4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5
        H5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5
        out_f[k] = f0 * H0 + a0 * H1 + b0 * H2 + b1 * H3 + a1 * H4 + f1 * H5

        G0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4
        G1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4
        G2 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4)
        G3 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4)
        G4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4
        G5 = 30.0 * t2 - 60.0 * t3 + 30.0 * t4
        out_d1[k] = (f0 * G0 + a0 * G1 + b0 * G2 + b1 * G3 + a1 * G4 + f1 * G5) / h

        K0 = -60.0 * t + 180.0 * t2 - 120.0 * t3
        K1 = -36.0 * t + 96.0 * t2 - 60.0 * t3
        K2 = 0.5 * (2.0 - 18.0 * t + 36.0 * t2 - 20.0 * t3)
        K3 = 0.5 * (6.0 * t - 24.0 * t2 + 20.0 * t3)
        K4 = -24.0 * t + 84.0 * t2 - 60.0 * t3
        K5 = 60.0 * t - 180.0 * t2 + 120.0 * t3
        out_d2[k] = (f0 * K0 + a0 * K1 + b0 * K2 + b1 * K3 + a1 * K4 + f1 * K5) / (h * h)


@njit(cache=True, nogil=True)
def _cd_sweep(V, r, beta, l1, l2, colsq, idx, m):
    n = V.shape[0]
    maxdelta = 0.0
    for t in range(m):
        j = idx[t]
        denom = colsq[j] + l2[j]
        old = beta[j]
        if colsq[j] == 0.0 or denom <= 0.0:
            new = 0.0
        else:
            g = 0.0
            for i in range(n):
                g += V[i, j] * r[i]
            g = g / n + colsq[j] * old
            if g > l1[j]:
                new = (g - l1[j]) / denom
            elif g < -l1[j]:
                new = (g + l1[j]) / denom
            else:
                new = 0.0
        if new != old:
            diff = new - old
            for i in range(n):
                r[i] -= V[i, j] * diff
            beta[j] = new
            ad = abs(diff) * np.sqrt(colsq[j]) if colsq[j] > 0.0 else abs(diff)
            if ad > maxdelta:
                maxdelta = ad
    return maxdelta


@njit(cache=True, nogil=True)
def cd_solve(V, ytil, beta, l1, l2, max_sweeps, tol):
    """Cyclic coordinate descent for

        (1/2n) ||ytil - V beta||^2 + sum_j l1[j] |beta_j| + l2[j]/2 beta_j^2

    ``beta`` is updated in place; returns the number of sweeps used and
    a convergence flag. Coordinates are visited in the fixed order 0..P-1;
    between full sweeps only the current nonzero coordinates are cycled.
    """
    n, P = V.shape
    r = ytil - V @ beta
    colsq = np.empty(P)
    for j in range(P):
        s = 0.0
        for i in range(n):
            s += V[i, j] * V[i, j]
        colsq[j] = s / n
    full = np.arange(P)
    act = np.empty(P, dtype=np.int64)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        if _cd_sweep(V, r, beta, l1, l2, colsq, full, P) < tol:
            return sweeps, True
        m = 0
        for j in range(P):
            if beta[j] != 0.0:
                act[m] = j
                m += 1
        while sweeps < max_sweeps:
            sweeps += 1
            if _cd_sweep(V, r, beta, l1, l2, colsq, act, m) < tol:
                break
    return sweeps, False
