"""Compiled inner loops for per-observation stochastic gradient descent.

These replicate, scalar for scalar, the analytic gradients in core.py /
tensor.py and the AdaGrad / constant-rate step in optim.py; the test
suite pins the two paths together.  Kept free of Python objects so numba
compiles them once (cached on disk) and an epoch over tens of thousands
of observations costs milliseconds.

Conventions shared by both kernels:
  * ``order`` is the visit order (a permutation of observation positions).
  * ``den_*`` are per-row prior divisors sigma^2 * n_row (or sigma^2 * 1
    for per-sample scaling); ``sc_*`` the matching divisors for the
    exponential-prior constants.
  * ``grad_scale`` is 1.0 for the deviation models and 2.0 for the
    squared-error baselines (whose loss is SSE + |U|^2/sigma_u2 + ...,
    exactly twice the frozen-deviation loss).
  * ``train_dev`` switches the deviation-factor updates on; negative
    results are projected to 0 immediately after each update.
  * ``use_adagrad`` selects AdaGrad (accumulate g^2, divide by
    sqrt(acc + eps)) versus a constant step.  A zero gradient leaves both
    the parameter and its accumulator untouched.
"""

import numba
import numpy as np

NJIT_OPTS = dict(cache=True, fastmath=False)


@numba.njit(**NJIT_OPTS)
def matrix_epoch(order, rows, cols, vals,
                 U, V, bu, bv, mu,
                 P, Q, ds2,
                 aU, aV, abu, abv, aP, aQ,
                 den_u, den_v, sc_p, sc_q,
                 lp, lq,
                 lr, lr_dev, eps,
                 grad_scale, train_dev, use_adagrad, use_biases):
    D = U.shape[1]
    Dp = P.shape[1]
    for n in range(order.shape[0]):
        o = order[n]
        i = rows[o]
        j = cols[o]
        r = vals[o]

        pred = mu + bu[i] + bv[j]
        for k in range(D):
            pred += U[i, k] * V[j, k]
        s = ds2
        for k in range(Dp):
            s += P[i, k] * Q[j, k]
        e = r - pred
        es = e / s

        du = den_u[i]
        dv = den_v[j]
        for k in range(D):
            gu = grad_scale * (-es * V[j, k] + U[i, k] / du)
            gv = grad_scale * (-es * U[i, k] + V[j, k] / dv)
            if use_adagrad:
                if gu != 0.0:
                    aU[i, k] += gu * gu
                    U[i, k] -= lr * gu / np.sqrt(aU[i, k] + eps)
                if gv != 0.0:
                    aV[j, k] += gv * gv
                    V[j, k] -= lr * gv / np.sqrt(aV[j, k] + eps)
            else:
                U[i, k] -= lr * gu
                V[j, k] -= lr * gv

        if use_biases:
            gb = grad_scale * (-es)
            if use_adagrad:
                if gb != 0.0:
                    abu[i] += gb * gb
                    bu[i] -= lr * gb / np.sqrt(abu[i] + eps)
                    abv[j] += gb * gb
                    bv[j] -= lr * gb / np.sqrt(abv[j] + eps)
            else:
                bu[i] -= lr * gb
                bv[j] -= lr * gb

        if train_dev:
            c = 0.5 / s - 0.5 * e * e / (s * s)
            for k in range(Dp):
                gp = c * Q[j, k] + lp / sc_p[i]
                gq = c * P[i, k] + lq / sc_q[j]
                if use_adagrad:
                    if gp != 0.0:
                        aP[i, k] += gp * gp
                        P[i, k] -= lr_dev * gp / np.sqrt(aP[i, k] + eps)
                    if gq != 0.0:
                        aQ[j, k] += gq * gq
                        Q[j, k] -= lr_dev * gq / np.sqrt(aQ[j, k] + eps)
                else:
                    P[i, k] -= lr_dev * gp
                    Q[j, k] -= lr_dev * gq
                if P[i, k] < 0.0:
                    P[i, k] = 0.0
                if Q[j, k] < 0.0:
                    Q[j, k] = 0.0


@numba.njit(**NJIT_OPTS)
def matrix_eval(rows, cols, vals, U, V, bu, bv, mu, P, Q, ds2):
    """One allocation-free pass: returns (sum of squared residuals,
    summed per-observation negative log likelihood)."""
    D = U.shape[1]
    Dp = P.shape[1]
    sse = 0.0
    nll = 0.0
    for o in range(rows.shape[0]):
        i = rows[o]
        j = cols[o]
        pred = mu + bu[i] + bv[j]
        for k in range(D):
            pred += U[i, k] * V[j, k]
        s = ds2
        for k in range(Dp):
            s += P[i, k] * Q[j, k]
        e = vals[o] - pred
        sse += e * e
        nll += 0.5 * e * e / s + 0.5 * np.log(s)
    return sse, nll


@numba.njit(**NJIT_OPTS)
def tensor_eval(rows, cols, tubes, vals, U, V, W, bu, bv, bw, mu,
                P, Q, S, ds2):
    D = U.shape[1]
    Dp = P.shape[1]
    sse = 0.0
    nll = 0.0
    for o in range(rows.shape[0]):
        i = rows[o]
        j = cols[o]
        t = tubes[o]
        pred = mu + bu[i] + bv[j] + bw[t]
        for k in range(D):
            pred += U[i, k] * V[j, k] * W[t, k]
        s = ds2
        for k in range(Dp):
            s += P[i, k] * Q[j, k] * S[t, k]
        e = vals[o] - pred
        sse += e * e
        nll += 0.5 * e * e / s + 0.5 * np.log(s)
    return sse, nll


@numba.njit(**NJIT_OPTS)
def tensor_epoch(order, rows, cols, tubes, vals,
                 U, V, W, bu, bv, bw, mu,
                 P, Q, S, ds2,
                 aU, aV, aW, abu, abv, abw, aP, aQ, aS,
                 den_u, den_v, den_w, sc_p, sc_q, sc_s,
                 lp, lq, ls,
                 lr, lr_dev, eps,
                 grad_scale, train_dev, use_adagrad, use_biases):
    D = U.shape[1]
    Dp = P.shape[1]
    for n in range(order.shape[0]):
        o = order[n]
        i = rows[o]
        j = cols[o]
        t = tubes[o]
        r = vals[o]

        pred = mu + bu[i] + bv[j] + bw[t]
        for k in range(D):
            pred += U[i, k] * V[j, k] * W[t, k]
        s = ds2
        for k in range(Dp):
            s += P[i, k] * Q[j, k] * S[t, k]
        e = r - pred
        es = e / s

        du = den_u[i]
        dv = den_v[j]
        dw = den_w[t]
        for k in range(D):
            gu = grad_scale * (-es * V[j, k] * W[t, k] + U[i, k] / du)
            gv = grad_scale * (-es * U[i, k] * W[t, k] + V[j, k] / dv)
            gw = grad_scale * (-es * U[i, k] * V[j, k] + W[t, k] / dw)
            if use_adagrad:
                if gu != 0.0:
                    aU[i, k] += gu * gu
                    U[i, k] -= lr * gu / np.sqrt(aU[i, k] + eps)
                if gv != 0.0:
                    aV[j, k] += gv * gv
                    V[j, k] -= lr * gv / np.sqrt(aV[j, k] + eps)
                if gw != 0.0:
                    aW[t, k] += gw * gw
                    W[t, k] -= lr * gw / np.sqrt(aW[t, k] + eps)
            else:
                U[i, k] -= lr * gu
                V[j, k] -= lr * gv
                W[t, k] -= lr * gw

        if use_biases:
            gb = grad_scale * (-es)
            if use_adagrad:
                if gb != 0.0:
                    abu[i] += gb * gb
                    bu[i] -= lr * gb / np.sqrt(abu[i] + eps)
                    abv[j] += gb * gb
                    bv[j] -= lr * gb / np.sqrt(abv[j] + eps)
                    abw[t] += gb * gb
                    bw[t] -= lr * gb / np.sqrt(abw[t] + eps)
            else:
                bu[i] -= lr * gb
                bv[j] -= lr * gb
                bw[t] -= lr * gb

        if train_dev:
            c = 0.5 / s - 0.5 * e * e / (s * s)
            for k in range(Dp):
                gp = c * Q[j, k] * S[t, k] + lp / sc_p[i]
                gq = c * P[i, k] * S[t, k] + lq / sc_q[j]
                gs = c * P[i, k] * Q[j, k] + ls / sc_s[t]
                if use_adagrad:
                    if gp != 0.0:
                        aP[i, k] += gp * gp
                        P[i, k] -= lr_dev * gp / np.sqrt(aP[i, k] + eps)
                    if gq != 0.0:
                        aQ[j, k] += gq * gq
                        Q[j, k] -= lr_dev * gq / np.sqrt(aQ[j, k] + eps)
                    if gs != 0.0:
                        aS[t, k] += gs * gs
                        S[t, k] -= lr_dev * gs / np.sqrt(aS[t, k] + eps)
                else:
                    P[i, k] -= lr_dev * gp
                    Q[j, k] -= lr_dev * gq
                    S[t, k] -= lr_dev * gs
                if P[i, k] < 0.0:
                    P[i, k] = 0.0
                if Q[j, k] < 0.0:
                    Q[j, k] = 0.0
                if S[t, k] < 0.0:
                    S[t, k] = 0.0
