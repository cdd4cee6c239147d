"""Independent reference implementations used as test oracles.

Everything here recomputes model quantities from first principles with
its own code paths (plain probability differences, scipy minimizers,
QR least squares, complex-step derivatives) so the package's Newton
fitters, analytic scores and information matrices are checked against a
genuinely different route to the same numbers.
"""

import numpy as np
from scipy.optimize import minimize


def _expit_c(x):
    # complex-safe logistic
    return 1.0 / (1.0 + np.exp(-x))


def propodds_negll(params, z, X, J, w=None):
    """Negative weighted proportional-odds log-likelihood.

    params = [intercept, tau_2..tau_{J-1}, coefs...]; tau_1 = 0.
    Probabilities are plain differences of cumulative logistic values.
    """
    z = np.asarray(z)
    mu = params[0]
    tf = params[1 : J - 1]
    beta = params[J - 1 :]
    tau = np.concatenate([np.zeros(1, dtype=params.dtype), tf])
    lin = mu + X @ beta
    n = len(z)
    cum = np.empty((n, J + 1), dtype=params.dtype)
    cum[:, 0] = 1.0
    cum[:, 1:J] = _expit_c(lin[:, None] + tau[None, :])
    cum[:, J] = 0.0
    p = cum[np.arange(n), z - 1] - cum[np.arange(n), z]
    if np.any(p.real <= 0):
        return 1e10
    if w is None:
        w = np.ones(n)
    return -(w * np.log(p)).sum()


def logistic_negll(params, z, X, w=None):
    """Negative weighted Bernoulli-logit log-likelihood via logaddexp."""
    lin = X @ params
    z = np.asarray(z, dtype=float)
    if np.iscomplexobj(params):
        ll = z * lin - np.log(1.0 + np.exp(lin))
    else:
        ll = z * lin - np.logaddexp(0.0, lin)
    if w is None:
        w = np.ones(len(z))
    return -(w * ll).sum()


def cs_grad(f, x, *args):
    """Machine-precision gradient by complex-step differentiation."""
    h = 1e-20
    g = np.empty(x.size)
    for j in range(x.size):
        xc = x.astype(complex)
        xc[j] += 1j * h
        val = f(xc, *args)
        g[j] = val.imag / h if np.iscomplexobj(val) else 0.0
    return g


def maximize(f, x0, *args):
    """Tight BFGS maximization of -f with complex-step gradients."""
    res = minimize(
        f,
        x0,
        args=args,
        jac=lambda x, *a: cs_grad(f, x, *a),
        method="BFGS",
        options={"gtol": 1e-11, "maxiter": 5000},
    )
    return res.x


def fit_propodds(z, X, J, w=None, x0=None):
    if x0 is None:
        x0 = np.zeros(1 + (J - 2) + X.shape[1])
        x0[1 : J - 1] = -np.arange(1, J - 1, dtype=float)
    return maximize(propodds_negll, x0, z, X, J, w)


def fit_logistic(z, X, w=None, x0=None):
    if x0 is None:
        x0 = np.zeros(X.shape[1])
    return maximize(logistic_negll, x0, z, X, w)


def fit_wls(X, Y, w=None):
    """Least squares by QR (lstsq) plus the MLE residual covariance."""
    if w is None:
        w = np.ones(X.shape[0])
    sw = np.sqrt(w)
    B, *_ = np.linalg.lstsq(X * sw[:, None], Y * sw[:, None], rcond=None)
    resid = Y - X @ B
    Sigma = (resid.T @ (resid * w[:, None])) / w.sum()
    return B, Sigma


def numerical_hessian(f, x, step=1e-4):
    """Dense second-difference Hessian of a scalar function."""
    k = x.size
    H = np.empty((k, k))
    f0 = f(x)
    hs = step * (1.0 + np.abs(x))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = hs[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / hs[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = hs[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * hs[i] * hs[j])
    return H
