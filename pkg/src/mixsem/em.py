"""EM estimation of the mixture SEM.

E-step responsibilities, per-equation weighted M-steps on the
class-expanded data, identifiability centering, convergence control and
multi-start.  Each M-step fully maximizes its weighted objective
(Newton-Raphson with step-halving for the two logit equations, closed-form
weighted least squares for the outcome equation), so every EM iteration is
an exact coordinate ascent on the expected complete-data log-likelihood
and the observed log-likelihood trace is non-decreasing.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr

from .model import (
    LOGISTIC_SD,
    BinaryEqParams,
    Dataset,
    DegenerateSigmaError,
    GaussianEqParams,
    LatentStructure,
    ModelSpec,
    OrdinalEqParams,
    ParameterSet,
    cause_dummy_matrix,
    class_loglik_matrix,
    cholesky_of_sigma,
    mixture_log_lik,
    ordinal_obs_loglik,
    ordinal_pieces,
    z1_dummy_matrix,
)
from scipy.special import expit, log_expit

#: magnitude cap flagging separation / non-identified logit coefficients
COEF_CAP = 30.0

#: ridge added to a singular Newton information matrix before giving up
RIDGE = 1e-8

_MAX_HALVINGS = 40


class MStepError(RuntimeError):
    """An M-step could not make progress (singular system, collinearity)."""


class EstimationError(RuntimeError):
    """Every start of a multi-start run failed or degenerated."""

    def __init__(self, message: str, diagnostics: tuple = ()):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class EmConfig:
    """Tolerances and iteration caps for the EM machinery."""

    tol: float = 1e-8
    max_iter: int = 1000
    inner_max_iter: int = 50
    inner_tol: float = 1e-10
    weight_floor: float = 1e-6
    n_random_starts: int = 19
    master_seed: int = 0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.inner_max_iter < 1:
            raise ValueError("iteration caps must be >= 1")
        if not 0 < self.weight_floor < 1:
            raise ValueError("weight_floor must lie in (0, 1)")
        if self.n_random_starts < 0:
            raise ValueError("n_random_starts must be >= 0")


@dataclass(frozen=True)
class PosteriorMatrix:
    """n x K responsibilities; rows sum to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.w, dtype=float))
        if w.ndim != 2:
            raise ValueError("posterior must be a 2-d matrix")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("responsibilities must lie in [0, 1]")
        if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("posterior rows must sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def K(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class FitResult:
    """Converged parameters plus the estimation trail."""

    theta: ParameterSet
    loglik: float
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    start_id: int
    degenerate: bool
    flags: tuple[str, ...]
    spec: ModelSpec
    config: EmConfig
    n_obs: int
    start_logliks: tuple = ()

    def __post_init__(self):
        trace = np.asarray(self.loglik_trace, dtype=float)
        trace.setflags(write=False)
        object.__setattr__(self, "loglik_trace", trace)

    def max_trace_violation(self) -> float:
        """Largest decrease between consecutive trace entries (>= 0)."""
        if self.loglik_trace.size < 2:
            return 0.0
        return float(max(0.0, -np.diff(self.loglik_trace).min()))


# ---------------------------------------------------------------------------
# Expanded designs (static across EM iterations)
# ---------------------------------------------------------------------------


class _Designs:
    """Class-expanded design matrices, built once per (dataset, spec).

    Rows are class-major: block k holds every record paired with class k,
    matching ``posterior.w.T.ravel()`` as the weight vector.  Class
    intercepts are reference-coded against class 1 in the two logit
    equations and fully indexed in the outcome equation.
    """

    def __init__(self, dataset: Dataset, spec: ModelSpec):
        n, K = dataset.n, spec.K
        ones = np.ones((n, 1))
        cls_full = np.kron(np.eye(K), ones)  # (nK, K)
        cls_dev = cls_full[:, 1:]

        x1 = dataset.x[:, spec.x_ordinal]
        x2 = dataset.x[:, spec.x_binary]
        x3 = dataset.x[:, spec.x_gaussian]
        d1 = z1_dummy_matrix(dataset.z1, spec.J)
        dz = cause_dummy_matrix(dataset.z1, dataset.z2, spec)

        def til(m):
            return np.tile(m, (K, 1))

        self.n, self.K = n, K
        self.p1, self.p2, self.p3 = x1.shape[1], x2.shape[1], x3.shape[1]
        self.g = spec.gamma_dim
        self.q = dz.shape[1]

        self.X1 = np.hstack([np.ones((n * K, 1)), til(x1), cls_dev])
        self.z1 = np.tile(dataset.z1, K)
        bin_blocks = [np.ones((n * K, 1)), til(x2)]
        if self.g:
            bin_blocks.append(til(d1))
        bin_blocks.append(cls_dev)
        self.X2 = np.hstack(bin_blocks)
        self.z2 = np.tile(dataset.z2, K)
        self.X3 = np.hstack([cls_full, til(x3), til(dz)])
        self.y = til(dataset.y)
        self.tau_masks = _ordinal_cat_masks(self.z1, spec.J)

        names1 = ["ordinal:" + dataset.x_names[j] for j in spec.x_ordinal]
        names2 = ["binary:" + dataset.x_names[j] for j in spec.x_binary]
        names3 = ["outcome:" + dataset.x_names[j] for j in spec.x_gaussian]
        dz_names = []
        if spec.z1_in_gaussian:
            dz_names += [f"outcome:z1cat{j}" for j in range(2, spec.J + 1)]
        if spec.z2_in_gaussian:
            dz_names.append("outcome:z2")
        self.names3 = (
            [f"class{k + 1}" for k in range(K)] + names3 + dz_names
        )
        self.names1 = ["intercept"] + names1 + [f"class{k}" for k in range(2, K + 1)]
        g_names = [f"binary:z1cat{j}" for j in range(2, spec.J + 1)] if self.g else []
        self.names2 = (
            ["intercept"] + names2 + g_names + [f"class{k}" for k in range(2, K + 1)]
        )


def _expanded_weights(posterior: PosteriorMatrix) -> np.ndarray:
    return np.ascontiguousarray(posterior.w.T).ravel()


# ---------------------------------------------------------------------------
# E-step and weight update
# ---------------------------------------------------------------------------


def _posterior_and_loglik(dataset, theta, spec):
    """One pass over the class log-likelihood matrix: (posterior, loglik)."""
    L = class_loglik_matrix(dataset, theta, spec)
    if np.isnan(L).any():
        raise ValueError("NaN class log-likelihood: invalid parameters")
    logw = L + np.log(theta.latent.pi)[None, :]
    shift = logw.max(axis=1, keepdims=True)
    w = np.exp(logw - shift)
    rowsum = w.sum(axis=1, keepdims=True)
    w /= rowsum
    ll = float((shift[:, 0] + np.log(rowsum[:, 0])).sum())
    return PosteriorMatrix(w), ll


def e_step(dataset: Dataset, theta: ParameterSet, spec: ModelSpec) -> PosteriorMatrix:
    """Responsibilities w_ik, computed with max-shifted exponentials."""
    return _posterior_and_loglik(dataset, theta, spec)[0]


def update_weights(posterior: PosteriorMatrix) -> np.ndarray:
    """Closed-form class-weight update: column means of the posterior."""
    return posterior.w.mean(axis=0)


# ---------------------------------------------------------------------------
# Newton fitters for the two logit equations
# ---------------------------------------------------------------------------


def _solve_ascent(info: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        step = np.linalg.solve(info, g)
        if np.all(np.isfinite(step)):
            return step
    except np.linalg.LinAlgError:
        pass
    ridged = info + RIDGE * np.eye(info.shape[0])
    try:
        step = np.linalg.solve(ridged, g)
    except np.linalg.LinAlgError as exc:
        raise MStepError("singular Hessian after ridge fallback") from exc
    if not np.all(np.isfinite(step)):
        raise MStepError("non-finite Newton step after ridge fallback")
    return step


def _ordinal_obj(z, X, w, c, tau_free, J) -> float:
    tau = np.concatenate(([0.0], tau_free))
    return float(w @ ordinal_obs_loglik(z, X @ c, tau))


def _ordinal_cat_masks(z, J):
    """Float masks (rows using tau_m on the upper / lower side), m = 2..J-1."""
    return [
        ((z == m + 1).astype(float), (z == m).astype(float)) for m in range(2, J)
    ]


def _ordinal_grad_hess(z, X, w, c, tau_free, J, masks=None):
    tau = np.concatenate(([0.0], tau_free))
    lin = X @ c
    sa, sb, qa, qb = ordinal_pieces(z, lin, tau)
    dlin = sa - sb
    pc = X.shape[1]
    nt = J - 2
    g = np.empty(pc + nt)
    g[:pc] = X.T @ (w * dlin)
    H = np.zeros((pc + nt, pc + nt))
    hl = w * (qa - qb - dlin * dlin)
    H[:pc, :pc] = X.T @ (hl[:, None] * X)
    if nt:
        if masks is None:
            masks = _ordinal_cat_masks(z, J)
        wsa = w * sa
        wsb = w * sb
        ca = w * (qa - dlin * sa)
        cb = w * (-qb + dlin * sb)
        da = w * (qa - sa * sa)
        db = w * (-qb - sb * sb)
        cross_w = wsa * sb
        for j in range(nt):
            ma, mb = masks[j]
            g[pc + j] = wsa @ ma - wsb @ mb
            col = X.T @ (ca * ma + cb * mb)
            H[:pc, pc + j] = col
            H[pc + j, :pc] = col
            H[pc + j, pc + j] = da @ ma + db @ mb
            if j + 1 < nt:
                cross = cross_w @ ma
                H[pc + j, pc + j + 1] += cross
                H[pc + j + 1, pc + j] += cross
    return g, H


def _newton_ordinal(z, X, w, c0, tau_free0, J, config: EmConfig, masks=None):
    """Maximize the weighted proportional-odds log-likelihood.

    Step-halving rejects any update that lowers the objective or breaks
    the non-increasing cutpoint ordering.  Coefficients beyond the
    magnitude cap flag a non-identified / separated fit.
    """
    c = np.asarray(c0, dtype=float).copy()
    tf = np.asarray(tau_free0, dtype=float).copy()
    obj = _ordinal_obj(z, X, w, c, tf, J)
    if not np.isfinite(obj):
        raise MStepError("non-finite ordinal objective at M-step start")
    if masks is None:
        masks = _ordinal_cat_masks(z, J)
    flags: set[str] = set()
    for _ in range(config.inner_max_iter):
        g, H = _ordinal_grad_hess(z, X, w, c, tf, J, masks)
        if np.abs(g).max() <= 1e-9 * (1.0 + abs(obj)):
            break
        step = _solve_ascent(-H, g)
        c_new, tf_new, obj_new = c, tf, obj
        accepted = False
        sc, st = step[: c.size], step[c.size :]
        for _half in range(_MAX_HALVINGS):
            cand_c = c + sc
            cand_t = tf + st
            tau_cand = np.concatenate(([0.0], cand_t))
            if np.all(np.diff(tau_cand) <= 0.0):
                cand_obj = _ordinal_obj(z, X, w, cand_c, cand_t, J)
                if np.isfinite(cand_obj) and cand_obj >= obj:
                    c_new, tf_new, obj_new = cand_c, cand_t, cand_obj
                    accepted = True
                    break
            sc = sc / 2.0
            st = st / 2.0
        if not accepted:
            break
        delta = obj_new - obj
        c, tf, obj = c_new, tf_new, obj_new
        if max(np.abs(c).max(), np.abs(tf).max() if tf.size else 0.0) > COEF_CAP:
            flags.add("ordinal_nonidentified")
            break
        if delta <= config.inner_tol * (1.0 + abs(obj)):
            break
    return c, tf, obj, tuple(sorted(flags))


def _logistic_obj(z, X, w, c) -> float:
    sign = 2.0 * z - 1.0
    return float(w @ log_expit(sign * (X @ c)))


def _newton_logistic(z, X, w, c0, config: EmConfig):
    """Maximize the weighted logistic log-likelihood by Newton-Raphson."""
    c = np.asarray(c0, dtype=float).copy()
    zf = np.asarray(z, dtype=float)
    obj = _logistic_obj(zf, X, w, c)
    if not np.isfinite(obj):
        raise MStepError("non-finite logistic objective at M-step start")
    flags: set[str] = set()
    for _ in range(config.inner_max_iter):
        p = expit(X @ c)
        g = X.T @ (w * (zf - p))
        if np.abs(g).max() <= 1e-9 * (1.0 + abs(obj)):
            break
        info = X.T @ ((w * p * (1.0 - p))[:, None] * X)
        step = _solve_ascent(info, g)
        accepted = False
        obj_new = obj
        for _half in range(_MAX_HALVINGS):
            cand = c + step
            cand_obj = _logistic_obj(zf, X, w, cand)
            if np.isfinite(cand_obj) and cand_obj >= obj:
                c, obj_new = cand, cand_obj
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            break
        delta = obj_new - obj
        obj = obj_new
        if np.abs(c).max() > COEF_CAP:
            flags.add("logistic_separation")
            break
        if delta <= config.inner_tol * (1.0 + abs(obj)):
            break
    return c, obj, tuple(sorted(flags))


# ---------------------------------------------------------------------------
# M-steps
# ---------------------------------------------------------------------------


def m_step_ordinal(
    dataset: Dataset,
    posterior: PosteriorMatrix,
    current: OrdinalEqParams,
    xi1: np.ndarray,
    spec: ModelSpec,
    config: EmConfig,
    designs: _Designs | None = None,
):
    """Update (mu1, cutpoints, beta1, xi1) on the class-expanded data.

    Class intercepts are fitted as deviations from class 1 (whose support
    point is pinned at 0 here); centering afterwards restores the
    canonical zero-mean form.  Returns (params, xi1, flags).
    """
    D = designs or _Designs(dataset, spec)
    w = _expanded_weights(posterior)
    xi1 = np.asarray(xi1, dtype=float)
    counts = np.array([w[D.z1 == j].sum() for j in range(1, spec.J + 1)])
    empty = counts <= 1e-12 * w.sum()
    c0 = np.concatenate(
        ([current.mu1 + xi1[0]], current.beta1, xi1[1:] - xi1[0])
    )
    c, tf, _obj, flags = _newton_ordinal(
        D.z1, D.X1, w, c0, current.tau[1:], spec.J, config, D.tau_masks
    )
    if empty.any():
        # a zero-count category pushes its boundary parameters to infinity
        flags = tuple(sorted(set(flags) | {"ordinal_nonidentified"}))
    p1 = D.p1
    new = OrdinalEqParams(
        mu1=c[0], tau=np.concatenate(([0.0], tf)), beta1=c[1 : 1 + p1]
    )
    new_xi1 = np.concatenate(([0.0], c[1 + p1 :]))
    return new, new_xi1, flags


def m_step_binary(
    dataset: Dataset,
    posterior: PosteriorMatrix,
    current: BinaryEqParams,
    xi2: np.ndarray,
    spec: ModelSpec,
    config: EmConfig,
    designs: _Designs | None = None,
):
    """Update (mu2, beta2, gamma, xi2); returns (params, xi2, flags)."""
    D = designs or _Designs(dataset, spec)
    w = _expanded_weights(posterior)
    xi2 = np.asarray(xi2, dtype=float)
    c0 = np.concatenate(
        ([current.mu2 + xi2[0]], current.beta2, current.gamma, xi2[1:] - xi2[0])
    )
    c, _obj, flags = _newton_logistic(D.z2, D.X2, w, c0, config)
    zbar = float(w @ D.z2) / max(w.sum(), 1e-300)
    if zbar <= 1e-12 or zbar >= 1 - 1e-12:
        flags = tuple(sorted(set(flags) | {"logistic_separation"}))
    p2, g = D.p2, D.g
    new = BinaryEqParams(
        mu2=c[0], beta2=c[1 : 1 + p2], gamma=c[1 + p2 : 1 + p2 + g]
    )
    new_xi2 = np.concatenate(([0.0], c[1 + p2 + g :]))
    return new, new_xi2, flags


def m_step_gaussian(
    dataset: Dataset,
    posterior: PosteriorMatrix,
    current: GaussianEqParams,
    zeta: np.ndarray,
    spec: ModelSpec,
    config: EmConfig,
    designs: _Designs | None = None,
):
    """Closed-form weighted least squares for the outcome equation.

    Both outcome dimensions share the design, so the coefficient update
    is a single multivariate solve; Sigma is the weighted residual
    cross-product divided by the total weight.  Returns
    (params, zeta, flags) with a ``sigma_degenerate`` flag when the
    updated covariance is (numerically) singular.
    """
    D = designs or _Designs(dataset, spec)
    w = _expanded_weights(posterior)
    X, Y = D.X3, D.y
    if w.sum() <= X.shape[1]:
        raise MStepError("total weight must exceed the regressor count")
    Xw = X * w[:, None]
    A = X.T @ Xw
    rhs = Xw.T @ Y
    try:
        B = cho_solve(cho_factor(A), rhs)
    except np.linalg.LinAlgError as exc:
        raise MStepError(_collinearity_message(X, w, D.names3)) from exc
    resid = Y - X @ B
    Sigma = (resid.T @ (resid * w[:, None])) / w.sum()
    Sigma = 0.5 * (Sigma + Sigma.T)
    flags: tuple[str, ...] = ()
    eigmin = float(np.linalg.eigvalsh(Sigma)[0])
    if eigmin <= 1e-10 * max(1.0, float(np.trace(Sigma))):
        flags = ("sigma_degenerate",)
    K = D.K
    nu = B[0].copy()
    new_zeta = B[:K] - B[0]
    Phi = B[K : K + D.p3].T
    Psi = B[K + D.p3 :].T
    new = GaussianEqParams(nu=nu, Phi=Phi, Psi=Psi, Sigma=Sigma)
    return new, new_zeta, flags


def _collinearity_message(X, w, names) -> str:
    Xs = X * np.sqrt(w)[:, None]
    _q, R, piv = qr(Xs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    thresh = diag.max() * 1e-10 if diag.size else 0.0
    bad = [names[piv[i]] for i in range(len(diag)) if diag[i] <= thresh]
    return f"collinear outcome design; offending columns: {bad or 'unknown'}"


# ---------------------------------------------------------------------------
# Centering, initialization
# ---------------------------------------------------------------------------


def center_support_points(theta: ParameterSet) -> ParameterSet:
    """Move the weighted support means into the intercepts.

    Class-conditional linear predictors (and hence the likelihood) are
    unchanged; afterwards every latent dimension has weighted mean zero.
    """
    lat = theta.latent
    m1 = float(lat.pi @ lat.xi1)
    m2 = float(lat.pi @ lat.xi2)
    mz = lat.pi @ lat.zeta
    ordinal = dataclasses.replace(theta.ordinal, mu1=theta.ordinal.mu1 + m1)
    binary = dataclasses.replace(theta.binary, mu2=theta.binary.mu2 + m2)
    gaussian = dataclasses.replace(theta.gaussian, nu=theta.gaussian.nu + mz)
    latent = LatentStructure(
        xi1=lat.xi1 - m1, xi2=lat.xi2 - m2, zeta=lat.zeta - mz[None, :], pi=lat.pi
    )
    return ParameterSet(ordinal=ordinal, binary=binary, gaussian=gaussian, latent=latent)


def _base_equation_fit(dataset: Dataset, spec: ModelSpec, config: EmConfig):
    """Single-class MLEs of the three equations plus residual scales."""
    spec1 = dataclasses.replace(spec, K=1)
    D = _Designs(dataset, spec1)
    w = np.ones(dataset.n)

    # data-driven starting values keep Newton in its quadratic regime
    counts = np.array([(dataset.z1 >= j).mean() for j in range(2, spec.J + 1)])
    counts = np.clip(counts, 1.0 / (dataset.n + 1), 1.0 - 1.0 / (dataset.n + 1))
    cum_logits = np.log(counts / (1.0 - counts))
    mu1_0 = cum_logits[0]
    tau0 = cum_logits[1:] - mu1_0
    tau0 = np.minimum.accumulate(np.concatenate(([0.0], tau0)))[1:]
    c0 = np.concatenate(([mu1_0], np.zeros(D.p1)))
    c1, tf1, _obj, fl1 = _newton_ordinal(
        D.z1, D.X1, w, c0, tau0, spec.J, config, D.tau_masks
    )
    ordinal = OrdinalEqParams(
        mu1=c1[0], tau=np.concatenate(([0.0], tf1)), beta1=c1[1:]
    )

    pbar = float(np.clip(dataset.z2.mean(), 1.0 / (dataset.n + 1), 1 - 1.0 / (dataset.n + 1)))
    c0 = np.concatenate(([np.log(pbar / (1 - pbar))], np.zeros(D.p2 + D.g)))
    c2, _obj, fl2 = _newton_logistic(D.z2, D.X2, w, c0, config)
    binary = BinaryEqParams(mu2=c2[0], beta2=c2[1 : 1 + D.p2], gamma=c2[1 + D.p2 :])

    post1 = PosteriorMatrix(np.ones((dataset.n, 1)))
    gauss0 = GaussianEqParams(
        nu=dataset.y.mean(axis=0),
        Phi=np.zeros((spec.d, D.p3)),
        Psi=np.zeros((spec.d, D.q)),
        Sigma=np.cov(dataset.y.T, bias=True).reshape(spec.d, spec.d),
    )
    gaussian, _zeta, fl3 = m_step_gaussian(
        dataset, post1, gauss0, np.zeros((1, spec.d)), spec1, config, D
    )
    scales = np.concatenate(
        ([LOGISTIC_SD, LOGISTIC_SD], np.sqrt(np.diag(gaussian.Sigma)))
    )
    return ordinal, binary, gaussian, scales, fl1 + fl2 + fl3


def initialize(
    dataset: Dataset,
    spec: ModelSpec,
    config: EmConfig | None = None,
    seed=None,
    base=None,
) -> ParameterSet:
    """Deterministic or random starting values.

    The deterministic start keeps the single-class equation MLEs and
    spreads support points on an equally spaced grid with 1-residual-SD
    spacing, centered, with uniform weights.  A random start (``seed``
    not None) adds centered uniform noise of one residual SD in each
    direction and draws the weights from a flat Dirichlet; coefficients
    stay at their single-class values.
    """
    config = config or EmConfig()
    if base is None:
        base = _base_equation_fit(dataset, spec, config)
    ordinal, binary, gaussian, scales, _flags = base
    K = spec.K
    offsets = np.arange(K, dtype=float) - (K - 1) / 2.0
    xi1 = offsets * scales[0]
    xi2 = offsets * scales[1]
    zeta = np.outer(offsets, scales[2:])
    pi = np.full(K, 1.0 / K)
    if seed is not None:
        rng = np.random.default_rng(seed)
        xi1 = xi1 + rng.uniform(-scales[0], scales[0], K)
        xi2 = xi2 + rng.uniform(-scales[1], scales[1], K)
        zeta = zeta + rng.uniform(-1.0, 1.0, (K, spec.d)) * scales[2:][None, :]
        pi = rng.dirichlet(np.ones(K))
    theta = ParameterSet(
        ordinal=ordinal,
        binary=binary,
        gaussian=gaussian,
        latent=LatentStructure(xi1=xi1, xi2=xi2, zeta=zeta, pi=pi),
    )
    return center_support_points(theta)


# ---------------------------------------------------------------------------
# EM driver and multi-start
# ---------------------------------------------------------------------------


def run_em(
    dataset: Dataset,
    spec: ModelSpec,
    init: ParameterSet,
    config: EmConfig | None = None,
    start_id: int = 0,
    progress=None,
    designs: _Designs | None = None,
    stop_check=None,
) -> FitResult:
    """Alternate E- and M-steps until the log-likelihood stabilizes.

    Stops when the relative log-likelihood change drops below
    ``config.tol``, the iteration cap is reached, or a class weight falls
    below ``config.weight_floor`` (degenerate start).  M-step failures
    raise :class:`MStepError` with a diagnostic.  ``stop_check(it, ll)``
    may abort a run early (used by multi-start pruning).
    """
    config = config or EmConfig()
    init.validate_against(spec)
    if config.weight_floor >= 1.0 / spec.K:
        raise ValueError("weight_floor must be below 1/K")
    designs = designs or _Designs(dataset, spec)
    theta = init
    posterior, ll = _posterior_and_loglik(dataset, theta, spec)
    trace = [ll]
    converged = False
    degenerate = False
    flags: tuple[str, ...] = ()
    for _it in range(config.max_iter):
        if stop_check is not None and stop_check(_it, ll):
            flags = flags + ("pruned",)
            break
        pi = update_weights(posterior)
        if pi.min() < config.weight_floor:
            degenerate = True
            flags = flags + ("weight_floor",)
            break
        lat = theta.latent
        ordinal, xi1, f1 = m_step_ordinal(
            dataset, posterior, theta.ordinal, lat.xi1, spec, config, designs
        )
        binary, xi2, f2 = m_step_binary(
            dataset, posterior, theta.binary, lat.xi2, spec, config, designs
        )
        gaussian, zeta, f3 = m_step_gaussian(
            dataset, posterior, theta.gaussian, lat.zeta, spec, config, designs
        )
        if "sigma_degenerate" in f3:
            raise MStepError("outcome covariance became singular during EM")
        flags = tuple(sorted(set(f1) | set(f2) | set(f3)))
        theta = center_support_points(
            ParameterSet(
                ordinal=ordinal,
                binary=binary,
                gaussian=gaussian,
                latent=LatentStructure(xi1=xi1, xi2=xi2, zeta=zeta, pi=pi),
            )
        )
        posterior, ll_new = _posterior_and_loglik(dataset, theta, spec)
        trace.append(ll_new)
        if progress is not None:
            progress(start_id, len(trace) - 1, ll_new, abs(ll_new - ll))
        if abs(ll_new - ll) / (abs(ll) + 1.0) < config.tol:
            converged = True
            ll = ll_new
            break
        ll = ll_new
    return FitResult(
        theta=theta,
        loglik=trace[-1],
        loglik_trace=np.array(trace),
        iterations=len(trace) - 1,
        converged=converged,
        start_id=start_id,
        degenerate=degenerate,
        flags=flags,
        spec=spec,
        config=config,
        n_obs=dataset.n,
    )


def sort_classes(theta: ParameterSet) -> ParameterSet:
    """Canonical class order: first outcome support point ascending."""
    order = np.argsort(theta.latent.zeta[:, 0], kind="stable")
    if np.array_equal(order, np.arange(theta.K)):
        return theta
    lat = theta.latent
    return theta.replace_latent(
        xi1=lat.xi1[order], xi2=lat.xi2[order], zeta=lat.zeta[order], pi=lat.pi[order]
    )


def start_seed(master_seed: int, start_id: int) -> np.random.SeedSequence:
    """Per-start seed, derived deterministically from the master seed."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(start_id,))


def fit_multistart(
    dataset: Dataset,
    spec: ModelSpec,
    config: EmConfig | None = None,
    threads: int = 1,
    progress=None,
    prune_after: int | None = None,
    prune_margin: float = 50.0,
) -> FitResult:
    """Deterministic start plus ``n_random_starts`` random starts.

    Returns the non-degenerate fit with the highest log-likelihood, with
    classes re-labelled in canonical order and all per-start final
    log-likelihoods recorded.  Raises :class:`EstimationError` when every
    start fails or degenerates.

    ``prune_after`` (sequential mode only) aborts a start once it has run
    that many iterations while trailing the best completed start by more
    than ``prune_margin`` log-likelihood units; pruned starts are recorded
    but realistically never win.
    """
    config = config or EmConfig()
    base = _base_equation_fit(dataset, spec, config)
    designs = _Designs(dataset, spec)
    starts = [(0, None)] + [
        (sid, start_seed(config.master_seed, sid))
        for sid in range(1, config.n_random_starts + 1)
    ]
    best_so_far = [-np.inf]

    def _stop_check(iteration, ll):
        return (
            iteration >= prune_after and ll < best_so_far[0] - prune_margin
        )

    def _one(item):
        sid, seed = item
        try:
            init = initialize(dataset, spec, config, seed=seed, base=base)
            return run_em(
                dataset, spec, init, config,
                start_id=sid, progress=progress, designs=designs,
                stop_check=_stop_check if prune else None,
            )
        except (MStepError, DegenerateSigmaError, ValueError) as exc:
            return (sid, f"{type(exc).__name__}: {exc}")

    prune = prune_after is not None and threads <= 1
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_one, starts))
    else:
        results = []
        for item in starts:
            res = _one(item)
            results.append(res)
            if prune and isinstance(res, FitResult) and not res.degenerate:
                if "pruned" not in res.flags:
                    best_so_far[0] = max(best_so_far[0], res.loglik)

    summary = []
    candidates = []
    for res in results:
        if isinstance(res, FitResult):
            if res.degenerate:
                status = "degenerate"
            elif "pruned" in res.flags:
                status = "pruned"
            else:
                status = "converged" if res.converged else "max_iter"
            summary.append((res.start_id, res.loglik, status))
            if not res.degenerate:
                candidates.append(res)
        else:
            summary.append((res[0], None, res[1]))
    if not candidates:
        raise EstimationError(
            "all starts failed or degenerated", diagnostics=tuple(summary)
        )
    best = sorted(candidates, key=lambda r: (-r.loglik, r.start_id))[0]
    best = dataclasses.replace(
        best, theta=sort_classes(best.theta), start_logliks=tuple(summary)
    )
    return best
