"""Model selection, standard errors and posterior classification.

Standard errors come from the observed information matrix: the score of
the observed-data log-likelihood equals the gradient of the expected
complete-data log-likelihood with responsibilities frozen at the same
parameter value, so the analytic weighted-equation gradients give the
exact score and the information is its (numerically differentiated)
negative Jacobian.  Differentiation happens in a reduced coordinate
basis that respects the fixed first cutpoint, the zero-weighted-mean
support constraint and the weight simplex, which keeps the information
matrix full rank.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit
from scipy.stats import norm

from . import model as _m
from .em import EmConfig, EstimationError, FitResult, PosteriorMatrix, e_step, fit_multistart
from .model import (
    Dataset,
    LatentStructure,
    ModelSpec,
    ParameterSet,
    cause_dummy_matrix,
    correlation_from_sigma,
    count_parameters,
    ordinal_pieces,
    z1_dummy_matrix,
)


def bic(loglik: float, npar: int, n: int) -> float:
    """Bayesian information criterion: -2*loglik + log(n)*npar."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if npar < 0:
        raise ValueError("npar must be >= 0")
    return float(-2.0 * loglik + np.log(n) * npar)


# ---------------------------------------------------------------------------
# Free-parameter coordinates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParameterLayout:
    """Coordinate bookkeeping for the free-parameter vector."""

    names: tuple[str, ...]
    mu1: int
    tau: slice
    beta1: slice
    mu2: int
    beta2: slice
    gamma: slice
    nu: slice
    Phi: slice
    Psi: slice
    sigma: slice
    supports: tuple[slice, ...]
    lam: slice

    @property
    def size(self) -> int:
        return len(self.names)


def _support_dim_names(d: int) -> tuple[str, ...]:
    return ("xi1", "xi2") + tuple(f"zeta{a + 1}" for a in range(d))


def parameter_layout(spec: ModelSpec, x_names: tuple[str, ...] | None = None) -> ParameterLayout:
    if x_names is None:
        x_names = tuple(f"x{j}" for j in range(spec.n_x))
    names: list[str] = []

    def block(new_names):
        start = len(names)
        names.extend(new_names)
        return slice(start, len(names))

    mu1 = len(names)
    names.append("ordinal.mu1")
    tau = block(f"ordinal.tau{j}" for j in range(2, spec.J))
    beta1 = block(f"ordinal.b[{x_names[j]}]" for j in spec.x_ordinal)
    mu2 = len(names)
    names.append("binary.mu2")
    beta2 = block(f"binary.b[{x_names[j]}]" for j in spec.x_binary)
    gamma = block(f"binary.z1cat{j}" for j in range(2, spec.J + 1)) if spec.z1_in_binary else slice(len(names), len(names))
    nu = block(f"y{a + 1}.nu" for a in range(spec.d))
    Phi = block(
        f"y{a + 1}.b[{x_names[j]}]" for a in range(spec.d) for j in spec.x_gaussian
    )
    psi_names = []
    for a in range(spec.d):
        if spec.z1_in_gaussian:
            psi_names += [f"y{a + 1}.z1cat{j}" for j in range(2, spec.J + 1)]
        if spec.z2_in_gaussian:
            psi_names.append(f"y{a + 1}.z2")
    Psi = block(psi_names)
    sig_names = [f"sigma.var{a + 1}" for a in range(spec.d)]
    sig_names += [
        f"sigma.cov{a + 1}{b + 1}" for a in range(spec.d) for b in range(a + 1, spec.d)
    ]
    sigma = block(sig_names)
    supports = tuple(
        block(f"{dim}.class{k}" for k in range(2, spec.K + 1))
        for dim in _support_dim_names(spec.d)
    )
    lam = block(f"logit_weight.class{k}" for k in range(2, spec.K + 1))
    return ParameterLayout(
        names=tuple(names),
        mu1=mu1,
        tau=tau,
        beta1=beta1,
        mu2=mu2,
        beta2=beta2,
        gamma=gamma,
        nu=nu,
        Phi=Phi,
        Psi=Psi,
        sigma=sigma,
        supports=supports,
        lam=lam,
    )


def _sigma_coords(Sigma: np.ndarray, d: int) -> np.ndarray:
    vals = [Sigma[a, a] for a in range(d)]
    vals += [Sigma[a, b] for a in range(d) for b in range(a + 1, d)]
    return np.array(vals)


def _sigma_from_coords(coords: np.ndarray, d: int) -> np.ndarray:
    Sigma = np.zeros((d, d))
    Sigma[np.diag_indices(d)] = coords[:d]
    k = d
    for a in range(d):
        for b in range(a + 1, d):
            Sigma[a, b] = Sigma[b, a] = coords[k]
            k += 1
    return Sigma


def _support_matrix(lat: LatentStructure) -> np.ndarray:
    """(2 + d, K) stack of support values, one row per latent dimension."""
    return np.vstack([lat.xi1, lat.xi2, lat.zeta.T])


def pack_parameters(theta: ParameterSet, spec: ModelSpec) -> np.ndarray:
    """Map a centered parameter set to its free-coordinate vector."""
    theta.validate_against(spec)
    lat = theta.latent
    if not lat.is_centered(tol=1e-6):
        raise ValueError("parameters must be centered before packing")
    parts = [
        [theta.ordinal.mu1],
        theta.ordinal.tau[1:],
        theta.ordinal.beta1,
        [theta.binary.mu2],
        theta.binary.beta2,
        theta.binary.gamma,
        theta.gaussian.nu,
        theta.gaussian.Phi.ravel(),
        theta.gaussian.Psi.ravel(),
        _sigma_coords(theta.gaussian.Sigma, spec.d),
        _support_matrix(lat)[:, 1:].ravel(),
        np.log(lat.pi[1:] / lat.pi[0]),
    ]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def unpack_parameters(vec: np.ndarray, spec: ModelSpec) -> ParameterSet:
    """Reconstruct a parameter set from free coordinates.

    The fixed cutpoint, the class-1 support points and the first weight
    are implied by the constraints.
    """
    vec = np.asarray(vec, dtype=float)
    lay = parameter_layout(spec)
    if vec.size != lay.size:
        raise ValueError(f"expected {lay.size} coordinates, got {vec.size}")
    ordinal = _m.OrdinalEqParams(
        mu1=vec[lay.mu1],
        tau=np.concatenate(([0.0], vec[lay.tau])),
        beta1=vec[lay.beta1],
    )
    binary = _m.BinaryEqParams(mu2=vec[lay.mu2], beta2=vec[lay.beta2], gamma=vec[lay.gamma])
    p3 = len(spec.x_gaussian)
    gaussian = _m.GaussianEqParams(
        nu=vec[lay.nu],
        Phi=vec[lay.Phi].reshape(spec.d, p3),
        Psi=vec[lay.Psi].reshape(spec.d, spec.psi_dim),
        Sigma=_sigma_from_coords(vec[lay.sigma], spec.d),
    )
    ratios = np.exp(vec[lay.lam])
    pi1 = 1.0 / (1.0 + ratios.sum())
    pi = np.concatenate(([pi1], ratios * pi1))
    sup = np.empty((2 + spec.d, spec.K))
    for ell, sl in enumerate(lay.supports):
        free = vec[sl]
        sup[ell, 1:] = free
        sup[ell, 0] = -(ratios @ free) if free.size else 0.0
    latent = LatentStructure(
        xi1=sup[0], xi2=sup[1], zeta=sup[2:].T, pi=pi
    )
    return ParameterSet(ordinal=ordinal, binary=binary, gaussian=gaussian, latent=latent)


# ---------------------------------------------------------------------------
# Score and observed information
# ---------------------------------------------------------------------------


def score_vector(theta: ParameterSet, dataset: Dataset, spec: ModelSpec) -> np.ndarray:
    """Gradient of the observed-data log-likelihood in free coordinates.

    Assembled from the analytic gradients of the three weighted equation
    objectives plus the weight-simplex gradient, with responsibilities
    frozen at ``e_step(theta)``; valid at any parameter value, not only
    at a maximum.
    """
    theta.validate_against(spec)
    W = e_step(dataset, theta, spec).w
    lay = parameter_layout(spec)
    lin1, lin2, mean = _m._equation_linear_parts(dataset, theta, spec)
    lat = theta.latent
    K, d = lat.K, spec.d
    z1, z2, y = dataset.z1, dataset.z2, dataset.y
    X1 = dataset.x[:, spec.x_ordinal]
    X2 = dataset.x[:, spec.x_binary]
    X3 = dataset.x[:, spec.x_gaussian]
    out = np.zeros(lay.size)

    # ordinal equation
    sa, sb, _qa, _qb = ordinal_pieces(z1, lin1[:, None] + lat.xi1[None, :], theta.ordinal.tau)
    Wd = W * (sa - sb)
    out[lay.mu1] = Wd.sum()
    out[lay.beta1] = X1.T @ Wd.sum(axis=1)
    g_tau = np.empty(spec.J - 2)
    Wsa = W * sa
    Wsb = W * sb
    for m in range(2, spec.J):
        g_tau[m - 2] = Wsa[z1 == m + 1].sum() - Wsb[z1 == m].sum()
    out[lay.tau] = g_tau
    g_xi1 = Wd.sum(axis=0)

    # binary equation
    lin2k = lin2[:, None] + lat.xi2[None, :]
    Wd2 = W * (z2[:, None] - expit(lin2k))
    out[lay.mu2] = Wd2.sum()
    out[lay.beta2] = X2.T @ Wd2.sum(axis=1)
    if spec.z1_in_binary:
        out[lay.gamma] = z1_dummy_matrix(z1, spec.J).T @ Wd2.sum(axis=1)
    g_xi2 = Wd2.sum(axis=0)

    # outcome equation
    Sigma = theta.gaussian.Sigma
    Sinv = cho_solve(cho_factor(Sigma), np.eye(d))
    A = np.zeros((dataset.n, d))
    S = np.zeros((d, d))
    g_zeta = np.zeros((K, d))
    for k in range(K):
        resid = y - mean - lat.zeta[k]
        u = resid @ Sinv
        wu = W[:, k][:, None] * u
        A += wu
        g_zeta[k] = wu.sum(axis=0)
        S += resid.T @ (W[:, k][:, None] * resid)
    out[lay.nu] = A.sum(axis=0)
    out[lay.Phi] = (A.T @ X3).ravel()
    dz = cause_dummy_matrix(z1, z2, spec)
    out[lay.Psi] = (A.T @ dz).ravel()
    n_tot = W.sum()
    G = 0.5 * (Sinv @ S @ Sinv - n_tot * Sinv)
    g_sigma = [G[a, a] for a in range(d)]
    g_sigma += [2.0 * G[a, b] for a in range(d) for b in range(a + 1, d)]
    out[lay.sigma] = g_sigma

    # latent coordinates: free supports chain through the class-1 value,
    # weight logits chain through both the simplex and the centering.
    raw = np.vstack([g_xi1, g_xi2, g_zeta.T])  # (2 + d, K)
    ratios = lat.pi[1:] / lat.pi[0]
    sup = _support_matrix(lat)
    for ell, sl in enumerate(lay.supports):
        out[sl] = raw[ell, 1:] - ratios * raw[ell, 0]
    nk = W.sum(axis=0)
    g_lam = nk[1:] - n_tot * lat.pi[1:]
    for ell in range(2 + d):
        g_lam = g_lam - raw[ell, 0] * ratios * sup[ell, 1:]
    out[lay.lam] = g_lam
    return out


def observed_information(
    theta: ParameterSet,
    dataset: Dataset,
    spec: ModelSpec,
    step_scale: float = 1e-5,
) -> np.ndarray:
    """Negative Jacobian of the score by central differences, symmetrized.

    Per-coordinate steps scale with the coordinate magnitude so that
    cutpoints and variances of very different sizes are differentiated
    comparably.  Warns when the score suggests the point is not a local
    maximum.
    """
    vec = pack_parameters(theta, spec)
    s0 = score_vector(theta, dataset, spec)
    if np.abs(s0).max() > 1e-4 * max(1.0, dataset.n):
        warnings.warn(
            "score is far from zero; observed information assumes a local maximum",
            stacklevel=2,
        )
    npar = vec.size
    jac = np.empty((npar, npar))
    for j in range(npar):
        h = step_scale * (1.0 + abs(vec[j]))
        vp = vec.copy()
        vp[j] += h
        vm = vec.copy()
        vm[j] -= h
        sp = score_vector(unpack_parameters(vp, spec), dataset, spec)
        sm = score_vector(unpack_parameters(vm, spec), dataset, spec)
        jac[:, j] = (sp - sm) / (2.0 * h)
    return -0.5 * (jac + jac.T)


def standard_errors(info: np.ndarray, estimates: np.ndarray):
    """Wald statistics from the observed information.

    Returns (se, t, p) arrays; when the information is not positive
    definite the non-invertible directions are suppressed as NaN with a
    warning.
    """
    estimates = np.asarray(estimates, dtype=float)
    npar = info.shape[0]
    try:
        cov = cho_solve(cho_factor(info), np.eye(npar))
        diag = np.diag(cov).copy()
    except np.linalg.LinAlgError:
        warnings.warn(
            "information matrix is not positive definite; SEs suppressed where invalid",
            stacklevel=2,
        )
        cov = np.linalg.pinv(info)
        diag = np.diag(cov).copy()
        diag[diag <= 0] = np.nan
    se = np.sqrt(diag)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = estimates / se
    p = 2.0 * norm.sf(np.abs(t))
    return se, t, p


def delta_method_se(grad: np.ndarray, info: np.ndarray) -> float:
    """SE of a scalar function with gradient *grad* via the information."""
    grad = np.asarray(grad, dtype=float)
    try:
        var = float(grad @ cho_solve(cho_factor(info), grad))
    except np.linalg.LinAlgError:
        return float("nan")
    return float(np.sqrt(var)) if var > 0 else float("nan")


@dataclass(frozen=True)
class ContrastRow:
    """Support-point difference of class k against class 1."""

    dim: str
    k: int
    estimate: float
    se: float
    p: float


def class_contrasts(
    theta: ParameterSet, info: np.ndarray, spec: ModelSpec
) -> tuple[ContrastRow, ...]:
    """Delta-method contrasts (support_k - support_1) for k >= 2.

    The contrast gradient accounts for the centering constraint: moving a
    free support point or a weight logit also moves the implied class-1
    value.
    """
    if spec.K < 2:
        raise ValueError("class contrasts require K >= 2")
    lay = parameter_layout(spec)
    lat = theta.latent
    ratios = lat.pi[1:] / lat.pi[0]
    sup = _support_matrix(lat)
    rows = []
    for ell, dim in enumerate(_support_dim_names(spec.d)):
        for k in range(2, spec.K + 1):
            est = float(sup[ell, k - 1] - sup[ell, 0])
            grad = np.zeros(lay.size)
            block = np.array(
                [(1.0 if m == k else 0.0) + ratios[m - 2] for m in range(2, spec.K + 1)]
            )
            grad[lay.supports[ell]] = block
            grad[lay.lam] = ratios * sup[ell, 1:]
            se = delta_method_se(grad, info)
            if est == 0.0:
                p = 1.0
            else:
                with np.errstate(invalid="ignore", divide="ignore"):
                    p = float(2.0 * norm.sf(abs(est / se)))
            rows.append(ContrastRow(dim=dim, k=k, estimate=est, se=se, p=p))
    return tuple(rows)


def class1_support_se(theta: ParameterSet, info: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Delta-method SEs of the implied class-1 support points, per dimension."""
    lay = parameter_layout(spec)
    lat = theta.latent
    ratios = lat.pi[1:] / lat.pi[0]
    sup = _support_matrix(lat)
    out = np.empty(2 + spec.d)
    for ell in range(2 + spec.d):
        grad = np.zeros(lay.size)
        grad[lay.supports[ell]] = -ratios
        grad[lay.lam] = -ratios * sup[ell, 1:]
        out[ell] = delta_method_se(grad, info)
    return out


def classify(posterior) -> tuple[np.ndarray, np.ndarray]:
    """MAP class per record (1-based) and the winning probability.

    Ties break toward the lowest class index.  Accepts a
    :class:`PosteriorMatrix` or any (n, K) array; only the row-wise
    ordering of the entries matters.
    """
    w = posterior.w if isinstance(posterior, PosteriorMatrix) else np.asarray(posterior, dtype=float)
    labels = w.argmax(axis=1) + 1
    confidence = w[np.arange(w.shape[0]), labels - 1]
    return labels.astype(np.int64), confidence


# ---------------------------------------------------------------------------
# Model selection over K
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionRow:
    K: int
    loglik: float | None
    npar: int
    bic: float | None
    converged: bool
    error: str | None = None


@dataclass(frozen=True)
class SelectionTable:
    rows: tuple[SelectionRow, ...]
    chosen_K: int
    best_fit: FitResult | None = None

    def __post_init__(self):
        npars = [r.npar for r in self.rows]
        if any(b <= a for a, b in zip(npars, npars[1:])):
            raise ValueError("parameter counts must increase strictly in K")
        if self.chosen_K not in {r.K for r in self.rows}:
            raise ValueError("chosen K must correspond to a fitted row")


def select_k(
    dataset: Dataset,
    spec_template: ModelSpec,
    k_max: int,
    config: EmConfig | None = None,
    threads: int = 1,
    prune_after: int | None = None,
) -> SelectionTable:
    """Fit K = 1, 2, ... and choose the BIC minimizer.

    Fitting stops at the first K whose BIC exceeds its predecessor's (or
    at ``k_max``); failed or degenerate K values are recorded but never
    selected.  Each K gets a fresh multi-start.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    config = config or EmConfig()
    rows: list[SelectionRow] = []
    fits: dict[int, FitResult] = {}
    prev_bic = None
    for K in range(1, k_max + 1):
        spec = dataclasses.replace(spec_template, K=K)
        npar = count_parameters(spec)
        try:
            fit = fit_multistart(
                dataset, spec, config, threads=threads, prune_after=prune_after
            )
        except EstimationError as exc:
            rows.append(
                SelectionRow(K=K, loglik=None, npar=npar, bic=None, converged=False, error=str(exc))
            )
            continue
        value = bic(fit.loglik, npar, dataset.n)
        rows.append(
            SelectionRow(K=K, loglik=fit.loglik, npar=npar, bic=value, converged=fit.converged)
        )
        fits[K] = fit
        if prev_bic is not None and value > prev_bic:
            break
        prev_bic = value
    ok = [r for r in rows if r.bic is not None]
    if not ok:
        raise EstimationError("estimation failed for every K", tuple(r.error for r in rows))
    chosen = min(ok, key=lambda r: r.bic).K
    return SelectionTable(rows=tuple(rows), chosen_K=chosen, best_fit=fits.get(chosen))


# ---------------------------------------------------------------------------
# Full inference report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParameterRow:
    name: str
    estimate: float
    se: float
    t: float
    p: float


@dataclass(frozen=True)
class InferenceReport:
    """Wald table for every free parameter plus derived quantities."""

    rows: tuple[ParameterRow, ...]
    contrasts: tuple[ContrastRow, ...]
    class1_se: tuple[float, ...]
    rho: float
    rho_se: float
    info_pd: bool

    def row(self, name: str) -> ParameterRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def build_report(fit: FitResult, dataset: Dataset) -> InferenceReport:
    """Score/information-based Wald report for a converged fit."""
    spec, theta = fit.spec, fit.theta
    lay = parameter_layout(spec, dataset.x_names)
    vec = pack_parameters(theta, spec)
    info = observed_information(theta, dataset, spec)
    info_pd = True
    try:
        cho_factor(info)
    except np.linalg.LinAlgError:
        info_pd = False
    se, t, p = standard_errors(info, vec)
    rows = tuple(
        ParameterRow(name=lay.names[j], estimate=float(vec[j]), se=float(se[j]), t=float(t[j]), p=float(p[j]))
        for j in range(lay.size)
    )
    contrasts = class_contrasts(theta, info, spec) if spec.K >= 2 else ()
    class1 = (
        tuple(class1_support_se(theta, info, spec)) if spec.K >= 2 else tuple([np.nan] * (2 + spec.d))
    )
    Sigma = theta.gaussian.Sigma
    rho = correlation_from_sigma(Sigma) if spec.d >= 2 else float("nan")
    if spec.d >= 2:
        grad = np.zeros(lay.size)
        sig = lay.sigma.start
        v1, v2, c12 = Sigma[0, 0], Sigma[1, 1], Sigma[0, 1]
        grad[sig + 0] = -0.5 * rho / v1
        grad[sig + 1] = -0.5 * rho / v2
        grad[sig + spec.d] = 1.0 / np.sqrt(v1 * v2)
        rho_se = delta_method_se(grad, info)
    else:
        rho_se = float("nan")
    return InferenceReport(
        rows=rows,
        contrasts=contrasts,
        class1_se=class1,
        rho=rho,
        rho_se=rho_se,
        info_pd=info_pd,
    )
