"""Core types and per-class probability computations for the mixture SEM.

The model is a recursive three-equation system observed on each record:
an ordinal response driven by a cumulative (proportional-odds) logit, a
binary response driven by a standard logit that may depend on the ordinal
one, and a d-variate normal outcome that may depend on both.  Unobserved
heterogeneity enters every equation as a class-specific intercept offset:
a discrete latent variable with K support points and class weights.

Everything in this module is a pure function of immutable value objects;
the EM machinery in :mod:`mixsem.em` composes these computations.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, log_expit, logsumexp

LOG_2PI = float(np.log(2.0 * np.pi))

#: tolerance used when checking the weighted-mean-zero support constraint
CENTERING_TOL = 1e-10

#: residual standard deviation of the standard logistic error
LOGISTIC_SD = float(np.pi / np.sqrt(3.0))


class DegenerateSigmaError(ValueError):
    """The outcome covariance matrix is not usable (not positive definite)."""


def _frozen_array(obj, name: str, value, dtype=float, ndim: int | None = None):
    arr = np.asarray(value, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimension(s), got {arr.ndim}")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    object.__setattr__(obj, name, arr)
    return arr


def _log1mexp(t: np.ndarray) -> np.ndarray:
    """log(1 - exp(t)) for t <= 0, stable near both 0 and -inf."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = t < -0.6931471805599453  # log(1/2)
    with np.errstate(divide="ignore"):
        out[small] = np.log1p(-np.exp(t[small]))
        out[~small] = np.log(-np.expm1(t[~small]))
    return out


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataRecord:
    """One observation: covariates, ordinal cause, binary cause, outcomes."""

    x: np.ndarray
    z1: int
    z2: int
    y: np.ndarray

    def __post_init__(self):
        x = _frozen_array(self, "x", self.x, ndim=1)
        y = _frozen_array(self, "y", self.y, ndim=1)
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite")
        if not np.all(np.isfinite(y)):
            raise ValueError("outcomes must be finite")
        if int(self.z1) < 1:
            raise ValueError(f"ordinal category must be >= 1, got {self.z1}")
        if int(self.z2) not in (0, 1):
            raise ValueError(f"binary response must be 0 or 1, got {self.z2}")
        object.__setattr__(self, "z1", int(self.z1))
        object.__setattr__(self, "z2", int(self.z2))


@dataclass(frozen=True)
class Dataset:
    """Immutable column-oriented collection of records.

    ``x`` holds already-encoded covariates (centering and factor expansion
    happen in :mod:`mixsem.dataio`); ``z1`` is 1-based, ``z2`` is 0/1.
    ``true_class`` is only populated by the simulator, for recovery checks.
    ``raw`` optionally keeps the pre-encoding columns for re-encoding and
    covariate resampling.
    """

    x: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    y: np.ndarray
    x_names: tuple[str, ...] = ()
    true_class: np.ndarray | None = None
    raw: dict | None = None

    def __post_init__(self):
        x = _frozen_array(self, "x", self.x, ndim=2)
        z1 = _frozen_array(self, "z1", self.z1, dtype=np.int64, ndim=1)
        z2 = _frozen_array(self, "z2", self.z2, dtype=np.int64, ndim=1)
        y = _frozen_array(self, "y", self.y, ndim=2)
        n = x.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one record")
        if not (z1.shape[0] == z2.shape[0] == y.shape[0] == n):
            raise ValueError("all columns must share the record count")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError("covariates and outcomes must be finite")
        if z1.min() < 1:
            raise ValueError("ordinal categories must be >= 1")
        if not np.isin(z2, (0, 1)).all():
            raise ValueError("binary responses must be 0 or 1")
        if not self.x_names:
            object.__setattr__(
                self, "x_names", tuple(f"x{j}" for j in range(x.shape[1]))
            )
        elif len(self.x_names) != x.shape[1]:
            raise ValueError("x_names length must match the covariate count")
        if self.true_class is not None:
            _frozen_array(self, "true_class", self.true_class, dtype=np.int64, ndim=1)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.y.shape[1]

    def record(self, i: int) -> DataRecord:
        return DataRecord(self.x[i], int(self.z1[i]), int(self.z2[i]), self.y[i])

    @classmethod
    def from_records(cls, records, x_names: tuple[str, ...] = ()) -> "Dataset":
        records = list(records)
        return cls(
            x=np.array([r.x for r in records]),
            z1=np.array([r.z1 for r in records]),
            z2=np.array([r.z2 for r in records]),
            y=np.array([r.y for r in records]),
            x_names=x_names,
        )


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of the three-equation recursion.

    The per-equation covariate sets are index tuples into ``Dataset.x``;
    the flags say which cause dummies enter the downstream equations
    (reference coding: ordinal category 1 and binary level 0 are omitted).
    The recursion is acyclic by construction: z1 <- x; z2 <- x, z1;
    y <- x, z1, z2.
    """

    K: int
    J: int = 3
    d: int = 2
    n_x: int = 0
    x_ordinal: tuple[int, ...] = ()
    x_binary: tuple[int, ...] = ()
    x_gaussian: tuple[int, ...] = ()
    z1_in_binary: bool = True
    z1_in_gaussian: bool = True
    z2_in_gaussian: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.J < 2:
            raise ValueError("J must be >= 2")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        for name in ("x_ordinal", "x_binary", "x_gaussian"):
            idx = tuple(int(i) for i in getattr(self, name))
            object.__setattr__(self, name, idx)
            if any(i < 0 or i >= self.n_x for i in idx):
                raise ValueError(f"{name} contains indices outside 0..{self.n_x - 1}")

    @property
    def n_z1_dummies(self) -> int:
        return self.J - 1

    @property
    def gamma_dim(self) -> int:
        return self.n_z1_dummies if self.z1_in_binary else 0

    @property
    def psi_dim(self) -> int:
        q = self.n_z1_dummies if self.z1_in_gaussian else 0
        return q + (1 if self.z2_in_gaussian else 0)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrdinalEqParams:
    """Cumulative-logit equation: intercept, cutpoints, slopes.

    The first cutpoint is fixed at 0 for identifiability and the cutpoint
    vector is non-increasing, so the cumulative probabilities P(z >= j)
    are non-increasing in j.
    """

    mu1: float
    tau: np.ndarray
    beta1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu1", float(self.mu1))
        tau = _frozen_array(self, "tau", self.tau, ndim=1)
        _frozen_array(self, "beta1", self.beta1, ndim=1)
        if tau.size < 1:
            raise ValueError("at least one cutpoint is required (J >= 2)")
        if tau[0] != 0.0:
            raise ValueError("the first cutpoint must be fixed at 0")
        if np.any(np.diff(tau) > 0):
            raise ValueError("cutpoints must be non-increasing")

    @property
    def J(self) -> int:
        return self.tau.size + 1


@dataclass(frozen=True)
class BinaryEqParams:
    """Logit equation: intercept, slopes, coefficients on ordinal dummies."""

    mu2: float
    beta2: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu2", float(self.mu2))
        _frozen_array(self, "beta2", self.beta2, ndim=1)
        _frozen_array(self, "gamma", self.gamma, ndim=1)


@dataclass(frozen=True)
class GaussianEqParams:
    """d-variate normal outcome equation with free covariance.

    ``Psi`` columns follow the dummy layout of the spec: ordinal-cause
    dummies first (categories 2..J), then the binary-cause dummy.
    """

    nu: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        nu = _frozen_array(self, "nu", self.nu, ndim=1)
        phi = _frozen_array(self, "Phi", self.Phi, ndim=2)
        psi = _frozen_array(self, "Psi", self.Psi, ndim=2)
        sig = _frozen_array(self, "Sigma", self.Sigma, ndim=2)
        d = nu.size
        if phi.shape[0] != d or psi.shape[0] != d:
            raise ValueError("Phi and Psi must have one row per outcome dimension")
        if sig.shape != (d, d):
            raise ValueError(f"Sigma must be {d}x{d}")
        if not np.allclose(sig, sig.T, atol=1e-12, rtol=0.0):
            raise ValueError("Sigma must be symmetric")

    @property
    def d(self) -> int:
        return self.nu.size


@dataclass(frozen=True)
class LatentStructure:
    """Support points and weights of the discrete latent variable.

    The canonical (identified) form has weighted mean zero in every latent
    dimension; intermediate EM states may be temporarily uncentered, use
    :func:`mixsem.em.center_support_points` to restore the canonical form
    and :meth:`is_centered` to check it.
    """

    xi1: np.ndarray
    xi2: np.ndarray
    zeta: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        xi1 = _frozen_array(self, "xi1", self.xi1, ndim=1)
        xi2 = _frozen_array(self, "xi2", self.xi2, ndim=1)
        zeta = _frozen_array(self, "zeta", self.zeta, ndim=2)
        pi = _frozen_array(self, "pi", self.pi, ndim=1)
        K = pi.size
        if not (xi1.size == xi2.size == zeta.shape[0] == K):
            raise ValueError("all latent components must have K entries")
        if np.any(pi <= 0.0):
            raise ValueError("class weights must be strictly positive")
        if abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("class weights must sum to 1")

    @property
    def K(self) -> int:
        return self.pi.size

    def is_centered(self, tol: float = CENTERING_TOL) -> bool:
        means = [self.pi @ self.xi1, self.pi @ self.xi2, *(self.pi @ self.zeta)]
        return max(abs(m) for m in means) <= tol


@dataclass(frozen=True)
class ParameterSet:
    """All free parameters of the model."""

    ordinal: OrdinalEqParams
    binary: BinaryEqParams
    gaussian: GaussianEqParams
    latent: LatentStructure

    def __post_init__(self):
        if self.latent.zeta.shape[1] != self.gaussian.d:
            raise ValueError("zeta support dimension must match the outcome dimension")

    @property
    def K(self) -> int:
        return self.latent.K

    def validate_against(self, spec: ModelSpec) -> None:
        """Raise ValueError if dimensions disagree with *spec*."""
        problems = []
        if self.ordinal.J != spec.J:
            problems.append(f"ordinal cutpoints imply J={self.ordinal.J}, spec J={spec.J}")
        if self.ordinal.beta1.size != len(spec.x_ordinal):
            problems.append("beta1 length != ordinal covariate count")
        if self.binary.beta2.size != len(spec.x_binary):
            problems.append("beta2 length != binary covariate count")
        if self.binary.gamma.size != spec.gamma_dim:
            problems.append("gamma length != ordinal dummy count for the binary equation")
        if self.gaussian.d != spec.d:
            problems.append("outcome dimension mismatch")
        if self.gaussian.Phi.shape[1] != len(spec.x_gaussian):
            problems.append("Phi columns != outcome covariate count")
        if self.gaussian.Psi.shape[1] != spec.psi_dim:
            problems.append("Psi columns != cause dummy count for the outcome equation")
        if self.K != spec.K:
            problems.append(f"parameter set has K={self.K}, spec K={spec.K}")
        if problems:
            raise ValueError("; ".join(problems))

    def replace_latent(self, **kwargs) -> "ParameterSet":
        return dataclasses.replace(
            self, latent=dataclasses.replace(self.latent, **kwargs)
        )


# ---------------------------------------------------------------------------
# Dummy coding
# ---------------------------------------------------------------------------


def z1_dummy_matrix(z1: np.ndarray, J: int) -> np.ndarray:
    """Reference-coded dummies for the ordinal cause: columns for 2..J."""
    z1 = np.asarray(z1)
    if np.any(z1 < 1) or np.any(z1 > J):
        raise ValueError(f"ordinal categories must lie in 1..{J}")
    return (z1[:, None] == np.arange(2, J + 1)[None, :]).astype(float)


def cause_dummy_matrix(z1, z2, spec: ModelSpec) -> np.ndarray:
    """Dummy block entering the outcome equation, per the spec's layout."""
    blocks = []
    if spec.z1_in_gaussian:
        blocks.append(z1_dummy_matrix(z1, spec.J))
    if spec.z2_in_gaussian:
        blocks.append(np.asarray(z2, dtype=float)[:, None])
    if not blocks:
        return np.zeros((len(np.asarray(z1)), 0))
    return np.hstack(blocks)


# ---------------------------------------------------------------------------
# Per-equation probability computations
# ---------------------------------------------------------------------------


def ordinal_category_probs(
    x: np.ndarray, alpha1: float, params: OrdinalEqParams
) -> np.ndarray:
    """Category probabilities p(z1 = j | alpha, x), j = 1..J.

    Computed as differences of cumulative logistic probabilities
    P(z1 >= j) = expit(mu1 + tau_{j-1} + alpha + x'beta1), with
    P(z1 >= 1) = 1.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != params.beta1.shape:
        raise ValueError(
            f"covariate vector has length {x.size}, beta1 has {params.beta1.size}"
        )
    lin = params.mu1 + float(alpha1) + float(x @ params.beta1)
    cum = np.concatenate(([1.0], expit(lin + params.tau), [0.0]))
    return cum[:-1] - cum[1:]


def binary_prob(
    x: np.ndarray, z1: int, alpha2: float, params: BinaryEqParams
) -> float:
    """p(z2 = 1 | alpha, x, z1) under the logit parameterization."""
    x = np.asarray(x, dtype=float)
    if x.shape != params.beta2.shape:
        raise ValueError(
            f"covariate vector has length {x.size}, beta2 has {params.beta2.size}"
        )
    lin = params.mu2 + float(alpha2) + float(x @ params.beta2)
    if params.gamma.size:
        J = params.gamma.size + 1
        lin += float(z1_dummy_matrix(np.array([z1]), J)[0] @ params.gamma)
    return float(expit(lin))


def gaussian_log_density(
    y: np.ndarray,
    x: np.ndarray,
    z1: int,
    z2: int,
    delta: np.ndarray,
    params: GaussianEqParams,
    spec: ModelSpec | None = None,
) -> float:
    """Log density of the outcome vector at its class-conditional mean.

    When *spec* is omitted, both cause dummies are assumed present and the
    ordinal category count is inferred from the Psi column count.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if x.size != params.Phi.shape[1]:
        raise ValueError(
            f"covariate vector has length {x.size}, Phi has {params.Phi.shape[1]} columns"
        )
    if y.size != params.d or delta.size != params.d:
        raise ValueError("outcome and support vectors must match the outcome dimension")
    if spec is None:
        J = max(params.Psi.shape[1], 2)
        dummies = np.concatenate(
            [z1_dummy_matrix(np.array([z1]), J)[0], [float(z2)]]
        )[: params.Psi.shape[1]]
    else:
        dummies = cause_dummy_matrix(np.array([z1]), np.array([z2]), spec)[0]
    mean = params.nu + delta + params.Phi @ x + params.Psi @ dummies
    return float(mvn_log_density(y[None, :] - mean[None, :], params.Sigma)[0])


def cholesky_of_sigma(Sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular factor of Sigma; raises DegenerateSigmaError."""
    try:
        return np.linalg.cholesky(np.asarray(Sigma, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise DegenerateSigmaError(
            "outcome covariance is not positive definite"
        ) from exc


def mvn_log_density(resid: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    """Log density of centered multivariate-normal residuals, batched.

    *resid* has shape (..., d); the covariance is factored once, never
    inverted explicitly.
    """
    L = cholesky_of_sigma(Sigma)
    d = L.shape[0]
    resid = np.asarray(resid, dtype=float)
    v = solve_triangular(L, resid.reshape(-1, d).T, lower=True)
    quad = np.einsum("ij,ij->j", v, v).reshape(resid.shape[:-1])
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return -0.5 * (d * LOG_2PI + logdet + quad)


def correlation_from_sigma(Sigma: np.ndarray) -> float:
    """Correlation between the first two outcome dimensions."""
    Sigma = np.asarray(Sigma, dtype=float)
    v1, v2 = Sigma[0, 0], Sigma[1, 1]
    if v1 <= 0.0 or v2 <= 0.0:
        raise DegenerateSigmaError("zero variance: correlation undefined")
    return float(Sigma[0, 1] / np.sqrt(v1 * v2))


# ---------------------------------------------------------------------------
# Vectorized log-likelihood pieces shared by EM and inference
# ---------------------------------------------------------------------------


def _cumulative_offsets(z, tau):
    """Per-row upper/lower cumulative-logit offsets and the category gap.

    The gap term log(1 - exp(tau_z - tau_{z-1})) takes only J distinct
    values, so it is computed per category and gathered.
    """
    tau = np.asarray(tau, dtype=float)
    pad = np.concatenate(([np.inf], tau, [-np.inf]))
    with np.errstate(invalid="ignore"):
        gap_by_cat = _log1mexp(pad[1:] - pad[:-1])
    zi = np.asarray(z) - 1
    return pad[:-1][zi], pad[1:][zi], gap_by_cat[zi]


def ordinal_obs_loglik(z, lin, tau) -> np.ndarray:
    """log p(z | lin) under the cumulative logit; *lin* is (n,) or (n, K).

    Uses log(expit(a)) + log(expit(-b)) + log(1 - exp(b - a)) with
    a, b the upper/lower cumulative logits, stable in both tails.
    """
    upper, lower, gap = _cumulative_offsets(z, tau)
    if lin.ndim == 2:
        upper, lower, gap = upper[:, None], lower[:, None], gap[:, None]
    return log_expit(lin + upper) + log_expit(-(lin + lower)) + gap


def ordinal_pieces(z, lin, tau):
    """Derivative building blocks of the cumulative-logit log-likelihood.

    Returns (sa, sb, qa, qb): the per-element ratios f(a)/p, f(b)/p,
    f'(a)/p, f'(b)/p where p = F(a) - F(b) is the observed-category
    probability.  d log p / d lin = sa - sb; the cutpoint derivatives pick
    these ratios up through the category indicators.
    """
    upper, lower, _gap = _cumulative_offsets(z, tau)
    if lin.ndim == 2:
        upper, lower = upper[:, None], lower[:, None]
    Fa = expit(lin + upper)
    Fb = expit(lin + lower)
    fa = Fa * (1.0 - Fa)
    fb = Fb * (1.0 - Fb)
    p = np.maximum(Fa - Fb, 1e-300)
    sa = fa / p
    sb = fb / p
    qa = sa * (1.0 - 2.0 * Fa)
    qb = sb * (1.0 - 2.0 * Fb)
    return sa, sb, qa, qb


def binary_obs_loglik(z, lin) -> np.ndarray:
    """log p(z | lin) for the logit equation; *lin* is (n,) or (n, K)."""
    z = np.asarray(z, dtype=float)
    sign = 2.0 * z - 1.0
    return log_expit(sign[:, None] * lin if lin.ndim == 2 else sign * lin)


def _equation_linear_parts(dataset: Dataset, theta: ParameterSet, spec: ModelSpec):
    """Class-free linear predictors / mean of the three equations."""
    x1 = dataset.x[:, spec.x_ordinal]
    x2 = dataset.x[:, spec.x_binary]
    x3 = dataset.x[:, spec.x_gaussian]
    lin1 = theta.ordinal.mu1 + x1 @ theta.ordinal.beta1
    lin2 = theta.binary.mu2 + x2 @ theta.binary.beta2
    if theta.binary.gamma.size:
        lin2 = lin2 + z1_dummy_matrix(dataset.z1, spec.J) @ theta.binary.gamma
    dz = cause_dummy_matrix(dataset.z1, dataset.z2, spec)
    mean = theta.gaussian.nu + x3 @ theta.gaussian.Phi.T + dz @ theta.gaussian.Psi.T
    return lin1, lin2, mean


def class_loglik_matrix(
    dataset: Dataset, theta: ParameterSet, spec: ModelSpec
) -> np.ndarray:
    """(n, K) matrix of class-conditional log-likelihoods."""
    theta.validate_against(spec)
    lin1, lin2, mean = _equation_linear_parts(dataset, theta, spec)
    lat = theta.latent
    L1 = ordinal_obs_loglik(dataset.z1, lin1[:, None] + lat.xi1[None, :], theta.ordinal.tau)
    L2 = binary_obs_loglik(dataset.z2, lin2[:, None] + lat.xi2[None, :])
    chol = cholesky_of_sigma(theta.gaussian.Sigma)
    d = spec.d
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    L3 = np.empty((dataset.n, lat.K))
    for k in range(lat.K):
        resid = dataset.y - mean - lat.zeta[k]
        v = solve_triangular(chol, resid.T, lower=True)
        L3[:, k] = -0.5 * (d * LOG_2PI + logdet + np.einsum("ij,ij->j", v, v))
    return L1 + L2 + L3


def class_conditional_log_lik(
    record: DataRecord, theta: ParameterSet, k: int, spec: ModelSpec | None = None
) -> float:
    """Log of the product of the three equation densities at class k."""
    K = theta.K
    if not 1 <= k <= K:
        raise ValueError(f"class index must lie in 1..{K}")
    if spec is None:
        p = record.x.size
        J = theta.ordinal.J
        spec = ModelSpec(
            K=K,
            J=J,
            d=theta.gaussian.d,
            n_x=p,
            x_ordinal=tuple(range(p)),
            x_binary=tuple(range(p)),
            x_gaussian=tuple(range(p)),
            z1_in_binary=theta.binary.gamma.size > 0,
            z1_in_gaussian=theta.gaussian.Psi.shape[1] >= J - 1,
            z2_in_gaussian=theta.gaussian.Psi.shape[1] in (1, J),
        )
    lat = theta.latent
    probs = ordinal_category_probs(
        record.x[list(spec.x_ordinal)], lat.xi1[k - 1], theta.ordinal
    )
    p1 = probs[record.z1 - 1]
    p2 = binary_prob(
        record.x[list(spec.x_binary)], record.z1, lat.xi2[k - 1], theta.binary
    )
    if record.z2 == 0:
        p2 = 1.0 - p2
    logf = gaussian_log_density(
        record.y,
        record.x[list(spec.x_gaussian)],
        record.z1,
        record.z2,
        lat.zeta[k - 1],
        theta.gaussian,
        spec,
    )
    with np.errstate(divide="ignore"):
        return float(np.log(p1) + np.log(p2) + logf)


def per_record_log_lik(
    dataset: Dataset, theta: ParameterSet, spec: ModelSpec
) -> np.ndarray:
    """(n,) vector of mixture log-likelihood contributions."""
    L = class_loglik_matrix(dataset, theta, spec)
    return logsumexp(L + np.log(theta.latent.pi)[None, :], axis=1)


def mixture_log_lik(dataset: Dataset, theta: ParameterSet, spec: ModelSpec) -> float:
    """Observed-data log-likelihood, evaluated with max-shifted sums."""
    return float(per_record_log_lik(dataset, theta, spec).sum())


def count_parameters(spec: ModelSpec) -> int:
    """Number of free parameters under the identifiability constraints.

    The first cutpoint is fixed, support points lose one class per latent
    dimension to the mean-zero constraint, and the weights lose one entry
    to the simplex constraint.
    """
    ordinal = 1 + (spec.J - 2) + len(spec.x_ordinal)
    binary = 1 + len(spec.x_binary) + spec.gamma_dim
    gaussian = spec.d * (1 + len(spec.x_gaussian) + spec.psi_dim)
    sigma = spec.d * (spec.d + 1) // 2
    latent = (spec.K - 1) * (2 + spec.d) + (spec.K - 1)
    return ordinal + binary + gaussian + sigma + latent
