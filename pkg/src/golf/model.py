"""The orthogonal latent factor model and its exact conditional laws.

The data matrix is modelled as ``Y = M + A Z + E`` where the loadings ``A``
are orthonormal eigenvectors of a row correlation matrix, each row of ``Z``
is an independent one-dimensional Gaussian process over the columns, and
``E`` is i.i.d. noise with variance ``sigma0^2``.  Because ``A`` is
orthonormal, the likelihood splits into ``d`` independent one-dimensional
Gaussian process likelihoods of the projected rows ``a_l^T (Y - M)`` plus a
pure-noise term for the orthogonal complement, evaluated without ever
forming a basis of that complement.

Factor ``l`` has covariance ``Sigma_l = (sigma0^2 / eta_l) K_l`` so that the
projected row has covariance ``sigma0^2 (K_l / eta_l + I)``.  Internally
all Kalman filters run at unit noise scale (signal ``1 / eta_l``, noise 1)
and ``sigma0^2`` is applied afterwards.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import InvalidParameterError, NumericalError, PreconditionError
from .kernels import Family, KernelSpec, corr_matrix
from .loadings import (
    Loadings,
    compute_loadings,
    kronecker_loadings,
    project,
    residual_project,
    unproject,
)
from .statespace import KalmanBatch, check_grid

__all__ = [
    "MeanVariant",
    "MeanModel",
    "PriorSpec",
    "ModelState",
    "GolfModel",
    "LoglikParts",
    "loglik_parts",
    "marginal_loglik",
    "posterior_factor",
    "sample_factors",
    "sample_sigma0",
    "sigma0_rate",
    "sample_B1",
    "sample_B1_additive",
    "sample_B2",
    "sample_B1_mixed",
    "sample_mean",
    "marginal_precisions",
    "log_jr_prior",
    "log_beta0_prior",
    "log_prior",
]

_LOG2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# mean structure


class MeanVariant(str, enum.Enum):
    ZERO = "zero"
    ROW = "row"
    COL = "col"
    MIXED = "mixed"


def _check_basis(H, n, name):
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    if H.shape[0] != n:
        raise PreconditionError(f"{name} has {H.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(H)):
        raise PreconditionError(f"{name} contains non-finite values")
    s = np.linalg.svd(H, compute_uv=False)
    if s.size == 0 or s[-1] <= 1e-8 * s[0] or H.shape[1] > n:
        raise PreconditionError(f"{name} is not of full column rank")
    return H


@dataclass(frozen=True, eq=False)
class MeanModel:
    """Linear mean ``M = H1 B1``, ``M = (H2 B2)^T`` or their sum.

    Parameters
    ----------
    variant : MeanVariant or str
    H1 : ndarray, shape (n1, q1), optional
        Row basis, required for ``row`` and ``mixed``.
    H2 : ndarray, shape (n2, q2), optional
        Column basis, required for ``col`` and ``mixed``.
    """

    variant: MeanVariant = MeanVariant.ZERO
    H1: np.ndarray | None = None
    H2: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", MeanVariant(self.variant))
        v = self.variant
        need1 = v in (MeanVariant.ROW, MeanVariant.MIXED)
        need2 = v in (MeanVariant.COL, MeanVariant.MIXED)
        if need1 and self.H1 is None:
            raise PreconditionError(f"mean variant {v.value} needs a row basis")
        if need2 and self.H2 is None:
            raise PreconditionError(f"mean variant {v.value} needs a column basis")
        object.__setattr__(self, "H1", None if not need1 else np.atleast_2d(np.asarray(self.H1, float).T).T)
        object.__setattr__(self, "H2", None if not need2 else np.atleast_2d(np.asarray(self.H2, float).T).T)

    def validate(self, n1, n2):
        if self.H1 is not None:
            object.__setattr__(self, "H1", _check_basis(self.H1, n1, "row basis H1"))
        if self.H2 is not None:
            object.__setattr__(self, "H2", _check_basis(self.H2, n2, "column basis H2"))
        return self

    @property
    def has_row(self) -> bool:
        return self.H1 is not None

    @property
    def has_col(self) -> bool:
        return self.H2 is not None

    def assemble(self, B1, B2, shape) -> np.ndarray:
        M = np.zeros(shape)
        if self.has_row:
            M += self.H1 @ B1
        if self.has_col:
            M += (self.H2 @ B2).T
        return M


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters.

    The factor kernel prior has log density
    ``c1 * log(c2*beta + eta) - c3 * (decay_coef*beta + eta)``.  ``None``
    selects the defaults: ``c1 = 1/2 - p`` with ``p = 1`` column input,
    ``c3`` the mean absolute difference between column inputs and
    ``decay_coef = c2``.  The row range prior is the unnormalized inverse
    gamma form ``beta0^(-shape-1) exp(-rate/beta0)`` per coordinate.
    """

    c1: float | None = None
    c2: float = 0.5
    c3: float | None = None
    decay_coef: float | None = None
    beta0_shape: float = -0.5
    beta0_rate: float = 1.0

    def resolve(self, grid) -> "PriorSpec":
        x = np.asarray(grid, dtype=float)
        c1 = 0.5 - 1.0 if self.c1 is None else float(self.c1)
        if self.c3 is None:
            n = x.size
            if n > 1:
                # mean |x_i - x_j| over pairs i < j, via sorted-order weights
                xs = np.sort(x)
                w = 2.0 * np.arange(n) - (n - 1)
                c3 = float(2.0 * (w * xs).sum() / (n * (n - 1)))
            else:
                c3 = 1.0
        else:
            c3 = float(self.c3)
        decay = self.c2 if self.decay_coef is None else float(self.decay_coef)
        if self.c2 <= 0 or c3 <= 0:
            raise InvalidParameterError("prior constants c2 and c3 must be positive")
        return replace(self, c1=c1, c3=c3, decay_coef=decay)


def log_jr_prior(beta, eta, prior: PriorSpec) -> np.ndarray:
    """Unnormalized log prior of each factor's (inverse range, nugget)."""
    beta = np.asarray(beta, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if prior.c1 is None or prior.c3 is None or prior.decay_coef is None:
        raise InvalidParameterError("resolve the prior against the column grid first")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = prior.c1 * np.log(prior.c2 * beta + eta) - prior.c3 * (prior.decay_coef * beta + eta)
    return np.where((beta > 0) & (eta > 0), out, -np.inf)


def log_beta0_prior(beta0, prior: PriorSpec) -> float:
    """Unnormalized inverse gamma log density summed over coordinates."""
    b = np.asarray(beta0, dtype=float)
    if np.any(b <= 0):
        return -np.inf
    return float(np.sum(-(prior.beta0_shape + 1.0) * np.log(b) - prior.beta0_rate / b))


# ---------------------------------------------------------------------------
# model container


@dataclass(eq=False)
class ModelState:
    """One state of the sampler.

    ``beta0`` are the row-kernel inverse ranges, ``beta`` and ``eta`` the
    per-factor inverse ranges and nuggets, ``sigma2`` the noise variance and
    ``Y`` the completed data matrix.
    """

    beta0: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    sigma2: float
    Y: np.ndarray
    B1: np.ndarray | None = None
    B2: np.ndarray | None = None

    def __post_init__(self):
        self.beta0 = np.atleast_1d(np.asarray(self.beta0, dtype=float)).copy()
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float)).copy()
        self.sigma2 = float(self.sigma2)
        for name in ("beta0", "beta", "eta"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise InvalidParameterError(f"{name} must be positive and finite")
        if not np.isfinite(self.sigma2) or self.sigma2 <= 0:
            raise InvalidParameterError("sigma2 must be positive and finite")

    @property
    def factor_variances(self) -> np.ndarray:
        """Per-factor signal variances ``sigma0^2 / eta_l``."""
        return self.sigma2 / self.eta

    def copy(self) -> "ModelState":
        return ModelState(
            self.beta0, self.beta, self.eta, self.sigma2, self.Y.copy(),
            None if self.B1 is None else self.B1.copy(),
            None if self.B2 is None else self.B2.copy(),
        )


class GolfModel:
    """Static structure: coordinates, kernels, number of factors, mean.

    Parameters
    ----------
    coords_s : array_like, shape (n1, p1)
        Row coordinates.
    grid : array_like, shape (n2,)
        Strictly increasing column coordinates.
    d : int, optional
        Number of factors (plain loadings).
    kron : tuple of int, optional
        ``(d1, d2)``; rows form a two-coordinate product grid and the
        loadings are Kronecker products.  Exclusive with ``d``.
    family_s, family_x : str
        Row-kernel and factor-kernel families.
    mean : MeanModel, optional
    prior : PriorSpec, optional
    """

    def __init__(self, coords_s, grid, d=None, *, kron=None, family_s="matern52",
                 family_x="matern52", mean=None, prior=None):
        s = np.asarray(coords_s, dtype=float)
        self.coords_s = s[:, None] if s.ndim == 1 else s
        self.grid = check_grid(grid)
        self.family_s = Family.parse(family_s)
        self.family_x = Family.parse(family_x)
        self.family_x.state_dim  # the factor kernel needs a state-space form
        self.n1 = self.coords_s.shape[0]
        self.n2 = self.grid.size
        self.p1 = self.coords_s.shape[1]
        if kron is not None:
            if d is not None and d != kron[0] * kron[1]:
                raise InvalidParameterError("d conflicts with the Kronecker dimensions")
            self.kron = (int(kron[0]), int(kron[1]))
            from .lattice import LatticeData

            axes = LatticeData(np.zeros((self.n1, 1)), np.ones((self.n1, 1), bool),
                               self.coords_s, [0.0], kron=self.kron).kron_axes()
            self.kron_axes = axes
            if not (1 <= self.kron[0] <= axes[0].size and 1 <= self.kron[1] <= axes[1].size):
                raise InvalidParameterError("Kronecker factor counts exceed block sizes")
            self.d = self.kron[0] * self.kron[1]
        else:
            self.kron = None
            if d is None:
                raise InvalidParameterError("the number of factors d is required")
            self.d = int(d)
            if not 1 <= self.d <= self.n1:
                raise InvalidParameterError(f"d must lie in 1..{self.n1}")
        self.mean = (mean or MeanModel()).validate(self.n1, self.n2)
        self.prior = (prior or PriorSpec()).resolve(self.grid)

    # -- building blocks ---------------------------------------------------

    def row_corr(self, beta0):
        """Row correlation matrix (or its two Kronecker blocks)."""
        beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
        if beta0.size != self.p1:
            raise InvalidParameterError(f"beta0 needs {self.p1} entries")
        if self.kron is None:
            return corr_matrix(KernelSpec(self.family_s, 1.0 / beta0), self.coords_s)
        a1, a2 = self.kron_axes
        return (
            corr_matrix(KernelSpec(self.family_s, 1.0 / beta0[0]), a1),
            corr_matrix(KernelSpec(self.family_s, 1.0 / beta0[1]), a2),
        )

    def loadings(self, beta0) -> Loadings:
        R = self.row_corr(beta0)
        if self.kron is None:
            return compute_loadings(R, self.d)
        return kronecker_loadings(R[0], self.kron[0], R[1], self.kron[1])

    def filters(self, beta, eta, strict=True) -> KalmanBatch:
        """Unit-noise Kalman filters, one per factor."""
        beta = np.asarray(beta, dtype=float)
        eta = np.asarray(eta, dtype=float)
        return KalmanBatch(self.family_x, 1.0 / beta, 1.0 / eta, 1.0, self.grid, strict=strict)

    def mean_matrix(self, state: ModelState) -> np.ndarray:
        return self.mean.assemble(state.B1, state.B2, (self.n1, self.n2))

    def factor_cov(self, l, state: ModelState) -> np.ndarray:
        """Dense covariance ``Sigma_l`` of factor ``l`` (oracle use)."""
        K = corr_matrix(KernelSpec(self.family_x, 1.0 / state.beta[l]), self.grid)
        return state.sigma2 / state.eta[l] * K


# ---------------------------------------------------------------------------
# likelihood


@dataclass(eq=False)
class LoglikParts:
    """Sufficient pieces of the marginal likelihood at unit noise scale.

    ``ytilde`` are the projected rows, ``quad`` and ``logdet`` the per-factor
    unit-scale quadratic forms and log-determinants, ``resid_ss`` the squared
    norm of the part of ``Y - M`` orthogonal to the loadings.
    """

    ytilde: np.ndarray
    quad: np.ndarray
    logdet: np.ndarray
    resid_ss: float
    n1: int
    n2: int

    def factor_logliks(self, sigma2) -> np.ndarray:
        n2 = self.n2
        return -0.5 * (n2 * (_LOG2PI + np.log(sigma2)) + self.logdet + self.quad / sigma2)

    def complement_loglik(self, sigma2) -> float:
        d = self.quad.size
        return float(-0.5 * self.resid_ss / sigma2
                     - 0.5 * (self.n1 - d) * self.n2 * (_LOG2PI + np.log(sigma2)))

    def total(self, sigma2) -> float:
        return float(self.factor_logliks(sigma2).sum()) + self.complement_loglik(sigma2)

    def sigma0_rate(self) -> float:
        return float(self.quad.sum() + self.resid_ss)


def loglik_parts(Yc, L: Loadings, kb: KalmanBatch) -> LoglikParts:
    """Project the centred data and run the per-factor filters."""
    Yc = np.asarray(Yc, dtype=float)
    if not np.all(np.isfinite(Yc)):
        raise PreconditionError("data matrix contains non-finite entries")
    yt = project(Yc, L)
    R = residual_project(Yc, L)
    return LoglikParts(yt, kb.quad(yt), kb.logdet.copy(), float(np.sum(R * R)),
                       Yc.shape[0], Yc.shape[1])


def marginal_loglik(model: GolfModel, state: ModelState, loadings: Loadings | None = None) -> float:
    """Log density of the completed data with the factors integrated out."""
    L = model.loadings(state.beta0) if loadings is None else loadings
    kb = model.filters(state.beta, state.eta)
    Yc = state.Y - model.mean_matrix(state)
    return loglik_parts(Yc, L, kb).total(state.sigma2)


def log_prior(model: GolfModel, state: ModelState) -> float:
    """Kernel-parameter log prior (the noise and mean priors are flat in log)."""
    return float(np.sum(log_jr_prior(state.beta, state.eta, model.prior))
                 + log_beta0_prior(state.beta0, model.prior))


# ---------------------------------------------------------------------------
# factor posteriors


def posterior_factor(model: GolfModel, state: ModelState, l: int, rng=None,
                     loadings: Loadings | None = None):
    """Posterior mean and (optionally) one draw of factor ``l``.

    Returns
    -------
    mean : ndarray, shape (n2,)
    draw : ndarray, shape (n2,) or None
        ``None`` when ``rng`` is not given.
    """
    if not 0 <= l < model.d:
        raise InvalidParameterError(f"factor index must lie in 0..{model.d - 1}")
    L = model.loadings(state.beta0) if loadings is None else loadings
    kb = model.filters(state.beta[l:l + 1], state.eta[l:l + 1])
    yt = project(state.Y - model.mean_matrix(state), L)[l:l + 1]
    mean = kb.smooth(yt)[0]
    if rng is None:
        return mean, None
    s = np.sqrt(state.sigma2)
    return mean, s * kb.sample(yt / s, rng)[0]


def sample_factors(kb: KalmanBatch, ytilde, sigma2, rng, size=None) -> np.ndarray:
    """Joint draw of all factors; independent across factors given parameters."""
    s = np.sqrt(sigma2)
    return s * kb.sample(np.asarray(ytilde) / s, rng, size=size)


# ---------------------------------------------------------------------------
# noise variance


def sigma0_rate(model: GolfModel, state: ModelState, loadings=None, kb=None) -> float:
    """Twice the rate of the inverse gamma conditional of ``sigma0^2``."""
    L = model.loadings(state.beta0) if loadings is None else loadings
    kb = model.filters(state.beta, state.eta) if kb is None else kb
    return loglik_parts(state.Y - model.mean_matrix(state), L, kb).sigma0_rate()


def sample_sigma0(model: GolfModel, state: ModelState, rng, rate2=None, **kw) -> float:
    """Gibbs draw of ``sigma0^2`` from ``InvGamma(n1 n2 / 2, S / 2)``.

    ``rate2`` is ``S``; it is computed when not supplied.
    """
    S = sigma0_rate(model, state, **kw) if rate2 is None else float(rate2)
    if not np.isfinite(S) or S < 1e-300:
        raise NumericalError(f"degenerate noise-variance rate {S!r}")
    shape = 0.5 * model.n1 * model.n2
    return float(0.5 * S / rng.gamma(shape))


# ---------------------------------------------------------------------------
# mean coefficients


def _unit_precisions(kb: KalmanBatch) -> np.ndarray:
    """Dense ``(K_l / eta_l + I)^{-1}`` for all factors, shape (d, n2, n2)."""
    n = kb.n
    W = kb.whiten(np.broadcast_to(np.eye(n), (kb.B, n, n)))
    return np.swapaxes(W, -1, -2) @ W


def _gaussian_draw(prec, rhs, rng):
    """Draw from ``N(prec^{-1} rhs, prec^{-1})`` via Cholesky."""
    try:
        c = scipy.linalg.cho_factor(prec, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("mean-coefficient precision is not positive definite") from exc
    mean = scipy.linalg.cho_solve(c, rhs)
    z = rng.standard_normal(rhs.shape)
    return mean + scipy.linalg.solve_triangular(c[0], z, lower=True, trans="T")


def _row_setup(model, state, L):
    H1 = model.mean.H1
    h = project(H1, L)  # (d, q1); row l is H1^T a_l
    Pc_gram = H1.T @ residual_project(H1, L)
    return H1, h, Pc_gram


def sample_B1(model: GolfModel, state: ModelState, rng, loadings=None, kb=None,
              Y=None) -> np.ndarray:
    """Exact draw of the row-trend coefficients from their marginal posterior.

    The factors are integrated out and the flat prior on the coefficients
    gives a Gaussian with precision
    ``sum_l (h_l h_l^T) (x) Sigma~_l^{-1} + (H1^T (I - A A^T) H1 / sigma0^2) (x) I``
    over the coefficient rows stacked, where ``h_l = H1^T a_l``.  Cost is
    ``O(d n2^2 + (q1 n2)^3)``.
    """
    if not model.mean.has_row:
        raise PreconditionError("model has no row trend")
    L = model.loadings(state.beta0) if loadings is None else loadings
    kb = model.filters(state.beta, state.eta) if kb is None else kb
    Y = state.Y if Y is None else Y
    H1, h, Pc_gram = _row_setup(model, state, L)
    q1, n2 = H1.shape[1], model.n2
    s2 = state.sigma2
    Sinv = _unit_precisions(kb) / s2
    y0 = project(Y, L)
    prec = np.einsum("la,lb,lij->aibj", h, h, Sinv).reshape(q1 * n2, q1 * n2)
    prec += np.kron(Pc_gram / s2, np.eye(n2))
    rhs = np.einsum("la,lij,lj->ai", h, Sinv, y0)
    rhs += H1.T @ residual_project(Y, L) / s2
    return _gaussian_draw(prec, rhs.ravel(), rng).reshape(q1, n2)


def sample_B1_additive(model: GolfModel, state: ModelState, rng, loadings=None,
                       kb=None) -> np.ndarray:
    """Cheap additive row-trend draw centred on least squares.

    ``B1 = B1_ols + G A^T V + sigma0 G (I - A A^T) Z0`` where
    ``G = (H1^T H1)^{-1} H1^T``, the rows of ``V`` are drawn with the factor
    covariances and ``Z0`` is standard normal.  This matches the exact
    posterior when every factor covariance equals ``sigma0^2 I`` but is
    otherwise only approximate; it runs in ``O(N d)``.
    """
    if not model.mean.has_row:
        raise PreconditionError("model has no row trend")
    L = model.loadings(state.beta0) if loadings is None else loadings
    kb = model.filters(state.beta, state.eta) if kb is None else kb
    H1 = model.mean.H1
    G = np.linalg.solve(H1.T @ H1, H1.T)
    s = np.sqrt(state.sigma2)
    V = s * kb.color(rng.standard_normal((model.d, model.n2)))
    Z0 = rng.standard_normal((model.n1, model.n2))
    return G @ (state.Y + unproject(V, L) + s * residual_project(Z0, L))


def sample_B2(model: GolfModel, state: ModelState, rng, loadings=None, kb=None,
              Y=None) -> np.ndarray:
    """Exact draw of the column-trend coefficients.

    In loading coordinates the coefficients decouple: ``B2 a_l`` is a
    generalized least squares fit of the projected row ``l`` with its own
    covariance, and the part orthogonal to the loadings is an ordinary
    least squares fit with variance ``sigma0^2``.  Pass ``Y`` to condition on
    an already removed row trend.
    """
    if not model.mean.has_col:
        raise PreconditionError("model has no column trend")
    L = model.loadings(state.beta0) if loadings is None else loadings
    kb = model.filters(state.beta, state.eta) if kb is None else kb
    Y = state.Y if Y is None else Y
    H2 = model.mean.H2
    q2 = H2.shape[1]
    s = np.sqrt(state.sigma2)
    d = model.d

    Hw = kb.whiten(np.broadcast_to(H2, (d,) + H2.shape))  # (d, n2, q2)
    yw = kb.whiten(project(Y, L))  # (d, n2)
    gram = np.swapaxes(Hw, -1, -2) @ Hw
    try:
        R = np.linalg.cholesky(gram)  # lower, gram = R R^T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("whitened column basis is rank deficient") from exc
    rhs = np.einsum("lnq,ln->lq", Hw, yw)
    chat = np.linalg.solve(gram, rhs[..., None])[..., 0]
    xi = rng.standard_normal((d, q2))
    # R^{-T} xi has covariance gram^{-1}
    noise = np.linalg.solve(np.swapaxes(R, -1, -2), xi[..., None])[..., 0]
    C_A = chat + s * noise  # (d, q2); row l is B2 a_l

    G2 = H2.T @ H2
    R2 = np.linalg.cholesky(G2)
    ols = np.linalg.solve(G2, H2.T @ residual_project(Y, L).T)  # (q2, n1)
    Z0 = rng.standard_normal((model.n1, q2))
    comp_noise = residual_project(Z0, L).T  # (q2, n1)
    comp_noise = s * scipy.linalg.solve_triangular(R2, comp_noise, lower=True, trans="T")
    return unproject(C_A, L).T + ols + comp_noise


def marginal_precisions(kb: KalmanBatch, H2, sigma2) -> np.ndarray:
    """Per-factor precisions with a column trend integrated out.

    ``S_l = T_l - T_l H2 (H2^T T_l H2)^{-1} H2^T T_l`` with
    ``T_l = Sigma~_l^{-1}``; shape (d, n2, n2).  ``S_l Sigma~_l S_l = S_l``.
    """
    T = _unit_precisions(kb) / sigma2
    H2 = np.asarray(H2, dtype=float)
    TH = T @ H2
    inner = np.swapaxes(TH, -1, -2) @ H2
    return T - TH @ np.linalg.solve(inner, np.swapaxes(TH, -1, -2))


def sample_B1_mixed(model: GolfModel, state: ModelState, rng, loadings=None, kb=None) -> np.ndarray:
    """Row coefficients of the mixed mean with the column coefficients integrated out.

    ``H1 B1 + (H2 B2)^T`` is unchanged by ``B1 -> B1 + C H2^T`` paired with
    ``B2 -> B2 - (H1 C)^T``, so the flat-prior posterior is improper along
    that direction.  The draw fixes the ``span(H2)`` component of each row of
    ``B1`` at its least squares value and samples the orthogonal part
    exactly.  Follow with :func:`sample_B2` on ``Y - H1 B1``.
    """
    if model.mean.variant is not MeanVariant.MIXED:
        raise PreconditionError("model mean is not mixed")
    L = model.loadings(state.beta0) if loadings is None else loadings
    kb = model.filters(state.beta, state.eta) if kb is None else kb
    H1, h, Pc_gram = _row_setup(model, state, L)
    H2 = model.mean.H2
    q1, n2 = H1.shape[1], model.n2
    s2 = state.sigma2
    U0 = scipy.linalg.null_space(H2.T)  # (n2, n2 - q2), orthonormal
    m = U0.shape[1]
    Sfull = marginal_precisions(kb, H2, s2)
    S = U0.T @ Sfull @ U0  # (d, m, m)
    Y = state.Y
    SU = Sfull @ project(Y, L)[..., None]  # (d, n2, 1)
    prec = np.einsum("la,lb,lij->aibj", h, h, S).reshape(q1 * m, q1 * m)
    prec += np.kron(Pc_gram / s2, np.eye(m))
    rhs = np.einsum("la,lj->aj", h, (U0.T @ SU)[..., 0])
    rhs += H1.T @ residual_project(Y, L) @ U0 / s2
    X = _gaussian_draw(prec, rhs.ravel(), rng).reshape(q1, m)
    gauge = np.linalg.solve(H1.T @ H1, H1.T @ Y @ H2) @ np.linalg.solve(H2.T @ H2, H2.T)
    return gauge + X @ U0.T


def sample_mean(model: GolfModel, state: ModelState, rng, loadings=None, kb=None,
                row_sampler: str = "exact"):
    """Draw the mean coefficients matching the model's mean variant.

    Returns ``(B1, B2)``; entries not used by the variant are ``None``.
    """
    v = model.mean.variant
    if v is MeanVariant.ZERO:
        return None, None
    L = model.loadings(state.beta0) if loadings is None else loadings
    kb = model.filters(state.beta, state.eta) if kb is None else kb
    if v is MeanVariant.ROW:
        if row_sampler == "additive":
            return sample_B1_additive(model, state, rng, L, kb), None
        return sample_B1(model, state, rng, L, kb), None
    if v is MeanVariant.COL:
        return None, sample_B2(model, state, rng, L, kb)
    B1 = sample_B1_mixed(model, state, rng, L, kb)
    B2 = sample_B2(model, state, rng, L, kb, Y=state.Y - model.mean.H1 @ B1)
    return B1, B2
