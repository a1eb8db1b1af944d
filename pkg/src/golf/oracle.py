"""Dense reference computations, data simulation and evaluation metrics.

Everything here is written from textbook formulas on explicitly assembled
covariance matrices, with no use of the state-space or projection shortcuts
of the fast path, so that the two can be compared.  Costs are cubic in the
number of cells; use only on small problems.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidParameterError, NumericalError
from .kernels import Family, KernelSpec, corr_matrix
from .lattice import LatticeData
from .model import log_beta0_prior, log_jr_prior

__all__ = [
    "cholesky_jitter",
    "dense_gp_loglik",
    "dense_gp_posterior",
    "dense_joint_cov",
    "dense_marginal_loglik",
    "dense_projected_loglik",
    "dense_factor_posterior",
    "dense_B1_posterior",
    "dense_B2_posterior",
    "dense_mixed_mean_posterior",
    "dense_sigma0_logdensity",
    "MaskPattern",
    "SimSpec",
    "Simulation",
    "simulate",
    "Metrics",
    "compute_metrics",
    "DISK_RADIUS_20PCT",
    "DenseChain",
    "dense_mcmc",
]


def cholesky_jitter(C, start=1e-10, stop=1e-6):
    """Lower Cholesky factor, adding diagonal jitter on failure.

    Jitter starts at ``start`` and grows tenfold up to ``stop``.
    """
    C = np.asarray(C, dtype=float)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    jitter = start
    while jitter <= stop * (1 + 1e-12):
        try:
            return np.linalg.cholesky(C + jitter * np.eye(C.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("covariance matrix is not positive definite even with jitter")


def dense_gp_loglik(cov, y) -> float:
    """``log N(y; 0, cov)`` by dense Cholesky."""
    y = np.asarray(y, dtype=float).ravel()
    L = cholesky_jitter(cov)
    w = scipy.linalg.solve_triangular(L, y, lower=True)
    return float(-0.5 * (y.size * np.log(2 * np.pi) + 2 * np.log(np.diag(L)).sum() + w @ w))


def dense_gp_posterior(cov_zz, cov_zy, cov_yy, y):
    """Gaussian conditioning of ``z`` on ``y`` (both zero mean)."""
    cov_zz = np.asarray(cov_zz, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        return np.zeros(cov_zz.shape[0]), cov_zz.copy()
    cov_zy = np.asarray(cov_zy, dtype=float).reshape(cov_zz.shape[0], y.size)
    L = cholesky_jitter(cov_yy)
    V = scipy.linalg.solve_triangular(L, cov_zy.T, lower=True)
    w = scipy.linalg.solve_triangular(L, y, lower=True)
    return V.T @ w, cov_zz - V.T @ V


# ---------------------------------------------------------------------------
# dense versions of the model quantities


def _factor_corrs(model, state):
    return [corr_matrix(KernelSpec(model.family_x, 1.0 / b), model.grid) for b in state.beta]


def dense_joint_cov(model, state, A) -> np.ndarray:
    """Covariance of ``vec(Y)`` (row-major) with the factors integrated out."""
    n1, n2 = model.n1, model.n2
    C = state.sigma2 * np.eye(n1 * n2)
    for l, K in enumerate(_factor_corrs(model, state)):
        a = A[:, l]
        C += (state.sigma2 / state.eta[l]) * np.kron(np.outer(a, a), K)
    return C


def dense_marginal_loglik(model, state, A) -> float:
    """Joint Gaussian log density of ``Y - M`` under the dense covariance."""
    Yc = state.Y - model.mean_matrix(state)
    return dense_gp_loglik(dense_joint_cov(model, state, A), Yc.ravel())


def dense_projected_loglik(model, state, A) -> float:
    """Sum of projected-row densities using an explicit complement basis."""
    n1, n2 = model.n1, model.n2
    Yc = state.Y - model.mean_matrix(state)
    Ac = scipy.linalg.null_space(A.T)
    out = 0.0
    for l, K in enumerate(_factor_corrs(model, state)):
        cov = state.sigma2 * (K / state.eta[l] + np.eye(n2))
        out += dense_gp_loglik(cov, Yc.T @ A[:, l])
    for c in range(Ac.shape[1]):
        out += dense_gp_loglik(state.sigma2 * np.eye(n2), Yc.T @ Ac[:, c])
    return out


def dense_factor_posterior(model, state, A):
    """Joint posterior of all factors given ``Y`` by dense conditioning.

    Returns the mean (d x n2) and covariance of the stacked factors
    ``(Z_1, ..., Z_d)``, shape (d n2, d n2).
    """
    n1, n2, d = model.n1, model.n2, A.shape[1]
    Ks = _factor_corrs(model, state)
    Szz = scipy.linalg.block_diag(*[(state.sigma2 / state.eta[l]) * Ks[l] for l in range(d)])
    # Cov(vec Y, Z_l) = a_l (x) Sigma_l
    Szy = np.hstack([np.kron(A[:, l][:, None], Szz[l * n2:(l + 1) * n2, l * n2:(l + 1) * n2]) for l in range(d)]).T
    Syy = dense_joint_cov(model, state, A)
    Yc = state.Y - model.mean_matrix(state)
    mean, cov = dense_gp_posterior(Szz, Szy, Syy, Yc.ravel())
    return mean.reshape(d, n2), cov


def _gls(X, C, y):
    Ci_X = np.linalg.solve(C, X)
    prec = X.T @ Ci_X
    cov = np.linalg.pinv(prec) if np.linalg.matrix_rank(prec) < prec.shape[0] else np.linalg.inv(prec)
    return cov @ (Ci_X.T @ y), cov


def dense_B1_posterior(model, state, A):
    """Flat-prior posterior of the row coefficients (rows of B1 stacked)."""
    n2 = model.n2
    X = np.kron(model.mean.H1, np.eye(n2))
    C = dense_joint_cov(model, state, A)
    return _gls(X, C, state.Y.ravel())


def dense_B2_posterior(model, state, A, Y=None):
    """Flat-prior posterior of the column coefficients (rows of B2 stacked)."""
    n1, n2 = model.n1, model.n2
    H2 = model.mean.H2
    q2 = H2.shape[1]
    Y = state.Y if Y is None else Y
    # vec(Y)[i n2 + j] += sum_k H2[j, k] B2[k, i]
    X = np.zeros((n1 * n2, q2 * n1))
    for i in range(n1):
        for k in range(q2):
            X[i * n2:(i + 1) * n2, k * n1 + i] = H2[:, k]
    C = dense_joint_cov(model, state, A)
    return _gls(X, C, Y.ravel())


def dense_mixed_mean_posterior(model, state, A):
    """Posterior of the identifiable mixed mean ``H1 B1 + (H2 B2)^T``.

    With flat priors the mean matrix has a Gaussian posterior on the column
    space of the combined design; returns its mean (n1 x n2) and covariance
    of the row-major vectorization.
    """
    n1, n2 = model.n1, model.n2
    H1, H2 = model.mean.H1, model.mean.H2
    q2 = H2.shape[1]
    X1 = np.kron(H1, np.eye(n2))
    X2 = np.zeros((n1 * n2, q2 * n1))
    for i in range(n1):
        for k in range(q2):
            X2[i * n2:(i + 1) * n2, k * n1 + i] = H2[:, k]
    X = np.hstack([X1, X2])
    # orthonormal basis of the identifiable directions
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    U = U[:, s > 1e-10 * s[0]]
    C = dense_joint_cov(model, state, A)
    theta, cov = _gls(U, C, state.Y.ravel())
    return (U @ theta).reshape(n1, n2), U @ cov @ U.T


def dense_sigma0_logdensity(model, state, A, grid):
    """Unnormalized log conditional of ``sigma0^2`` on a grid of values.

    Evaluates the dense joint log density times the ``1/sigma0^2`` prior,
    holding the nuggets (signal-to-noise ratios) fixed.
    """
    out = []
    for s2 in np.atleast_1d(grid):
        st = state.copy()
        st.sigma2 = float(s2)
        out.append(dense_marginal_loglik(model, st, A) - np.log(s2))
    return np.array(out)


# ---------------------------------------------------------------------------
# reference sampler on the observed cells only


@dataclass(eq=False)
class DenseChain:
    """Traces of :func:`dense_mcmc`; row 0 holds the initial state."""

    beta0: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    sigma2: np.ndarray
    imputed: np.ndarray
    accepted: dict
    iterations: int
    burn_in: float

    def predictive(self, level=0.95):
        """Mean and equal-tailed interval of the post-burn-in imputed draws."""
        burn = int(np.floor(self.burn_in * self.iterations))
        draws = self.imputed[burn:]
        a = 0.5 * (1.0 - level)
        lo, hi = np.quantile(draws, [a, 1.0 - a], axis=0)
        return draws.mean(axis=0), lo, hi


class _DenseTarget:
    """Observed-cell covariance at unit noise, kept per factor for cheap updates."""

    def __init__(self, model, mask, y_obs):
        self.model = model
        self.io, self.jo = np.nonzero(mask)
        self.y = y_obs
        self.n_obs = y_obs.size

    def loadings(self, beta0):
        R = corr_matrix(KernelSpec(self.model.family_s, 1.0 / np.asarray(beta0)), self.model.coords_s)
        if not np.all(np.isfinite(R)):
            raise NumericalError("non-finite row correlation")
        w, V = np.linalg.eigh(R)
        return V[:, np.argsort(w)[::-1][: self.model.d]]

    def term(self, a, beta, eta):
        K = corr_matrix(KernelSpec(self.model.family_x, 1.0 / beta), self.model.grid)
        ao = a[self.io]
        return np.outer(ao, ao) * K[np.ix_(self.jo, self.jo)] / eta

    def terms(self, A, beta, eta):
        return np.stack([self.term(A[:, l], beta[l], eta[l]) for l in range(A.shape[1])])

    def evaluate(self, C):
        """Log determinant and quadratic form of the unit covariance ``C``."""
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            return np.nan, np.nan
        w = scipy.linalg.solve_triangular(L, self.y, lower=True)
        return 2.0 * np.log(np.diag(L)).sum(), float(w @ w)

    def loglik(self, logdet, quad, sigma2):
        return -0.5 * (self.n_obs * (np.log(2 * np.pi) + np.log(sigma2)) + logdet + quad / sigma2)


def dense_mcmc(model, data, state, iterations, seed, prop_sd_beta0=None,
               prop_sd_factor=None, burn_in=0.2) -> DenseChain:
    """Metropolis-within-Gibbs on the marginal density of the observed cells.

    The reference sampler for the lattice sampler: the factors and the
    missing cells are integrated out analytically, so each kernel-parameter
    update evaluates a dense Gaussian density over all observed cells.
    Factors are updated one at a time, then the row range, then the noise
    variance by its inverse gamma conditional.  After each iteration the
    missing cells are drawn from their exact conditional given the observed
    ones.  Only the zero-mean model with plain loadings is supported.

    Priors and proposal scales are the lattice sampler's.
    """
    if model.mean.has_row or model.mean.has_col or model.kron is not None:
        raise InvalidParameterError("dense sampler supports the zero-mean, plain-loading model only")
    n1, n2, d = model.n1, model.n2, model.d
    mask = data.mask
    miss = ~mask
    tgt = _DenseTarget(model, mask, data.values[mask])
    sd0 = prop_sd_beta0 or 40.0 / n1
    sdf = prop_sd_factor or 40.0 / n2
    prior = model.prior
    beta0 = np.array(state.beta0, dtype=float)
    beta = np.array(state.beta, dtype=float)
    eta = np.array(state.eta, dtype=float)
    s2 = float(state.sigma2)
    A = tgt.loadings(beta0)
    T_all = tgt.terms(A, beta, eta)
    C = T_all.sum(axis=0) + np.eye(tgt.n_obs)
    logdet, quad = tgt.evaluate(C)
    if not np.isfinite(logdet):
        raise NumericalError("initial observed covariance is not positive definite")

    T = int(iterations)
    out = DenseChain(np.empty((T + 1, beta0.size)), np.empty((T + 1, d)), np.empty((T + 1, d)),
                     np.empty(T + 1), np.empty((T, int(miss.sum()))),
                     {"factors": np.zeros(d, dtype=int), "beta0": 0}, T, burn_in)
    out.beta0[0], out.beta[0], out.eta[0], out.sigma2[0] = beta0, beta, eta, s2
    iu, ju = np.nonzero(miss)
    cell_o = tgt.io * n2 + tgt.jo
    cell_u = iu * n2 + ju
    x = model.grid
    for t in range(1, T + 1):
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(t,)))
        ll = tgt.loglik(logdet, quad, s2)
        for l in range(d):
            lb, le = np.log(beta[l]), np.log(eta[l])
            pb, pe = lb + sdf * rng.standard_normal(), le + sdf * rng.standard_normal()
            u = rng.random()
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                T_new = tgt.term(A[:, l], np.exp(pb), np.exp(pe))
                if not np.all(np.isfinite(T_new)):
                    continue
                C_new = C - T_all[l] + T_new
                ld_new, q_new = tgt.evaluate(C_new)
                ll_new = tgt.loglik(ld_new, q_new, s2)
            cur = ll + float(log_jr_prior(beta[l], eta[l], prior)) + lb + le
            new = ll_new + float(log_jr_prior(np.exp(pb), np.exp(pe), prior)) + pb + pe
            if np.isfinite(new) and np.log(u) < new - cur:
                beta[l], eta[l] = np.exp(pb), np.exp(pe)
                C, T_all[l], logdet, quad, ll = C_new, T_new, ld_new, q_new, ll_new
                out.accepted["factors"][l] += 1
        lb0 = np.log(beta0)
        p0 = lb0 + sd0 * rng.standard_normal(lb0.shape)
        u = rng.random()
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                A_new = tgt.loadings(np.exp(p0))
                T_new = tgt.terms(A_new, beta, eta)
                C_new = T_new.sum(axis=0) + np.eye(tgt.n_obs)
                ld_new, q_new = tgt.evaluate(C_new)
                ll_new = tgt.loglik(ld_new, q_new, s2)
            cur = ll + log_beta0_prior(beta0, prior) + lb0.sum()
            new = ll_new + log_beta0_prior(np.exp(p0), prior) + p0.sum()
            if np.isfinite(new) and np.log(u) < new - cur:
                beta0, A, T_all, C, logdet, quad = np.exp(p0), A_new, T_new, C_new, ld_new, q_new
                out.accepted["beta0"] += 1
        except (NumericalError, InvalidParameterError, np.linalg.LinAlgError):
            pass
        # noise variance: the unit covariance does not depend on it
        s2 = 0.5 * quad / rng.gamma(0.5 * tgt.n_obs)
        # missing cells given observed ones, from the full covariance
        if cell_u.size:
            Ks = np.stack([corr_matrix(KernelSpec(model.family_x, 1.0 / b), x) for b in beta])
            outer = np.einsum("al,bl->lab", A * (s2 / eta), A).reshape(d, -1)
            full = (outer.T @ Ks.reshape(d, -1)).reshape(n1, n1, n2, n2)
            full = full.transpose(0, 2, 1, 3).reshape(n1 * n2, n1 * n2)
            full += s2 * np.eye(n1 * n2)
            m, V = dense_gp_posterior(full[np.ix_(cell_u, cell_u)], full[np.ix_(cell_u, cell_o)],
                                      full[np.ix_(cell_o, cell_o)], tgt.y)
            out.imputed[t - 1] = m + cholesky_jitter(V) @ rng.standard_normal(m.size)
        out.beta0[t], out.beta[t], out.eta[t], out.sigma2[t] = beta0, beta, eta, s2
    return out


# ---------------------------------------------------------------------------
# simulation


class MaskPattern(str, enum.Enum):
    RANDOM = "random"
    DISK = "disk"
    NONE = "none"


#: disk radius (in half-span units) masking about 20% of a 100 x 100 lattice
DISK_RADIUS_20PCT = 0.5046


@dataclass
class SimSpec:
    """Simulation design on a regular lattice over the unit square.

    Rows carry ``p1`` coordinates: ``p1 = 1`` puts ``n1`` equispaced points on
    ``[0, 1]``; ``p1 = 2`` uses the product grid ``kron_shape`` in row-major
    order.  Columns are ``n2`` equispaced points on ``[0, 1]``.

    ``gamma_x`` may be a scalar (shared by all factors), a sequence of
    length ``d_true``, or ``"inverse_index"`` for ``gamma_l = 1/l``.
    """

    n1: int = 25
    n2: int = 25
    family_s: str = "matern52"
    family_x: str = "matern52"
    gamma_s: float | tuple = 1.0
    gamma_x: object = 1.0 / 3.0
    d_true: int | None = None
    factor_var: str | float = "eigen"
    noise_sd: float = 0.1
    pattern: MaskPattern = MaskPattern.RANDOM
    missing_fraction: float = 0.5
    disk_radius: float = DISK_RADIUS_20PCT
    kron_shape: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        self.pattern = MaskPattern(self.pattern)
        if self.d_true is None:
            self.d_true = self.n1
        if not 1 <= self.d_true <= self.n1:
            raise InvalidParameterError("d_true must lie in 1..n1")
        if self.pattern is MaskPattern.RANDOM and not 0 < self.missing_fraction < 1:
            raise InvalidParameterError("missing fraction must lie in (0, 1)")
        if self.noise_sd < 0:
            raise InvalidParameterError("noise sd must be nonnegative")

    def row_coords(self):
        if self.kron_shape is None:
            return np.linspace(0.0, 1.0, self.n1)[:, None]
        m1, m2 = self.kron_shape
        if m1 * m2 != self.n1:
            raise InvalidParameterError("kron_shape does not multiply to n1")
        a1, a2 = np.linspace(0, 1, m1), np.linspace(0, 1, m2)
        return np.column_stack([np.repeat(a1, m2), np.tile(a2, m1)])

    def factor_ranges(self):
        if isinstance(self.gamma_x, str):
            if self.gamma_x != "inverse_index":
                raise InvalidParameterError(f"unknown range rule {self.gamma_x!r}")
            return 1.0 / np.arange(1, self.d_true + 1)
        g = np.atleast_1d(np.asarray(self.gamma_x, dtype=float))
        return np.broadcast_to(g, (self.d_true,)).copy()


@dataclass(eq=False)
class Simulation:
    data: LatticeData
    truth: np.ndarray
    latent: np.ndarray
    loadings: np.ndarray
    factors: np.ndarray


def _mask(spec: SimSpec, rng):
    n1, n2 = spec.n1, spec.n2
    if spec.pattern is MaskPattern.NONE:
        return np.ones((n1, n2), dtype=bool)
    if spec.pattern is MaskPattern.RANDOM:
        n_miss = int(round(spec.missing_fraction * n1 * n2))
        flat = np.ones(n1 * n2, dtype=bool)
        flat[rng.choice(n1 * n2, size=n_miss, replace=False)] = False
        return flat.reshape(n1, n2)
    # centred disk in index space, normalized by half the span of each axis
    i = (np.arange(n1) - (n1 - 1) / 2) / max((n1 - 1) / 2, 1)
    j = (np.arange(n2) - (n2 - 1) / 2) / max((n2 - 1) / 2, 1)
    r = np.hypot(i[:, None], j[None, :])
    return r > spec.disk_radius


def simulate(spec: SimSpec, rng=None) -> Simulation:
    """Draw a data set ``Y = A Z + noise`` and apply the missing pattern.

    The loadings are the top ``d_true`` eigenvectors of the row correlation
    matrix.  With ``factor_var="eigen"`` factor ``l`` has variance equal to
    the ``l``-th eigenvalue (so a shared factor kernel reproduces a
    separable covariance); a number sets a common factor variance.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    s = spec.row_coords()
    x = np.linspace(0.0, 1.0, spec.n2)
    gs = np.atleast_1d(np.asarray(spec.gamma_s, dtype=float))
    gs = np.broadcast_to(gs, (s.shape[1],))
    R = corr_matrix(KernelSpec(spec.family_s, gs), s)
    w, V = np.linalg.eigh(R)
    order = np.argsort(w)[::-1][: spec.d_true]
    lam, A = np.clip(w[order], 0.0, None), V[:, order]
    if spec.factor_var == "eigen":
        var = lam
    else:
        var = np.full(spec.d_true, float(spec.factor_var))
    Z = np.empty((spec.d_true, spec.n2))
    for l, g in enumerate(spec.factor_ranges()):
        K = corr_matrix(KernelSpec(spec.family_x, g), x)
        Z[l] = np.sqrt(var[l]) * (cholesky_jitter(K) @ rng.standard_normal(spec.n2))
    latent = A @ Z
    Y = latent + spec.noise_sd * rng.standard_normal(latent.shape)
    mask = _mask(spec, rng)
    kron = None if spec.kron_shape is None else tuple(int(k) for k in spec.kron_shape)
    data = LatticeData(np.where(mask, Y, np.nan), mask, s, x, kron=kron)
    return Simulation(data, Y, latent, A, Z)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    rmse: float
    coverage: float
    length: float


def compute_metrics(mean, lo, hi, truth, held_out) -> Metrics:
    """Root mean squared error, interval coverage and mean interval length.

    All three are averaged over cells where ``held_out`` is True.  A value
    on an interval endpoint counts as not covered (open intervals).
    """
    held = np.asarray(held_out, dtype=bool)
    if not held.any():
        raise InvalidParameterError("no held-out cells")
    t = np.asarray(truth, dtype=float)[held]
    m = np.asarray(mean, dtype=float)[held]
    lo_, hi_ = np.asarray(lo, dtype=float)[held], np.asarray(hi, dtype=float)[held]
    rmse = float(np.sqrt(np.mean((m - t) ** 2)))
    cov = float(np.mean((lo_ < t) & (t < hi_)))
    length = float(np.mean(hi_ - lo_))
    return Metrics(rmse, cov, length)
