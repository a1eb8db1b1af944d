"""Linear-time Gaussian process algebra on sorted one-dimensional grids.

Exponential and Matérn-5/2 processes are Markov in a small augmented state
(the process and, for Matérn-5/2, its first two derivatives).  Writing the
process as a linear state-space model, the Kalman filter yields the exact
innovations (Cholesky) decomposition of ``Sigma + noise * I``, from which the
log-likelihood, log-determinant, whitening and coloring maps, the posterior
mean and exact posterior draws all follow in ``O(n)`` time.

Two layers are provided.  :class:`KalmanBatch` runs the recursions for a
batch of independent processes sharing one grid (one per latent factor) and
for several right-hand sides at once; the covariance recursion does not
depend on the data so it is computed once and reused.  The functions
``kf_loglik``, ``kf_whiten``, ... are thin single-process wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.special import gammainc

from .errors import InvalidParameterError, NumericalError, PreconditionError
from .kernels import Family

__all__ = [
    "StateSpaceRep",
    "FilterTrace",
    "KalmanBatch",
    "transition",
    "innovation_cov",
    "stationary_cov",
    "ssm_build",
    "kf_filter",
    "kf_loglik",
    "kf_logdet",
    "kf_whiten",
    "kf_color",
    "smoother_mean",
    "backward_sample",
    "check_grid",
]

_LOG2PI = np.log(2.0 * np.pi)


def check_grid(grid) -> np.ndarray:
    """Return ``grid`` as a float array, enforcing strict increase."""
    x = np.asarray(grid, dtype=float).ravel()
    if x.size == 0:
        raise PreconditionError("grid is empty")
    if not np.all(np.isfinite(x)):
        raise PreconditionError("grid contains non-finite values")
    if np.any(np.diff(x) <= 0):
        raise PreconditionError("grid must be strictly increasing (no ties)")
    return x


def _check_positive(name, value):
    v = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise InvalidParameterError(f"{name} must be positive and finite")
    return v


# ---------------------------------------------------------------------------
# closed-form discretization (unit marginal variance)


def _matern_nilpotent(lam):
    """``A + lam*I`` for the Matérn-5/2 companion matrix; cubes to zero."""
    lam = np.asarray(lam, dtype=float)
    N = np.zeros(lam.shape + (3, 3))
    N[..., 0, 0] = lam
    N[..., 0, 1] = 1.0
    N[..., 1, 1] = lam
    N[..., 1, 2] = 1.0
    N[..., 2, 0] = -lam**3
    N[..., 2, 1] = -3.0 * lam**2
    N[..., 2, 2] = -2.0 * lam
    return N


def transition(family, gamma, delta) -> np.ndarray:
    """State transition ``exp(A * delta)``.

    ``gamma`` and ``delta`` broadcast against each other; the result has
    their broadcast shape followed by ``(k, k)``.
    """
    family = Family.parse(family)
    gamma = np.asarray(gamma, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if family is Family.EXPONENTIAL:
        return np.exp(-delta / gamma)[..., None, None]
    lam = np.sqrt(5.0) / gamma
    lam, delta = np.broadcast_arrays(lam, delta)
    N = _matern_nilpotent(lam)
    N2 = N @ N
    dd = delta[..., None, None]
    G = np.eye(3) + dd * N + 0.5 * dd * dd * N2
    return np.exp(-lam * delta)[..., None, None] * G


def stationary_cov(family, gamma) -> np.ndarray:
    """Stationary state covariance for unit marginal variance."""
    family = Family.parse(family)
    gamma = np.asarray(gamma, dtype=float)
    if family is Family.EXPONENTIAL:
        return np.ones(gamma.shape + (1, 1))
    lam2 = 5.0 / gamma**2
    P = np.zeros(gamma.shape + (3, 3))
    P[..., 0, 0] = 1.0
    P[..., 1, 1] = lam2 / 3.0
    P[..., 0, 2] = P[..., 2, 0] = -lam2 / 3.0
    P[..., 2, 2] = lam2**2
    return P


def innovation_cov(family, gamma, delta) -> np.ndarray:
    """Process noise accumulated over a step of length ``delta``.

    Equal to ``Pinf - G Pinf G^T`` but evaluated from the integral
    representation so that it stays accurate (and PSD) for tiny steps,
    where the difference form cancels catastrophically.
    """
    family = Family.parse(family)
    gamma = np.asarray(gamma, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if family is Family.EXPONENTIAL:
        return (-np.expm1(-2.0 * delta / gamma))[..., None, None]
    lam = np.sqrt(5.0) / gamma
    lam, delta = np.broadcast_arrays(lam, delta)
    two_lam = 2.0 * lam
    # q * I_k with q = 16/3 lam^5 and I_k = int_0^delta s^k exp(-2 lam s) ds,
    # written without lam^5 to avoid overflow for very short ranges
    moments = [
        16.0 / 3.0 * factorial(k) / 2.0 ** (k + 1) * lam ** (4 - k) * gammainc(k + 1, two_lam * delta)
        for k in range(5)
    ]
    zero = np.zeros_like(lam)
    one = np.ones_like(lam)
    # exp(A s) e3 = exp(-lam s) * (c0 + s c1 + s^2 c2)
    c = [
        np.stack([zero, zero, one], axis=-1),
        np.stack([zero, one, -2.0 * lam], axis=-1),
        np.stack([0.5 * one, -0.5 * lam, 0.5 * lam**2], axis=-1),
    ]
    W = np.zeros(lam.shape + (3, 3))
    for a in range(3):
        for b in range(3):
            W += moments[a + b][..., None, None] * (c[a][..., :, None] * c[b][..., None, :])
    return 0.5 * (W + np.swapaxes(W, -1, -2))


def _discretize(family, gamma, grid):
    """Per-step ``G`` and ``W`` arrays, shape ``gamma.shape + (n, k, k)``.

    Step 0 carries ``G = I`` and ``W = Pinf`` so that every prediction has
    the uniform form ``P^- = G P G^T + W`` starting from ``P = 0``.
    """
    gamma = np.asarray(gamma, dtype=float)[..., None]
    delta = np.diff(grid)
    k = Family.parse(family).state_dim
    n = grid.size
    G = np.empty(gamma.shape[:-1] + (n, k, k))
    W = np.empty_like(G)
    G[..., 0, :, :] = np.eye(k)
    W[..., 0, :, :] = stationary_cov(family, gamma[..., 0])
    if n > 1:
        G[..., 1:, :, :] = transition(family, gamma, delta)
        W[..., 1:, :, :] = innovation_cov(family, gamma, delta)
    return G, W


# ---------------------------------------------------------------------------
# single-process representation


@dataclass(frozen=True, eq=False)
class StateSpaceRep:
    """Discretized state-space form of one process on one grid.

    ``G[j]`` and ``W[j]`` map the state at ``grid[j-1]`` to ``grid[j]``; the
    entries at ``j = 0`` hold the identity and the stationary covariance.
    """

    family: Family
    gamma: float
    variance: float
    grid: np.ndarray
    G: np.ndarray
    W: np.ndarray

    @property
    def n(self) -> int:
        return self.grid.size

    @property
    def state_dim(self) -> int:
        return self.G.shape[-1]

    @property
    def stationary(self) -> np.ndarray:
        return self.W[0]

    @property
    def F(self) -> np.ndarray:
        F = np.zeros(self.state_dim)
        F[0] = 1.0
        return F

    def implied_cov(self) -> np.ndarray:
        """Dense covariance of the process on the grid, by propagation."""
        n, k = self.n, self.state_dim
        # cross-covariance Cov(state_i, state_j) = Phi(i->j) P_inf for i <= j
        C = np.empty((n, n))
        P0 = self.stationary
        for i in range(n):
            X = P0
            C[i, i] = X[0, 0]
            for j in range(i + 1, n):
                X = self.G[j] @ X
                C[j, i] = C[i, j] = X[0, 0]
        return C


def ssm_build(family, gamma, variance, grid) -> StateSpaceRep:
    """Discretize a Matérn-family process on a sorted grid.

    Parameters
    ----------
    family : Family or str
        ``"exponential"`` or ``"matern52"``.
    gamma : float
        Range parameter.
    variance : float
        Marginal (signal) variance.
    grid : array_like
        Strictly increasing input locations.
    """
    family = Family.parse(family)
    family.state_dim  # rejects the Gaussian family
    gamma = float(_check_positive("range", gamma))
    variance = float(_check_positive("variance", variance))
    x = check_grid(grid)
    G, W = _discretize(family, gamma, x)
    return StateSpaceRep(family, gamma, variance, x, G, variance * W)


# ---------------------------------------------------------------------------
# batched Kalman machinery


@dataclass(eq=False)
class FilterTrace:
    """Data-free part of the forward pass.

    Arrays have leading batch axis ``B`` and step axis ``n``.  ``Q`` are the
    innovation variances and ``K`` the gains; ``Pm`` / ``Pf`` are the
    predicted and filtered state covariances.
    """

    G: np.ndarray
    Pm: np.ndarray
    Pf: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    _J: np.ndarray | None = field(default=None, repr=False)
    _S: np.ndarray | None = field(default=None, repr=False)

    @property
    def logdet(self) -> np.ndarray:
        return np.log(self.Q).sum(axis=-1)


def kf_filter(G, W, noise, strict=True) -> FilterTrace:
    """Run the covariance recursion for a batch of processes.

    Parameters
    ----------
    G, W : ndarray, shape (B, n, k, k)
        Per-step transitions and process-noise covariances (step 0 holds
        the identity and the stationary covariance).
    noise : float or ndarray, shape (B,)
        Observation noise variances.
    """
    B, n, k, _ = G.shape
    r = np.broadcast_to(np.asarray(noise, dtype=float), (B,))
    Pm = np.empty((B, n, k, k))
    Pf = np.empty((B, n, k, k))
    Q = np.empty((B, n))
    K = np.empty((B, n, k))
    GT = np.swapaxes(G, -1, -2)
    P = np.zeros((B, k, k))
    for j in range(n):
        Pp = G[:, j] @ P @ GT[:, j] + W[:, j]
        Pp = 0.5 * (Pp + np.swapaxes(Pp, -1, -2))
        Pm[:, j] = Pp
        col = Pp[:, :, 0]
        q = col[:, 0] + r
        Q[:, j] = q
        kg = col / q[:, None]
        K[:, j] = kg
        # Joseph form (I - k e1^T) Pp (I - k e1^T)^T + r k k^T
        IK = np.broadcast_to(np.eye(k), (B, k, k)).copy()
        IK[:, :, 0] -= kg
        P = IK @ Pp @ np.swapaxes(IK, -1, -2) + r[:, None, None] * kg[:, :, None] * kg[:, None, :]
        P = 0.5 * (P + np.swapaxes(P, -1, -2))
        Pf[:, j] = P
    if strict and (not np.all(Q > 0) or not np.all(np.isfinite(Q))):
        raise NumericalError("non-positive innovation variance in Kalman filter")
    return FilterTrace(G, Pm, Pf, Q, K)


def _as_batch(y, B, n):
    """Coerce ``y`` to shape (B, n, r); return it and a reshaper."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 2 and y.shape == (B, n):
        return y[:, :, None], lambda a: a[:, :, 0]
    if y.ndim == 3 and y.shape[:2] == (B, n):
        return y, lambda a: a
    raise PreconditionError(f"expected data of shape ({B}, {n}) or ({B}, {n}, r), got {y.shape}")


class KalmanBatch:
    """Kalman recursions for ``B`` independent processes on a shared grid.

    Each process ``b`` has covariance ``signal[b] * K_b + noise[b] * I`` where
    ``K_b`` is the correlation of the chosen family with range ``gamma[b]``.

    Parameters
    ----------
    family : Family or str
    gamma, signal, noise : array_like, shape (B,)
    grid : array_like, shape (n,)
    strict : bool
        See :func:`kf_filter`.
    """

    def __init__(self, family, gamma, signal, noise, grid, strict=True):
        self.family = Family.parse(family)
        self.family.state_dim
        self.grid = check_grid(grid)
        self.gamma = _check_positive("range", np.atleast_1d(gamma))
        B = self.gamma.size
        self.signal = np.broadcast_to(_check_positive("signal variance", signal), (B,)).copy()
        self.noise = np.broadcast_to(_check_positive("noise variance", noise), (B,)).copy()
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            G, W = _discretize(self.family, self.gamma, self.grid)
            W *= self.signal[:, None, None, None]
            self.W = W
            self.trace = kf_filter(G, W, self.noise, strict=strict)

    @classmethod
    def from_reps(cls, reps, noise):
        """Batch of pre-built :class:`StateSpaceRep` (same family and grid)."""
        self = cls.__new__(cls)
        self.family = reps[0].family
        self.grid = reps[0].grid
        self.gamma = np.array([r.gamma for r in reps])
        self.signal = np.array([r.variance for r in reps])
        B = len(reps)
        self.noise = np.broadcast_to(_check_positive("noise variance", noise), (B,)).copy()
        G = np.stack([r.G for r in reps])
        self.W = np.stack([r.W for r in reps])
        self.trace = kf_filter(G, self.W, self.noise)
        return self

    @property
    def valid(self) -> np.ndarray:
        """Per-process flag: all innovation variances positive and finite."""
        Q = self.trace.Q
        return np.all(np.isfinite(Q) & (Q > 0), axis=-1)

    def merge(self, other: "KalmanBatch", take) -> "KalmanBatch":
        """New batch using ``other``'s process ``b`` wherever ``take[b]``."""
        take = np.asarray(take, dtype=bool)
        out = KalmanBatch.__new__(KalmanBatch)
        out.family, out.grid = self.family, self.grid

        def pick(a, b):
            t = take.reshape((-1,) + (1,) * (a.ndim - 1))
            return np.where(t, b, a)

        out.gamma = pick(self.gamma, other.gamma)
        out.signal = pick(self.signal, other.signal)
        out.noise = pick(self.noise, other.noise)
        out.W = pick(self.W, other.W)
        s, o = self.trace, other.trace
        out.trace = FilterTrace(pick(s.G, o.G), pick(s.Pm, o.Pm), pick(s.Pf, o.Pf),
                                pick(s.Q, o.Q), pick(s.K, o.K))
        return out

    @property
    def B(self) -> int:
        return self.gamma.size

    @property
    def n(self) -> int:
        return self.grid.size

    @property
    def logdet(self) -> np.ndarray:
        """``log|signal*K + noise*I|`` per process."""
        return self.trace.logdet

    # -- forward passes ----------------------------------------------------

    def innovations(self, y) -> np.ndarray:
        """Innovations ``y_j - f_j`` (shape of ``y``)."""
        tr = self.trace
        Y, back = _as_batch(y, self.B, self.n)
        G, K = tr.G, tr.K
        out = np.empty_like(Y)
        m = np.zeros((self.B, G.shape[-1], Y.shape[2]))
        for j in range(self.n):
            m = G[:, j] @ m
            e = Y[:, j] - m[:, 0]
            out[:, j] = e
            m = m + K[:, j, :, None] * e[:, None, :]
        return back(out)

    def whiten(self, y) -> np.ndarray:
        """``L^{-1} y`` with ``L L^T = signal*K + noise*I`` (innovations form)."""
        Y, back = _as_batch(y, self.B, self.n)
        e = self.innovations(Y)
        return back(e / np.sqrt(self.trace.Q)[:, :, None])

    def color(self, v) -> np.ndarray:
        """``L v``; the exact inverse of :meth:`whiten`.

        The one-step predictions are formed from the output being built, so
        ``y_j = f_j + sqrt(Q_j) v_j`` with ``f_j`` depending on ``y_{<j}``.
        """
        tr = self.trace
        V, back = _as_batch(v, self.B, self.n)
        G, K = tr.G, tr.K
        sq = np.sqrt(tr.Q)
        out = np.empty_like(V)
        m = np.zeros((self.B, G.shape[-1], V.shape[2]))
        for j in range(self.n):
            m = G[:, j] @ m
            e = sq[:, j, None] * V[:, j]
            out[:, j] = m[:, 0] + e
            m = m + K[:, j, :, None] * e[:, None, :]
        return back(out)

    def quad(self, y) -> np.ndarray:
        """``y^T (signal*K + noise*I)^{-1} y`` per process (and column)."""
        w = self.whiten(y)
        return (w * w).sum(axis=1)

    def loglik(self, y) -> np.ndarray:
        """Gaussian log density per process (and column)."""
        quad = self.quad(y)
        ld = self.logdet if quad.ndim == 1 else self.logdet[:, None]
        return -0.5 * (self.n * _LOG2PI + ld + quad)

    def _forward_states(self, Y):
        tr = self.trace
        G, K = tr.G, tr.K
        B, n, r = Y.shape
        k = G.shape[-1]
        mp = np.empty((B, n, k, r))
        mf = np.empty((B, n, k, r))
        m = np.zeros((B, k, r))
        for j in range(n):
            m = G[:, j] @ m
            mp[:, j] = m
            e = Y[:, j] - m[:, 0]
            m = m + K[:, j, :, None] * e[:, None, :]
            mf[:, j] = m
        return mp, mf

    # -- backward passes ---------------------------------------------------

    def _gains(self):
        tr = self.trace
        if tr._J is None:
            if self.n > 1:
                # J_j = Pf_j G_{j+1}^T Pm_{j+1}^{-1}, with Pm symmetric
                rhs = tr.G[:, 1:] @ tr.Pf[:, :-1]
                try:
                    tr._J = np.swapaxes(np.linalg.solve(tr.Pm[:, 1:], rhs), -1, -2)
                except np.linalg.LinAlgError as exc:
                    raise NumericalError("singular predicted covariance in smoother") from exc
            else:
                k = tr.G.shape[-1]
                tr._J = np.zeros((self.B, 0, k, k))
        return tr._J

    def _cond_sqrt(self):
        """Square roots of the backward conditional covariances."""
        tr = self.trace
        if tr._S is None:
            J = self._gains()
            C = tr.Pf.copy()
            if self.n > 1:
                # Joseph form (I - J G) Pf (I - J G)^T + J W J^T stays PSD
                k = C.shape[-1]
                IJG = np.eye(k) - J @ tr.G[:, 1:]
                JT = np.swapaxes(J, -1, -2)
                C[:, :-1] = IJG @ tr.Pf[:, :-1] @ np.swapaxes(IJG, -1, -2) + J @ self.W[:, 1:] @ JT
            C = 0.5 * (C + np.swapaxes(C, -1, -2))
            w, V = np.linalg.eigh(C)
            scale = np.maximum(np.abs(w).max(axis=-1, keepdims=True), 1e-300)
            if np.any(w < -1e-8 * scale):
                raise NumericalError("backward conditional covariance is not PSD")
            tr._S = V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]
        return tr._S

    def smooth(self, y) -> np.ndarray:
        """Posterior mean of the noise-free process given ``y``."""
        Y, back = _as_batch(y, self.B, self.n)
        mp, mf = self._forward_states(Y)
        J = self._gains()
        ms = mf[:, -1]
        out = np.empty_like(Y)
        out[:, -1] = ms[:, 0]
        for j in range(self.n - 2, -1, -1):
            ms = mf[:, j] + J[:, j] @ (ms - mp[:, j + 1])
            out[:, j] = ms[:, 0]
        return back(out)

    def sample(self, y, rng, size=None) -> np.ndarray:
        """Exact posterior draws of the noise-free process given ``y``.

        ``y`` has shape (B, n); with ``size=None`` one draw per process is
        returned with shape (B, n), otherwise (B, n, size).  ``y`` of shape
        (B, n, r) yields one draw per column.
        """
        y = np.asarray(y, dtype=float)
        if size is not None:
            if y.ndim != 2:
                raise PreconditionError("size requires y of shape (B, n)")
            Y = np.repeat(y[:, :, None], size, axis=2)
            back = lambda a: a  # noqa: E731
        else:
            Y, back = _as_batch(y, self.B, self.n)
        mp, mf = self._forward_states(Y)
        J = self._gains()
        S = self._cond_sqrt()
        B, n, r = Y.shape
        k = S.shape[-1]
        xi = rng.standard_normal((B, n, k, r))
        out = np.empty_like(Y)
        x = mf[:, -1] + S[:, -1] @ xi[:, -1]
        out[:, -1] = x[:, 0]
        for j in range(n - 2, -1, -1):
            x = mf[:, j] + J[:, j] @ (x - mp[:, j + 1]) + S[:, j] @ xi[:, j]
            out[:, j] = x[:, 0]
        return back(out)


# ---------------------------------------------------------------------------
# single-process convenience wrappers


def _batch(ssm: StateSpaceRep, noise) -> KalmanBatch:
    noise = float(_check_positive("noise variance", noise))
    return KalmanBatch.from_reps([ssm], noise)


def _vec(ssm, y):
    y = np.asarray(y, dtype=float)
    if y.shape[0] != ssm.n:
        raise PreconditionError(f"data length {y.shape[0]} does not match grid size {ssm.n}")
    if not np.all(np.isfinite(y)):
        raise PreconditionError("data contain non-finite values")
    return y[None]


def kf_loglik(ssm: StateSpaceRep, y, noise) -> float:
    """``log N(y; 0, Sigma + noise*I)`` in ``O(n)``."""
    return float(_batch(ssm, noise).loglik(_vec(ssm, y))[0])


def kf_logdet(ssm: StateSpaceRep, noise) -> float:
    """``log|Sigma + noise*I|`` as the sum of log innovation variances."""
    return float(_batch(ssm, noise).logdet[0])


def kf_whiten(ssm: StateSpaceRep, v, noise) -> np.ndarray:
    """``L^{-1} v`` for the Cholesky factor ``L`` of ``Sigma + noise*I``.

    ``v`` may be a vector of length n or an (n, r) matrix.
    """
    return _batch(ssm, noise).whiten(_vec(ssm, v))[0]


def kf_color(ssm: StateSpaceRep, v, noise) -> np.ndarray:
    """``L v``; inverse of :func:`kf_whiten`."""
    return _batch(ssm, noise).color(_vec(ssm, v))[0]


def smoother_mean(ssm: StateSpaceRep, y, noise) -> np.ndarray:
    """Posterior mean ``Sigma (Sigma + noise*I)^{-1} y``."""
    return _batch(ssm, noise).smooth(_vec(ssm, y))[0]


def backward_sample(ssm: StateSpaceRep, y, noise, rng, size=None) -> np.ndarray:
    """Draw from the posterior of the process given noisy ``y``.

    Parameters
    ----------
    ssm : StateSpaceRep
    y : ndarray, shape (n,)
    noise : float
        Observation noise variance.
    rng : numpy.random.Generator
    size : int, optional
        Number of independent draws; the result then has shape (n, size).
    """
    y = _vec(ssm, y)
    if y.ndim != 2:
        raise PreconditionError("backward_sample expects a single data vector")
    return _batch(ssm, noise).sample(y, rng, size=size)[0]
