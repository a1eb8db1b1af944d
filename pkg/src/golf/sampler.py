"""Markov chain Monte Carlo for the latent factor model on incomplete lattices.

Each iteration runs, in order:

1. a random-walk Metropolis update of every factor's ``(log beta_l, log eta_l)``
   (all factors proposed at once, accepted independently);
2. a Metropolis update of the row-kernel ``log beta0``, recomputing the
   loadings for the proposal;
3. a Gibbs draw of the noise variance;
4. a draw of the mean coefficients, if the mean is not zero;
5. exact draws of the factors and of the unobserved cells.

Iteration ``t`` draws all of its random numbers from its own generator
seeded by ``SeedSequence(seed, spawn_key=(t,))``, so a chain can be stopped
and resumed without changing any draw.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GolfError, InvalidParameterError, NumericalError, PreconditionError
from .lattice import LatticeData
from .loadings import choose_d, unproject
from .model import (
    GolfModel,
    MeanModel,
    ModelState,
    PriorSpec,
    log_beta0_prior,
    log_jr_prior,
    loglik_parts,
    sample_factors,
    sample_mean,
    sample_sigma0,
)
from .sketch import P2Quantile, RunningMean

__all__ = [
    "McmcConfig",
    "Chain",
    "Prediction",
    "metropolis_block",
    "impute_missing",
    "initial_state",
    "build_model",
    "mcmc_run",
    "predict",
    "iteration_rng",
]

BLOCKS = ("factors", "beta0", "sigma0", "mean", "impute")


@dataclass
class McmcConfig:
    """Sampler settings.

    Proposal standard deviations left as ``None`` default to ``40 / n1``
    (row kernel) and ``40 / n2`` (factor kernels).  ``d`` left as ``None``
    is chosen at the initial row range as the smallest number of factors
    whose eigenvalues explain ``d_threshold`` of the trace.
    """

    iterations: int = 1000
    burn_in: float = 0.2
    thin: int = 1
    d: int | None = None
    d_threshold: float = 0.99
    kron: tuple | None = None
    family_s: str = "matern52"
    family_x: str = "matern52"
    seed: int = 0
    prop_sd_beta0: float | None = None
    prop_sd_factor: float | None = None
    shared_kernel: bool = False
    init_log_beta0: float = 3.0
    init_log_beta: float = 0.0
    init_log_eta: float = 0.0
    init_noise: bool = False
    sample_kernel: bool = True
    sample_noise: bool = True
    row_sampler: str = "exact"
    level: float = 0.95
    memory_budget: int = 50_000_000
    store_factors: bool = False
    stop_after: int | None = None

    def __post_init__(self):
        if int(self.iterations) < 0:
            raise InvalidParameterError("iterations must be nonnegative")
        self.iterations = int(self.iterations)
        if not 0 <= self.burn_in < 1:
            raise InvalidParameterError("burn-in fraction must lie in [0, 1)")
        if int(self.thin) < 1:
            raise InvalidParameterError("thinning must be at least 1")
        for name in ("prop_sd_beta0", "prop_sd_factor"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidParameterError(f"{name} must be positive")
        if not 0 < self.level < 1:
            raise InvalidParameterError("interval level must lie in (0, 1)")
        if self.row_sampler not in ("exact", "additive"):
            raise InvalidParameterError("row_sampler must be 'exact' or 'additive'")
        if self.kron is not None:
            self.kron = tuple(int(k) for k in self.kron)

    @property
    def burn_iters(self) -> int:
        return int(np.floor(self.burn_in * self.iterations))


def iteration_rng(seed: int, t: int) -> np.random.Generator:
    """Generator for iteration ``t`` of a chain with master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(t),)))


def metropolis_block(log_params, log_target, proposal_sd, rng, current=None):
    """One Gaussian random-walk Metropolis step on log-scale parameters.

    Parameters
    ----------
    log_params : ndarray
        Current point.
    log_target : callable
        Log target density as a function of the log parameters, including
        any log-Jacobian terms.
    proposal_sd : float or ndarray
    rng : numpy.random.Generator
    current : float, optional
        Cached ``log_target(log_params)``.

    Returns
    -------
    new_params, accepted, new_log_target
    """
    x = np.asarray(log_params, dtype=float)
    cur = log_target(x) if current is None else current
    prop = x + proposal_sd * rng.standard_normal(x.shape)
    new = log_target(prop)
    delta = new - cur
    accept = bool(np.log(rng.random()) < delta) if not np.isnan(delta) else False
    if accept:
        return prop, True, new
    return x, False, cur


# ---------------------------------------------------------------------------
# chain containers


@dataclass(eq=False)
class Chain:
    """Traces of one run; row 0 of every trace is the initial state."""

    config: McmcConfig
    model: GolfModel
    data: LatticeData
    beta0: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    sigma2: np.ndarray
    B: np.ndarray | None
    accepted: dict
    proposed: dict
    timing: dict
    state: ModelState
    completed: int
    imputed: np.ndarray | None = None
    sketch_lo: P2Quantile | None = None
    sketch_hi: P2Quantile | None = None
    sketch_mean: RunningMean | None = None
    latent: RunningMean | None = None
    factors: list = field(default_factory=list)

    @property
    def missing_cells(self):
        return np.nonzero(~self.data.mask)

    def acceptance_rates(self) -> dict:
        out = {}
        for k, a in self.accepted.items():
            p = self.proposed.get(k, 0)
            out[k] = np.asarray(a, dtype=float) / p if p else np.full(np.shape(a), np.nan)
        return out


@dataclass(eq=False)
class Prediction:
    """Posterior predictive summaries at every cell.

    Observed cells carry their observation as mean and as both bounds.
    ``lo`` and ``hi`` are ``None`` when too few draws are available.
    """

    mean: np.ndarray
    lo: np.ndarray | None
    hi: np.ndarray | None
    latent_mean: np.ndarray | None
    n_draws: int
    level: float


# ---------------------------------------------------------------------------
# setup


def build_model(config: McmcConfig, data: LatticeData, mean: MeanModel | None = None,
                prior: PriorSpec | None = None) -> GolfModel:
    """Model for ``data``, fixing the number of factors from ``config``."""
    kron = config.kron if config.kron is not None else data.kron
    beta0 = np.full(data.coords_s.shape[1], np.exp(config.init_log_beta0))
    if kron is None and config.d is None:
        tmp = GolfModel(data.coords_s, data.coords_x, 1, family_s=config.family_s,
                        family_x=config.family_x, mean=mean, prior=prior)
        d = choose_d(tmp.row_corr(beta0), config.d_threshold)
    else:
        d = config.d
    return GolfModel(data.coords_s, data.coords_x, d if kron is None else None, kron=kron,
                     family_s=config.family_s, family_x=config.family_x, mean=mean, prior=prior)


def initial_state(config: McmcConfig, model: GolfModel, data: LatticeData, rng=None) -> ModelState:
    """Starting point: row means in the missing cells, fixed log parameters.

    The noise variance starts at ``S / (n1 n2)``, the mean of the squared
    whitened residuals at the initial kernel parameters, and mean
    coefficients start at their least squares fits.
    """
    Y = data.values.copy()
    miss = ~data.mask
    if miss.any():
        fill = np.broadcast_to(data.row_means()[:, None], Y.shape)
        Y[miss] = fill[miss]
        if config.init_noise:
            rng = np.random.default_rng(config.seed) if rng is None else rng
            sd = np.nanstd(data.values) if data.n_observed > 1 else 1.0
            Y[miss] += 0.1 * sd * rng.standard_normal(int(miss.sum()))
    d = model.d
    beta0 = np.full(model.p1, np.exp(config.init_log_beta0))
    beta = np.full(d, np.exp(config.init_log_beta))
    eta = np.full(d, np.exp(config.init_log_eta))
    B1 = B2 = None
    mean = model.mean
    if mean.has_row and mean.has_col:
        # least squares in the redundant mixed design via pseudo-inverse
        H1, H2 = mean.H1, mean.H2
        B1 = np.linalg.lstsq(H1, Y, rcond=None)[0]
        B2 = np.linalg.lstsq(H2, (Y - H1 @ B1).T, rcond=None)[0]
    elif mean.has_row:
        B1 = np.linalg.lstsq(mean.H1, Y, rcond=None)[0]
    elif mean.has_col:
        B2 = np.linalg.lstsq(mean.H2, Y.T, rcond=None)[0]
    state = ModelState(beta0, beta, eta, 1.0, Y, B1, B2)
    parts = loglik_parts(Y - model.mean_matrix(state), model.loadings(beta0),
                         model.filters(beta, eta))
    state.sigma2 = max(parts.sigma0_rate() / (model.n1 * model.n2), 1e-12)
    return state


def impute_missing(Y, mask, mean, loadings, Z, sigma2, rng) -> np.ndarray:
    """Regenerate unobserved cells as ``M + A Z + noise``; observed cells untouched."""
    out = np.array(Y, dtype=float, copy=True)
    miss = ~np.asarray(mask, dtype=bool)
    if not miss.any():
        return out
    fresh = mean + unproject(Z, loadings)
    out[miss] = fresh[miss] + np.sqrt(sigma2) * rng.standard_normal(int(miss.sum()))
    return out


# ---------------------------------------------------------------------------
# the sampler


class _Runner:
    """Mutable per-run state with cached projections and filters."""

    def __init__(self, config, model, data, state):
        self.cfg = config
        self.model = model
        self.data = data
        self.state = state
        self.miss = ~data.mask
        self.sd0 = config.prop_sd_beta0 or 40.0 / model.n1
        self.sdf = config.prop_sd_factor or 40.0 / model.n2
        self.L = model.loadings(state.beta0)
        self.kb = model.filters(state.beta, state.eta)
        self.M = model.mean_matrix(state)
        self.refresh()

    def refresh(self):
        self.parts = loglik_parts(self.state.Y - self.M, self.L, self.kb)

    # step 1
    def step_factors(self, rng, acc):
        st, m = self.state, self.model
        lb, le = np.log(st.beta), np.log(st.eta)
        xb = rng.standard_normal(lb.shape)
        xe = rng.standard_normal(le.shape)
        u = rng.random(lb.shape)
        pb, pe = lb + self.sdf * xb, le + self.sdf * xe
        s2 = st.sigma2
        cur = self.parts.factor_logliks(s2) + log_jr_prior(st.beta, st.eta, m.prior) + lb + le
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            kb_new = m.filters(np.exp(pb), np.exp(pe), strict=False)
            quad_new = kb_new.quad(self.parts.ytilde)
            ll_new = -0.5 * (m.n2 * (np.log(2 * np.pi) + np.log(s2)) + kb_new.logdet + quad_new / s2)
            new = ll_new + log_jr_prior(np.exp(pb), np.exp(pe), m.prior) + pb + pe
            # proposals that break the filter numerically count as rejections
            take = (np.log(u) < (new - cur)) & np.isfinite(new) & kb_new.valid
        if take.any():
            st.beta = np.where(take, np.exp(pb), st.beta)
            st.eta = np.where(take, np.exp(pe), st.eta)
            self.kb = self.kb.merge(kb_new, take)
            self.parts.quad = np.where(take, quad_new, self.parts.quad)
            self.parts.logdet = np.where(take, kb_new.logdet, self.parts.logdet)
        acc["factors"] += take

    # step 2
    def step_beta0(self, rng, acc):
        st, m = self.state, self.model
        lb0 = np.log(st.beta0)
        x = rng.standard_normal(lb0.shape)
        u = rng.random()
        prop = lb0 + self.sd0 * x
        cur = self.parts.total(st.sigma2) + log_beta0_prior(st.beta0, m.prior) + lb0.sum()
        try:
            L_new = m.loadings(np.exp(prop))
        except GolfError:
            return  # numerically unusable proposal: reject
        parts_new = loglik_parts(st.Y - self.M, L_new, self.kb)
        new = parts_new.total(st.sigma2) + log_beta0_prior(np.exp(prop), m.prior) + prop.sum()
        if np.isfinite(new) and np.log(u) < new - cur:
            st.beta0 = np.exp(prop)
            self.L, self.parts = L_new, parts_new
            acc["beta0"] += 1

    # shared-kernel variant of steps 1-2
    def step_shared(self, rng, acc):
        st, m = self.state, self.model
        lb0, lb, le = np.log(st.beta0), np.log(st.beta[0]), np.log(st.eta[0])
        x0 = rng.standard_normal(lb0.shape)
        xb, xe = rng.standard_normal(2)
        u = rng.random()
        p0, pb, pe = lb0 + self.sd0 * x0, lb + self.sdf * xb, le + self.sdf * xe

        def target(parts, b0, b, e):
            return (parts.total(st.sigma2) + log_beta0_prior(b0, m.prior)
                    + float(log_jr_prior(b, e, m.prior)) + np.log(b0).sum() + np.log(b) + np.log(e))

        cur = target(self.parts, st.beta0, st.beta[0], st.eta[0])
        try:
            L_new = m.loadings(np.exp(p0))
        except GolfError:
            return
        d = m.d
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            kb_new = m.filters(np.full(d, np.exp(pb)), np.full(d, np.exp(pe)), strict=False)
            if not kb_new.valid.all():
                return
            parts_new = loglik_parts(st.Y - self.M, L_new, kb_new)
            new = target(parts_new, np.exp(p0), np.exp(pb), np.exp(pe))
        if np.isfinite(new) and np.log(u) < new - cur:
            st.beta0 = np.exp(p0)
            st.beta = np.full(d, np.exp(pb))
            st.eta = np.full(d, np.exp(pe))
            self.L, self.kb, self.parts = L_new, kb_new, parts_new
            acc["shared"] += 1

    def step_sigma0(self, rng):
        self.state.sigma2 = sample_sigma0(self.model, self.state, rng, rate2=self.parts.sigma0_rate())

    def step_mean(self, rng):
        st, m = self.state, self.model
        if m.mean.variant.value == "zero":
            return
        st.B1, st.B2 = sample_mean(m, st, rng, self.L, self.kb, row_sampler=self.cfg.row_sampler)
        self.M = m.mean_matrix(st)
        self.refresh()

    def step_impute(self, rng):
        st = self.state
        Z = sample_factors(self.kb, self.parts.ytilde, st.sigma2, rng)
        if self.miss.any():
            st.Y = impute_missing(st.Y, self.data.mask, self.M, self.L, Z, st.sigma2, rng)
            self.refresh()
        return Z

    def check(self, t, block):
        st = self.state
        bad = [name for name, v in (("beta0", st.beta0), ("beta", st.beta), ("eta", st.eta),
                                     ("sigma2", st.sigma2), ("Y", st.Y)) if not np.all(np.isfinite(v))]
        if bad:
            raise NumericalError(f"non-finite {', '.join(bad)} after block {block!r} at iteration {t}")


def _new_chain(config, model, data, state):
    T = config.iterations
    d, p1 = model.d, model.p1
    nb = 0
    if model.mean.has_row:
        nb += state.B1.size
    if model.mean.has_col:
        nb += state.B2.size
    ch = Chain(
        config=config, model=model, data=data,
        beta0=np.full((T + 1, p1), np.nan), beta=np.full((T + 1, d), np.nan),
        eta=np.full((T + 1, d), np.nan), sigma2=np.full(T + 1, np.nan),
        B=np.full((T + 1, nb), np.nan) if nb else None,
        accepted={"factors": np.zeros(d, dtype=int), "beta0": 0, "shared": 0},
        proposed={"factors": 0, "beta0": 0, "shared": 0},
        timing={b: 0.0 for b in BLOCKS}, state=state, completed=0,
    )
    _record(ch, 0, state)
    n_u = data.n_missing
    if n_u and T * n_u > config.memory_budget:
        alpha = 0.5 * (1.0 - config.level)
        ch.sketch_lo = P2Quantile(alpha, n_u)
        ch.sketch_hi = P2Quantile(1.0 - alpha, n_u)
        ch.sketch_mean = RunningMean(n_u)
    elif n_u:
        ch.imputed = np.full((T, n_u), np.nan)
    ch.latent = RunningMean((model.n1, model.n2))
    return ch


def _record(ch, t, st):
    ch.beta0[t] = st.beta0
    ch.beta[t] = st.beta
    ch.eta[t] = st.eta
    ch.sigma2[t] = st.sigma2
    if ch.B is not None:
        parts = []
        if st.B1 is not None:
            parts.append(st.B1.ravel())
        if st.B2 is not None:
            parts.append(st.B2.ravel())
        ch.B[t] = np.concatenate(parts)


def mcmc_run(config: McmcConfig, data: LatticeData, model: GolfModel | None = None,
             state: ModelState | None = None, resume: Chain | None = None,
             mean: MeanModel | None = None, prior: PriorSpec | None = None,
             progress=None) -> Chain:
    """Run (or continue) the sampler.

    Parameters
    ----------
    config : McmcConfig
    data : LatticeData
    model, state : optional
        Override the model built from ``config`` or the default start.
    resume : Chain, optional
        A partially completed chain to continue; the result is identical
        to an uninterrupted run.
    progress : callable, optional
        Called as ``progress(t, chain)`` after every iteration.
    """
    if resume is not None:
        ch = resume
        if ch.config.iterations != config.iterations or ch.config.seed != config.seed:
            raise PreconditionError("resume needs the same iteration target and seed")
        ch.config = config
        model, state = ch.model, ch.state
    else:
        model = build_model(config, data, mean, prior) if model is None else model
        state = initial_state(config, model, data) if state is None else state
        if state.Y.shape != data.shape:
            raise PreconditionError("state and data shapes differ")
        ch = _new_chain(config, model, data, state)
    run = _Runner(config, model, data, state)
    obs = data.mask
    observed = data.values[obs]
    T = config.iterations
    stop = T if config.stop_after is None else min(T, int(config.stop_after))
    burn = config.burn_iters
    acc = ch.accepted
    miss = ~obs
    for t in range(ch.completed + 1, stop + 1):
        rng = iteration_rng(config.seed, t)
        tick = time.perf_counter()
        if config.sample_kernel:
            if config.shared_kernel:
                run.step_shared(rng, acc)
                ch.proposed["shared"] += 1
            else:
                run.step_factors(rng, acc)
                ch.proposed["factors"] += 1
                tock = time.perf_counter()
                ch.timing["factors"] += tock - tick
                tick = tock
                run.step_beta0(rng, acc)
                ch.proposed["beta0"] += 1
        tock = time.perf_counter()
        ch.timing["beta0"] += tock - tick
        run.check(t, "kernel")
        if config.sample_noise:
            run.step_sigma0(rng)
        tick = time.perf_counter()
        ch.timing["sigma0"] += tick - tock
        run.step_mean(rng)
        tock = time.perf_counter()
        ch.timing["mean"] += tock - tick
        run.check(t, "mean")
        Z = run.step_impute(rng)
        tick = time.perf_counter()
        ch.timing["impute"] += tick - tock
        run.check(t, "impute")
        st = run.state
        if not np.array_equal(st.Y[obs], observed):
            raise NumericalError(f"observed cells changed at iteration {t}")
        _record(ch, t, st)
        if ch.imputed is not None:
            ch.imputed[t - 1] = st.Y[miss]
        if t > burn:
            if ch.sketch_lo is not None:
                y = st.Y[miss]
                ch.sketch_lo.update(y)
                ch.sketch_hi.update(y)
                ch.sketch_mean.update(y)
            ch.latent.update(run.M + unproject(Z, run.L))
        if config.store_factors and (t % config.thin == 0):
            ch.factors.append(Z.copy())
        ch.completed = t
        ch.state = st
        if progress is not None:
            progress(t, ch)
    return ch


# ---------------------------------------------------------------------------
# prediction


def predict(chain: Chain, level: float | None = None, min_draws: int = 40) -> Prediction:
    """Posterior predictive mean and equal-tailed intervals at every cell.

    Intervals are quantiles of imputed draws of the noisy observations.
    With fewer than ``min_draws`` post-burn-in draws the intervals are not
    computed (``lo`` and ``hi`` are ``None``) but the mean is.
    """
    cfg = chain.config
    level = cfg.level if level is None else float(level)
    data = chain.data
    miss = ~data.mask
    burn = cfg.burn_iters
    T = chain.completed
    if T <= burn:
        raise PreconditionError("the chain has no post-burn-in draws")
    mean = np.where(data.mask, data.values, np.nan)
    lo = hi = None
    n_draws = T - burn
    if not miss.any():
        lo, hi = mean.copy(), mean.copy()
    elif chain.imputed is not None:
        draws = chain.imputed[burn:T][:: cfg.thin]
        n_draws = draws.shape[0]
        mean[miss] = draws.mean(axis=0)
        if n_draws >= min_draws:
            a = 0.5 * (1.0 - level)
            q = np.quantile(draws, [a, 1.0 - a], axis=0)
            lo, hi = mean.copy(), mean.copy()
            # rounding in the mean can step one ulp outside a zero-width interval
            lo[miss] = np.minimum(q[0], mean[miss])
            hi[miss] = np.maximum(q[1], mean[miss])
    else:
        if abs(level - cfg.level) > 1e-12:
            raise PreconditionError("sketch-mode chains only provide the configured level")
        mean[miss] = chain.sketch_mean.mean
        if n_draws >= min_draws:
            lo, hi = mean.copy(), mean.copy()
            lo[miss] = np.minimum(chain.sketch_lo.value, mean[miss])
            hi[miss] = np.maximum(chain.sketch_hi.value, mean[miss])
    latent = chain.latent.mean if chain.latent is not None and chain.latent.count else None
    return Prediction(mean, lo, hi, latent, int(n_draws), level)
