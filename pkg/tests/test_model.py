import numpy as np
import pytest
import scipy.stats

from golf.errors import InvalidParameterError, PreconditionError
from golf.kernels import KernelSpec, corr_matrix
from golf.loadings import project
from golf.model import (
    GolfModel,
    MeanModel,
    ModelState,
    PriorSpec,
    log_beta0_prior,
    log_jr_prior,
    marginal_loglik,
    marginal_precisions,
    posterior_factor,
    sample_B1,
    sample_B1_additive,
    sample_B1_mixed,
    sample_B2,
    sample_factors,
    sample_mean,
    sample_sigma0,
    sigma0_rate,
)
from golf.oracle import (
    dense_B1_posterior,
    dense_B2_posterior,
    dense_factor_posterior,
    dense_gp_loglik,
    dense_marginal_loglik,
    dense_mixed_mean_posterior,
    dense_sigma0_logdensity,
)

# frozen from the dense oracles (recomputed in tests/test_oracle.py)
SEPARABLE_LOGLIK = -25.271424998923234
NONSEP_LOGLIK = -30.488662298917504
NONSEP_FACTOR_MEAN = np.array([
    [0.07168011326403173, 0.22845313125775132, 0.43685485860098755,
     0.6553802185730468, 0.8265498562397977, 0.8887392552442506],
    [-0.8782489193364742, -1.0832733455253392, -1.1226396653175426,
     -1.1226396653175426, -1.0832733455253394, -0.8782489193364742],
])


def separable_instance():
    s = np.linspace(0, 1, 6)
    x = np.linspace(0, 1, 7)
    Y = np.outer(np.cos(2 * s), np.sin(3 * x)) + 0.05 * np.add.outer(s, x**2)
    model = GolfModel(s, x, 6)
    lam = model.loadings(2.0).values
    # shared factor kernel with variance 1.3 * lambda_l, noise 0.2
    state = ModelState(2.0, np.full(6, 1 / 0.3), 0.2 / (1.3 * lam), 0.2, Y)
    return model, state


def nonsep_instance(mean=None):
    model = GolfModel(np.linspace(0, 1, 5), np.linspace(0, 1, 6), 2,
                      family_s="exponential", family_x="matern52", mean=mean)
    state = ModelState(2.0, [1.5, 4.0], [0.3, 2.0], 0.4, np.arange(30.0).reshape(5, 6) / 10 - 1.2)
    return model, state


def test_separable_frozen():
    model, state = separable_instance()
    assert marginal_loglik(model, state) == pytest.approx(SEPARABLE_LOGLIK, abs=1e-6)


def test_nonseparable_frozen():
    model, state = nonsep_instance()
    assert marginal_loglik(model, state) == pytest.approx(NONSEP_LOGLIK, abs=1e-6)
    mean = np.array([posterior_factor(model, state, l)[0] for l in range(2)])
    np.testing.assert_allclose(mean, NONSEP_FACTOR_MEAN, atol=1e-8)


def test_data_equal_to_mean():
    model, state = nonsep_instance()
    state.Y = np.zeros((5, 6))
    want = 0.0
    for l in range(2):
        C = state.sigma2 * (corr_matrix(KernelSpec("matern52", 1 / state.beta[l]), model.grid) / state.eta[l]
                            + np.eye(6))
        want += -0.5 * np.linalg.slogdet(2 * np.pi * C)[1]
    want -= 0.5 * 3 * 6 * np.log(2 * np.pi * state.sigma2)
    assert marginal_loglik(model, state) == pytest.approx(want, abs=1e-10)


@pytest.mark.parametrize("variant", ["row", "col", "mixed"])
@pytest.mark.parametrize("d", [1, 4])
def test_loglik_with_mean_matches_dense(variant, d):
    rng = np.random.default_rng(0)
    n1, n2 = 4, 7
    H1 = np.column_stack([np.ones(n1), np.linspace(0, 1, n1)])
    H2 = np.ones((n2, 1))
    mean = MeanModel(variant, H1=H1 if variant != "col" else None, H2=H2 if variant != "row" else None)
    model = GolfModel(np.linspace(0, 1, n1), np.sort(rng.uniform(0, 1, n2)), d, mean=mean)
    state = ModelState(1.3, rng.uniform(1, 4, d), rng.uniform(0.1, 1, d), 0.3, rng.standard_normal((n1, n2)),
                       B1=rng.standard_normal((2, n2)), B2=rng.standard_normal((1, n1)))
    A = model.loadings(state.beta0).matrix()
    assert marginal_loglik(model, state) == pytest.approx(dense_marginal_loglik(model, state, A), abs=1e-6)


def test_loglik_rejects_nonfinite():
    model, state = nonsep_instance()
    state.Y[0, 0] = np.nan
    with pytest.raises(PreconditionError):
        marginal_loglik(model, state)


def test_state_validation():
    with pytest.raises(InvalidParameterError):
        ModelState(1.0, [1.0], [0.0], 1.0, np.zeros((2, 2)))
    with pytest.raises(InvalidParameterError):
        ModelState(1.0, [1.0], [1.0], np.inf, np.zeros((2, 2)))
    with pytest.raises(InvalidParameterError):
        GolfModel([0, 1], [0, 1, 2], 3)
    with pytest.raises(PreconditionError):
        MeanModel("row")


def test_factor_variances():
    _, state = nonsep_instance()
    np.testing.assert_allclose(state.factor_variances, [0.4 / 0.3, 0.2])


def test_posterior_factor_zero_projection():
    model, state = nonsep_instance()
    state.Y = np.zeros((5, 6))
    np.testing.assert_array_equal(posterior_factor(model, state, 1)[0], 0)
    with pytest.raises(InvalidParameterError):
        posterior_factor(model, state, 2)


def test_posterior_factor_dense_n2_10():
    rng = np.random.default_rng(1)
    model = GolfModel(np.linspace(0, 1, 4), np.linspace(0, 2, 10), 3, family_x="exponential")
    state = ModelState(0.8, [0.5, 1.0, 3.0], [0.2, 0.5, 1.5], 0.25, rng.standard_normal((4, 10)))
    mean, _ = dense_factor_posterior(model, state, model.loadings(0.8).matrix())
    for l in range(3):
        np.testing.assert_allclose(posterior_factor(model, state, l)[0], mean[l], atol=1e-8)


def test_factor_draws_uncorrelated():
    model, state = nonsep_instance()
    rng = np.random.default_rng(2)
    L = model.loadings(state.beta0)
    kb = model.filters(state.beta, state.eta)
    Z = sample_factors(kb, project(state.Y, L), state.sigma2, rng, size=10_000)
    assert Z.shape == (2, 6, 10_000)
    C = np.corrcoef(Z[0], Z[1])[:6, 6:]
    assert np.abs(C).max() < 0.05
    mean, cov = dense_factor_posterior(model, state, L.matrix())
    np.testing.assert_allclose(Z.mean(axis=2), mean, atol=0.04)


def test_sigma0_conditional_matches_profile():
    rng = np.random.default_rng(3)
    model = GolfModel(np.linspace(0, 1, 3), np.linspace(0, 1, 4), 2)
    state = ModelState(1.0, [2.0, 3.0], [0.5, 0.7], 0.3, rng.standard_normal((3, 4)))
    A = model.loadings(1.0).matrix()
    grid = np.linspace(0.05, 2.0, 40)
    dense = dense_sigma0_logdensity(model, state, A, grid)
    S = sigma0_rate(model, state)
    ig = scipy.stats.invgamma(a=6, scale=S / 2).logpdf(grid)
    np.testing.assert_allclose(dense - dense[0], ig - ig[0], atol=1e-8)


def test_sigma0_draw_moments():
    model, state = nonsep_instance()
    rng = np.random.default_rng(4)
    S = sigma0_rate(model, state)
    draws = np.array([sample_sigma0(model, state, rng, rate2=S) for _ in range(20_000)])
    want = S / (30 - 2)
    sd = want / np.sqrt(30 / 2 - 2)
    assert abs(draws.mean() - want) < 4 * sd / np.sqrt(draws.size)


def test_sigma0_huge_nuggets():
    model, state = nonsep_instance()
    state.eta = np.array([1e12, 1e12])
    assert sigma0_rate(model, state) == pytest.approx(np.sum(state.Y**2), rel=1e-9)


def test_jr_prior():
    p = PriorSpec().resolve(np.linspace(0, 1, 5))
    assert p.c1 == -0.5 and p.decay_coef == p.c2
    assert p.c3 == pytest.approx(np.mean([abs(a - b) for a in np.linspace(0, 1, 5)
                                          for b in np.linspace(0, 1, 5) if a != b]))
    assert np.isfinite(log_jr_prior(1.0, 1.0, p))
    assert log_jr_prior(1.0, 1e6, p) < log_jr_prior(1.0, 1e3, p) < log_jr_prior(1.0, 1.0, p)
    assert log_jr_prior(1.0, -1.0, p) == -np.inf
    # ratio against the formula evaluated by hand
    c1, c2, c3 = -0.5, 0.5, p.c3
    def f(b, e):
        return (c2 * b + e) ** c1 * np.exp(-c3 * (c2 * b + e))
    ratio = np.exp(log_jr_prior(2.0, 0.3, p) - log_jr_prior(0.7, 1.1, p))
    assert ratio == pytest.approx(f(2.0, 0.3) / f(0.7, 1.1), rel=1e-12)
    printed = PriorSpec(decay_coef=-0.5).resolve(np.linspace(0, 1, 5))
    assert log_jr_prior(50.0, 1.0, printed) > log_jr_prior(1.0, 1.0, printed)
    with pytest.raises(InvalidParameterError):
        log_jr_prior(1.0, 1.0, PriorSpec())


def test_beta0_prior():
    p = PriorSpec()
    assert log_beta0_prior(4.0, p) == pytest.approx(-0.5 * np.log(4.0) - 0.25)
    assert log_beta0_prior(-1.0, p) == -np.inf
    assert log_beta0_prior([1.0, 2.0], p) == pytest.approx(-0.5 * np.log(2.0) - 1.5)


# -- mean-coefficient samplers against dense marginal posteriors -----------

N_DRAWS = 20_000


def mean_instance(variant, d, seed=0):
    rng = np.random.default_rng(seed)
    n1, n2 = 4, 5
    H1 = np.ones((n1, 1))
    H2 = np.ones((n2, 1))
    mean = MeanModel(variant, H1=H1 if variant != "col" else None, H2=H2 if variant != "row" else None)
    model = GolfModel(np.linspace(0, 1, n1), np.linspace(0, 1, n2), d, mean=mean)
    state = ModelState(1.5, rng.uniform(1, 3, d), rng.uniform(0.2, 1, d), 0.3,
                       rng.standard_normal((n1, n2)) + 0.5)
    return model, state


def repeat(fn, model, state, seed, n=N_DRAWS, loadings=None):
    L = model.loadings(state.beta0) if loadings is None else loadings
    kb = model.filters(state.beta, state.eta)
    rng = np.random.default_rng(seed)
    return np.array([fn(model, state, rng, L, kb) for _ in range(n)])


def assert_moments(draws, mean, cov, n_se=4.0):
    draws = draws.reshape(draws.shape[0], -1)
    se = np.sqrt(np.diag(cov) / draws.shape[0])
    z = np.abs(draws.mean(axis=0) - mean) / se
    assert z.max() < n_se, z
    # variances within 4 standard errors of the sample variance (normal data)
    sv = draws.var(axis=0)
    assert np.all(np.abs(sv - np.diag(cov)) < n_se * np.diag(cov) * np.sqrt(2 / draws.shape[0]))


@pytest.mark.parametrize("d", [1, 2])
def test_B1_matches_dense(d):
    model, state = mean_instance("row", d)
    draws = repeat(sample_B1, model, state, 10 + d)
    mean, cov = dense_B1_posterior(model, state, model.loadings(state.beta0).matrix())
    assert_moments(draws, mean, cov)


@pytest.mark.parametrize("d", [1, 2])
def test_B2_matches_dense(d):
    model, state = mean_instance("col", d)
    draws = repeat(sample_B2, model, state, 20 + d)
    mean, cov = dense_B2_posterior(model, state, model.loadings(state.beta0).matrix())
    assert_moments(draws, mean, cov)


@pytest.mark.parametrize("d", [1, 2])
def test_mixed_matches_dense(d):
    model, state = mean_instance("mixed", d)
    def draw_mean(*args):
        return model.mean.assemble(*sample_mean(*args), (4, 5))

    Ms = repeat(draw_mean, model, state, 30 + d)
    mean, cov = dense_mixed_mean_posterior(model, state, model.loadings(state.beta0).matrix())
    assert_moments(Ms, mean.ravel(), cov)


def test_B2_single_factor_gls():
    rng = np.random.default_rng(5)
    model = GolfModel(np.linspace(0, 1, 3), np.linspace(0, 1, 6), 1, mean=MeanModel("col", H2=np.ones((6, 1))))
    state = ModelState(1.0, [2.0], [0.5], 0.2, rng.standard_normal((3, 6)))
    mean, _ = dense_B2_posterior(model, state, model.loadings(1.0).matrix())
    draws = repeat(sample_B2, model, state, 5)
    np.testing.assert_allclose(draws.mean(axis=0).ravel(), mean, atol=0.02)


def test_B1_additive_centred_on_least_squares():
    model, state = mean_instance("row", 2)
    draws = repeat(sample_B1_additive, model, state, 6)
    ols = state.Y.mean(axis=0)
    np.testing.assert_allclose(draws.mean(axis=0)[0], ols, atol=0.03)


def test_marginal_precision_is_generalized_inverse():
    model, state = mean_instance("mixed", 2)
    kb = model.filters(state.beta, state.eta)
    S = marginal_precisions(kb, model.mean.H2, state.sigma2)
    for l in range(2):
        K = corr_matrix(KernelSpec("matern52", 1 / state.beta[l]), model.grid)
        Sig = state.sigma2 * (K / state.eta[l] + np.eye(5))
        np.testing.assert_allclose(S[l] @ Sig @ S[l], S[l], atol=1e-8)


def test_sign_flip_invariance():
    model, state = mean_instance("col", 2)
    L = model.loadings(state.beta0)
    from golf.loadings import Loadings

    flipped = Loadings((L.blocks[0] * [1, -1],), L.eigvals)
    a = repeat(sample_B2, model, state, 8, loadings=L)
    b = repeat(sample_B2, model, state, 8, loadings=flipped)
    np.testing.assert_allclose(a.mean(axis=0), b.mean(axis=0), atol=0.03)
    np.testing.assert_allclose(a.var(axis=0), b.var(axis=0), rtol=0.05)


def test_zero_rows_do_not_change_mean_draws():
    # appending all-zero rows to H1 and Y enlarges the complement of the loadings only
    model, state = mean_instance("col", 1)
    base = repeat(sample_B2, model, state, 9, n=10)
    s = np.concatenate([np.linspace(0, 1, 4), [5.0, 6.0]])
    big = GolfModel(s, model.grid, 1, mean=model.mean)
    L = big.loadings(state.beta0)
    st = ModelState(state.beta0, state.beta, state.eta, state.sigma2, np.vstack([state.Y, np.zeros((2, 5))]))
    mean, cov = dense_B2_posterior(big, st, L.matrix())
    draws = repeat(sample_B2, big, st, 9, loadings=L)
    assert_moments(draws, mean, cov)
    assert base.shape[1:] == (1, 4)


def test_mixed_requires_mixed_mean():
    model, state = mean_instance("row", 1)
    with pytest.raises(PreconditionError):
        sample_B1_mixed(model, state, np.random.default_rng(0))
    with pytest.raises(PreconditionError):
        sample_B2(model, state, np.random.default_rng(0))


def test_dense_loglik_helper_consistency():
    model, state = separable_instance()
    s, x = model.coords_s[:, 0], model.grid
    C = 1.3 * np.kron(corr_matrix(KernelSpec("matern52", 0.5), s), corr_matrix(KernelSpec("matern52", 0.3), x))
    assert dense_gp_loglik(C + 0.2 * np.eye(42), state.Y.ravel()) == pytest.approx(SEPARABLE_LOGLIK, abs=1e-10)
