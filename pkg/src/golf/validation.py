"""Fast-versus-dense equivalence checks on random small instances.

Each instance draws a lattice (``n1 <= 8`` rows, ``n2 <= 30`` irregular
columns), a kernel family, ``d`` in ``1..n1`` and random parameters, then
compares the state-space and projection computations with their dense
counterparts in :mod:`golf.oracle`.  The report lists, per check, the
largest discrepancy seen and whether it stayed under the tolerance.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from unittest import mock

import numpy as np

from . import statespace
from .errors import GolfError
from .kernels import KernelSpec, corr_matrix
from .model import GolfModel, ModelState, marginal_loglik, posterior_factor
from .oracle import dense_factor_posterior, dense_marginal_loglik, dense_projected_loglik
from .statespace import kf_color, kf_logdet, kf_whiten, smoother_mean, ssm_build

__all__ = ["Check", "TOLERANCES", "random_instance", "run_suite", "format_report"]

#: absolute tolerances per check
TOLERANCES = {
    "loglik": 1e-6,
    "projected_loglik": 1e-6,
    "logdet": 1e-8,
    "whiten": 1e-8,
    "color": 1e-8,
    "posterior_mean": 1e-8,
    "factor_posterior": 1e-8,
    "orthonormality": 1e-10,
}


@dataclass
class Check:
    name: str
    tol: float
    count: int = 0
    max_err: float = 0.0
    failures: int = 0
    first_error: str = ""

    @property
    def passed(self) -> bool:
        return self.count > 0 and self.failures == 0 and self.max_err < self.tol

    def record(self, err):
        self.count += 1
        if not np.isfinite(err):
            self.failures += 1
            err = np.inf
        self.max_err = max(self.max_err, float(err))

    def fail(self, exc):
        self.count += 1
        self.failures += 1
        self.max_err = np.inf
        if not self.first_error:
            self.first_error = f"{type(exc).__name__}: {exc}"


def random_instance(rng):
    """A random model and state; columns on an irregular grid in [0, 1]."""
    n1 = int(rng.integers(1, 9))
    n2 = int(rng.integers(2, 31))
    x = np.sort(rng.uniform(0, 1, n2))
    x[1:] = np.maximum(x[1:], x[:-1] + 1e-3)  # keep the grid strictly increasing
    fam = ("exponential", "matern52")[int(rng.integers(2))]
    d = int(rng.integers(1, n1 + 1))
    model = GolfModel(np.sort(rng.uniform(0, 1, n1)), x, d, family_s=fam, family_x=fam)
    state = ModelState(
        beta0=np.exp(rng.uniform(-1, 2.5)),
        beta=np.exp(rng.uniform(-1, 2.5, d)),
        eta=np.exp(rng.uniform(-3, 1, d)),
        sigma2=float(np.exp(rng.uniform(-2, 1))),
        Y=rng.standard_normal((n1, n2)),
    )
    return model, state


def _one(model, state, rng, checks):
    def run(name, fn):
        try:
            checks[name].record(fn())
        except (GolfError, np.linalg.LinAlgError, FloatingPointError) as exc:
            checks[name].fail(exc)

    L = model.loadings(state.beta0)
    A = L.matrix()
    run("orthonormality", lambda: np.abs(A.T @ A - np.eye(A.shape[1])).max())
    run("loglik", lambda: abs(marginal_loglik(model, state, L) - dense_marginal_loglik(model, state, A)))
    run("projected_loglik",
        lambda: abs(marginal_loglik(model, state, L) - dense_projected_loglik(model, state, A)))

    # one factor's projected series against its dense covariance
    l = int(rng.integers(model.d))
    gamma = 1.0 / state.beta[l]
    signal = state.sigma2 / state.eta[l]
    ssm = ssm_build(model.family_x, gamma, signal, model.grid)
    C = signal * corr_matrix(KernelSpec(model.family_x, gamma), model.grid)
    Ct = C + state.sigma2 * np.eye(model.n2)
    chol = np.linalg.cholesky(Ct)
    y = A[:, l] @ state.Y
    run("logdet", lambda: abs(kf_logdet(ssm, state.sigma2) - 2 * np.log(np.diag(chol)).sum()))
    run("whiten", lambda: np.abs(kf_whiten(ssm, y, state.sigma2) - np.linalg.solve(chol, y)).max())
    v = rng.standard_normal(model.n2)
    run("color", lambda: np.abs(kf_color(ssm, v, state.sigma2) - chol @ v).max())
    run("posterior_mean",
        lambda: np.abs(smoother_mean(ssm, y, state.sigma2) - C @ np.linalg.solve(Ct, y)).max())

    def factor_posterior():
        mean, _ = dense_factor_posterior(model, state, A)
        return max(np.abs(posterior_factor(model, state, k, loadings=L)[0] - mean[k]).max()
                   for k in range(model.d))

    run("factor_posterior", factor_posterior)


@contextlib.contextmanager
def _injected(bug):
    """Deliberately broken fast path, to show that the suite detects it."""
    if bug in (None, "none"):
        yield
        return
    if bug != "w_sign":
        raise ValueError(f"unknown injected bug {bug!r}")
    original = statespace.innovation_cov
    with mock.patch.object(statespace, "innovation_cov", lambda *a: -original(*a)):
        yield


def run_suite(n_instances=200, seed=0, inject=None) -> list[Check]:
    """Run every check on ``n_instances`` random instances."""
    rng = np.random.default_rng(seed)
    checks = {k: Check(k, tol) for k, tol in TOLERANCES.items()}
    with _injected(inject), np.errstate(all="ignore"):
        for _ in range(int(n_instances)):
            model, state = random_instance(rng)
            _one(model, state, rng, checks)
    return list(checks.values())


def format_report(checks) -> str:
    """Fixed-width pass/fail table."""
    lines = [f"{'check':<18} {'n':>5} {'max_error':>12} {'tolerance':>10}  result"]
    for c in checks:
        lines.append(f"{c.name:<18} {c.count:>5} {c.max_err:>12.3e} {c.tol:>10.0e}  "
                     f"{'PASS' if c.passed else 'FAIL'}")
        if c.first_error:
            lines.append(f"    first error: {c.first_error}")
    lines.append(f"overall: {'PASS' if all(c.passed for c in checks) else 'FAIL'}")
    return "\n".join(lines)
