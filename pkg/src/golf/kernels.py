"""Product Matérn-family correlation kernels.

Every kernel here is a product over input coordinates of one-dimensional
stationary correlations evaluated at absolute coordinate differences.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

__all__ = ["Family", "KernelSpec", "kernel_1d", "kernel_eval", "corr_matrix"]

SQRT5 = np.sqrt(5.0)


class Family(str, enum.Enum):
    EXPONENTIAL = "exponential"
    MATERN52 = "matern52"
    GAUSSIAN = "gaussian"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "").replace("/", "")
        aliases = {
            "exponential": cls.EXPONENTIAL,
            "exp": cls.EXPONENTIAL,
            "matern12": cls.EXPONENTIAL,
            "matern52": cls.MATERN52,
            "matern": cls.MATERN52,
            "gaussian": cls.GAUSSIAN,
            "gauss": cls.GAUSSIAN,
            "sqexp": cls.GAUSSIAN,
        }
        try:
            return aliases[key]
        except KeyError:
            raise InvalidParameterError(f"unknown kernel family {value!r}") from None

    @property
    def state_dim(self) -> int:
        """Dimension of the SDE state; Gaussian has no finite state form."""
        if self is Family.EXPONENTIAL:
            return 1
        if self is Family.MATERN52:
            return 3
        raise InvalidParameterError("the Gaussian kernel has no state-space form")


@dataclass(frozen=True)
class KernelSpec:
    """A product kernel: one family and one range parameter per coordinate."""

    family: Family
    range: tuple[float, ...]

    def __init__(self, family, range):
        object.__setattr__(self, "family", Family.parse(family))
        gamma = np.atleast_1d(np.asarray(range, dtype=float)).ravel()
        if gamma.size == 0 or not np.all(np.isfinite(gamma)) or np.any(gamma <= 0):
            raise InvalidParameterError(f"range parameters must be positive and finite, got {gamma}")
        object.__setattr__(self, "range", tuple(float(g) for g in gamma))

    @property
    def dims(self) -> int:
        return len(self.range)

    @classmethod
    def from_inverse_range(cls, family, beta) -> "KernelSpec":
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        return cls(family, 1.0 / beta)


def kernel_1d(family, distance, gamma):
    """One-dimensional correlation at nonnegative ``distance`` (broadcasts)."""
    family = Family.parse(family)
    with np.errstate(over="ignore"):
        r = np.asarray(distance, dtype=float) / gamma
    if family is Family.EXPONENTIAL:
        return np.exp(-r)
    if family is Family.MATERN52:
        t = SQRT5 * r
        with np.errstate(over="ignore", invalid="ignore"):
            out = (1.0 + t + t * t / 3.0) * np.exp(-t)
        # the polynomial overflows before exp(-t) underflows for huge t
        return np.where(np.isfinite(out), out, 0.0)
    return np.exp(-0.5 * r * r)


def kernel_eval(spec: KernelSpec, distance) -> np.ndarray | float:
    """Correlation for per-coordinate distances.

    ``distance`` has trailing axis of length ``spec.dims`` (a scalar is
    accepted for one-dimensional kernels).  Returns the product of the
    one-dimensional correlations.
    """
    d = np.asarray(distance, dtype=float)
    if spec.dims == 1 and (d.ndim == 0 or d.shape[-1] != 1):
        d = d[..., None]
    if d.shape[-1] != spec.dims:
        raise InvalidParameterError(
            f"distance has {d.shape[-1]} coordinates, kernel expects {spec.dims}"
        )
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise InvalidParameterError("distances must be finite and nonnegative")
    out = np.ones(d.shape[:-1])
    for i, gamma in enumerate(spec.range):
        out = out * kernel_1d(spec.family, d[..., i], gamma)
    return out if out.ndim else float(out)


def corr_matrix(spec: KernelSpec, coords) -> np.ndarray:
    """Dense correlation matrix between the rows of ``coords`` (m x p).

    No jitter is added; duplicated coordinates give a singular matrix.
    """
    c = np.asarray(coords, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] < 1:
        raise InvalidParameterError("need at least one coordinate")
    if c.shape[1] != spec.dims:
        raise InvalidParameterError(
            f"coordinates have {c.shape[1]} columns, kernel expects {spec.dims}"
        )
    if not np.all(np.isfinite(c)):
        raise InvalidParameterError("coordinates must be finite")
    out = np.ones((c.shape[0], c.shape[0]))
    for i, gamma in enumerate(spec.range):
        dist = np.abs(c[:, None, i] - c[None, :, i])
        out *= kernel_1d(spec.family, dist, gamma)
    # exact symmetry regardless of floating point evaluation order
    return np.triu(out) + np.triu(out, 1).T
