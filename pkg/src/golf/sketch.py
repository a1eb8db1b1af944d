"""Streaming quantile estimation (P-squared algorithm), vectorized over cells.

Used when storing every imputed draw would exceed the memory budget.  The
estimate is approximate; accuracy improves with the number of draws and is
typically within a few percent of the sample quantile's spread after a few
hundred draws.
"""

from __future__ import annotations

import numpy as np

__all__ = ["P2Quantile", "RunningMean"]


class RunningMean:
    """Running mean of equally shaped arrays."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self.count = 0

    def update(self, x):
        self.total += x
        self.count += 1

    @property
    def mean(self):
        return self.total / max(self.count, 1)

    def state(self):
        return {"total": self.total, "count": np.array(self.count)}

    @classmethod
    def from_state(cls, st):
        self = cls(st["total"].shape)
        self.total = np.array(st["total"], dtype=float)
        self.count = int(st["count"])
        return self


class P2Quantile:
    """P-squared estimator of the ``p`` quantile for each of ``size`` streams."""

    def __init__(self, p: float, size: int):
        if not 0 < p < 1:
            raise ValueError("quantile level must lie in (0, 1)")
        self.p = float(p)
        self.size = int(size)
        self.count = 0
        self.q = np.zeros((5, self.size))
        self.n = np.tile(np.arange(5.0)[:, None], (1, self.size))
        self.want = np.array([0.0, 2 * p, 4 * p, 2 + 2 * p, 4.0])[:, None] * np.ones((1, self.size))
        self.dwant = np.array([0.0, p / 2, p, (1 + p) / 2, 1.0])[:, None]

    def update(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if self.count < 5:
            self.q[self.count] = x
            self.count += 1
            if self.count == 5:
                self.q.sort(axis=0)
            return
        self.count += 1
        q, n = self.q, self.n
        below = x < q[0]
        q[0] = np.where(below, x, q[0])
        above = x >= q[4]
        q[4] = np.where(above, x, q[4])
        # cell k with q[k] <= x < q[k+1]; markers above k shift right
        k = (x[None, :] >= q[1:4]).sum(axis=0)
        k = np.where(above, 3, k)
        n += (np.arange(5)[:, None] > k[None, :])
        self.want += self.dwant
        for i in (1, 2, 3):
            d = self.want[i] - n[i]
            up = (d >= 1) & (n[i + 1] - n[i] > 1)
            dn = (d <= -1) & (n[i - 1] - n[i] < -1)
            move = up | dn
            if not move.any():
                continue
            s = np.where(up, 1.0, -1.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                par = q[i] + s / (n[i + 1] - n[i - 1]) * (
                    (n[i] - n[i - 1] + s) * (q[i + 1] - q[i]) / (n[i + 1] - n[i])
                    + (n[i + 1] - n[i] - s) * (q[i] - q[i - 1]) / (n[i] - n[i - 1])
                )
                nb = np.where(up, q[i + 1], q[i - 1])
                nn = np.where(up, n[i + 1], n[i - 1])
                lin = q[i] + s * (nb - q[i]) / (nn - n[i])
            ok = (q[i - 1] < par) & (par < q[i + 1])
            new = np.where(ok, par, lin)
            q[i] = np.where(move, new, q[i])
            n[i] = np.where(move, n[i] + s, n[i])

    @property
    def value(self) -> np.ndarray:
        if self.count == 0:
            return np.full(self.size, np.nan)
        if self.count < 5:
            return np.quantile(self.q[: self.count], self.p, axis=0)
        return self.q[2].copy()

    def state(self):
        return {"p": np.array(self.p), "count": np.array(self.count), "q": self.q,
                "n": self.n, "want": self.want}

    @classmethod
    def from_state(cls, st):
        self = cls(float(st["p"]), st["q"].shape[1])
        self.count = int(st["count"])
        self.q = np.array(st["q"], dtype=float)
        self.n = np.array(st["n"], dtype=float)
        self.want = np.array(st["want"], dtype=float)
        return self
