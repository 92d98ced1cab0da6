"""Closed-form once-integrated Brownian motion kernels.

The prior models the solution x with the integrated Brownian motion kernel
``k`` and, consequently, its derivative with the Wiener kernel ``ddk``.
The mixed once-differentiated kernels ``kd``/``dk`` are the cross
covariances between x and its derivative. All kernels scale with the
squared diffusion scale.

All functions are pure and broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class KernelConfig:
    """Hyperparameters of the prior; sigma_dif is the output std of the
    Brownian derivative process."""

    sigma_dif: float = 1.0

    def __post_init__(self):
        if not self.sigma_dif > 0:
            raise ValueError(f"sigma_dif must be positive, got {self.sigma_dif}")


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant solver grid {0, h, ..., N h} with grid-aligned data times.

    data_indices are the integers l_1 < ... < l_M in [1, N] such that the
    i-th data time is l_i * h.
    """

    h: float
    n_steps: int
    data_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step h must be positive, got {self.h}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        idx = np.asarray(self.data_indices, dtype=int)
        object.__setattr__(self, "data_indices", idx)
        if idx.size:
            if idx[0] < 1 or idx[-1] > self.n_steps:
                raise ValueError("data indices must lie in [1, N]")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("data indices must be strictly increasing")

    @property
    def horizon(self) -> float:
        return self.n_steps * self.h

    @property
    def n_data(self) -> int:
        return int(self.data_indices.size)

    @property
    def times(self) -> np.ndarray:
        """All grid times including t=0, length N+1."""
        return np.arange(self.n_steps + 1) * self.h

    @property
    def data_times(self) -> np.ndarray:
        return self.data_indices * self.h


def _check_times(*ts):
    for t in ts:
        if np.any(np.asarray(t) < 0):
            raise ValueError("kernel times must be nonnegative")


def ddk(t, t2, cfg: KernelConfig):
    """Wiener (Brownian motion) kernel: sigma^2 * min(t, t2)."""
    _check_times(t, t2)
    return cfg.sigma_dif**2 * np.minimum(t, t2)


def k(t, t2, cfg: KernelConfig):
    """Integrated Brownian motion kernel.

    k(t, t2) = sigma^2 * (min^3/3 + |t - t2| * min^2 / 2).
    """
    _check_times(t, t2)
    t = np.asarray(t, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    lo = np.minimum(t, t2)
    return cfg.sigma_dif**2 * (lo**3 / 3.0 + np.abs(t - t2) * lo**2 / 2.0)


def kd(t, t2, cfg: KernelConfig):
    """Once-differentiated kernel d k(t, t2) / d t2.

    Equals sigma^2 * t^2/2 for t <= t2 and sigma^2 * (t*t2 - t2^2/2)
    otherwise; the two branches agree at t == t2.
    """
    _check_times(t, t2)
    t = np.asarray(t, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    return cfg.sigma_dif**2 * np.where(t <= t2, t**2 / 2.0, t * t2 - t2**2 / 2.0)


def dk(t, t2, cfg: KernelConfig):
    """Once-differentiated kernel d k(t, t2) / d t; equals kd(t2, t)."""
    return kd(t2, t, cfg)
