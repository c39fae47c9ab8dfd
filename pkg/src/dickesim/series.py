"""Time-indexed ensemble statistics shared by the mean-field, TWA and exact solvers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

#: per-member raw columns recorded by the trajectory solvers
RAW_COLUMNS = ("sx", "sy", "sz", "re_alpha", "im_alpha")

#: derived per-member observables reduced into an EnsembleSeries
FEATURES = ("sx", "sy", "sz", "x", "p", "n", "v_plus", "v_minus", "w_plus", "w_minus")


def member_features(raw: np.ndarray, n_spins: int, weyl_offset: float) -> np.ndarray:
    """Per-member observables from raw ``(..., 5)`` records.

    ``raw`` holds collective spin totals and the unnormalised mode amplitude.
    ``weyl_offset`` is subtracted from |alpha|^2 to turn the symmetric-ordered
    estimate into a phonon number (1/2 for Wigner sampling, 0 otherwise).
    """
    sx, sy, sz, ar, ai = (raw[..., k] for k in range(5))
    x = math.sqrt(2.0) * ar
    p = math.sqrt(2.0) * ai
    scale = 1.0 / math.sqrt(n_spins / 2.0)
    sy_s = sy * scale
    sz_s = sz * scale
    return np.stack(
        [sx, sy, sz, x, p, ar * ar + ai * ai - weyl_offset,
         p + sz_s, p - sz_s, x + sy_s, x - sy_s],
        axis=-1,
    )


class MomentAccumulator:
    """Mean and centred second moment merged block by block (Chan et al.).

    Blocks must be added in a fixed order for bit-reproducible results.
    """

    def __init__(self):
        self.count = 0
        self.mean = None
        self.m2 = None

    def add(self, block: np.ndarray) -> None:
        n_b = block.shape[0]
        if n_b == 0:
            return
        mean_b = block.mean(axis=0)
        m2_b = ((block - mean_b) ** 2).sum(axis=0)
        if self.count == 0:
            self.count, self.mean, self.m2 = n_b, mean_b, m2_b
            return
        n = self.count + n_b
        d = mean_b - self.mean
        self.mean = self.mean + d * (n_b / n)
        self.m2 = self.m2 + m2_b + d * d * (self.count * n_b / n)
        self.count = n

    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, np.nan)
        return self.m2 / (self.count - 1)

    def stderr(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, np.nan)
        return np.sqrt(self.variance() / self.count)


@dataclass
class EnsembleSeries:
    """Ensemble means, spreads and standard errors on a common time grid.

    ``var`` holds the sample variance over ensemble members, which for the
    composite quadratures is the symmetric-ordered quantum variance.
    ``stderr`` is the standard error of the mean, or NaN for a single member.
    """

    t: np.ndarray
    mean: dict
    stderr: dict
    var: dict
    n_samples: int
    n_spins: int
    samples: np.ndarray | None = None
    flags: dict = field(default_factory=dict)

    @property
    def t_ms(self) -> np.ndarray:
        return self.t * 1e3

    @property
    def names(self) -> list[str]:
        return list(self.mean)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.mean[name]

    def var_stderr(self, name: str) -> np.ndarray:
        """Standard error of a sample variance, Gaussian approximation."""
        if self.n_samples < 2:
            return np.full_like(self.var[name], np.nan)
        return self.var[name] * math.sqrt(2.0 / (self.n_samples - 1))

    def second_moment(self, name: str) -> np.ndarray:
        """E[O^2] over members, e.g. the Weyl-ordered <S_mu^2> for spin totals."""
        n = self.n_samples
        v = self.var[name] if n > 1 else np.zeros_like(self.mean[name])
        return v * (n - 1) / n + self.mean[name] ** 2

    def at(self, t: float) -> int:
        """Index of the output time closest to ``t`` (seconds)."""
        return int(np.argmin(np.abs(self.t - t)))


def reduce_blocks(t: np.ndarray, blocks: Sequence[np.ndarray], n_spins: int,
                  weyl_offset: float, keep_samples: bool = False,
                  feature_fn: Callable = member_features) -> EnsembleSeries:
    """Fold raw per-member blocks, in the given order, into an EnsembleSeries."""
    acc = MomentAccumulator()
    kept = []
    for raw in blocks:
        acc.add(feature_fn(raw, n_spins, weyl_offset))
        if keep_samples:
            kept.append(raw)
    mean, var, se = acc.mean, acc.variance(), acc.stderr()
    names = FEATURES
    return EnsembleSeries(
        t=np.asarray(t, dtype=float),
        mean={k: mean[..., i] for i, k in enumerate(names)},
        stderr={k: se[..., i] for i, k in enumerate(names)},
        var={k: var[..., i] for i, k in enumerate(names)},
        n_samples=acc.count,
        n_spins=n_spins,
        samples=np.concatenate(kept, axis=0) if keep_samples else None,
    )
