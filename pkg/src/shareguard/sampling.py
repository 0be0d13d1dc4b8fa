"""Uniform grid sampling of a bounded control box.

The control box is sampled on an endpoint-inclusive, equally-spaced grid so
that full-scale axis-aligned commands are always representable.  The module
also provides the asymptotic expected-deviation bound (volume / 2N) and the
exact worst-case nearest-grid distance, which are reported side by side:
the two quantities agree only asymptotically and are not interchangeable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class ControlSpace:
    """Bounded box of admissible control vectors.

    intervals: per-dimension (low, high) pairs.  measure is the Lebesgue
    measure of the box, the product of the interval lengths.
    """

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.intervals) == 0:
            raise ConfigError("control space needs at least one dimension")
        for i, (lo, hi) in enumerate(self.intervals):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ConfigError(f"control interval {i} is not finite: ({lo}, {hi})")
            if not hi > lo:
                raise ConfigError(f"control interval {i} must have high > low, got ({lo}, {hi})")

    @property
    def dims(self) -> int:
        return len(self.intervals)

    @property
    def lows(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.intervals])

    @property
    def highs(self) -> np.ndarray:
        return np.array([hi for _, hi in self.intervals])

    @property
    def measure(self) -> float:
        return float(np.prod(self.highs - self.lows))

    def contains(self, u) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lows) and np.all(u <= self.highs))

    def clamp(self, u) -> tuple[np.ndarray, bool]:
        """Clip u into the box.  Returns (clamped vector, whether clipping occurred)."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dims,):
            raise DomainError(f"control vector has shape {u.shape}, expected ({self.dims},)")
        if not np.all(np.isfinite(u)):
            raise DomainError(f"control vector is not finite: {u}")
        clamped = np.clip(u, self.lows, self.highs)
        return clamped, bool(np.any(clamped != u))


@dataclass(frozen=True)
class SampleSet:
    """Endpoint-inclusive Cartesian grid over a ControlSpace.

    samples are stored in row-major order over the per-dimension point lists,
    so the last dimension varies fastest.  Immutable after construction.
    """

    space: ControlSpace
    per_dim_counts: tuple[int, ...]
    samples: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def axis_points(self, d: int) -> np.ndarray:
        lo, hi = self.space.intervals[d]
        return np.linspace(lo, hi, self.per_dim_counts[d])


def grid(space: ControlSpace, per_dim_counts) -> SampleSet:
    """Equally-spaced grid including both endpoints of every interval.

    Every count must be >= 2 so the axis-aligned extremes are sampleable.
    """
    counts = tuple(int(c) for c in np.atleast_1d(per_dim_counts))
    if len(counts) != space.dims:
        raise ConfigError(f"got {len(counts)} counts for a {space.dims}-D control space")
    for d, c in enumerate(counts):
        if c < 2:
            raise ConfigError(f"per-dim count must be >= 2 to include both endpoints, got {c} in dim {d}")
    axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(space.intervals, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    samples = np.stack([m.reshape(-1) for m in mesh], axis=1)
    samples.setflags(write=False)
    return SampleSet(space=space, per_dim_counts=counts, samples=samples)


def deviation_bound(space_or_measure, n_samples: int) -> float:
    """Expected deviation bound: box volume divided by 2N.

    Accepts a ControlSpace or an explicit scalar volume, so reference values
    quoted for boxes other than the active one can be reproduced exactly.
    """
    if n_samples < 1:
        raise ConfigError(f"sample count must be >= 1, got {n_samples}")
    if isinstance(space_or_measure, ControlSpace):
        measure = space_or_measure.measure
    else:
        measure = float(space_or_measure)
        if measure <= 0:
            raise ConfigError(f"volume must be positive, got {measure}")
    return measure / (2.0 * n_samples)


def grid_half_spacing(sample_set: SampleSet) -> tuple[np.ndarray, float]:
    """Per-dimension half grid spacing and the worst-case Euclidean
    distance from any in-box point to its nearest grid sample.

    half spacing in dim d is (high - low) / (2 (n_d - 1)); the worst case
    is attained at the center of a grid cell, sqrt(sum of squares).
    """
    lows = sample_set.space.lows
    highs = sample_set.space.highs
    counts = np.array(sample_set.per_dim_counts, dtype=float)
    half = (highs - lows) / (2.0 * (counts - 1.0))
    return half, float(np.sqrt(np.sum(half**2)))


def nearest_sample(sample_set: SampleSet, u) -> tuple[int, float]:
    """Index and distance of the grid sample nearest to u, in closed form.

    u outside the box is clamped first.  Per-dimension ties (u exactly at a
    cell midpoint) resolve toward the lower index, which also yields the
    lowest flat index among all equidistant grid points.
    """
    clamped, _ = sample_set.space.clamp(u)
    lows = sample_set.space.lows
    highs = sample_set.space.highs
    counts = np.array(sample_set.per_dim_counts)
    t = (clamped - lows) / (highs - lows) * (counts - 1)
    # ceil(t - 1/2) rounds half-down: exact midpoints go to the lower index
    idx_per_dim = np.ceil(t - 0.5).astype(int)
    idx_per_dim = np.clip(idx_per_dim, 0, counts - 1)
    flat = int(np.ravel_multi_index(tuple(idx_per_dim), tuple(counts)))
    dist = float(np.linalg.norm(sample_set.samples[flat] - clamped))
    return flat, dist
