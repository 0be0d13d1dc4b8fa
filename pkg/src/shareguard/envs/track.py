"""Seeded closed-loop race track generation and centerline distance queries.

A track is a radially perturbed circle of checkpoints smoothed with a
closed Catmull-Rom spline and resampled to a dense, evenly spaced
centerline.  Waypoint spacing is bounded by half the road half-width so a
car cannot tunnel between discrete distance checks.

Distance queries are exact.  The fast path checks only segments in an arc
window around the nearest waypoint; rows for which the window result
cannot be certified exact (via the track's recorded self-clearance) fall
back to a brute-force scan over every segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ConfigError

_WINDOW = 12  # segments checked on each side of the nearest waypoint


@dataclass(frozen=True)
class TrackParams:
    n_checkpoints: int = 12
    radius: float = 20.0          # base circle radius [m]
    radial_noise: float = 0.3     # +- fraction of radius
    half_width: float = 2.5       # road half-width [m]
    spacing_factor: float = 0.5   # waypoint spacing <= factor * half_width
    oversample: int = 64          # spline samples per checkpoint segment before resampling


@dataclass(frozen=True)
class Track:
    seed: int
    params: TrackParams
    centerline: np.ndarray = field(repr=False)  # (n, 2), first == last
    closed: bool = True

    @property
    def half_width(self) -> float:
        return self.params.half_width

    @property
    def n_waypoints(self) -> int:
        return self.centerline.shape[0]

    def __post_init__(self):
        pts = self.centerline[:-1]
        segs_a = self.centerline[:-1]
        segs_b = self.centerline[1:]
        object.__setattr__(self, "_tree", cKDTree(pts))
        object.__setattr__(self, "_seg_a", segs_a)
        object.__setattr__(self, "_seg_b", segs_b)
        seg_len = np.linalg.norm(segs_b - segs_a, axis=1)
        object.__setattr__(self, "_max_seg_len", float(seg_len.max()))
        object.__setattr__(self, "_clearance", _self_clearance(pts, _WINDOW))
        self._build_distance_field()

    def _build_distance_field(self, cell: float = 0.25):
        """Sampled distance field over the track's bounding box.  The field
        alone cannot decide points near a threshold (distance is
        1-Lipschitz, so a cell is only conclusive beyond half its diagonal);
        classify_distance_lt resolves that shell exactly."""
        pad = self.params.half_width + 2.0 * cell
        lo = self.centerline.min(axis=0) - pad
        hi = self.centerline.max(axis=0) + pad
        nx = int(np.ceil((hi[0] - lo[0]) / cell)) + 1
        ny = int(np.ceil((hi[1] - lo[1]) / cell)) + 1
        gx = lo[0] + cell * np.arange(nx)
        gy = lo[1] + cell * np.arange(ny)
        centers = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
        field = np.empty(centers.shape[0])
        step = 8192
        for i in range(0, centers.shape[0], step):
            field[i: i + step] = _segment_distances(
                centers[i: i + step], self._seg_a[None, :, :], self._seg_b[None, :, :]
            ).min(axis=1)
        object.__setattr__(self, "_field", field.reshape(nx, ny))
        object.__setattr__(self, "_field_lo", lo)
        object.__setattr__(self, "_field_cell", cell)
        object.__setattr__(self, "_field_lip", cell * np.sqrt(0.5) + 1e-9)

    def classify_distance_lt(self, points, threshold: float) -> np.ndarray:
        """Exact evaluation of distance_to_centerline(points) < threshold,
        accelerated by the distance field; only points whose cell value is
        within half a cell diagonal of the threshold hit the exact path."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lo = self._field_lo
        cell = self._field_cell
        nx, ny = self._field.shape
        ix = np.rint((points[:, 0] - lo[0]) / cell).astype(int)
        iy = np.rint((points[:, 1] - lo[1]) / cell).astype(int)
        inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        out = np.zeros(points.shape[0], dtype=bool)
        if np.any(inside):
            d_cell = self._field[ix[inside], iy[inside]]
            sure_lt = d_cell < threshold - self._field_lip
            sure_ge = d_cell >= threshold + self._field_lip
            shell = ~(sure_lt | sure_ge)
            verdict = sure_lt
            if np.any(shell):
                rows = np.flatnonzero(inside)[shell]
                verdict = verdict.copy()
                verdict[shell] = self.distance_to_centerline(points[rows]) < threshold
            out[inside] = verdict
        # points off the field are farther than the padding from every
        # waypoint, hence farther than any in-band threshold
        return out

    def distance_to_centerline(self, points) -> np.ndarray:
        """Exact Euclidean distance from each point to the centerline polyline."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d_wp, idx = self._tree.query(points)
        n_seg = self._seg_a.shape[0]
        offs = np.arange(-_WINDOW, _WINDOW + 1)
        win = (idx[:, None] + offs[None, :]) % n_seg
        d_win = _segment_distances(points, self._seg_a[win], self._seg_b[win]).min(axis=1)
        # window misses a segment only if another arc passes within
        # d_win + max_seg_len of the query; the clearance bound rules that out
        certified = (d_wp + d_win + self._max_seg_len) < self._clearance
        out = d_win
        if not np.all(certified):
            rows = np.flatnonzero(~certified)
            full = _segment_distances(
                points[rows], self._seg_a[None, :, :], self._seg_b[None, :, :]
            ).min(axis=1)
            out = out.copy()
            out[rows] = full
        return out

    def distance_brute_force(self, points) -> np.ndarray:
        """Reference scan over every segment; O(n_points * n_segments)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return _segment_distances(points, self._seg_a[None, :, :], self._seg_b[None, :, :]).min(axis=1)

    def start_pose(self) -> tuple[np.ndarray, float]:
        """First waypoint and the heading of the first segment."""
        a = self.centerline[0]
        b = self.centerline[1]
        return a.copy(), float(np.arctan2(b[1] - a[1], b[0] - a[0]))

    def curvature(self) -> np.ndarray:
        """Discrete signed curvature at each interior waypoint."""
        pts = self.centerline[:-1]
        prev = np.roll(pts, 1, axis=0)
        nxt = np.roll(pts, -1, axis=0)
        v1 = pts - prev
        v2 = nxt - pts
        cross = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
        n1 = np.linalg.norm(v1, axis=1)
        n2 = np.linalg.norm(v2, axis=1)
        chord = np.linalg.norm(nxt - prev, axis=1)
        return 2.0 * cross / (n1 * n2 * chord)


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from points (n, 2) to segments a->b (n, k, 2) or (1, k, 2)."""
    p = points[:, None, :]
    ab = b - a
    denom = np.einsum("...i,...i->...", ab, ab)
    t = np.einsum("...i,...i->...", p - a, ab) / np.maximum(denom, 1e-300)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(p - proj, axis=-1)


def _self_clearance(pts: np.ndarray, window: int) -> float:
    """Minimum distance between waypoints more than `window` apart along the
    loop; bounds how close non-adjacent arcs approach each other.  Returns a
    lower bound (the search radius) when no far pair lies within it."""
    n = pts.shape[0]
    tree = cKDTree(pts)
    radius = float(np.linalg.norm(np.ptp(pts, axis=0))) + 1.0 if n <= 4096 else 20.0
    pairs = tree.query_pairs(r=radius, output_type="ndarray")
    if pairs.size == 0:
        return radius
    sep = np.abs(pairs[:, 0] - pairs[:, 1])
    sep = np.minimum(sep, n - sep)
    far = sep > window
    if not np.any(far):
        return radius
    d = np.linalg.norm(pts[pairs[far, 0]] - pts[pairs[far, 1]], axis=1)
    return float(d.min())


def _catmull_rom_closed(checkpoints: np.ndarray, samples_per_seg: int) -> np.ndarray:
    """Uniform Catmull-Rom spline through a closed checkpoint loop."""
    n = checkpoints.shape[0]
    t = np.linspace(0.0, 1.0, samples_per_seg, endpoint=False)
    out = []
    for i in range(n):
        p0 = checkpoints[(i - 1) % n]
        p1 = checkpoints[i]
        p2 = checkpoints[(i + 1) % n]
        p3 = checkpoints[(i + 2) % n]
        tt = t[:, None]
        seg = 0.5 * (
            2.0 * p1
            + (-p0 + p2) * tt
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * tt**2
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * tt**3
        )
        out.append(seg)
    return np.concatenate(out, axis=0)


def _resample_closed(curve: np.ndarray, max_spacing: float) -> np.ndarray:
    """Arc-length resampling of a closed curve to even spacing <= max_spacing.
    Returns waypoints with the first point repeated exactly at the end."""
    closed = np.vstack([curve, curve[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n = int(np.ceil(total / max_spacing))
    targets = np.linspace(0.0, total, n, endpoint=False)
    x = np.interp(targets, s, closed[:, 0])
    y = np.interp(targets, s, closed[:, 1])
    pts = np.stack([x, y], axis=1)
    return np.vstack([pts, pts[:1]])


def generate_track(seed: int, params: TrackParams = TrackParams()) -> Track:
    """Seeded random closed track; identical seed gives an identical track."""
    if params.half_width <= 0:
        raise ConfigError(f"half_width must be positive, got {params.half_width}")
    if params.n_checkpoints < 3:
        raise ConfigError(f"need at least 3 checkpoints, got {params.n_checkpoints}")
    if not 0.0 <= params.radial_noise < 1.0:
        raise ConfigError(f"radial_noise must be in [0, 1), got {params.radial_noise}")
    rng = np.random.default_rng(np.uint64(seed))
    angles = np.linspace(0.0, 2.0 * np.pi, params.n_checkpoints, endpoint=False)
    radii = params.radius * (1.0 + params.radial_noise * rng.uniform(-1.0, 1.0, params.n_checkpoints))
    checkpoints = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    curve = _catmull_rom_closed(checkpoints, params.oversample)
    centerline = _resample_closed(curve, params.spacing_factor * params.half_width)
    centerline.setflags(write=False)
    return Track(seed=int(seed), params=params, centerline=centerline)
