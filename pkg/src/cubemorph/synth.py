"""Synthetic registration tasks on the unit cube.

Provides the analytic benchmark deformation (a boundary-fixing trigonometric
perturbation of the identity with a closed-form Jacobian), a radial cosine
image pattern, and three landmark tasks: twisted corner pairs, a rotated
sphere and a translating disk.  Landmark files are plain text, one
"qx,qy,qz,px,py,pz" line per pair, 17 significant digits so float64 values
round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError, FileFormatError
from .volume import Volume3, voxel_centers


@dataclass
class LandmarkSet:
    """Paired source positions q and target positions p inside the cube;
    the trained map is asked to carry q onto p."""

    q: np.ndarray  # (N, 3)
    p: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.q.ndim != 2 or self.q.shape[1] != 3 or self.q.shape != self.p.shape:
            raise ContractError(
                f"landmarks need matching (N, 3) arrays, got {self.q.shape} and {self.p.shape}"
            )
        if self.q.shape[0] < 1:
            raise ContractError("landmark set is empty")
        for name, arr in (("q", self.q), ("p", self.p)):
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"landmark {name} contains non-finite values")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ContractError(f"landmark {name} leaves the unit cube")

    @property
    def count(self) -> int:
        return self.q.shape[0]


@dataclass
class AnalyticMap:
    """A map given in closed form together with its Jacobian."""

    fn: Callable[[np.ndarray], np.ndarray]        # (..., 3) -> (..., 3)
    jacobian: Callable[[np.ndarray], np.ndarray]  # (..., 3) -> (..., 3, 3)


def appendix_map() -> AnalyticMap:
    """The benchmark deformation: each component perturbs the identity by a
    cosine of a linear phase, damped by x_i (1 - x_i) so all six faces stay
    fixed.  Phases: (5, 6, -4), (-5, 4, 5), (3, 5, -6); amplitude 1/2."""
    phases = np.array(
        [[5.0, 6.0, -4.0], [-5.0, 4.0, 5.0], [3.0, 5.0, -6.0]]
    )

    def fn(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        theta = pts @ phases.T                      # (..., 3)
        damp = pts * (1.0 - pts)
        return pts + damp * np.cos(theta) / 2.0

    def jacobian(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        theta = pts @ phases.T
        damp = pts * (1.0 - pts)
        cos_t = np.cos(theta)
        sin_t = np.sin(theta)
        jac = -0.5 * damp[..., :, None] * sin_t[..., :, None] * phases
        idx = np.arange(3)
        jac[..., idx, idx] += 1.0 + 0.5 * (1.0 - 2.0 * pts) * cos_t
        return jac

    return AnalyticMap(fn, jacobian)


def source_pattern(pts: np.ndarray) -> np.ndarray:
    """Radial cosine image: 0.5 cos(2 * 2pi * |x|^2) + 0.5, values in [0, 1]."""
    pts = np.asarray(pts, dtype=np.float64)
    r_sq = np.sum(pts * pts, axis=-1)
    return 0.5 * np.cos(4.0 * np.pi * r_sq) + 0.5


def appendix_dataset(
    image_dims=(64, 64, 64), grid_n: int = 8
) -> tuple[Volume3, Volume3, LandmarkSet]:
    """Source image, warped target image and a landmark lattice for the
    benchmark deformation g.

    The target is exact: T(q) = S(g(q)) evaluated analytically at each voxel
    centre (no interpolation).  Landmarks sit on the interior grid_n^3
    lattice ((k + 0.5) / grid_n per axis) with targets g(q) clamped into the
    cube.
    """
    if grid_n < 1:
        raise ContractError(f"grid_n must be positive, got {grid_n}")
    g = appendix_map()
    centers = voxel_centers(image_dims)
    dims = tuple(int(d) for d in image_dims)
    s_data = source_pattern(centers).reshape(dims, order="F")
    t_data = source_pattern(g.fn(centers)).reshape(dims, order="F")
    q = voxel_centers((grid_n, grid_n, grid_n))
    p = np.clip(g.fn(q), 0.0, 1.0)
    return Volume3(s_data), Volume3(t_data), LandmarkSet(q, p)


# ---------------------------------------------------------------------------
# landmark tasks

# Square corners around (0.5, 0.5), anticlockwise order (x right, y up),
# listed so roll(-1) assigns each point its anticlockwise neighbour.
_CORNERS = np.array(
    [[0.25, 0.25], [0.75, 0.25], [0.75, 0.75], [0.25, 0.75]]
)


def twisted_pairs() -> LandmarkSet:
    """Eight landmarks in two horizontal quartets that twist the cube about
    its vertical axis: each quartet sends every point one step to its
    anticlockwise neighbour (a 90 degree twist).  The same square sits at
    z=0.3 and z=0.7, so the central column turns while the pinned boundary
    holds still and the shear concentrates near the walls.  Each quartet is
    a pure permutation of itself."""
    q = np.zeros((8, 3))
    p = np.zeros((8, 3))
    q[:4, :2] = _CORNERS
    q[:4, 2] = 0.3
    p[:4, :2] = np.roll(_CORNERS, -1, axis=0)   # anticlockwise neighbour
    p[:4, 2] = 0.3
    q[4:, :2] = _CORNERS
    q[4:, 2] = 0.7
    p[4:, :2] = np.roll(_CORNERS, -1, axis=0)   # anticlockwise neighbour
    p[4:, 2] = 0.7
    return LandmarkSet(q, p)


def rotated_sphere(n_points: int = 200, seed: int = 0) -> LandmarkSet:
    """Points on the sphere of radius 0.25 about the cube centre, paired with
    their images under a 90 degree anticlockwise rotation about the vertical
    line x = y = 0.5: (x, y, z) -> (0.5 - (y - 0.5), 0.5 + (x - 0.5), z)."""
    if n_points < 1:
        raise ContractError(f"n_points must be positive, got {n_points}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    v = rng.normal(size=(n_points, 3))
    norms = np.linalg.norm(v, axis=1)
    while np.any(norms < 1e-12):
        bad = norms < 1e-12
        v[bad] = rng.normal(size=(int(bad.sum()), 3))
        norms = np.linalg.norm(v, axis=1)
    q = 0.5 + 0.25 * v / norms[:, None]
    p = np.empty_like(q)
    p[:, 0] = 0.5 - (q[:, 1] - 0.5)
    p[:, 1] = 0.5 + (q[:, 0] - 0.5)
    p[:, 2] = q[:, 2]
    return LandmarkSet(q, p)


def translating_disk(n_points: int = 400, seed: int = 0) -> LandmarkSet:
    """Points on the flat disk of radius 0.25 in the plane y = 0.7, centred
    at (0.5, 0.7, 0.5), paired with their translates by (0, -0.4, 0)."""
    if n_points < 1:
        raise ContractError(f"n_points must be positive, got {n_points}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 4]))
    r = 0.25 * np.sqrt(rng.random(n_points))
    phi = 2.0 * np.pi * rng.random(n_points)
    q = np.empty((n_points, 3))
    q[:, 0] = 0.5 + r * np.cos(phi)
    q[:, 1] = 0.7
    q[:, 2] = 0.5 + r * np.sin(phi)
    p = q + np.array([0.0, -0.4, 0.0])
    return LandmarkSet(q, p)


# ---------------------------------------------------------------------------
# landmark file format


def write_landmarks(lms: LandmarkSet, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for qi, pi in zip(lms.q, lms.p):
            vals = [*qi, *pi]
            fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")


def read_landmarks(path) -> LandmarkSet:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise FileFormatError(
                    f"{path}:{lineno}: expected 6 comma-separated values, got {len(parts)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FileFormatError(f"{path}: no landmark rows")
    arr = np.asarray(rows, dtype=np.float64)
    return LandmarkSet(arr[:, :3], arr[:, 3:])
