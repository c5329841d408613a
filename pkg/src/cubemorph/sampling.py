"""Seeded Monte Carlo sample pools over the unit cube.

A pool is drawn once per run and reused every epoch: resampling the interior
quadrature points each step was observed to hinder convergence, so training
subsamples minibatches from this fixed pool instead.  All draws are
deterministic in the seed; minibatch selection is keyed by
(run seed, epoch, step) so a run can be replayed bit for bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .volume import voxel_centers

N_FACES = 6
N_EDGES = 12
_POOL_STREAM = 1
_BATCH_STREAM = 2

# (axis, side) per face; side 0 pins the coordinate at 0.0, side 1 at 1.0.
FACES: tuple[tuple[int, int], ...] = tuple(
    (axis, side) for axis in range(3) for side in (0, 1)
)

# (free axis, (pinned axis, side), (pinned axis, side)) per edge.
EDGES: tuple[tuple[int, tuple[int, int], tuple[int, int]], ...] = tuple(
    (free, (p1, s1), (p2, s2))
    for free in range(3)
    for p1, p2 in [tuple(a for a in range(3) if a != free)]
    for s1 in (0, 1)
    for s2 in (0, 1)
)


@dataclass
class SamplePool:
    """Fixed per-run sample sets: interior quadrature points, the voxel-centre
    grid of the target image, and boundary face/edge points for the soft
    constraint."""

    interior: np.ndarray                 # (n_int, 3), strictly inside (0,1)^3
    image_grid: np.ndarray               # (M, 3) voxel centres, x fastest; (0,3) if no image
    face_samples: list = field(default_factory=list)  # 6 arrays (faces_per, 3)
    edge_samples: list = field(default_factory=list)  # 12 arrays (edges_per, 3)
    seed: int = 0


def _open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draws strictly inside the open cube; the measure-zero value
    0.0 that random() can return is rejected and redrawn."""
    pts = rng.random((n, 3))
    bad = np.flatnonzero(np.any(pts == 0.0, axis=1))
    while bad.size:
        pts[bad] = rng.random((bad.size, 3))
        bad = bad[np.any(pts[bad] == 0.0, axis=1)]
    return pts


def build_pool(
    n_int: int = 10000,
    image_dims=None,
    seed: int = 0,
    faces_per: int = 400,
    edges_per: int = 20,
) -> SamplePool:
    """Draw a pool.  Identical arguments give an identical pool; draw order
    is fixed (interior, then faces, then edges)."""
    if n_int < 1:
        raise ContractError(f"n_int must be positive, got {n_int}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _POOL_STREAM]))
    interior = _open_uniform(rng, n_int)
    faces = []
    for axis, side in FACES:
        pts = _open_uniform(rng, faces_per)
        pts[:, axis] = float(side)
        faces.append(pts)
    edges = []
    for _free, (p1, s1), (p2, s2) in EDGES:
        pts = _open_uniform(rng, edges_per)
        pts[:, p1] = float(s1)
        pts[:, p2] = float(s2)
        edges.append(pts)
    if image_dims is None:
        grid = np.zeros((0, 3), dtype=np.float64)
    else:
        grid = voxel_centers(image_dims)
    return SamplePool(interior, grid, faces, edges, int(seed))


def draw_batch(
    pool: SamplePool, which: str, batch_size: int, step_key: tuple[int, int, int]
) -> np.ndarray:
    """Subsample a minibatch (without replacement) from one pool set.

    step_key is (run seed, epoch, step); together with the set name it fully
    determines the draw.  batch_size equal to the set size yields a
    permutation of the whole set.
    """
    sets = {"interior": pool.interior, "image": pool.image_grid}
    try:
        arr = sets[which]
    except KeyError:
        raise ContractError(f"unknown pool set {which!r}; use one of {sorted(sets)}") from None
    n = arr.shape[0]
    if not (1 <= batch_size <= n):
        raise ContractError(
            f"batch_size {batch_size} out of range for {which!r} pool of size {n}"
        )
    run_seed, epoch, step = (int(v) for v in step_key)
    stream = 0 if which == "interior" else 1
    rng = np.random.default_rng(
        np.random.SeedSequence([run_seed, _BATCH_STREAM, epoch, step, stream])
    )
    idx = rng.choice(n, size=batch_size, replace=False)
    return arr[idx]


def mc_estimate(values: np.ndarray) -> float:
    """Arithmetic mean as the Monte Carlo integral over the unit cube
    (volume 1); deterministic for a fixed array."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ContractError("mc_estimate over an empty batch")
    return float(np.mean(values))


def pool_digest(pool: SamplePool) -> str:
    """SHA-256 over every sample array, for run manifests and shared-pool
    checks across ablation arms."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(pool.interior).tobytes())
    h.update(np.ascontiguousarray(pool.image_grid).tobytes())
    for arr in pool.face_samples:
        h.update(np.ascontiguousarray(arr).tobytes())
    for arr in pool.edge_samples:
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
