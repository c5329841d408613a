"""Post-training diagnostics and exports.

Figures are left to the caller; this module computes their data (determinant
histograms, signed colour values, warped images, planar cross-sections, a
final-loss summary) and writes them as CSV/JSON so any plotting tool can
consume them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .ansatz import NetParams, forward, forward_values
from .errors import ContractError
from .trainer import HistoryRow
from .volume import Volume3, sample, voxel_centers


@dataclass
class DetHistogram:
    sample_count: int
    bin_edges: np.ndarray  # (bins + 1,)
    counts: np.ndarray     # (bins,)
    min_det: float
    max_det: float
    negative_fraction: float  # fraction with det <= 0


def histogram_of_dets(dets: np.ndarray, bins: int = 100) -> DetHistogram:
    """Uniform-bin histogram over [min, max] of the given determinants."""
    dets = np.asarray(dets, dtype=np.float64).ravel()
    if dets.size == 0:
        raise ContractError("histogram over an empty determinant set")
    if bins < 1:
        raise ContractError(f"bins must be positive, got {bins}")
    lo = float(dets.min())
    hi = float(dets.max())
    counts, edges = np.histogram(dets, bins=bins, range=(lo, hi))
    return DetHistogram(
        sample_count=int(dets.size),
        bin_edges=edges,
        counts=counts,
        min_det=lo,
        max_det=hi,
        negative_fraction=float(np.mean(dets <= 0.0)),
    )


def det_histogram(
    params: NetParams,
    n_samples: int = 100000,
    bins: int = 100,
    seed: int = 0,
    hard: bool = True,
) -> DetHistogram:
    """Histogram of det grad f over seeded uniform samples of the cube."""
    if n_samples < 1:
        raise ContractError(f"n_samples must be positive, got {n_samples}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    pts = rng.random((n_samples, 3))
    ev = forward(params, pts, hard=hard)
    return histogram_of_dets(ev.det, bins=bins)


def jacobian_color(det: np.ndarray):
    """Signed colour value tanh(ln(3)/2 * det): 0 at det 0, 0.5 at det 1,
    saturating for large |det|; sign follows orientation."""
    det = np.asarray(det, dtype=np.float64)
    out = np.tanh(0.5 * np.log(3.0) * det)
    return float(out) if out.ndim == 0 else out


def warp_image(
    params: NetParams, source: Volume3, out_dims, hard: bool = True
) -> Volume3:
    """Resample the source through the map: out voxel centre q gets
    S(f(q)), clamped into the cube before sampling."""
    dims = tuple(int(d) for d in out_dims)
    centers = voxel_centers(dims)
    f = forward_values(params, centers, hard=hard)
    vals = sample(source, np.clip(f, 0.0, 1.0))
    return Volume3(vals.reshape(dims, order="F"))


def cross_sections(
    params: NetParams,
    axis: int,
    levels,
    grid_n: int = 40,
    hard: bool = True,
) -> dict:
    """Map a grid_n x grid_n lattice on each plane {x_axis = level} through
    f; returns inputs, outputs, determinants and colour values, one row per
    lattice point (grid_n^2 per level)."""
    if axis not in (0, 1, 2):
        raise ContractError(f"axis must be 0, 1 or 2, got {axis}")
    if grid_n < 2:
        raise ContractError(f"grid_n must be at least 2, got {grid_n}")
    levels = [float(v) for v in np.atleast_1d(levels)]
    for v in levels:
        if not (0.0 <= v <= 1.0):
            raise ContractError(f"level {v} outside [0, 1]")
    free = [a for a in range(3) if a != axis]
    line = np.linspace(0.0, 1.0, grid_n)
    u, v = np.meshgrid(line, line, indexing="ij")
    pts_list = []
    for level in levels:
        pts = np.empty((grid_n * grid_n, 3))
        pts[:, axis] = level
        pts[:, free[0]] = u.ravel()
        pts[:, free[1]] = v.ravel()
        pts_list.append(pts)
    pts = np.concatenate(pts_list, axis=0)
    ev = forward(params, pts, hard=hard)
    return {
        "inputs": pts,
        "outputs": ev.f,
        "det": ev.det,
        "color": jacobian_color(ev.det),
    }


def loss_table(history: list[HistoryRow]) -> dict:
    """Final-epoch summary mirroring the reference result tables."""
    if not history:
        raise ContractError("loss table of an empty history")
    final = history[-1].breakdown
    return {
        "epoch": history[-1].epoch,
        "landmark_loss": final.landmark,
        "intensity_loss": final.intensity,
        "conformality_loss": final.conformality,
        "smoothness_loss": final.smoothness,
        "bijectivity_loss": final.bijectivity,
        "volumetric_loss": final.volumetric,
        "soft_boundary_loss": final.soft_boundary,
        "total": final.total,
        "omega_plus_fraction": final.omega_plus_fraction,
    }


# ---------------------------------------------------------------------------
# exports


def write_histogram_csv(hist: DetHistogram, path) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
            writer.writerow([f"{lo:.17g}", f"{hi:.17g}", int(c)])


def write_point_cloud_csv(sections: dict, path) -> None:
    """Rows: in_x,in_y,in_z,out_x,out_y,out_z,det,color."""
    inputs = sections["inputs"]
    outputs = sections["outputs"]
    det = sections["det"]
    color = sections["color"]
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["in_x", "in_y", "in_z", "out_x", "out_y", "out_z", "det", "color"]
        )
        for i in range(inputs.shape[0]):
            writer.writerow(
                [f"{v:.17g}" for v in (*inputs[i], *outputs[i], det[i], color[i])]
            )


def write_summary_json(table: dict, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
