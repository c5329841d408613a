"""Scalar images on the unit cube with trilinear sampling.

Voxel (i, j, k) of a (Dx, Dy, Dz) image is centred at
((i + 0.5) / Dx, (j + 0.5) / Dy, (k + 0.5) / Dz); the image therefore covers
[0, 1]^3 with a half-voxel margin outside the lattice of centres, where
sampling extrapolates with the nearest value (constant in the clamped
direction, so the spatial gradient vanishes there).

In memory the data is float64 with shape (Dx, Dy, Dz) indexed [ix, iy, iz];
on disk it is a one-line JSON header followed by raw little-endian float32,
x index varying fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FileFormatError


@dataclass
class Volume3:
    data: np.ndarray  # (Dx, Dy, Dz) float64

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ContractError(f"volume data must be 3D, got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ContractError(f"volume dims must be positive, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ContractError("volume contains non-finite voxels")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


def voxel_centers(dims) -> np.ndarray:
    """All voxel centres of a (Dx, Dy, Dz) grid, x index fastest, shape (M, 3)."""
    dx, dy, dz = (int(d) for d in dims)
    idx = np.arange(dx * dy * dz)
    ix = idx % dx
    iy = (idx // dx) % dy
    iz = idx // (dx * dy)
    return np.stack(
        [(ix + 0.5) / dx, (iy + 0.5) / dy, (iz + 0.5) / dz], axis=-1
    ).astype(np.float64)


def _locate(t: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cell index, in-cell fraction and margin mask for lattice coordinate t.

    Queries exactly on an interior cell face resolve to the lower-index cell
    (fraction 1).  Outside the centre lattice the fraction clamps, which is
    the constant extrapolation; the mask marks those queries so gradients can
    be zeroed in that direction.
    """
    if dim == 1:
        z = np.zeros_like(t)
        return z.astype(np.intp), z, np.ones(t.shape, dtype=bool)
    i = np.floor(t)
    on_face = (t == i) & (i > 0)
    i = i - on_face
    i = np.clip(i, 0, dim - 2).astype(np.intp)
    frac = np.clip(t - i, 0.0, 1.0)
    margin = (t < 0.0) | (t > dim - 1)
    return i, frac, margin


def _corners(vol: Volume3, p: np.ndarray):
    dx, dy, dz = vol.dims
    t = p * np.array([dx, dy, dz], dtype=np.float64) - 0.5
    ix, fx, mx = _locate(t[..., 0], dx)
    iy, fy, my = _locate(t[..., 1], dy)
    iz, fz, mz = _locate(t[..., 2], dz)
    jx = np.minimum(ix + 1, dx - 1)
    jy = np.minimum(iy + 1, dy - 1)
    jz = np.minimum(iz + 1, dz - 1)
    d = vol.data
    c = (
        d[ix, iy, iz], d[jx, iy, iz], d[ix, jy, iz], d[jx, jy, iz],
        d[ix, iy, jz], d[jx, iy, jz], d[ix, jy, jz], d[jx, jy, jz],
    )
    return c, (fx, fy, fz), (mx, my, mz)


def sample(vol: Volume3, p: np.ndarray) -> np.ndarray:
    """Trilinear interpolation at points p (..., 3) in [0, 1]^3.

    Exact at voxel centres.  Callers clamp p into the cube first; for safety
    out-of-range queries behave like their clamped counterparts.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ContractError(f"query points must have trailing dimension 3, got {p.shape}")
    (c000, c100, c010, c110, c001, c101, c011, c111), (fx, fy, fz), _ = _corners(vol, p)
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    return (
        c000 * gx * gy * gz
        + c100 * fx * gy * gz
        + c010 * gx * fy * gz
        + c110 * fx * fy * gz
        + c001 * gx * gy * fz
        + c101 * fx * gy * fz
        + c011 * gx * fy * fz
        + c111 * fx * fy * fz
    )


def sample_grad(vol: Volume3, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Value and analytic spatial gradient of the interpolant at p.

    The gradient is the in-cell derivative of the trilinear blend scaled by
    the grid resolution, and zero in any direction where the query sits in
    the extrapolation margin.  On interior cell faces the lower-index cell's
    derivative is reported (same tie rule as sample()).
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ContractError(f"query points must have trailing dimension 3, got {p.shape}")
    dx, dy, dz = vol.dims
    (c000, c100, c010, c110, c001, c101, c011, c111), (fx, fy, fz), (mx, my, mz) = _corners(
        vol, p
    )
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    value = (
        c000 * gx * gy * gz
        + c100 * fx * gy * gz
        + c010 * gx * fy * gz
        + c110 * fx * fy * gz
        + c001 * gx * gy * fz
        + c101 * fx * gy * fz
        + c011 * gx * fy * fz
        + c111 * fx * fy * fz
    )
    ddx = (
        (c100 - c000) * gy * gz
        + (c110 - c010) * fy * gz
        + (c101 - c001) * gy * fz
        + (c111 - c011) * fy * fz
    ) * dx
    ddy = (
        (c010 - c000) * gx * gz
        + (c110 - c100) * fx * gz
        + (c011 - c001) * gx * fz
        + (c111 - c101) * fx * fz
    ) * dy
    ddz = (
        (c001 - c000) * gx * gy
        + (c101 - c100) * fx * gy
        + (c011 - c010) * gx * fy
        + (c111 - c110) * fx * fy
    ) * dz
    ddx = np.where(mx, 0.0, ddx)
    ddy = np.where(my, 0.0, ddy)
    ddz = np.where(mz, 0.0, ddz)
    return value, np.stack([ddx, ddy, ddz], axis=-1)


# ---------------------------------------------------------------------------
# file format


def write_volume(vol: Volume3, path) -> None:
    header = {"dims": list(vol.dims), "dtype": "f32", "order": "x-fastest"}
    payload = np.ravel(vol.data, order="F").astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(payload)


def read_volume(path) -> Volume3:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise FileFormatError(f"{path}: no header line (no newline in file)")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"{path}: malformed header at byte 0: {exc}") from None
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and d > 0 for d in dims)
    ):
        raise FileFormatError(f"{path}: bad dims in header: {dims!r}")
    if header.get("dtype") != "f32" or header.get("order") != "x-fastest":
        raise FileFormatError(
            f"{path}: unsupported dtype/order {header.get('dtype')!r}/"
            f"{header.get('order')!r}"
        )
    expected = dims[0] * dims[1] * dims[2] * 4
    payload = blob[nl + 1 :]
    if len(payload) != expected:
        raise FileFormatError(
            f"{path}: payload at byte {nl + 1} has {len(payload)} bytes, "
            f"expected {expected} for dims {dims}"
        )
    raw = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(raw)):
        bad = int(np.flatnonzero(~np.isfinite(raw))[0])
        raise FileFormatError(
            f"{path}: non-finite voxel at flat index {bad} "
            f"(byte offset {nl + 1 + 4 * bad})"
        )
    data = raw.reshape(dims, order="F")
    return Volume3(data)
