"""Smooth neural map of the unit cube with exact boundary pinning.

The map is a small residual network: an affine lift from 3 to `width`
channels, `blocks` two-layer residual blocks, an affine head back to 3
channels, and finally the multiplicative boundary wrap
f(x) = g(x) * x * (1 - x) + x, which pins every face of [0, 1]^3 exactly.

Everything is evaluated through derivative jets (value, Jacobian,
Laplacian), so forward() returns exact spatial derivatives along with the
map value.  Traced variants record per-layer inputs so the tape module can
run the hand-derived adjoints in reverse and accumulate parameter
gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, FileFormatError
from .jets import (
    ACTIVATIONS,
    Jet3,
    activation_jet,
    activation_jet_backward,
    activation_value_backward,
    affine_jet,
    affine_jet_backward,
    affine_value,
    affine_value_backward,
    det3,
    get_activation,
    hadamard_boundary_jet,
    hadamard_boundary_jet_backward,
    hadamard_boundary_value,
    hadamard_boundary_value_backward,
    seed_jet,
)

CHECKPOINT_MAGIC_KEYS = ("width", "blocks", "activation", "param_count")


@dataclass
class BlockParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class NetParams:
    """Weights of the residual ansatz, kept in structured form.

    to_vector/from_vector define the canonical flat layout used by the
    optimizer and the checkpoint format: lift W, lift b, then per block
    W1, b1, W2, b2, then head W, head b, each raveled row-major.
    """

    lift_w: np.ndarray
    lift_b: np.ndarray
    blocks: list[BlockParams]
    out_w: np.ndarray
    out_b: np.ndarray
    activation: str = "tanh"

    @property
    def width(self) -> int:
        return self.lift_w.shape[0]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def param_count(self) -> int:
        return count_params(self.width, self.n_blocks)

    def to_vector(self) -> np.ndarray:
        parts = [self.lift_w.ravel(), self.lift_b.ravel()]
        for blk in self.blocks:
            parts += [blk.w1.ravel(), blk.b1.ravel(), blk.w2.ravel(), blk.b2.ravel()]
        parts += [self.out_w.ravel(), self.out_b.ravel()]
        return np.concatenate(parts)

    @classmethod
    def from_vector(
        cls, vec: np.ndarray, width: int, n_blocks: int, activation: str = "tanh"
    ) -> "NetParams":
        vec = np.asarray(vec, dtype=np.float64)
        expected = count_params(width, n_blocks)
        if vec.ndim != 1 or vec.size != expected:
            raise ContractError(
                f"parameter vector has {vec.size} entries, "
                f"architecture (width={width}, blocks={n_blocks}) needs {expected}"
            )
        pos = 0

        def take(shape):
            nonlocal pos
            n = int(np.prod(shape))
            out = vec[pos : pos + n].reshape(shape).copy()
            pos += n
            return out

        lift_w = take((width, 3))
        lift_b = take((width,))
        blocks = []
        for _ in range(n_blocks):
            w1 = take((width, width))
            b1 = take((width,))
            w2 = take((width, width))
            b2 = take((width,))
            blocks.append(BlockParams(w1, b1, w2, b2))
        out_w = take((3, width))
        out_b = take((3,))
        return cls(lift_w, lift_b, blocks, out_w, out_b, activation)


def count_params(width: int, n_blocks: int) -> int:
    """(3w + w) for the lift, 2 (w^2 + w) per block, (3w + 3) for the head."""
    return (3 * width + width) + n_blocks * 2 * (width * width + width) + (3 * width + 3)


def init_params(
    width: int = 20, n_blocks: int = 3, activation: str = "tanh", seed: int = 0
) -> NetParams:
    """Seeded initialization: weights i.i.d. uniform on
    [-sqrt(1/fan_in), +sqrt(1/fan_in)], biases zero.  The boundary wrap
    damps whatever g this produces, so the initial map starts out as a
    moderate perturbation of the identity."""
    if width < 3:
        raise ConfigError(f"width must be at least 3, got {width}")
    if n_blocks < 1:
        raise ConfigError(f"blocks must be at least 1, got {n_blocks}")
    get_activation(activation)  # raises on unknown name
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))

    def uniform(shape, fan_in):
        bound = math.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    lift_w = uniform((width, 3), 3)
    lift_b = np.zeros(width)
    blocks = []
    for _ in range(n_blocks):
        blocks.append(
            BlockParams(
                uniform((width, width), width),
                np.zeros(width),
                uniform((width, width), width),
                np.zeros(width),
            )
        )
    out_w = uniform((3, width), width)
    out_b = np.zeros(3)
    return NetParams(lift_w, lift_b, blocks, out_w, out_b, activation)


@dataclass
class NetGrads:
    """Parameter cotangents mirroring NetParams; accumulated in place."""

    lift_w: np.ndarray
    lift_b: np.ndarray
    blocks: list[BlockParams]
    out_w: np.ndarray
    out_b: np.ndarray

    @classmethod
    def zeros_like(cls, params: NetParams) -> "NetGrads":
        return cls(
            np.zeros_like(params.lift_w),
            np.zeros_like(params.lift_b),
            [
                BlockParams(
                    np.zeros_like(b.w1),
                    np.zeros_like(b.b1),
                    np.zeros_like(b.w2),
                    np.zeros_like(b.b2),
                )
                for b in params.blocks
            ],
            np.zeros_like(params.out_w),
            np.zeros_like(params.out_b),
        )

    def to_vector(self) -> np.ndarray:
        parts = [self.lift_w.ravel(), self.lift_b.ravel()]
        for blk in self.blocks:
            parts += [blk.w1.ravel(), blk.b1.ravel(), blk.w2.ravel(), blk.b2.ravel()]
        parts += [self.out_w.ravel(), self.out_b.ravel()]
        return np.concatenate(parts)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class MapEval:
    """Map value with exact spatial derivatives at a batch of points."""

    f: np.ndarray    # (..., 3)
    jac: np.ndarray  # (..., 3, 3)
    lap: np.ndarray  # (..., 3)
    det: np.ndarray  # (...,)


@dataclass
class Trace:
    """Per-layer inputs recorded during a forward sweep, in visit order.

    jets=True caches full jets (one per affine/activation input); jets=False
    caches values only.  The reverse sweep consumes the list back to front.
    """

    x: np.ndarray
    hard: bool
    jets: bool
    caches: list = field(default_factory=list)


def _check_points(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 3:
        raise ContractError(f"points must have trailing dimension 3, got {x.shape}")
    return x


def forward_jets_traced(
    params: NetParams, x: np.ndarray, hard: bool = True
) -> tuple[Jet3, Trace]:
    x = _check_points(x)
    act = get_activation(params.activation)
    trace = Trace(x=x, hard=hard, jets=True)
    rec = trace.caches.append

    jet = seed_jet(x)
    rec(jet)
    h = affine_jet(params.lift_w, params.lift_b, jet)
    for blk in params.blocks:
        rec(h)
        u = affine_jet(blk.w1, blk.b1, h)
        rec(u)
        a = activation_jet(act, u)
        rec(a)
        v = affine_jet(blk.w2, blk.b2, a)
        rec(v)
        s = activation_jet(act, v)
        h = Jet3(h.value + s.value, h.jac + s.jac, h.lap + s.lap)
    rec(h)
    g = affine_jet(params.out_w, params.out_b, h)
    out = hadamard_boundary_jet(g, x) if hard else g
    return out, trace


def backward_jets_traced(
    params: NetParams, trace: Trace, bar: Jet3, grads: NetGrads
) -> None:
    """Reverse sweep matching forward_jets_traced; accumulates into grads."""
    act = get_activation(params.activation)
    caches = trace.caches
    k = len(caches)

    bar_g = hadamard_boundary_jet_backward(trace.x, bar) if trace.hard else bar
    k -= 1
    h_in = caches[k]
    bar_h, dw, db = affine_jet_backward(params.out_w, h_in, bar_g)
    grads.out_w += dw
    grads.out_b += db
    for bi in range(len(params.blocks) - 1, -1, -1):
        blk = params.blocks[bi]
        gblk = grads.blocks[bi]
        v = caches[k - 1]
        a = caches[k - 2]
        u = caches[k - 3]
        block_in = caches[k - 4]
        k -= 4
        bar_s = bar_h  # residual: same cotangent flows to skip and branch
        bar_v = activation_jet_backward(act, v, bar_s)
        bar_a, dw2, db2 = affine_jet_backward(blk.w2, a, bar_v)
        gblk.w2 += dw2
        gblk.b2 += db2
        bar_u = activation_jet_backward(act, u, bar_a)
        bar_in, dw1, db1 = affine_jet_backward(blk.w1, block_in, bar_u)
        gblk.w1 += dw1
        gblk.b1 += db1
        bar_h = Jet3(
            bar_h.value + bar_in.value,
            bar_h.jac + bar_in.jac,
            bar_h.lap + bar_in.lap,
        )
    seed = caches[0]
    _, dw0, db0 = affine_jet_backward(params.lift_w, seed, bar_h)
    grads.lift_w += dw0
    grads.lift_b += db0


def forward_values_traced(
    params: NetParams, x: np.ndarray, hard: bool = True
) -> tuple[np.ndarray, Trace]:
    """Value-only sweep for loss terms that never touch spatial derivatives."""
    x = _check_points(x)
    act = get_activation(params.activation)
    trace = Trace(x=x, hard=hard, jets=False)
    rec = trace.caches.append

    rec(x)
    h = affine_value(params.lift_w, params.lift_b, x)
    for blk in params.blocks:
        rec(h)
        u = affine_value(blk.w1, blk.b1, h)
        rec(u)
        a = act.fn(u)
        rec(a)
        v = affine_value(blk.w2, blk.b2, a)
        rec(v)
        h = h + act.fn(v)
    rec(h)
    g = affine_value(params.out_w, params.out_b, h)
    out = hadamard_boundary_value(g, x) if hard else g
    return out, trace


def backward_values_traced(
    params: NetParams, trace: Trace, bar: np.ndarray, grads: NetGrads
) -> None:
    act = get_activation(params.activation)
    caches = trace.caches
    k = len(caches)

    bar_g = hadamard_boundary_value_backward(trace.x, bar) if trace.hard else bar
    k -= 1
    h_in = caches[k]
    bar_h, dw, db = affine_value_backward(params.out_w, h_in, bar_g)
    grads.out_w += dw
    grads.out_b += db
    for bi in range(len(params.blocks) - 1, -1, -1):
        blk = params.blocks[bi]
        gblk = grads.blocks[bi]
        v = caches[k - 1]
        a = caches[k - 2]
        u = caches[k - 3]
        block_in = caches[k - 4]
        k -= 4
        bar_v = activation_value_backward(act, v, bar_h)
        bar_a, dw2, db2 = affine_value_backward(blk.w2, a, bar_v)
        gblk.w2 += dw2
        gblk.b2 += db2
        bar_u = activation_value_backward(act, u, bar_a)
        bar_in, dw1, db1 = affine_value_backward(blk.w1, block_in, bar_u)
        gblk.w1 += dw1
        gblk.b1 += db1
        bar_h = bar_h + bar_in
    x_in = caches[0]
    _, dw0, db0 = affine_value_backward(params.lift_w, x_in, bar_h)
    grads.lift_w += dw0
    grads.lift_b += db0


def raw_forward(params: NetParams, x: np.ndarray) -> Jet3:
    """Jet of the unconstrained network (no boundary wrap)."""
    jet, _ = forward_jets_traced(params, x, hard=False)
    return jet


def forward(params: NetParams, x: np.ndarray, hard: bool = True) -> MapEval:
    """Evaluate the constrained map with exact derivatives.

    hard=False evaluates the raw network as the map itself; that variant is
    what a soft-boundary ablation trains.
    """
    jet, _ = forward_jets_traced(params, x, hard=hard)
    return MapEval(jet.value, jet.jac, jet.lap, det3(jet.jac))


def forward_values(params: NetParams, x: np.ndarray, hard: bool = True) -> np.ndarray:
    values, _ = forward_values_traced(params, x, hard=hard)
    return values


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: NetParams, path) -> None:
    """One JSON header line, then the flat parameter vector as little-endian
    64-bit floats."""
    header = {
        "width": params.width,
        "blocks": params.n_blocks,
        "activation": params.activation,
        "param_count": params.param_count,
    }
    vec = params.to_vector()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(vec.astype("<f8").tobytes())


def load_checkpoint(path) -> NetParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise FileFormatError(f"{path}: no header line (no newline in file)")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"{path}: malformed header at byte 0: {exc}") from None
    for key in CHECKPOINT_MAGIC_KEYS:
        if key not in header:
            raise FileFormatError(f"{path}: header missing key {key!r}")
    width = int(header["width"])
    n_blocks = int(header["blocks"])
    activation = str(header["activation"])
    if activation not in ACTIVATIONS:
        raise FileFormatError(f"{path}: unknown activation {activation!r} in header")
    expected = count_params(width, n_blocks)
    if int(header["param_count"]) != expected:
        raise FileFormatError(
            f"{path}: header param_count {header['param_count']} does not match "
            f"architecture (width={width}, blocks={n_blocks}): expected {expected}"
        )
    payload = blob[nl + 1 :]
    if len(payload) != expected * 8:
        raise FileFormatError(
            f"{path}: payload at byte {nl + 1} has {len(payload)} bytes, "
            f"expected {expected * 8}"
        )
    vec = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(vec)):
        bad = int(np.flatnonzero(~np.isfinite(vec))[0])
        raise FileFormatError(
            f"{path}: non-finite parameter at index {bad} "
            f"(byte offset {nl + 1 + 8 * bad})"
        )
    return NetParams.from_vector(vec, width, n_blocks, activation)
