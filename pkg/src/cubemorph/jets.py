"""Analytic propagation of derivative jets through network layers.

A jet bundles the value of a vector field together with its Jacobian with
respect to the 3D input point and its componentwise Laplacian.  Propagating
the triple layer by layer gives exact spatial derivatives of the network in
one forward sweep, without nesting a generic autodiff engine.

Every forward rule here has its hand-derived adjoint next to it; the reverse
sweep in the tape module composes these per-layer adjoints to get parameter
gradients of any scalar built from the final jet.

Shapes: a jet of width d over a batch of n points stores value (n, d),
jac (n, d, 3) and lap (n, d).  Unbatched jets (leading axis absent) are
accepted everywhere; the rules are written with broadcasting ellipses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError


@dataclass
class Jet3:
    """Value, spatial Jacobian and componentwise Laplacian of a map at a
    point (or batch of points) of the 3D domain."""

    value: np.ndarray  # (..., d)
    jac: np.ndarray    # (..., d, 3)
    lap: np.ndarray    # (..., d)

    @property
    def width(self) -> int:
        return self.value.shape[-1]

    def copy(self) -> "Jet3":
        return Jet3(self.value.copy(), self.jac.copy(), self.lap.copy())


# ---------------------------------------------------------------------------
# activation registry


@dataclass(frozen=True)
class Activation:
    """Componentwise activation with closed-form derivatives up to third
    order.  The third derivative feeds the adjoint of the Laplacian rule.
    chain(u) evaluates (value, d1, d2, d3) sharing subexpressions; the hot
    paths use it so tanh/arctan is computed once per layer."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    d3: Callable[[np.ndarray], np.ndarray]
    chain: Callable[[np.ndarray], tuple]


def _tanh_chain(u):
    t = np.tanh(u)
    s = 1.0 - t * t
    return t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)


def _tanh_d1(u):
    t = np.tanh(u)
    return 1.0 - t * t


def _tanh_d2(u):
    t = np.tanh(u)
    return -2.0 * t * (1.0 - t * t)


def _tanh_d3(u):
    t = np.tanh(u)
    s = 1.0 - t * t
    return s * (6.0 * t * t - 2.0)


def _arctan_chain(u):
    q = 1.0 / (1.0 + u * u)
    q2 = q * q
    return np.arctan(u), q, -2.0 * u * q2, (6.0 * u * u - 2.0) * q2 * q


def _arctan_d1(u):
    return 1.0 / (1.0 + u * u)


def _arctan_d2(u):
    q = 1.0 + u * u
    return -2.0 * u / (q * q)


def _arctan_d3(u):
    q = 1.0 + u * u
    return (6.0 * u * u - 2.0) / (q * q * q)


ACTIVATIONS: dict[str, Activation] = {
    "tanh": Activation("tanh", np.tanh, _tanh_d1, _tanh_d2, _tanh_d3, _tanh_chain),
    "arctan": Activation(
        "arctan", np.arctan, _arctan_d1, _arctan_d2, _arctan_d3, _arctan_chain
    ),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ContractError(
            f"unknown activation {name!r}; available: {sorted(ACTIVATIONS)}"
        ) from None


# ---------------------------------------------------------------------------
# forward rules


def seed_jet(x: np.ndarray) -> Jet3:
    """Jet of the identity map at x: value x, Jacobian I, Laplacian 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 3:
        raise ContractError(f"points must have trailing dimension 3, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractError("seed point contains non-finite coordinates")
    eye = np.broadcast_to(np.eye(3), x.shape + (3,)).copy()
    return Jet3(x.copy(), eye, np.zeros_like(x))


def affine_jet(w: np.ndarray, b: np.ndarray, jet: Jet3) -> Jet3:
    """Push a jet through u -> W u + b.  All three slots transform linearly."""
    if w.shape[1] != jet.width:
        raise ContractError(
            f"affine expects input width {w.shape[1]}, jet has width {jet.width}"
        )
    value = jet.value @ w.T + b
    jac = np.matmul(w, jet.jac)
    lap = jet.lap @ w.T
    return Jet3(value, jac, lap)


def affine_jet_backward(
    w: np.ndarray, in_jet: Jet3, bar: Jet3
) -> tuple[Jet3, np.ndarray, np.ndarray]:
    """Adjoint of affine_jet: cotangents for the input jet and for (W, b)."""
    bar_value = bar.value @ w
    bar_jac = np.matmul(w.T, bar.jac)
    bar_lap = bar.lap @ w
    # Parameter cotangents sum over the batch (and over the 3 jet columns).
    bv = bar.value.reshape(-1, bar.value.shape[-1])
    bl = bar.lap.reshape(-1, bar.lap.shape[-1])
    iv = in_jet.value.reshape(-1, in_jet.value.shape[-1])
    il = in_jet.lap.reshape(-1, in_jet.lap.shape[-1])
    # Fold the jet columns into the batch axis so the contraction is one GEMM.
    bj = bar.jac.swapaxes(-1, -2).reshape(-1, bar.jac.shape[-2])
    ij = in_jet.jac.swapaxes(-1, -2).reshape(-1, in_jet.jac.shape[-2])
    dw = bv.T @ iv + bj.T @ ij + bl.T @ il
    db = bv.sum(axis=0)
    return Jet3(bar_value, bar_jac, bar_lap), dw, db


def activation_jet(act: Activation, jet: Jet3) -> Jet3:
    """Push a jet through a componentwise activation.

    value_i = s(u_i); jac row i scales by s'(u_i); the Laplacian picks up the
    curvature of s against the squared norm of the row:
    lap_i = s''(u_i) |grad u_i|^2 + s'(u_i) lap_i.
    """
    value, s1, s2, _ = act.chain(jet.value)
    jac = jet.jac * s1[..., None]
    grad_sq = np.sum(jet.jac * jet.jac, axis=-1)
    lap = s2 * grad_sq + s1 * jet.lap
    return Jet3(value, jac, lap)


def activation_jet_backward(act: Activation, in_jet: Jet3, bar: Jet3) -> Jet3:
    """Adjoint of activation_jet.  The third derivative enters through the
    dependence of s''(u) on u in the Laplacian rule."""
    _, s1, s2, s3 = act.chain(in_jet.value)
    grad_sq = np.sum(in_jet.jac * in_jet.jac, axis=-1)
    bar_value = (
        bar.value * s1
        + np.sum(bar.jac * in_jet.jac, axis=-1) * s2
        + bar.lap * (s3 * grad_sq + s2 * in_jet.lap)
    )
    bar_jac = bar.jac * s1[..., None] + (2.0 * s2 * bar.lap)[..., None] * in_jet.jac
    bar_lap = bar.lap * s1
    return Jet3(bar_value, bar_jac, bar_lap)


def hadamard_boundary_jet(g_jet: Jet3, x: np.ndarray) -> Jet3:
    """Wrap a raw width-3 jet g into f = g * x * (1 - x) + x (componentwise).

    The factor w_i = x_i (1 - x_i) vanishes on the faces x_i in {0, 1}, so f
    pins every boundary face of the unit cube exactly, in floating point
    (0 * g = 0 and x + 0 = x are exact).  Derived rules, with a_i = 1 - 2 x_i:

        f_i      = g_i w_i + x_i
        df_i/dx_j = w_i dg_i/dx_j + delta_ij (g_i a_i + 1)
        lap f_i  = w_i lap g_i + 2 a_i dg_i/dx_i - 2 g_i
    """
    if g_jet.width != 3:
        raise ContractError(f"boundary wrap needs a width-3 jet, got {g_jet.width}")
    x = np.asarray(x, dtype=np.float64)
    w = x * (1.0 - x)
    a = 1.0 - 2.0 * x
    value = g_jet.value * w + x
    jac = g_jet.jac * w[..., None]
    diag = g_jet.value * a + 1.0
    idx = np.arange(3)
    jac[..., idx, idx] += diag
    g_diag = g_jet.jac[..., idx, idx]
    lap = g_jet.lap * w + 2.0 * a * g_diag - 2.0 * g_jet.value
    return Jet3(value, jac, lap)


def hadamard_boundary_jet_backward(x: np.ndarray, bar: Jet3) -> Jet3:
    """Adjoint of hadamard_boundary_jet with respect to the raw jet g."""
    x = np.asarray(x, dtype=np.float64)
    w = x * (1.0 - x)
    a = 1.0 - 2.0 * x
    idx = np.arange(3)
    bar_diag = bar.jac[..., idx, idx]
    bar_value = bar.value * w + bar_diag * a - 2.0 * bar.lap
    bar_jac = bar.jac * w[..., None]
    bar_jac[..., idx, idx] += 2.0 * a * bar.lap
    bar_lap = bar.lap * w
    return Jet3(bar_value, bar_jac, bar_lap)


def add_jets(a: Jet3, b: Jet3) -> Jet3:
    return Jet3(a.value + b.value, a.jac + b.jac, a.lap + b.lap)


# ---------------------------------------------------------------------------
# value-only rules (for loss terms that never touch spatial derivatives)


def affine_value(w: np.ndarray, b: np.ndarray, v: np.ndarray) -> np.ndarray:
    return v @ w.T + b


def affine_value_backward(
    w: np.ndarray, in_v: np.ndarray, bar: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    bar_in = bar @ w
    b2 = bar.reshape(-1, bar.shape[-1])
    i2 = in_v.reshape(-1, in_v.shape[-1])
    return bar_in, b2.T @ i2, b2.sum(axis=0)


def activation_value_backward(
    act: Activation, in_v: np.ndarray, bar: np.ndarray
) -> np.ndarray:
    return bar * act.d1(in_v)


def hadamard_boundary_value(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    return g * (x * (1.0 - x)) + x


def hadamard_boundary_value_backward(x: np.ndarray, bar: np.ndarray) -> np.ndarray:
    return bar * (x * (1.0 - x))


# ---------------------------------------------------------------------------
# small batched 3x3 helpers


def det3(jac: np.ndarray) -> np.ndarray:
    """Determinants of a (..., 3, 3) stack, closed form."""
    a, b, c = jac[..., 0, 0], jac[..., 0, 1], jac[..., 0, 2]
    d, e, f = jac[..., 1, 0], jac[..., 1, 1], jac[..., 1, 2]
    g, h, i = jac[..., 2, 0], jac[..., 2, 1], jac[..., 2, 2]
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


def cof3(jac: np.ndarray) -> np.ndarray:
    """Cofactor matrices of a (..., 3, 3) stack; cof[i, j] = d det / d J[i, j]."""
    a, b, c = jac[..., 0, 0], jac[..., 0, 1], jac[..., 0, 2]
    d, e, f = jac[..., 1, 0], jac[..., 1, 1], jac[..., 1, 2]
    g, h, i = jac[..., 2, 0], jac[..., 2, 1], jac[..., 2, 2]
    out = np.empty(jac.shape, dtype=jac.dtype)
    out[..., 0, 0] = e * i - f * h
    out[..., 0, 1] = f * g - d * i
    out[..., 0, 2] = d * h - e * g
    out[..., 1, 0] = c * h - b * i
    out[..., 1, 1] = a * i - c * g
    out[..., 1, 2] = b * g - a * h
    out[..., 2, 0] = b * f - c * e
    out[..., 2, 1] = c * d - a * f
    out[..., 2, 2] = a * e - b * d
    return out
