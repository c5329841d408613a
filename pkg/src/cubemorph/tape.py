"""Reverse-mode parameter gradients over recorded loss terms.

total_loss() runs a handful of traced forward sweeps (interior quadrature
with full jets; landmarks, image points and boundary points with values
only), computes each scalar term, and records on the tape how to seed that
term's cotangent at the output of its sweep.  backward() then replays the
hand-derived per-layer adjoints in reverse and accumulates one flat gradient
vector over the parameters.

Gradients are linear in the seeds, so the gradient of the weighted total is
the weighted sum of per-term gradients; both routes are exposed (loss name
or "total") and agree to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ansatz import (
    NetGrads,
    NetParams,
    Trace,
    backward_jets_traced,
    backward_values_traced,
)
from .errors import ContractError
from .jets import Jet3


@dataclass
class PassAdjoint:
    """Cotangent injected at the output of one forward sweep.  jac/lap are
    None for value-only sweeps."""

    value: np.ndarray
    jac: np.ndarray | None = None
    lap: np.ndarray | None = None

    def add_(self, other: "PassAdjoint") -> None:
        self.value = self.value + other.value
        if other.jac is not None:
            self.jac = other.jac if self.jac is None else self.jac + other.jac
        if other.lap is not None:
            self.lap = other.lap if self.lap is None else self.lap + other.lap


@dataclass
class TermRecord:
    """One recorded scalar: its raw (unweighted) value, which sweep it was
    computed from, and how to seed its cotangent scaled by any multiplier."""

    name: str
    raw_value: float
    pass_id: int
    seed: Callable[[float], PassAdjoint]


@dataclass
class GradTape:
    """Opaque record of one extended forward computation.

    Holds enough to (a) re-run the exact same computation (replay) and
    (b) produce the parameter gradient of any recorded scalar (backward).
    """

    params: NetParams
    passes: list[Trace]
    terms: dict[str, TermRecord]
    multipliers: dict[str, float]
    breakdown: "object"
    replay_fn: Callable[[], "object"] = field(repr=False, default=None)


def backward(tape: GradTape, loss: str = "total") -> np.ndarray:
    """Gradient over the flat parameter vector of one recorded scalar.

    loss="total" differentiates the multiplier-weighted sum of all recorded
    terms; any recorded term name gives the gradient of that raw term.
    """
    if loss == "total":
        wanted = [
            (name, tape.multipliers[name])
            for name in tape.terms
            if tape.multipliers.get(name, 0.0) != 0.0
        ]
    elif loss in tape.terms:
        wanted = [(loss, 1.0)]
    else:
        raise ContractError(
            f"tape recorded no scalar named {loss!r}; "
            f"available: {sorted(tape.terms)} or 'total'"
        )
    seeds: dict[int, PassAdjoint] = {}
    for name, scale in wanted:
        rec = tape.terms[name]
        adj = rec.seed(float(scale))
        if rec.pass_id in seeds:
            seeds[rec.pass_id].add_(adj)
        else:
            seeds[rec.pass_id] = adj
    grads = NetGrads.zeros_like(tape.params)
    for pass_id, adj in seeds.items():
        trace = tape.passes[pass_id]
        if trace.jets:
            n_shape = adj.value.shape[:-1]
            bar = Jet3(
                adj.value,
                adj.jac if adj.jac is not None else np.zeros(n_shape + (3, 3)),
                adj.lap if adj.lap is not None else np.zeros(n_shape + (3,)),
            )
            backward_jets_traced(tape.params, trace, bar, grads)
        else:
            if adj.jac is not None or adj.lap is not None:
                raise ContractError(
                    "derivative cotangent seeded on a value-only sweep"
                )
            backward_values_traced(tape.params, trace, adj.value, grads)
    return grads.to_vector()


def replay(tape: GradTape):
    """Re-run the recorded computation on its stored inputs; reproduces the
    recorded loss values bit for bit."""
    if tape.replay_fn is None:
        raise ContractError("tape carries no replay record")
    return tape.replay_fn()
