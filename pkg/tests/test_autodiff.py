"""Reverse-mode parameter gradients against finite-difference oracles.

A small network keeps the finite-difference sweeps cheap; every recorded
term is differenced independently, and the weighted total is checked to be
the weighted sum of the per-term gradients.
"""

import numpy as np
import pytest

from cubemorph.ansatz import NetParams, init_params
from cubemorph.errors import ContractError
from cubemorph.losses import LossWeights, StepSamples, TrainingData, total_loss
from cubemorph.sampling import build_pool, draw_batch
from cubemorph.synth import LandmarkSet
from cubemorph.tape import backward, replay
from cubemorph.volume import Volume3, voxel_centers

WIDTH = 6
BLOCKS = 2


def _smooth_volume(dims, phase):
    c = voxel_centers(dims)
    field = 0.5 + 0.35 * np.sin(2 * np.pi * c[:, 0] + phase) * np.cos(
        np.pi * c[:, 1]
    ) * (0.5 + c[:, 2])
    return Volume3(field.reshape(dims, order="F"))


def _setup(seed=0, scale=1.0, soft=False):
    """Params, weights, samples and data for one loss evaluation."""
    params = init_params(width=WIDTH, n_blocks=BLOCKS, seed=seed)
    if scale != 1.0:
        params = NetParams.from_vector(params.to_vector() * scale, WIDTH, BLOCKS)
    pool = build_pool(n_int=64, image_dims=(5, 5, 5), seed=seed, faces_per=6, edges_per=2)
    key = (seed, 0, 0)
    samples = StepSamples(
        interior=draw_batch(pool, "interior", 32, key),
        image_points=draw_batch(pool, "image", 16, key),
        face_samples=pool.face_samples if soft else None,
        edge_samples=pool.edge_samples if soft else None,
    )
    rng = np.random.default_rng(seed + 11)
    q = rng.uniform(0.15, 0.85, size=(8, 3))
    p = np.clip(q + 0.05 * np.sin(7.0 * q), 0.05, 0.95)
    data = TrainingData(
        landmarks=LandmarkSet(q, p),
        source=_smooth_volume((5, 5, 5), 0.0),
        target=_smooth_volume((5, 5, 5), 0.4),
    )
    weights = LossWeights(
        smoothness=0.01,
        bijectivity=50.0,
        conformality=1.0,
        volumetric=0.5,
        landmark=500.0,
        intensity=500.0,
        soft_boundary=50.0 if soft else 0.0,
    )
    mode = "soft" if soft else "hard"
    return params, weights, samples, data, mode


def _loss_of_vector(vec, weights, samples, data, mode, which, exponent=2):
    params = NetParams.from_vector(vec, WIDTH, BLOCKS)
    breakdown, _ = total_loss(
        params,
        weights,
        samples,
        data,
        formulation="hybrid",
        boundary_mode=mode,
        bijectivity_exponent=exponent,
    )
    return getattr(breakdown, which)


def _fd_subset(vec, idx, h, f):
    out = np.empty(idx.size)
    for k, i in enumerate(idx):
        up = vec.copy()
        up[i] += h
        dn = vec.copy()
        dn[i] -= h
        out[k] = (f(up) - f(dn)) / (2 * h)
    return out


TERMS = [
    "conformality",
    "smoothness",
    "volumetric",
    "landmark",
    "intensity",
    "soft_boundary",
]


@pytest.mark.parametrize("term", TERMS)
def test_term_gradients_match_finite_differences(term):
    params, weights, samples, data, mode = _setup(seed=0, soft=True)
    _, tape = total_loss(
        params, weights, samples, data, formulation="hybrid", boundary_mode=mode
    )
    grad = backward(tape, loss=term)
    vec = params.to_vector()
    idx = np.random.default_rng(5).choice(vec.size, size=64, replace=False)
    fd = _fd_subset(
        vec, idx, 1e-6, lambda v: _loss_of_vector(v, weights, samples, data, mode, term)
    )
    err = np.linalg.norm(fd - grad[idx])
    assert err <= 1e-6 * max(1.0, np.linalg.norm(grad[idx]))


@pytest.mark.parametrize("exponent", [2, 4])
def test_bijectivity_gradient_matches_fd_where_folds_exist(exponent):
    # a scaled-up network folds the map, so the penalty is active
    params, weights, samples, data, mode = _setup(seed=1, scale=6.0)
    breakdown, tape = total_loss(
        params,
        weights,
        samples,
        data,
        formulation="hybrid",
        boundary_mode=mode,
        bijectivity_exponent=exponent,
    )
    assert breakdown.bijectivity > 0, "setup must actually produce negative determinants"
    assert breakdown.omega_plus_fraction < 1.0
    grad = backward(tape, loss="bijectivity")
    assert np.linalg.norm(grad) > 0
    vec = params.to_vector()
    idx = np.random.default_rng(6).choice(vec.size, size=64, replace=False)
    fd = _fd_subset(
        vec,
        idx,
        1e-6,
        lambda v: _loss_of_vector(v, weights, samples, data, mode, "bijectivity", exponent),
    )
    err = np.linalg.norm(fd - grad[idx])
    assert err <= 1e-6 * max(1.0, np.linalg.norm(grad[idx]))


@pytest.mark.parametrize("soft", [False, True])
def test_total_gradient_is_weighted_sum_of_term_gradients(soft):
    params, weights, samples, data, mode = _setup(seed=2, soft=soft)
    _, tape = total_loss(
        params, weights, samples, data, formulation="hybrid", boundary_mode=mode
    )
    total = backward(tape, loss="total")
    acc = np.zeros_like(total)
    for name, mult in tape.multipliers.items():
        if name in tape.terms and mult != 0.0:
            acc += mult * backward(tape, loss=name)
    np.testing.assert_allclose(total, acc, rtol=1e-10, atol=1e-12)


def test_total_gradient_matches_fd():
    params, weights, samples, data, mode = _setup(seed=3, soft=True)
    _, tape = total_loss(
        params, weights, samples, data, formulation="hybrid", boundary_mode=mode
    )
    grad = backward(tape)
    vec = params.to_vector()
    idx = np.random.default_rng(7).choice(vec.size, size=64, replace=False)
    fd = _fd_subset(
        vec, idx, 1e-6, lambda v: _loss_of_vector(v, weights, samples, data, mode, "total")
    )
    err = np.linalg.norm(fd - grad[idx])
    assert err <= 1e-6 * max(1.0, np.linalg.norm(grad[idx]))


def test_descent_step_lowers_total():
    params, weights, samples, data, mode = _setup(seed=4)
    breakdown, tape = total_loss(
        params, weights, samples, data, formulation="hybrid", boundary_mode=mode
    )
    grad = backward(tape)
    stepped = NetParams.from_vector(params.to_vector() - 1e-4 * grad, WIDTH, BLOCKS)
    after, _ = total_loss(
        stepped, weights, samples, data, formulation="hybrid", boundary_mode=mode
    )
    assert after.total < breakdown.total


def test_backward_unknown_loss_raises():
    params, weights, samples, data, mode = _setup(seed=0)
    _, tape = total_loss(
        params, weights, samples, data, formulation="hybrid", boundary_mode=mode
    )
    with pytest.raises(ContractError, match="available"):
        backward(tape, loss="entropy")


def test_backward_is_deterministic():
    a = _setup(seed=5)
    b = _setup(seed=5)
    grads = []
    for params, weights, samples, data, mode in (a, b):
        _, tape = total_loss(
            params, weights, samples, data, formulation="hybrid", boundary_mode=mode
        )
        grads.append(backward(tape))
    np.testing.assert_array_equal(grads[0], grads[1])


def test_replay_reproduces_breakdown_bitwise():
    params, weights, samples, data, mode = _setup(seed=6, soft=True)
    breakdown, tape = total_loss(
        params, weights, samples, data, formulation="hybrid", boundary_mode=mode
    )
    again = replay(tape)
    assert again == breakdown


def test_landmark_only_formulation_skips_image_terms():
    params, weights, samples, data, mode = _setup(seed=7)
    breakdown, tape = total_loss(
        params, weights, samples, data, formulation="landmark", boundary_mode=mode
    )
    assert "intensity" not in tape.terms
    assert breakdown.intensity == 0.0
    grad = backward(tape)
    assert np.all(np.isfinite(grad))
