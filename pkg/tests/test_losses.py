"""Loss terms against hand-derived oracles and their algebraic invariants."""

import numpy as np
import pytest

from cubemorph.ansatz import MapEval, NetParams, count_params, init_params
from cubemorph.errors import ConfigError, ContractError
from cubemorph.losses import (
    LossWeights,
    StepSamples,
    TrainingData,
    bijectivity_loss,
    conformality_dilation,
    conformality_loss,
    forward_values,
    intensity_loss,
    landmark_loss,
    omega_plus_fraction,
    smoothness_loss,
    soft_boundary_loss,
    term_multipliers,
    total_loss,
    volumetric_loss,
)
from cubemorph.sampling import build_pool
from cubemorph.synth import LandmarkSet
from cubemorph.tape import backward
from cubemorph.volume import Volume3, voxel_centers


def _ev(jacs, laps=None):
    jacs = np.asarray(jacs, dtype=np.float64)
    n = jacs.shape[0]
    laps = np.zeros((n, 3)) if laps is None else np.asarray(laps, dtype=np.float64)
    return MapEval(np.zeros((n, 3)), jacs, laps, np.linalg.det(jacs))


def _identity_params(width=6, blocks=2):
    return NetParams.from_vector(np.zeros(count_params(width, blocks)), width, blocks)


# -- conformality dilation ---------------------------------------------------


def test_dilation_of_similarities_is_one():
    assert conformality_dilation(np.eye(3)) == 1.0
    assert conformality_dilation(2.0 * np.eye(3)) == 1.0


def test_dilation_hand_value():
    k = conformality_dilation(np.diag([2.0, 1.0, 1.0]))
    np.testing.assert_allclose(k, 2.0 ** (1.0 / 3.0), rtol=1e-15)


def test_dilation_sentinel_for_nonpositive_det():
    assert conformality_dilation(np.diag([-1.0, 1.0, 1.0])) == np.inf
    singular = np.diag([0.0, 1.0, 1.0])
    assert conformality_dilation(singular) == np.inf


def test_dilation_scale_invariant_and_bounded_below():
    rng = np.random.default_rng(3)
    jacs = rng.standard_normal((500, 3, 3))
    dets = np.linalg.det(jacs)
    jacs[dets < 0] = jacs[dets < 0][:, ::-1, :]  # row swap flips orientation
    k = conformality_dilation(jacs)
    pos = np.linalg.det(jacs) > 0
    assert np.all(k[pos] >= 1.0 - 1e-12)
    for s in (0.1, 7.3):
        np.testing.assert_allclose(
            conformality_dilation(s * jacs[pos]), k[pos], rtol=1e-12
        )


def test_dilation_rejects_bad_shape():
    with pytest.raises(ContractError):
        conformality_dilation(np.eye(2))


# -- batch regularizers ------------------------------------------------------


def test_conformality_loss_identity_batch():
    ev = _ev(np.broadcast_to(np.eye(3), (10, 3, 3)).copy())
    assert conformality_loss(ev) == 1.0


def test_conformality_loss_hand_mean():
    ev = _ev([np.eye(3), np.diag([2.0, 1.0, 1.0])])
    np.testing.assert_allclose(
        conformality_loss(ev), (1.0 + 2.0 ** (1.0 / 3.0)) / 2.0, rtol=1e-15
    )


def test_conformality_loss_ignores_folded_points_but_keeps_denominator():
    ev = _ev([np.eye(3), np.diag([-1.0, 1.0, 1.0])])
    assert conformality_loss(ev) == 0.5
    all_neg = _ev([np.diag([-1.0, 1.0, 1.0]), -np.eye(3)])
    assert conformality_loss(all_neg) == 0.0


def test_bijectivity_loss_hand_values():
    assert bijectivity_loss(_ev([np.eye(3)])) == 0.0
    ev = _ev([np.diag([-0.5, 1.0, 1.0])])
    np.testing.assert_allclose(bijectivity_loss(ev), 0.25, rtol=1e-15)
    np.testing.assert_allclose(bijectivity_loss(ev, exponent=3), 0.125, rtol=1e-15)
    two = _ev([np.diag([-0.5, 1.0, 1.0]), np.eye(3)])
    np.testing.assert_allclose(bijectivity_loss(two), 0.125, rtol=1e-15)


def test_exact_zero_det_contributes_nothing_but_breaks_omega():
    ev = _ev([np.diag([0.0, 1.0, 1.0]), np.eye(3)])
    assert bijectivity_loss(ev) == 0.0
    assert conformality_loss(ev) == 0.5
    assert omega_plus_fraction(ev) == 0.5


def test_omega_plus_fraction_counts_strictly_positive():
    ev = _ev([np.eye(3), -np.eye(3), np.diag([0.0, 1.0, 1.0]), 2 * np.eye(3)])
    assert omega_plus_fraction(ev) == 0.5


def test_smoothness_loss_hand_values():
    assert smoothness_loss(_ev([np.eye(3)])) == 0.0
    ev = _ev([np.eye(3)], laps=[[1.0, 2.0, 2.0]])
    assert smoothness_loss(ev) == 9.0


def test_volumetric_loss_hand_values():
    assert volumetric_loss(_ev([np.eye(3)]), 1.0) == 0.0
    assert volumetric_loss(_ev([np.diag([2.0, 1.0, 1.0])]), 1.0) == 1.0
    assert volumetric_loss(_ev([np.diag([-1.0, 1.0, 1.0])]), 1.0) == 4.0


def test_batch_losses_reject_empty_batch():
    empty = MapEval(
        np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0)
    )
    for fn in (conformality_loss, bijectivity_loss, smoothness_loss):
        with pytest.raises(ContractError):
            fn(empty)
    with pytest.raises(ContractError):
        volumetric_loss(empty, 1.0)


# -- data terms --------------------------------------------------------------


def test_landmark_loss_identity_and_hand_value():
    params = _identity_params()
    q = np.random.default_rng(4).uniform(0.1, 0.9, size=(6, 3))
    assert landmark_loss(params, LandmarkSet(q, q)) == 0.0
    single = LandmarkSet(np.array([[0.5, 0.5, 0.5]]), np.array([[0.6, 0.5, 0.5]]))
    np.testing.assert_allclose(landmark_loss(params, single), 0.01, rtol=1e-14)


def test_landmark_loss_permutation_invariant():
    params = init_params(width=6, n_blocks=2, seed=5)
    rng = np.random.default_rng(6)
    q = rng.uniform(0.1, 0.9, size=(9, 3))
    p = rng.uniform(0.1, 0.9, size=(9, 3))
    perm = rng.permutation(9)
    a = landmark_loss(params, LandmarkSet(q, p))
    b = landmark_loss(params, LandmarkSet(q[perm], p[perm]))
    np.testing.assert_allclose(a, b, rtol=1e-15)


def test_empty_landmark_set_rejected():
    with pytest.raises(ContractError):
        LandmarkSet(np.zeros((0, 3)), np.zeros((0, 3)))


def test_intensity_loss_matching_volumes_is_zero():
    c = voxel_centers((4, 4, 4))
    vol = Volume3((c[:, 0] + 2 * c[:, 1]).reshape((4, 4, 4), order="F"))
    pts = np.random.default_rng(7).uniform(0, 1, size=(50, 3))
    assert intensity_loss(_identity_params(), vol, vol, pts) == 0.0


def test_intensity_loss_constant_offset_is_one():
    zeros = Volume3(np.zeros((4, 4, 4)))
    ones = Volume3(np.ones((5, 5, 5)))
    params = init_params(width=6, n_blocks=2, seed=8)
    pts = np.random.default_rng(9).uniform(0, 1, size=(30, 3))
    assert intensity_loss(params, zeros, ones, pts) == 1.0


def test_intensity_loss_permutation_invariant():
    c = voxel_centers((5, 5, 5))
    src = Volume3(np.sin(7 * c[:, 0] + c[:, 2]).reshape((5, 5, 5), order="F"))
    tgt = Volume3(np.cos(5 * c[:, 1]).reshape((5, 5, 5), order="F"))
    params = init_params(width=6, n_blocks=2, seed=10)
    rng = np.random.default_rng(11)
    pts = rng.uniform(0, 1, size=(40, 3))
    a = intensity_loss(params, src, tgt, pts)
    b = intensity_loss(params, src, tgt, pts[rng.permutation(40)])
    np.testing.assert_allclose(a, b, rtol=1e-15)


def test_soft_boundary_loss_zero_net_hand_value():
    # the zero network sends every point to the origin, so each face or edge
    # coordinate pinned at 1 contributes exactly 1: 3 faces + 12 edge slots
    pool = build_pool(n_int=8, seed=12, faces_per=10, edges_per=4)
    params = _identity_params()
    got = soft_boundary_loss(params, pool.face_samples, pool.edge_samples, hard=False)
    assert got == 15.0


def test_soft_boundary_loss_matches_direct_recomputation():
    pool = build_pool(n_int=8, seed=13, faces_per=10, edges_per=4)
    params = init_params(width=8, n_blocks=2, seed=14)
    want = 0.0
    for axis in range(3):
        for k, side in enumerate((0.0, 1.0)):
            pts = pool.face_samples[2 * axis + k]
            d = forward_values(params, pts, hard=False)[:, axis] - side
            want += float(np.mean(d * d))
    for e, pts in enumerate(pool.edge_samples):
        free = e // 4
        pinned = [a for a in range(3) if a != free]
        f = forward_values(params, pts, hard=False)
        for a in pinned:
            d = f[:, a] - pts[:, a]
            want += float(np.mean(d * d))
    got = soft_boundary_loss(params, pool.face_samples, pool.edge_samples, hard=False)
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_soft_boundary_diagnostic_on_hard_model_is_zero():
    pool = build_pool(n_int=8, seed=15, faces_per=10, edges_per=4)
    params = init_params(width=8, n_blocks=2, seed=16)
    assert soft_boundary_loss(params, pool.face_samples, pool.edge_samples, hard=True) == 0.0


# -- weighted total ----------------------------------------------------------


def _total_setup(seed=0):
    params = init_params(width=6, n_blocks=2, seed=seed)
    pool = build_pool(n_int=32, image_dims=(4, 4, 4), seed=seed, faces_per=5, edges_per=2)
    c = voxel_centers((4, 4, 4))
    src = Volume3((0.3 + 0.5 * c[:, 0] * c[:, 1]).reshape((4, 4, 4), order="F"))
    tgt = Volume3((0.3 + 0.5 * c[:, 1] * c[:, 2]).reshape((4, 4, 4), order="F"))
    rng = np.random.default_rng(seed + 1)
    q = rng.uniform(0.2, 0.8, size=(5, 3))
    data = TrainingData(landmarks=LandmarkSet(q, np.clip(q + 0.03, 0, 1)), source=src, target=tgt)
    samples = StepSamples(
        interior=pool.interior, image_points=pool.image_grid[:32],
        face_samples=pool.face_samples, edge_samples=pool.edge_samples,
    )
    return params, samples, data


def test_total_is_weighted_sum_of_components():
    params, samples, data = _total_setup(seed=17)
    weights = LossWeights(volumetric=0.25, soft_boundary=50.0)
    breakdown, _ = total_loss(
        params, weights, samples, data, formulation="hybrid", boundary_mode="soft"
    )
    mults = term_multipliers(weights)
    recomputed = sum(
        mults[name] * getattr(breakdown, name)
        for name in (
            "conformality", "bijectivity", "smoothness", "volumetric",
            "landmark", "intensity", "soft_boundary",
        )
    )
    np.testing.assert_allclose(breakdown.total, recomputed, rtol=1e-12)


def test_identity_map_with_identity_data_totals_conformality_floor():
    params = _identity_params()
    pool = build_pool(n_int=32, image_dims=(4, 4, 4), seed=18, faces_per=5, edges_per=2)
    c = voxel_centers((4, 4, 4))
    vol = Volume3((c @ np.array([0.2, 0.3, 0.4])).reshape((4, 4, 4), order="F"))
    q = np.random.default_rng(19).uniform(0.1, 0.9, size=(6, 3))
    data = TrainingData(landmarks=LandmarkSet(q, q), source=vol, target=vol)
    samples = StepSamples(interior=pool.interior, image_points=pool.image_grid[:16])
    weights = LossWeights()
    breakdown, _ = total_loss(
        params, weights, samples, data, formulation="hybrid", boundary_mode="hard"
    )
    assert breakdown.total == weights.conformality * 1.0
    assert breakdown.omega_plus_fraction == 1.0


def test_all_zero_weights_give_zero_total_and_gradient():
    params, samples, data = _total_setup(seed=20)
    weights = LossWeights(
        smoothness=0.0, bijectivity=0.0, conformality=0.0, volumetric=0.0,
        landmark=0.0, intensity=0.0, soft_boundary=0.0,
    )
    breakdown, tape = total_loss(
        params, weights, samples, data, formulation="hybrid", boundary_mode="hard"
    )
    assert breakdown.total == 0.0
    np.testing.assert_array_equal(backward(tape), np.zeros(params.param_count))


def test_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(landmark=-1.0).validate()
    with pytest.raises(ConfigError):
        LossWeights(volume_ratio=0.0).validate()


def test_total_loss_config_errors():
    params, samples, data = _total_setup(seed=21)
    with pytest.raises(ConfigError):
        total_loss(params, LossWeights(), samples, data, formulation="banana")
    with pytest.raises(ConfigError):
        total_loss(
            params, LossWeights(), samples,
            TrainingData(landmarks=None, source=data.source, target=data.target),
            formulation="landmark",
        )
    with pytest.raises(ConfigError):
        total_loss(
            params, LossWeights(), samples,
            TrainingData(landmarks=data.landmarks),
            formulation="hybrid",
        )
    # soft boundary weight while the hard constraint is active is a misconfiguration
    with pytest.raises(ContractError):
        total_loss(
            params, LossWeights(soft_boundary=1.0), samples, data,
            formulation="hybrid", boundary_mode="hard",
        )
