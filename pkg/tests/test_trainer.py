"""Training loop: Adam oracle, reproducibility, persistence, abort paths."""

import dataclasses
import json

import numpy as np
import pytest

from cubemorph.ansatz import load_checkpoint
from cubemorph.errors import ConfigError, NumericAbort
from cubemorph.losses import (
    COMPONENT_FIELDS,
    LossWeights,
    TrainingData,
    term_multipliers,
)
from cubemorph.synth import LandmarkSet, twisted_pairs
from cubemorph.trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    ablate_boundary,
    read_history_csv,
    train,
    write_history_csv,
)
from cubemorph.volume import Volume3, voxel_centers


def _small_config(**over):
    base = dict(
        formulation="landmark",
        epochs=3,
        n_int=40,
        interior_batch=20,
        width=4,
        blocks=1,
        seed=0,
    )
    base.update(over)
    return TrainConfig(**base)


def _small_data(seed=0):
    rng = np.random.default_rng(seed)
    q = rng.uniform(0.2, 0.8, size=(4, 3))
    p = np.clip(q + 0.05, 0, 1)
    return TrainingData(landmarks=LandmarkSet(q, p))


# -- Adam --------------------------------------------------------------------


@pytest.mark.parametrize("g", [1.0, 2.0, -0.5])
def test_adam_first_step_hand_value(g):
    theta = np.array([1.0])
    state = AdamState.zeros(1)
    new = adam_step(theta, np.array([g]), state)
    # first step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    want = 1.0 - 0.001 * g / (abs(g) + 1e-8)
    np.testing.assert_allclose(new[0], want, rtol=1e-15)
    assert state.t == 1


def test_adam_zero_gradient_is_identity():
    theta = np.array([0.3, -1.2, 4.0])
    state = AdamState.zeros(3)
    np.testing.assert_array_equal(adam_step(theta, np.zeros(3), state), theta)


def test_adam_accumulates_across_steps():
    theta = np.zeros(1)
    state = AdamState.zeros(1)
    g = np.array([1.0])
    one = adam_step(theta, g, state)
    two = adam_step(one, g, state)
    assert state.t == 2
    assert two[0] < one[0] < 0.0


def test_adam_rejects_bad_input():
    state = AdamState.zeros(2)
    with pytest.raises(ConfigError):
        adam_step(np.zeros(2), np.zeros(3), state)
    with pytest.raises(NumericAbort, match="coordinate 1"):
        adam_step(np.zeros(2), np.array([0.0, np.nan]), state)


# -- config validation -------------------------------------------------------


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        _small_config(epochs=0).validate()
    with pytest.raises(ConfigError):
        _small_config(interior_batch=80).validate()
    with pytest.raises(ConfigError):
        _small_config(formulation="banana").validate()
    with pytest.raises(ConfigError):
        _small_config(lr=0.0).validate()
    with pytest.raises(ConfigError):
        _small_config(width=2).validate()
    with pytest.raises(ConfigError):
        _small_config(
            weights=LossWeights(soft_boundary=1.0), boundary_mode="hard"
        ).validate()


def test_config_dict_round_trip():
    cfg = _small_config(weights=LossWeights(landmark=250.0), lr=0.01)
    back = TrainConfig.from_dict(cfg.as_dict())
    assert back == cfg
    with pytest.raises(ConfigError, match="config keys"):
        TrainConfig.from_dict({"banana": 1})
    with pytest.raises(ConfigError, match="weight keys"):
        TrainConfig.from_dict({"weights": {"banana": 1.0}})


def test_train_requires_matching_data():
    with pytest.raises(ConfigError):
        train(_small_config(), TrainingData())
    with pytest.raises(ConfigError):
        train(_small_config(formulation="hybrid"), _small_data())


# -- the loop ----------------------------------------------------------------


def test_single_epoch_emits_single_row():
    result = train(_small_config(epochs=1), _small_data())
    assert len(result.history) == 1
    assert result.history[0].epoch == 0


def test_training_is_bit_reproducible():
    a = train(_small_config(), _small_data())
    b = train(_small_config(), _small_data())
    np.testing.assert_array_equal(a.params.to_vector(), b.params.to_vector())
    assert a.pool_digest == b.pool_digest
    for ra, rb in zip(a.history, b.history):
        assert ra.breakdown == rb.breakdown  # wall_ms may differ, breakdown not


def test_different_seed_changes_trajectory():
    a = train(_small_config(), _small_data())
    b = train(_small_config(seed=1), _small_data())
    assert not np.array_equal(a.params.to_vector(), b.params.to_vector())


def test_history_total_is_weighted_component_sum():
    cfg = _small_config(epochs=2, weights=LossWeights(volumetric=0.25))
    result = train(cfg, _small_data())
    mults = term_multipliers(cfg.weights)
    for row in result.history:
        want = sum(mults[n] * getattr(row.breakdown, n) for n in COMPONENT_FIELDS)
        np.testing.assert_allclose(row.breakdown.total, want, rtol=1e-12)


def test_identity_task_keeps_total_at_conformality_floor():
    # nothing to learn: targets equal sources and the images match, so the
    # total must stay at its initial value (the conformality floor) within 5%
    c = voxel_centers((4, 4, 4))
    vol = Volume3((0.5 + 0.4 * np.sin(6 * c[:, 0])).reshape((4, 4, 4), order="F"))
    q = np.random.default_rng(3).uniform(0.15, 0.85, size=(6, 3))
    data = TrainingData(landmarks=LandmarkSet(q, q), source=vol, target=vol)
    cfg = _small_config(
        formulation="hybrid", epochs=200, n_int=60, interior_batch=30, width=6
    )
    result = train(cfg, data)
    totals = np.array([r.breakdown.total for r in result.history])
    assert np.all(totals <= 1.05 * totals[0])


def test_nan_loss_aborts_with_checkpoint_retained(tmp_path, monkeypatch):
    import cubemorph.trainer as trainer_mod

    real = trainer_mod.total_loss
    calls = {"n": 0}

    def poisoned(*args, **kwargs):
        breakdown, tape = real(*args, **kwargs)
        calls["n"] += 1
        if calls["n"] > 3:
            breakdown = dataclasses.replace(breakdown, total=np.nan)
        return breakdown, tape

    monkeypatch.setattr(trainer_mod, "total_loss", poisoned)
    cfg = _small_config(epochs=4, checkpoint_every=1)
    with pytest.raises(NumericAbort, match="non-finite loss"):
        train(cfg, _small_data(), out_dir=tmp_path)
    kept = load_checkpoint(tmp_path / "checkpoint.bin")
    assert kept.width == cfg.width


# -- persistence -------------------------------------------------------------


def test_history_csv_round_trip(tmp_path):
    result = train(_small_config(), _small_data())
    path = tmp_path / "history.csv"
    write_history_csv(result.history, path)
    back = read_history_csv(path)
    assert len(back) == len(result.history)
    for ra, rb in zip(result.history, back):
        assert ra.epoch == rb.epoch
        assert ra.breakdown == rb.breakdown  # 17 digits round-trip float64 exactly


def test_history_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("epoch,loss\n0,1.0\n")
    with pytest.raises(ConfigError, match="header"):
        read_history_csv(path)


def test_run_artifacts_on_disk(tmp_path):
    cfg = _small_config(epochs=2)
    result = train(cfg, _small_data(), out_dir=tmp_path)
    ckpt = load_checkpoint(tmp_path / "checkpoint.bin")
    np.testing.assert_array_equal(ckpt.to_vector(), result.params.to_vector())
    rows = read_history_csv(tmp_path / "history.csv")
    assert [r.epoch for r in rows] == [0, 1]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["pool_sha256"] == result.pool_digest
    assert TrainConfig.from_dict(manifest["config"]) == cfg
    assert "package_version" in manifest


# -- ablation ----------------------------------------------------------------


def test_ablation_smoke(tmp_path):
    cfg = _small_config(epochs=2, n_int=24, interior_batch=12)
    data = TrainingData(landmarks=twisted_pairs())
    comparison = ablate_boundary(cfg, data, out_dir=tmp_path)
    assert set(comparison["runs"]) == {"soft_50", "soft_500", "hard"}
    for name, result in comparison["results"].items():
        assert result.pool_digest == comparison["pool_sha256"]
    hard = comparison["runs"]["hard"]
    assert hard["boundary_error_max"] == 0.0
    assert hard["final_soft_boundary_loss"] == 0.0
    for soft in ("soft_50", "soft_500"):
        assert comparison["runs"][soft]["boundary_error_max"] > 0.0
    on_disk = json.loads((tmp_path / "comparison.json").read_text())
    assert set(on_disk["runs"]) == {"soft_50", "soft_500", "hard"}
    assert (tmp_path / "hard" / "history.csv").exists()


def test_ablation_rejects_soft_base():
    cfg = _small_config(boundary_mode="soft", weights=LossWeights(soft_boundary=50.0))
    with pytest.raises(ConfigError):
        ablate_boundary(cfg, _small_data())
