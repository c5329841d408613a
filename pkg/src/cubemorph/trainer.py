"""Minibatch training of the cube map ansatz.

One epoch walks ceil(n_int / interior_batch) steps; each step draws an
interior (and, with an intensity term, an image) minibatch from the fixed
per-run pool, evaluates the weighted objective with its gradient tape, and
takes one Adam step.  Everything is deterministic in the run seed: pools,
initialization and minibatch draws all derive from it, so two runs with the
same config produce identical loss trajectories.

History rows store the epoch mean of each raw component; the row total is
recomputed as the weighted sum of those means, so the breakdown identity
holds row by row.  A non-finite loss or gradient aborts the run, keeping the
last checkpoint on disk.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__ as _pkg_version
from .ansatz import NetParams, forward, init_params, save_checkpoint
from .errors import ConfigError, NumericAbort
from .losses import (
    COMPONENT_FIELDS,
    LossBreakdown,
    LossWeights,
    StepSamples,
    TrainingData,
    conformality_loss,
    landmark_loss,
    soft_boundary_loss,
    term_multipliers,
    total_loss,
)
from .sampling import SamplePool, build_pool, draw_batch, pool_digest
from .tape import backward

HISTORY_COLUMNS = (
    "epoch",
    "conformality",
    "bijectivity",
    "smoothness",
    "volumetric",
    "landmark",
    "intensity",
    "soft_boundary",
    "total",
    "omega_plus_fraction",
    "wall_ms",
)


@dataclass
class TrainConfig:
    """Everything a run needs; defaults are the reference setting (Adam at
    lr 0.001, up to 8000 epochs over a 10000-point interior pool)."""

    formulation: str = "landmark"
    boundary_mode: str = "hard"
    weights: LossWeights = field(default_factory=LossWeights)
    bijectivity_exponent: int = 2
    epochs: int = 8000
    n_int: int = 10000
    interior_batch: int = 1000
    image_batch: int = 8192
    lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    width: int = 20
    blocks: int = 3
    activation: str = "tanh"
    checkpoint_every: int = 0  # 0: only the final checkpoint

    def validate(self) -> None:
        self.weights.validate()
        if self.formulation not in ("landmark", "intensity", "hybrid"):
            raise ConfigError(f"unknown formulation {self.formulation!r}")
        if self.boundary_mode not in ("hard", "soft"):
            raise ConfigError(f"unknown boundary_mode {self.boundary_mode!r}")
        if self.boundary_mode == "hard" and self.weights.soft_boundary != 0.0:
            raise ConfigError(
                "weights.soft_boundary must be 0 when boundary_mode is 'hard'"
            )
        for name in ("epochs", "n_int", "interior_batch", "image_batch"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.interior_batch > self.n_int:
            raise ConfigError(
                f"interior_batch {self.interior_batch} exceeds n_int {self.n_int}"
            )
        if not (0 < self.lr and np.isfinite(self.lr)):
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not (0 <= v < 1):
                raise ConfigError(f"{name} must lie in [0, 1), got {v}")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.bijectivity_exponent < 1:
            raise ConfigError(
                f"bijectivity_exponent must be >= 1, got {self.bijectivity_exponent}"
            )
        if self.width < 3 or self.blocks < 1:
            raise ConfigError(
                f"architecture needs width >= 3 and blocks >= 1, "
                f"got width={self.width}, blocks={self.blocks}"
            )
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.as_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        wd = d.pop("weights", {})
        known_w = {f for f in LossWeights.__dataclass_fields__}
        bad = set(wd) - known_w
        if bad:
            raise ConfigError(f"unknown weight keys: {sorted(bad)}")
        known = {f for f in cls.__dataclass_fields__} - {"weights"}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        return cls(weights=LossWeights(**wd), **d)


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns new theta."""
    if theta.shape != grad.shape:
        raise ConfigError(f"theta/grad shape mismatch: {theta.shape} vs {grad.shape}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericAbort(f"non-finite gradient at coordinate {bad}")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class HistoryRow:
    epoch: int
    breakdown: LossBreakdown
    wall_ms: float


@dataclass
class TrainResult:
    params: NetParams
    history: list[HistoryRow]
    pool: SamplePool
    pool_digest: str
    config: TrainConfig


def _check_data(config: TrainConfig, data: TrainingData) -> None:
    if config.formulation in ("landmark", "hybrid") and data.landmarks is None:
        raise ConfigError(f"formulation {config.formulation!r} needs landmark data")
    if config.formulation in ("intensity", "hybrid"):
        if data.source is None or data.target is None:
            raise ConfigError(
                f"formulation {config.formulation!r} needs source and target images"
            )


def train(
    config: TrainConfig,
    data: TrainingData,
    out_dir=None,
    progress_every: int = 0,
) -> TrainResult:
    """Run the full loop; optionally persist checkpoint/history/manifest to
    out_dir.  progress_every > 0 prints a one-line status that often."""
    config.validate()
    _check_data(config, data)
    t_start = time.perf_counter()

    use_intensity = config.formulation in ("intensity", "hybrid")
    image_dims = data.target.dims if use_intensity else None
    pool = build_pool(config.n_int, image_dims=image_dims, seed=config.seed)
    digest = pool_digest(pool)
    params = init_params(config.width, config.blocks, config.activation, seed=config.seed)
    theta = params.to_vector()
    state = AdamState.zeros(theta.size)
    mults = term_multipliers(config.weights)

    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)

    steps_per_epoch = math.ceil(config.n_int / config.interior_batch)
    image_batch = None
    if use_intensity:
        image_batch = min(config.image_batch, pool.image_grid.shape[0])

    soft = config.boundary_mode == "soft"
    history: list[HistoryRow] = []
    for epoch in range(config.epochs):
        t_epoch = time.perf_counter()
        sums = {name: 0.0 for name in COMPONENT_FIELDS}
        omega_sum = 0.0
        for step in range(steps_per_epoch):
            key = (config.seed, epoch, step)
            interior = draw_batch(pool, "interior", config.interior_batch, key)
            image_pts = (
                draw_batch(pool, "image", image_batch, key) if use_intensity else None
            )
            samples = StepSamples(
                interior=interior,
                image_points=image_pts,
                face_samples=pool.face_samples if soft else None,
                edge_samples=pool.edge_samples if soft else None,
            )
            breakdown, grad_tape = total_loss(
                params,
                config.weights,
                samples,
                data,
                formulation=config.formulation,
                boundary_mode=config.boundary_mode,
                bijectivity_exponent=config.bijectivity_exponent,
            )
            if not np.isfinite(breakdown.total):
                offender = _first_nonfinite_term(breakdown)
                raise NumericAbort(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"term {offender} = {getattr(breakdown, offender)!r}; "
                    f"last checkpoint retained"
                )
            grad = backward(grad_tape, "total")
            if not np.all(np.isfinite(grad)):
                bad = int(np.flatnonzero(~np.isfinite(grad))[0])
                raise NumericAbort(
                    f"non-finite gradient at epoch {epoch} step {step} "
                    f"(coordinate {bad}); last checkpoint retained"
                )
            theta = adam_step(
                theta,
                grad,
                state,
                lr=config.lr,
                beta1=config.adam_beta1,
                beta2=config.adam_beta2,
                eps=config.adam_eps,
            )
            params = NetParams.from_vector(
                theta, config.width, config.blocks, config.activation
            )
            for name in COMPONENT_FIELDS:
                sums[name] += getattr(breakdown, name)
            omega_sum += breakdown.omega_plus_fraction
        means = {name: sums[name] / steps_per_epoch for name in COMPONENT_FIELDS}
        total = sum(mults[name] * means[name] for name in COMPONENT_FIELDS)
        row = HistoryRow(
            epoch=epoch,
            breakdown=LossBreakdown(
                total=total,
                omega_plus_fraction=omega_sum / steps_per_epoch,
                **means,
            ),
            wall_ms=(time.perf_counter() - t_epoch) * 1000.0,
        )
        history.append(row)
        if progress_every and (epoch % progress_every == 0 or epoch == config.epochs - 1):
            print(
                f"epoch {epoch:5d}  total {total:.6g}  "
                f"landmark {means['landmark']:.3g}  intensity {means['intensity']:.3g}  "
                f"omega+ {row.breakdown.omega_plus_fraction:.3f}",
                flush=True,
            )
        if (
            out_path is not None
            and config.checkpoint_every
            and (epoch + 1) % config.checkpoint_every == 0
        ):
            save_checkpoint(params, out_path / "checkpoint.bin")

    if out_path is not None:
        save_checkpoint(params, out_path / "checkpoint.bin")
        write_history_csv(history, out_path / "history.csv")
        manifest = run_manifest(config, digest, time.perf_counter() - t_start)
        with open(out_path / "manifest.json", "w", encoding="ascii") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return TrainResult(params, history, pool, digest, config)


def _first_nonfinite_term(breakdown: LossBreakdown) -> str:
    for name in COMPONENT_FIELDS:
        if not np.isfinite(getattr(breakdown, name)):
            return name
    return "total"


def run_manifest(config: TrainConfig, digest: str, wall_s: float) -> dict:
    """Fully materialized run description: every default is spelled out."""
    return {
        "config": config.as_dict(),
        "pool_sha256": digest,
        "wall_s": wall_s,
        "package_version": _pkg_version,
    }


# ---------------------------------------------------------------------------
# history persistence


def write_history_csv(history: list[HistoryRow], path) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            b = row.breakdown
            writer.writerow(
                [row.epoch]
                + [f"{getattr(b, name):.17g}" for name in COMPONENT_FIELDS]
                + [f"{b.total:.17g}", f"{b.omega_plus_fraction:.17g}", f"{row.wall_ms:.3f}"]
            )


def read_history_csv(path) -> list[HistoryRow]:
    rows: list[HistoryRow] = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(HISTORY_COLUMNS):
            raise ConfigError(f"{path}: unexpected history header {header!r}")
        for rec in reader:
            vals = dict(zip(HISTORY_COLUMNS, rec))
            breakdown = LossBreakdown(
                total=float(vals["total"]),
                omega_plus_fraction=float(vals["omega_plus_fraction"]),
                **{name: float(vals[name]) for name in COMPONENT_FIELDS},
            )
            rows.append(
                HistoryRow(int(vals["epoch"]), breakdown, float(vals["wall_ms"]))
            )
    return rows


# ---------------------------------------------------------------------------
# boundary ablation


def boundary_error(params: NetParams, n_samples: int = 10000, seed: int = 0, hard: bool = True) -> float:
    """Max face-normal displacement |f(q) - q| over seeded boundary samples
    (the pinned coordinate of each sample's face)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
    per_face = [n_samples // 6 + (1 if i < n_samples % 6 else 0) for i in range(6)]
    worst = 0.0
    for (axis, side), count in zip(
        ((a, s) for a in range(3) for s in (0, 1)), per_face
    ):
        pts = rng.random((count, 3))
        pts[:, axis] = float(side)
        f = forward(params, pts, hard=hard)
        worst = max(worst, float(np.max(np.abs(f.f[:, axis] - pts[:, axis]))))
    return worst


def ablate_boundary(
    config: TrainConfig,
    data: TrainingData,
    soft_weights: tuple[float, float] = (50.0, 500.0),
    out_dir=None,
    progress_every: int = 0,
) -> dict:
    """Train soft-constrained runs (one per weight) and one hard run with a
    shared seed and pool, then compare boundary error, landmark mismatch and
    conformality on fresh evaluation samples."""
    if config.boundary_mode != "hard" or config.weights.soft_boundary != 0.0:
        raise ConfigError(
            "ablate_boundary expects a hard-mode base config; it derives the "
            "soft variants itself"
        )
    runs: dict[str, TrainResult] = {}
    arms: list[tuple[str, TrainConfig]] = []
    for w in soft_weights:
        arms.append(
            (
                f"soft_{w:g}",
                replace(
                    config,
                    boundary_mode="soft",
                    weights=replace(config.weights, soft_boundary=float(w)),
                ),
            )
        )
    arms.append(("hard", config))

    comparison: dict = {"runs": {}, "seed": config.seed, "pool_sha256": None}
    out_path = Path(out_dir) if out_dir is not None else None
    for name, arm_cfg in arms:
        arm_out = (out_path / name) if out_path is not None else None
        result = train(arm_cfg, data, out_dir=arm_out, progress_every=progress_every)
        runs[name] = result
        if comparison["pool_sha256"] is None:
            comparison["pool_sha256"] = result.pool_digest
        elif comparison["pool_sha256"] != result.pool_digest:
            raise ConfigError("ablation arms disagree on the sample pool")
        hard = arm_cfg.boundary_mode == "hard"
        eval_pts = np.random.default_rng(
            np.random.SeedSequence([config.seed, 6])
        ).random((10000, 3))
        ev = forward(result.params, eval_pts, hard=hard)
        final = result.history[-1].breakdown
        comparison["runs"][name] = {
            "boundary_error_max": boundary_error(
                result.params, seed=config.seed, hard=hard
            ),
            "landmark_loss": (
                landmark_loss(result.params, data.landmarks, hard=hard)
                if data.landmarks is not None
                else None
            ),
            "conformality_loss": conformality_loss(ev),
            "final_soft_boundary_loss": (
                soft_boundary_loss(
                    result.params,
                    result.pool.face_samples,
                    result.pool.edge_samples,
                    hard=hard,
                )
            ),
            "final_total": final.total,
        }
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        with open(out_path / "comparison.json", "w", encoding="ascii") as fh:
            json.dump(comparison, fh, indent=2, sort_keys=True)
            fh.write("\n")
    comparison["results"] = runs
    return comparison
