"""Variational objective for diffeomorphic cube mapping.

All interior terms are Monte Carlo means over a quadrature batch of the unit
cube (volume 1): the conformality distortion of the Jacobian where it is
orientation-preserving, a bijectivity penalty on the non-positive-determinant
set, the squared map Laplacian, and a squared deviation of the determinant
from a target volume ratio.  Data attachment is a landmark mismatch and/or an
intensity mismatch between the warped source image and the target image.  A
soft boundary penalty replaces the architectural constraint only in ablation
runs.

The weighted total is

    a_c * conformality + a_b/2 * bijectivity + a_s/2 * smoothness
    + a_v/2 * volumetric + a_l * landmark + a_i/2 * intensity
    [+ a_sb/2 * soft_boundary]

with the component values themselves stored raw (unweighted) in the
breakdown.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .ansatz import (
    MapEval,
    NetParams,
    forward_jets_traced,
    forward_values,
    forward_values_traced,
)
from .errors import ConfigError, ContractError
from .jets import cof3, det3
from .sampling import EDGES, FACES
from .synth import LandmarkSet
from .tape import GradTape, PassAdjoint, TermRecord
from .volume import Volume3, sample, sample_grad

FORMULATIONS = ("landmark", "intensity", "hybrid")
BOUNDARY_MODES = ("hard", "soft")


@dataclass
class LossWeights:
    """Objective weights.  Defaults are the reference setting:
    smoothness 0.01, bijectivity 50, conformality 1, volumetric 0,
    landmark 500, intensity 500; volume_ratio is the determinant target of
    the volumetric prior."""

    smoothness: float = 0.01
    bijectivity: float = 50.0
    conformality: float = 1.0
    volumetric: float = 0.0
    landmark: float = 500.0
    intensity: float = 500.0
    soft_boundary: float = 0.0
    volume_ratio: float = 1.0

    def validate(self) -> None:
        for name in (
            "smoothness",
            "bijectivity",
            "conformality",
            "volumetric",
            "landmark",
            "intensity",
            "soft_boundary",
        ):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"weight {name} must be finite and >= 0, got {v}")
        if not np.isfinite(self.volume_ratio) or self.volume_ratio <= 0:
            raise ConfigError(
                f"volume_ratio must be finite and > 0, got {self.volume_ratio}"
            )

    def as_dict(self) -> dict:
        return asdict(self)


def term_multipliers(weights: LossWeights) -> dict[str, float]:
    """Multiplier applied to each raw component inside the total."""
    return {
        "conformality": weights.conformality,
        "bijectivity": 0.5 * weights.bijectivity,
        "smoothness": 0.5 * weights.smoothness,
        "volumetric": 0.5 * weights.volumetric,
        "landmark": weights.landmark,
        "intensity": 0.5 * weights.intensity,
        "soft_boundary": 0.5 * weights.soft_boundary,
    }


@dataclass
class LossBreakdown:
    """Raw per-term values plus the weighted total and the fraction of the
    interior batch with positive Jacobian determinant."""

    conformality: float = 0.0
    bijectivity: float = 0.0
    smoothness: float = 0.0
    volumetric: float = 0.0
    landmark: float = 0.0
    intensity: float = 0.0
    soft_boundary: float = 0.0
    total: float = 0.0
    omega_plus_fraction: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


COMPONENT_FIELDS = (
    "conformality",
    "bijectivity",
    "smoothness",
    "volumetric",
    "landmark",
    "intensity",
    "soft_boundary",
)


@dataclass
class StepSamples:
    """Sample sets consumed by one objective evaluation."""

    interior: np.ndarray
    image_points: np.ndarray | None = None
    face_samples: list | None = None
    edge_samples: list | None = None


@dataclass
class TrainingData:
    """Registration inputs: landmark pairs and/or a source-target image pair."""

    landmarks: LandmarkSet | None = None
    source: Volume3 | None = None
    target: Volume3 | None = None


# ---------------------------------------------------------------------------
# pointwise measures and raw terms


def conformality_dilation(jac: np.ndarray, det: np.ndarray | None = None):
    """Isotropy measure K = |J|_F^2 / (3 det(J)^(2/3)) of a 3x3 Jacobian.

    K >= 1 with equality iff J is a positive similarity; K is scale
    invariant.  Non-positive determinants get the +inf sentinel (the point
    is outside the orientation-preserving set).
    """
    jac = np.asarray(jac, dtype=np.float64)
    if jac.shape[-2:] != (3, 3):
        raise ContractError(f"expected (..., 3, 3) Jacobians, got {jac.shape}")
    single = jac.ndim == 2
    jac_b = jac[None] if single else jac
    det_b = det3(jac_b) if det is None else np.atleast_1d(np.asarray(det, dtype=np.float64))
    fro = np.sum(jac_b * jac_b, axis=(-2, -1))
    out = np.full(det_b.shape, np.inf)
    pos = det_b > 0
    cbrt = np.cbrt(det_b[pos])
    out[pos] = fro[pos] / (3.0 * cbrt * cbrt)
    return float(out[0]) if single else out


def conformality_loss(ev: MapEval) -> float:
    """Mean dilation over the orientation-preserving part of the batch; the
    denominator is the full batch size, so excluded points contribute 0."""
    _require_batch(ev)
    det = ev.det
    pos = det > 0
    vals = np.zeros_like(det)
    if np.any(pos):
        fro = np.sum(ev.jac[pos] * ev.jac[pos], axis=(-2, -1))
        cbrt = np.cbrt(det[pos])
        vals[pos] = fro / (3.0 * cbrt * cbrt)
    return float(np.mean(vals))


def bijectivity_loss(ev: MapEval, exponent: int = 2) -> float:
    """Mean |det|^exponent over the non-orientation-preserving part of the
    batch (det <= 0), full-batch denominator."""
    _require_batch(ev)
    if exponent < 1:
        raise ContractError(f"exponent must be >= 1, got {exponent}")
    neg = ev.det <= 0
    vals = np.zeros_like(ev.det)
    vals[neg] = np.abs(ev.det[neg]) ** exponent
    return float(np.mean(vals))


def smoothness_loss(ev: MapEval) -> float:
    """Mean squared norm of the componentwise map Laplacian."""
    _require_batch(ev)
    return float(np.mean(np.sum(ev.lap * ev.lap, axis=-1)))


def volumetric_loss(ev: MapEval, volume_ratio: float = 1.0) -> float:
    """Mean squared deviation of the determinant from the target ratio."""
    _require_batch(ev)
    d = ev.det - volume_ratio
    return float(np.mean(d * d))


def omega_plus_fraction(ev: MapEval) -> float:
    """Fraction of the batch with det > 0 (det == 0 counts as outside)."""
    _require_batch(ev)
    return float(np.mean(ev.det > 0))


def landmark_loss(params: NetParams, landmarks: LandmarkSet, hard: bool = True) -> float:
    """Mean squared distance between mapped sources and their targets."""
    f = forward_values(params, landmarks.q, hard=hard)
    return _mean_sq_mismatch(f, landmarks.p)


def intensity_loss(
    params: NetParams,
    source: Volume3,
    target: Volume3,
    points: np.ndarray,
    hard: bool = True,
) -> float:
    """Mean squared intensity mismatch between the warped source and the
    target, over the given target-domain points (exact reads when the points
    are voxel centres)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ContractError(f"need a non-empty (N, 3) point batch, got {points.shape}")
    f = forward_values(params, points, hard=hard)
    warped = sample(source, np.clip(f, 0.0, 1.0))
    targ = sample(target, points)
    resid = warped - targ
    return float(np.mean(resid * resid))


def soft_boundary_loss(
    params: NetParams, face_samples: list, edge_samples: list, hard: bool = False
) -> float:
    """Sum over the 6 faces of the mean squared normal displacement plus the
    sum over the 12 edges of both squared pinned-coordinate displacements.

    Ablation runs evaluate the raw network (hard=False).  Calling with
    hard=True is a diagnostic on a constrained model and returns ~0.
    """
    pts, mask, wt = _boundary_stack(face_samples, edge_samples)
    f = forward_values(params, pts, hard=hard)
    d = f - pts
    return float(np.sum(wt * np.sum(mask * d * d, axis=-1)))


def _mean_sq_mismatch(f: np.ndarray, p: np.ndarray) -> float:
    d = f - p
    return float(np.mean(np.sum(d * d, axis=-1)))


def _require_batch(ev: MapEval) -> None:
    if ev.det.ndim != 1 or ev.det.shape[0] < 1:
        raise ContractError("loss terms need a non-empty batched MapEval")


def _boundary_stack(face_samples: list, edge_samples: list):
    """Concatenate face and edge samples with a per-point axis mask (which
    coordinates are penalized) and weight (1 / sample count of its group)."""
    if face_samples is None or len(face_samples) != len(FACES):
        raise ContractError(f"need {len(FACES)} face sample sets")
    if edge_samples is None or len(edge_samples) != len(EDGES):
        raise ContractError(f"need {len(EDGES)} edge sample sets")
    pts_list, mask_list, wt_list = [], [], []
    for (axis, _side), pts in zip(FACES, face_samples):
        m = np.zeros((pts.shape[0], 3))
        m[:, axis] = 1.0
        pts_list.append(pts)
        mask_list.append(m)
        wt_list.append(np.full(pts.shape[0], 1.0 / pts.shape[0]))
    for (_free, (p1, _s1), (p2, _s2)), pts in zip(EDGES, edge_samples):
        m = np.zeros((pts.shape[0], 3))
        m[:, p1] = 1.0
        m[:, p2] = 1.0
        pts_list.append(pts)
        mask_list.append(m)
        wt_list.append(np.full(pts.shape[0], 1.0 / pts.shape[0]))
    return (
        np.concatenate(pts_list, axis=0),
        np.concatenate(mask_list, axis=0),
        np.concatenate(wt_list, axis=0),
    )


# ---------------------------------------------------------------------------
# full objective with gradient tape


def total_loss(
    params: NetParams,
    weights: LossWeights,
    samples: StepSamples,
    data: TrainingData,
    formulation: str = "hybrid",
    boundary_mode: str = "hard",
    bijectivity_exponent: int = 2,
) -> tuple[LossBreakdown, GradTape]:
    """Evaluate the weighted objective and record a gradient tape.

    The interior batch feeds the regularizers through full derivative jets;
    landmark, image and boundary batches run value-only sweeps.  Every term
    present in the formulation is recorded on the tape, so backward() can
    differentiate the total or any single raw term.
    """
    weights.validate()
    if formulation not in FORMULATIONS:
        raise ConfigError(f"formulation must be one of {FORMULATIONS}, got {formulation!r}")
    if boundary_mode not in BOUNDARY_MODES:
        raise ConfigError(
            f"boundary_mode must be one of {BOUNDARY_MODES}, got {boundary_mode!r}"
        )
    hard = boundary_mode == "hard"
    if hard and weights.soft_boundary != 0.0:
        raise ContractError(
            "soft_boundary weight is set while the hard constraint is active; "
            "the penalty is identically zero there, so this signals misconfiguration"
        )
    use_landmarks = formulation in ("landmark", "hybrid")
    use_intensity = formulation in ("intensity", "hybrid")
    if use_landmarks and data.landmarks is None:
        raise ConfigError(f"formulation {formulation!r} needs data.landmarks")
    if use_intensity:
        if data.source is None or data.target is None:
            raise ConfigError(f"formulation {formulation!r} needs data.source and data.target")
        if samples.image_points is None or samples.image_points.shape[0] < 1:
            raise ConfigError(f"formulation {formulation!r} needs samples.image_points")
    if not hard and (samples.face_samples is None or samples.edge_samples is None):
        raise ConfigError("soft boundary mode needs face and edge samples")

    interior = np.asarray(samples.interior, dtype=np.float64)
    if interior.ndim != 2 or interior.shape[0] < 1:
        raise ContractError(f"need a non-empty (N, 3) interior batch, got {interior.shape}")

    passes: list = []
    terms: dict[str, TermRecord] = {}

    # interior sweep: full jets feed all four regularizers
    jet, trace_int = forward_jets_traced(params, interior, hard=hard)
    det = det3(jet.jac)
    ev = MapEval(jet.value, jet.jac, jet.lap, det)
    cof = cof3(jet.jac)
    n_int = interior.shape[0]
    pass_int = len(passes)
    passes.append(trace_int)

    pos = det > 0
    neg = ~pos

    def seed_conformality(scale: float) -> PassAdjoint:
        bar_jac = np.zeros_like(jet.jac)
        if np.any(pos):
            jp = jet.jac[pos]
            cbrt = np.cbrt(det[pos])
            d23 = cbrt * cbrt
            d53 = d23 * det[pos]
            fro = np.sum(jp * jp, axis=(-2, -1))
            bar_jac[pos] = (scale / n_int) * (
                (2.0 / 3.0) / d23[:, None, None] * jp
                - (2.0 / 9.0) * (fro / d53)[:, None, None] * cof[pos]
            )
        return PassAdjoint(np.zeros_like(jet.value), bar_jac, np.zeros_like(jet.lap))

    def seed_bijectivity(scale: float) -> PassAdjoint:
        bar_jac = np.zeros_like(jet.jac)
        if np.any(neg):
            e = bijectivity_exponent
            mag = np.abs(det[neg]) ** (e - 1)
            bar_jac[neg] = (scale / n_int) * (-e * mag)[:, None, None] * cof[neg]
        return PassAdjoint(np.zeros_like(jet.value), bar_jac, np.zeros_like(jet.lap))

    def seed_smoothness(scale: float) -> PassAdjoint:
        return PassAdjoint(
            np.zeros_like(jet.value),
            np.zeros_like(jet.jac),
            (scale * 2.0 / n_int) * jet.lap,
        )

    def seed_volumetric(scale: float) -> PassAdjoint:
        dev = det - weights.volume_ratio
        bar_jac = (scale * 2.0 / n_int) * dev[:, None, None] * cof
        return PassAdjoint(np.zeros_like(jet.value), bar_jac, np.zeros_like(jet.lap))

    terms["conformality"] = TermRecord(
        "conformality", conformality_loss(ev), pass_int, seed_conformality
    )
    terms["bijectivity"] = TermRecord(
        "bijectivity", bijectivity_loss(ev, bijectivity_exponent), pass_int, seed_bijectivity
    )
    terms["smoothness"] = TermRecord(
        "smoothness", smoothness_loss(ev), pass_int, seed_smoothness
    )
    terms["volumetric"] = TermRecord(
        "volumetric", volumetric_loss(ev, weights.volume_ratio), pass_int, seed_volumetric
    )

    if use_landmarks:
        lm = data.landmarks
        f_lm, trace_lm = forward_values_traced(params, lm.q, hard=hard)
        pass_lm = len(passes)
        passes.append(trace_lm)
        resid_lm = f_lm - lm.p

        def seed_landmark(scale: float, resid=resid_lm, n=lm.count) -> PassAdjoint:
            return PassAdjoint((scale * 2.0 / n) * resid)

        terms["landmark"] = TermRecord(
            "landmark", _mean_sq_mismatch(f_lm, lm.p), pass_lm, seed_landmark
        )

    if use_intensity:
        img_pts = np.asarray(samples.image_points, dtype=np.float64)
        f_im, trace_im = forward_values_traced(params, img_pts, hard=hard)
        pass_im = len(passes)
        passes.append(trace_im)
        clamped = np.clip(f_im, 0.0, 1.0)
        active_clamp = clamped != f_im
        warped, grad_s = sample_grad(data.source, clamped)
        grad_s = np.where(active_clamp, 0.0, grad_s)
        targ = sample(data.target, img_pts)
        resid_im = warped - targ
        n_im = img_pts.shape[0]

        def seed_intensity(scale: float) -> PassAdjoint:
            return PassAdjoint((scale * 2.0 / n_im) * resid_im[:, None] * grad_s)

        terms["intensity"] = TermRecord(
            "intensity", float(np.mean(resid_im * resid_im)), pass_im, seed_intensity
        )

    if not hard:
        b_pts, b_mask, b_wt = _boundary_stack(samples.face_samples, samples.edge_samples)
        f_b, trace_b = forward_values_traced(params, b_pts, hard=False)
        pass_b = len(passes)
        passes.append(trace_b)
        d_b = f_b - b_pts
        sb_value = float(np.sum(b_wt * np.sum(b_mask * d_b * d_b, axis=-1)))

        def seed_soft(scale: float) -> PassAdjoint:
            return PassAdjoint(scale * 2.0 * b_wt[:, None] * b_mask * d_b)

        terms["soft_boundary"] = TermRecord("soft_boundary", sb_value, pass_b, seed_soft)

    mults = term_multipliers(weights)
    total = 0.0
    for name, rec in terms.items():
        total += mults[name] * rec.raw_value

    breakdown = LossBreakdown(
        conformality=terms["conformality"].raw_value,
        bijectivity=terms["bijectivity"].raw_value,
        smoothness=terms["smoothness"].raw_value,
        volumetric=terms["volumetric"].raw_value,
        landmark=terms["landmark"].raw_value if "landmark" in terms else 0.0,
        intensity=terms["intensity"].raw_value if "intensity" in terms else 0.0,
        soft_boundary=terms["soft_boundary"].raw_value if "soft_boundary" in terms else 0.0,
        total=float(total),
        omega_plus_fraction=omega_plus_fraction(ev),
    )

    def _replay() -> LossBreakdown:
        again, _ = total_loss(
            params,
            weights,
            samples,
            data,
            formulation=formulation,
            boundary_mode=boundary_mode,
            bijectivity_exponent=bijectivity_exponent,
        )
        return again

    grad_tape = GradTape(
        params=params,
        passes=passes,
        terms=terms,
        multipliers=mults,
        breakdown=breakdown,
        replay_fn=_replay,
    )
    return breakdown, grad_tape
