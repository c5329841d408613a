"""Mesh-free diffeomorphic mapping of the unit cube.

The map is a small smooth residual network whose output is wrapped as
f(x) = g(x) * x * (1 - x) + x, so every boundary face of [0, 1]^3 is fixed
exactly by construction.  Training minimizes a Monte Carlo estimate of a
variational objective (conformality, bijectivity, smoothness, volumetric,
landmark and intensity terms) with Adam; spatial derivatives come from
analytic jet propagation and parameter gradients from hand-derived
per-layer adjoints, so runs are deterministic and replayable.
"""

__version__ = "0.1.0"

from .ansatz import (
    MapEval,
    NetParams,
    count_params,
    forward,
    forward_values,
    init_params,
    load_checkpoint,
    raw_forward,
    save_checkpoint,
)
from .errors import ConfigError, ContractError, FileFormatError, NumericAbort
from .jets import ACTIVATIONS, Jet3, seed_jet
from .losses import (
    LossBreakdown,
    LossWeights,
    StepSamples,
    TrainingData,
    bijectivity_loss,
    conformality_dilation,
    conformality_loss,
    intensity_loss,
    landmark_loss,
    smoothness_loss,
    soft_boundary_loss,
    total_loss,
    volumetric_loss,
)
from .report import (
    DetHistogram,
    cross_sections,
    det_histogram,
    jacobian_color,
    loss_table,
    warp_image,
)
from .sampling import SamplePool, build_pool, draw_batch, mc_estimate, pool_digest
from .synth import (
    LandmarkSet,
    appendix_dataset,
    appendix_map,
    read_landmarks,
    rotated_sphere,
    source_pattern,
    translating_disk,
    twisted_pairs,
    write_landmarks,
)
from .tape import GradTape, backward, replay
from .trainer import (
    AdamState,
    TrainConfig,
    TrainResult,
    ablate_boundary,
    adam_step,
    boundary_error,
    train,
)
from .volume import Volume3, read_volume, sample, sample_grad, write_volume

__all__ = [name for name in dir() if not name.startswith("_")]
