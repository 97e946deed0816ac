"""Unsupervised discovery of semantic edit directions in diffusion noise space."""

from .bank import DirectionBank, init_bank, load_bank, sample_subset, save_bank
from .config import ExperimentConfig, config_hash, load_config, parse_config, serialize_config
from .denoiser import (
    Condition,
    DenoiserModel,
    TrainConfig,
    cfg_predict,
    load_model,
    predict_noise,
    save_model,
    train_denoiser,
)
from .editing import (
    COARSE_WINDOW,
    FINE_WINDOW,
    EditSet,
    EditSpec,
    edit_real,
    edit_term_multi,
    edit_term_single,
    interpolation_strip,
    sample_edited,
)
from .errors import (
    ConfigError,
    ContractViolation,
    DegenerateInputError,
    EvaluationError,
    FormatError,
    IngestionError,
)
from .evaluation import (
    AttributeProbe,
    DiversityReport,
    RescoreMatrix,
    diversity_report,
    generated_pipeline,
    perceptual_distance,
    real_pipeline,
    rescore,
    train_factor_probe,
)
from .manifest import RunManifest, read_manifest, write_manifest
from .schedule import (
    LatentState,
    NoiseSchedule,
    ddim_invert,
    forward_noise,
    make_schedule,
    predict_x0,
    reverse_step,
    reverse_trajectory,
    sampling_grid,
)
from .trainer import (
    DirectionTrainer,
    DivergenceSet,
    TrainerConfig,
    compute_divergences,
    contrastive_loss,
    cosine_sim,
    discover,
    step_loss,
    train_step,
)

__version__ = "0.1.0"
