"""Desk-scale diffusion-transformer precipitation nowcasting."""

from .config import RunConfig, load_config
from .data import (
    Blob,
    BlobParams,
    RadarSequence,
    denormalize,
    gen_synthetic,
    load_sequence,
    normalize,
    persistence_forecast,
    render_sequence,
    save_sequence,
)
from .diffusion import (
    NoiseSchedule,
    make_schedule,
    q_sample,
    restrict_schedule,
    reverse_step,
    train_loss,
)
from .estimator import DTCAForecaster
from .metrics import (
    ContingencyTable,
    MetricsReport,
    RadialSpectrum,
    TaylorStats,
    TokenSimilarity,
    contingency_table,
    crps_ensemble,
    csi,
    evaluate_forecasts,
    fss,
    radial_psd,
    taylor_stats,
    token_similarity,
)
from .model import (
    DTCAModel,
    ModelConfig,
    ctbs,
    load_checkpoint,
    save_checkpoint,
    variant_reshape,
)
from .sampling import ensemble_forecast, sample_prediction
from .tensor import ComputationRecord, Tensor
from .tokenizer import (
    PositionTables,
    TokenBatch,
    add_positions,
    assemble_input,
    build_position_tables,
    embed_tokens,
    extract_prediction,
    patchify,
    unpatchify,
)
from .training import Adam, train_run

__all__ = [
    "Adam",
    "Blob",
    "BlobParams",
    "ComputationRecord",
    "ContingencyTable",
    "DTCAForecaster",
    "DTCAModel",
    "MetricsReport",
    "ModelConfig",
    "NoiseSchedule",
    "PositionTables",
    "RadarSequence",
    "RadialSpectrum",
    "RunConfig",
    "TaylorStats",
    "Tensor",
    "TokenBatch",
    "TokenSimilarity",
    "add_positions",
    "assemble_input",
    "build_position_tables",
    "contingency_table",
    "crps_ensemble",
    "csi",
    "ctbs",
    "denormalize",
    "embed_tokens",
    "ensemble_forecast",
    "evaluate_forecasts",
    "extract_prediction",
    "fss",
    "gen_synthetic",
    "load_checkpoint",
    "load_config",
    "load_sequence",
    "make_schedule",
    "normalize",
    "patchify",
    "persistence_forecast",
    "q_sample",
    "radial_psd",
    "render_sequence",
    "restrict_schedule",
    "reverse_step",
    "sample_prediction",
    "save_checkpoint",
    "save_sequence",
    "taylor_stats",
    "token_similarity",
    "train_loss",
    "train_run",
    "unpatchify",
    "variant_reshape",
]
