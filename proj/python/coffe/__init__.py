"""Source attribution classifiers over precomputed foundation-model embeddings."""

from ._core import (
    CoffeError,
    DimensionError,
    EmbeddingDataset,
    FormatError,
    IoError,
    Model,
    NumericError,
    UsageError,
    ValidationError,
    accuracy,
    chernoff_distance,
    compute_metrics,
    confusion_matrix,
    eer_one_vs_all,
    equal_error_rate,
    macro_f1,
    parameter_count,
    read_embedding_file,
    run_cli,
    synth_dataset,
    total_loss,
    train,
    write_embedding_file,
)

__all__ = [name for name in dir() if not name.startswith("_")]
