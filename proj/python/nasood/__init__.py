"""Python bindings for the nasood C++ library."""

from ._core import (
    ConfigError,
    DatasetError,
    Genotype,
    InternalConsistencyError,
    InvalidParameterError,
    NasOodError,
    NumericalError,
    ProtocolError,
    ValidationError,
    comparison_table,
    load_genotype,
    op_percentages,
    op_percentages_csv,
    operation_names,
    random_genotype,
    run_cli,
    save_genotype,
    synth_dataset,
    temporal_stability,
    temporal_stability_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
