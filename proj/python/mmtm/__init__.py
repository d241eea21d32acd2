"""Multimodal transfer module (MMTM) fusion experiments.

The heavy lifting happens in the compiled ``_core`` extension; this package
re-exports it.
"""

from ._core import (
    Config,
    ConfigError,
    Dataset,
    DimensionError,
    DomainError,
    Error,
    Mmtm,
    Network,
    NumericError,
    ParseError,
    UsageError,
    VersionError,
    decode_dataset,
    encode_dataset,
    fusion_variants,
    generate,
    generate_aligned,
    gradcheck,
    load_config,
    load_dataset,
    mmtm_parameter_count,
    parse_config,
    run_experiment,
    save_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
