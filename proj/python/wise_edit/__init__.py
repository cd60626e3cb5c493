"""Side-memory knowledge editing on a tiny byte-level transformer.

The heavy lifting lives in the compiled ``_core`` module; this package
re-exports it and adds a couple of conveniences.
"""

from ._core import (
    ConfigError,
    InputError,
    IoError,
    Model,
    ModelConfig,
    NumericError,
    ParseError,
    ShapeError,
    SideMemory,
    WiseError,
    complete_routed,
    gen_masks,
    gen_stream,
    init_model,
    linear_merge,
    load_checkpoint,
    margin_loss,
    routing_activation,
    run_experiment,
    save_checkpoint,
    ties_merge,
)

__all__ = [
    "ConfigError",
    "InputError",
    "IoError",
    "Model",
    "ModelConfig",
    "NumericError",
    "ParseError",
    "ShapeError",
    "SideMemory",
    "WiseError",
    "complete_routed",
    "gen_masks",
    "gen_stream",
    "init_model",
    "linear_merge",
    "load_checkpoint",
    "margin_loss",
    "overlap_fraction",
    "routing_activation",
    "run_experiment",
    "save_checkpoint",
    "ties_merge",
]


def overlap_fraction(masks):
    """Fraction of coordinates set in every mask."""
    import numpy as np

    common = np.ones_like(masks[0])
    for m in masks:
        common = common * m
    return float(common.mean())
