"""Python bindings for the fann C++ core."""

from ._core import (
    AdaptiveWeightState,
    Network,
    RunConfig,
    average_precision,
    cmc,
    decode_fant,
    encode_fant,
    generate_synthetic_dataset,
    load_checkpoint,
    load_manifest,
    run_gradcheck,
    save_checkpoint,
    simulate_triplet_dynamics,
    symmetric_triplet_loss,
    train,
)

__all__ = [
    "AdaptiveWeightState",
    "Network",
    "RunConfig",
    "average_precision",
    "cmc",
    "decode_fant",
    "encode_fant",
    "generate_synthetic_dataset",
    "load_checkpoint",
    "load_manifest",
    "run_gradcheck",
    "save_checkpoint",
    "simulate_triplet_dynamics",
    "symmetric_triplet_loss",
    "train",
]
