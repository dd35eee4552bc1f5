"""Torch-to-npcov container bridge: export models and datasets, then
validate the round trip by comparing logits."""

from .bridge import (
    ExportManifest,
    UnsupportedLayer,
    export_dataset,
    export_model,
    validate,
)

__version__ = "0.1.0"
