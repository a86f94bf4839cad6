"""Model architectures, neuron addressing and ANMF weight files."""

from anm.netgraph.models import (
    ARCHITECTURES,
    LayerSpec,
    ModelGraph,
    build_model,
    extract_features,
    feature_vector,
    forward,
    head_forward,
    neuron_activation,
    neuron_graph,
    predict,
    with_new_head,
)
from anm.netgraph.serialization import load_model, save_model

__all__ = [
    "ARCHITECTURES",
    "LayerSpec",
    "ModelGraph",
    "build_model",
    "extract_features",
    "feature_vector",
    "forward",
    "head_forward",
    "load_model",
    "neuron_activation",
    "neuron_graph",
    "predict",
    "save_model",
    "with_new_head",
]
