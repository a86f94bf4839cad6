"""Neuron statistics, Gaussian mutual information and MIMS selection."""

from anm.neuronlab.selection import (
    CovarianceEstimate,
    NeuronSet,
    SeedPolicy,
    covariance,
    gaussian_mi,
    gaussian_mi_from_cov,
    load_neuron_set,
    log_det_spd,
    mims_select,
    pick_seed_neuron,
    save_neuron_set,
)
from anm.neuronlab.stats import (
    ActivationMatrix,
    Histogram,
    NeuronStats,
    collect_activations,
    export_stats,
    load_stats,
    neuron_stats,
)

__all__ = [
    "ActivationMatrix",
    "CovarianceEstimate",
    "Histogram",
    "NeuronSet",
    "NeuronStats",
    "SeedPolicy",
    "collect_activations",
    "covariance",
    "export_stats",
    "gaussian_mi",
    "gaussian_mi_from_cov",
    "load_neuron_set",
    "load_stats",
    "log_det_spd",
    "mims_select",
    "neuron_stats",
    "pick_seed_neuron",
    "save_neuron_set",
]
