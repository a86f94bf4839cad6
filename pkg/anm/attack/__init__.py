"""Universal perturbation synthesis and ANMP perturbation files."""

from anm.attack.perturbation import (
    Perturbation,
    apply,
    budget_bound,
    export_visual,
    load_perturbation,
    project_linf,
    save_perturbation,
    uniform_noise,
)
from anm.attack.pgd import (
    AttackConfig,
    TargetPolicy,
    anm_loss,
    anm_m,
    anm_random,
    anm_s,
    random_neurons,
    step_size,
    target_value,
)

__all__ = [
    "AttackConfig",
    "Perturbation",
    "TargetPolicy",
    "anm_loss",
    "anm_m",
    "anm_random",
    "anm_s",
    "apply",
    "budget_bound",
    "export_visual",
    "load_perturbation",
    "project_linf",
    "random_neurons",
    "save_perturbation",
    "step_size",
    "target_value",
    "uniform_noise",
]
