"""Attack campaigns, accuracy-drop reports and transfer matrices."""

from anm.campaign.reports import (
    AmplificationReport,
    EvalReport,
    SweepReport,
    TransferMatrix,
    amplification_report,
    build_eval_report,
    build_transfer_matrix,
    require_two_backbones,
    eval_report_from_cells,
    export,
    load_report,
    report_body_text,
    sweep_k,
    transfer_matrix_from_cells,
)
from anm.campaign.runner import METHODS, NOISE_METHOD, CampaignConfig, Cell, attacked_accuracy, collect_cells

__all__ = [
    "METHODS",
    "NOISE_METHOD",
    "AmplificationReport",
    "CampaignConfig",
    "Cell",
    "EvalReport",
    "SweepReport",
    "TransferMatrix",
    "amplification_report",
    "attacked_accuracy",
    "build_eval_report",
    "build_transfer_matrix",
    "collect_cells",
    "eval_report_from_cells",
    "export",
    "load_report",
    "report_body_text",
    "require_two_backbones",
    "sweep_k",
    "transfer_matrix_from_cells",
]
