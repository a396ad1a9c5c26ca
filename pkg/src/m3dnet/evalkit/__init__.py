"""AUC/ROC metrics, evaluation reports, ablation grids and embedding export."""
from .ablation import AblationCell, AblationGrid, DEFAULT_AXES, run_ablation
from .embeddings import embed, export_embeddings, load_embeddings, write_embeddings
from .metrics import compute_auc, roc_curve, trapezoid_auc
from .report import REFERENCE_AUC, EvalReport, evaluate, evaluate_model

__all__ = [
    "AblationCell", "AblationGrid", "DEFAULT_AXES", "EvalReport", "REFERENCE_AUC", "compute_auc",
    "embed", "evaluate", "evaluate_model", "export_embeddings", "load_embeddings", "roc_curve",
    "run_ablation", "trapezoid_auc", "write_embeddings",
]
