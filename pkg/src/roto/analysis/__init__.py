"""Representation diagnostics: PCA, KSG mutual information, contact metrics."""
from .digamma import digamma
from .ksg import KSGMutualInformation, ksg_mi, marginal_mi
from .metrics import ConfusionCounts, classification_metrics, confusion_counts
from .pca import PCA, pca_fit_transform
from .samples import SampleSet, collect_samples, export_latents

__all__ = [
    "PCA", "ConfusionCounts", "KSGMutualInformation", "SampleSet", "classification_metrics", "collect_samples",
    "confusion_counts", "digamma", "export_latents", "ksg_mi", "marginal_mi", "pca_fit_transform",
]
