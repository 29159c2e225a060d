"""Filter-bank learning: one-vs-all SVM, filter-layer MLP, PCA initialisation."""

from .data import DEFAULT_FRACTIONS, LabeledSpectra, SumNormalizer, split_dataset, sum_normalize
from .mlp import FilterMLPClassifier, init_layers, loss_and_gradients
from .models import MatchedFilterClassifier, extract_filters, load_model, save_model
from .pca import pca_init, principal_components
from .svm import DEFAULT_REG_GRID, OneVsAllSVM, svm_hyperparameter_search, svm_objective

__all__ = [
    "DEFAULT_FRACTIONS",
    "DEFAULT_REG_GRID",
    "LabeledSpectra",
    "SumNormalizer",
    "split_dataset",
    "sum_normalize",
    "FilterMLPClassifier",
    "init_layers",
    "loss_and_gradients",
    "MatchedFilterClassifier",
    "extract_filters",
    "load_model",
    "save_model",
    "pca_init",
    "principal_components",
    "OneVsAllSVM",
    "svm_hyperparameter_search",
    "svm_objective",
]
