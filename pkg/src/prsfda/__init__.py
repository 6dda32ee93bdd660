"""Source-free domain adaptation trainer with pseudo-label rectification."""

from .data import Dataset, DomainPair, DomainSpec, TargetImages, generate_pair
from .losses import (
    ClassWeights,
    LossOutput,
    cbce_loss,
    class_weights,
    entropy_loss,
    msl_loss,
    nl_loss,
    pl_ce_loss,
    plnl_loss,
)
from .metrics import ConfusionMatrix, MetricsReport, confusion_matrix, iou_report
from .model import Model, ModelConfig, init_model, load_checkpoint, poly_lr, save_checkpoint
from .numerics import finite_diff_gradient, softmax, stable_log, stable_log1m
from .pipeline import (
    PhaseConfig,
    RunRecord,
    adapt_unsupervised,
    evaluate,
    naive_self_train,
    run_ablation,
    self_train_plnl,
    train_source,
)
from .pseudo import PseudoLabelSet, complementary_labels, make_pseudo_set

__version__ = "0.1.0"
