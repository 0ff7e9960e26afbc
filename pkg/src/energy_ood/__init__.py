"""Energy-based out-of-distribution detection toolkit.

Score classifier logits, calibrate a detection threshold, evaluate
detection metrics, fine-tune a small classifier with energy-bounded
learning, and fit the Gaussian-discriminant energy variant over
features.
"""

from .bench import BenchmarkData, BenchmarkSpec, LabeledDataset, assemble_scores, generate
from .detector import (
    Decision,
    DetectorConfig,
    achieved_tpr,
    calibrate_threshold,
    classify,
    filter_and_predict,
)
from .errors import InputError, NumericalError, TableParseError
from .gda import GdaModel, energy_u, gda_posterior, mahalanobis_score
from .gda import fit as fit_gda
from .metrics import MetricsReport, ScoreSet, aupr, auroc, fpr_at_tpr, full_report
from .mlp import (
    Batch,
    Gradients,
    LossSpec,
    MlpConfig,
    MlpModel,
    TrainConfig,
    backward,
    cosine_lr,
    energy_reg_loss,
    finetune,
    forward,
    forward_batch,
    init,
    load_checkpoint,
    margins_from_energies,
    nll_loss,
    oe_loss,
    pretrain,
    save_checkpoint,
    total_loss,
)
from .scores import (
    energy_score,
    energy_scores,
    label_energy,
    msp_score,
    msp_scores,
    neg_energy_score,
    neg_energy_scores,
    softmax,
    softmax_rows,
)

__version__ = "0.1.0"
