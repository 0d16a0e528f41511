"""oodeval: out-of-distribution scoring, evaluation, and neural augmentation.

The package turns precomputed classifier outputs into anomaly scores
(detectors, outliers), evaluates detectors with ranking and calibration
metrics (metrics), reads and writes every array/image/manifest format
involved (tensorio), and generates augmented images by distorting a small
image-to-image network (deepaugment).  The ``oodeval`` command line wraps
the full pipeline.
"""

from .detectors import (
    ClassTemplates,
    ProbMatrix,
    TypicalityMatrix,
    ae_recon_score,
    background_score,
    dropout_variance_score,
    kl_score,
    kl_templates_fit,
    logitavg_score,
    maxlogit_score,
    msp_score,
    seg_scores,
    sigmoid,
    softmax,
    typicality_build,
    typicality_score,
)
from .metrics import (
    EvalReport,
    RraCurve,
    aupr,
    auroc,
    aurra,
    aurra_score,
    evaluate,
    fpr_at_recall,
    l2_calibration_error,
    rra_curve,
    seg_evaluate,
)
from .outliers import (
    IsolationForestModel,
    LofModel,
    iforest_fit,
    iforest_score,
    lof_fit,
    lof_score,
    load_model,
    save_model,
)
from .deepaugment import (
    Img2ImgNet,
    augment_arrays,
    augment_directory,
    conv_forward,
    deepaugment_forward,
    identity_network,
    sample_signal_distortions,
    sample_weight_distortions,
)

__version__ = "0.1.0"

__all__ = [
    "ClassTemplates", "ProbMatrix", "TypicalityMatrix",
    "ae_recon_score", "background_score", "dropout_variance_score",
    "kl_score", "kl_templates_fit", "logitavg_score", "maxlogit_score",
    "msp_score", "seg_scores", "sigmoid", "softmax",
    "typicality_build", "typicality_score",
    "EvalReport", "RraCurve", "aupr", "auroc", "aurra", "aurra_score",
    "evaluate", "fpr_at_recall", "l2_calibration_error", "rra_curve",
    "seg_evaluate",
    "IsolationForestModel", "LofModel", "iforest_fit", "iforest_score",
    "lof_fit", "lof_score", "load_model", "save_model",
    "Img2ImgNet", "augment_arrays", "augment_directory", "conv_forward",
    "deepaugment_forward", "identity_network",
    "sample_signal_distortions", "sample_weight_distortions",
    "__version__",
]
