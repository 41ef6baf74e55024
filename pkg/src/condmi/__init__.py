"""Estimation of conditional mutual information I(X;Y|Z) from samples.

A binary classifier learns the density ratio between triples drawn from
the joint distribution and triples emulating p(x|z) p(y,z) (built with
exact k-nearest-neighbor conditioning on z); plugging the fitted ratio
into a linearized variational bound gives a batch estimate whose Monte
Carlo average stays a lower-bound estimate. A Gaussian degraded-wiretap
channel with closed-form answers is included for end-to-end validation.

Hot kernels run in a compiled extension when available, with a
pure-numpy fallback selected at import (see :mod:`condmi.backend`).
"""

from .backend import active_backend, available_backends
from .channels import (
    DwtcParams,
    analytic_cmi,
    analytic_log_ratio,
    sample_conditionally_independent,
    sample_dwtc,
    sample_dwtc_product,
)
from .estimators import (
    EstimateReport,
    EstimatorConfig,
    density_ratio,
    estimate_dv,
    estimate_dv_from_log_ratio,
    estimate_dv_from_omega,
    estimate_nwj,
    estimate_nwj_from_log_ratio,
    log_density_ratio,
    optimal_critic,
    run_estimation,
)
from .exceptions import ConfigurationError, InputError, NumericalError
from .nn import (
    OMEGA_CLIP,
    AdamState,
    ClassifierNet,
    Gradients,
    LayerSpec,
    adam_step,
    backward,
    classifier_layers,
    cross_entropy_loss,
    forward,
    gradient_check,
    init_network,
    load_model,
    predict_omega,
    save_model,
    train_classifier,
)
from .sampling import (
    RNG_SCHEME,
    BatchPair,
    Dataset,
    knn_indices,
    load_csv,
    prod_batch_from_anchors,
    sample_batch_pair,
    sample_joint_batch,
    sample_prod_batch,
    save_csv,
    split_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BatchPair",
    "ClassifierNet",
    "ConfigurationError",
    "Dataset",
    "DwtcParams",
    "EstimateReport",
    "EstimatorConfig",
    "Gradients",
    "InputError",
    "LayerSpec",
    "NumericalError",
    "OMEGA_CLIP",
    "RNG_SCHEME",
    "active_backend",
    "adam_step",
    "analytic_cmi",
    "analytic_log_ratio",
    "available_backends",
    "backward",
    "classifier_layers",
    "cross_entropy_loss",
    "density_ratio",
    "estimate_dv",
    "estimate_dv_from_log_ratio",
    "estimate_dv_from_omega",
    "estimate_nwj",
    "estimate_nwj_from_log_ratio",
    "forward",
    "gradient_check",
    "init_network",
    "knn_indices",
    "load_csv",
    "load_model",
    "log_density_ratio",
    "optimal_critic",
    "predict_omega",
    "prod_batch_from_anchors",
    "run_estimation",
    "sample_batch_pair",
    "sample_conditionally_independent",
    "sample_dwtc",
    "sample_dwtc_product",
    "sample_joint_batch",
    "sample_prod_batch",
    "save_csv",
    "save_model",
    "split_dataset",
    "train_classifier",
]
