"""Calibrated concept bottleneck models on precomputed embeddings.

Sparse variational GP concept classifiers with Dirichlet-transformed labels,
a Monte-Carlo-trained linear task head, and a budgeted annotation loop, plus
the metric suite used to judge concept quality (F1, rank AUC, ECCE/ECE
calibration, forest-based DCI disentanglement).
"""

from .concepts import (
    ConceptFitConfig,
    ConceptGP,
    concept_uncertainty,
    dirichlet_targets,
    dirichlet_transform,
    fit_concept,
    normalized_entropy,
    predict_mean_logits,
    predict_proba,
)
from .data import (
    AnnotationLedger,
    BundleError,
    ConceptSchema,
    EmbeddingDataset,
    Standardizer,
    apply_standardizer,
    fit_standardizer,
    load_bundle,
    standardize_dataset,
    write_bundle,
)
from .forest import ForestConfig, rf_importance
from .gp import (
    GPFitError,
    GPNumericsError,
    OptSchedule,
    RBFKernel,
    SparseVariationalGP,
    elbo,
    fit,
    kernel_eval,
    make_gp,
    predict_latent,
)
from .head import HeadConfig, LinearHead, explain, fit_head, predict_label
from .loop import (
    AcquisitionConfig,
    AcquisitionQuery,
    EvalConfig,
    ExperimentRun,
    IterationRecord,
    LoopError,
    OracleAnnotator,
    acquire_active,
    acquire_random,
    evaluate,
    load_models,
    run_experiment,
    run_to_jsonl,
    run_to_metric_csv,
    save_models,
    seed_annotations,
)
from .metrics import (
    METRIC_REPORT_SCHEMA,
    CalibrationReport,
    MetricReport,
    calibration_report,
    dci_disentanglement,
    dci_from_importance,
    ecce,
    ece,
    macro_f1_concepts,
    macro_f1_labels,
    rank_auc,
    roc_auc_concepts,
)
from .rng import substream
from .synth import SynthSpec, synth_generate

__version__ = "0.1.0"
