"""Selective-prediction toolkit.

Evaluate models that may abstain: risk/coverage metrics, effective
reliability, threshold selection on validation data, a trainable MLP
selection function, leave-one-out peer labeling of training data,
distribution-shift feature scores, and an experiment harness over ID/OOD
mixtures, with a synthetic task for end-to-end runs at desk scale.
"""

from .records import PredictionRecord, RecordSet, parse_records, vqa_accuracy
from .metrics import (
    MetricsReport,
    ScoredRecord,
    ThresholdPolicy,
    coverage,
    coverage_at_risk,
    decide,
    effective_reliability,
    evaluate,
    rc_auc,
    risk,
    risk_coverage_curve,
    select_threshold_for_risk,
    select_threshold_phi,
)
from .selector import (
    MaxProbSelector,
    MlpSelector,
    TrainConfig,
    score_all,
    train_selector,
)
from .peers import (
    Partition,
    PeerLabeledSet,
    augment_known_ood,
    leave_one_out,
    lyp_a_self_b,
    partition_by_group,
    recombine_peer_labels,
)
from .ood import build_knn_index, fit_ssd, knn_feature, ssd_feature, augment_features
from .toymodel import (
    SyntheticTaskConfig,
    ToyTrainConfig,
    finite_diff_gradcheck,
    generate_synthetic,
    predict_records,
    train_toy_classifier,
)
from .harness import (
    ExperimentConfig,
    MixtureSpec,
    build_mixture,
    emit_report,
    run_experiment,
    run_lyp_pipeline,
)

__version__ = "0.1.0"
