"""Adversarial-robustness benchmark for ML-based network intrusion detectors.

The pipeline: extract traffic features (flow or per-packet statistics), train
a detector zoo, explain which features matter and which can be bent, then run
constraint-respecting black-box evasion attacks and measure how well they
transfer.
"""

from .afterimage import DampedWindowStat, extract_packet_features, packet_schema
from .attack import (
    AttackConfig,
    AttackOutcome,
    Remap,
    minmax_attack,
    objective_g,
    simplex_project,
    zo_gradient,
)
from .dataset import (
    Dataset,
    Normalizer,
    fit_normalizer,
    fit_valid_ranges,
    load_csv_dataset,
    select_features,
    split_dataset,
)
from .explain import (
    FAIReport,
    ISFSSelection,
    compute_fai,
    exact_shapley,
    feature_sensitivity,
    isfs_pipeline,
    isfs_select,
    jaccard,
    mutual_info_screen,
)
from .flows import extract_flow_features, flow_schema
from .harness import (
    asr,
    asr_avg,
    detection_metrics,
    hyperparam_sweep,
    run_attacks,
    transfer_matrix,
)
from .models import (
    EnsembleModel,
    TrainedModel,
    ensemble_predict,
    load_model,
    make_ensemble,
    save_model,
    train_model,
)
from .pcap import PacketRecord, parse_pcap
from .schema import (
    ConstraintKind,
    FeatureSchema,
    FeatureSpec,
    Formula,
    load_schema,
    parse_schema,
    save_schema,
    serialize_schema,
)

__version__ = "0.1.0"
