"""Offline LiDAR semantic-segmentation evaluation toolkit.

Builds OOD-augmented point cloud datasets by transplanting labeled object
instances through billboard occlusion masks, and evaluates segmentation
outputs under class imbalance with trust scores, weighted precision, and
trust score distribution matrices.
"""

from .taxonomy import (
    IGNORE,
    ClassCounts,
    ClassDef,
    ClassTable,
    class_weights,
    default_config_path,
    load_class_table,
    load_class_counts,
    merge_labels,
)
from .lidar_io import (
    FrameEntry,
    LabelFrame,
    PointFrame,
    PredictionSet,
    read_label_frame,
    read_manifest,
    read_point_frame,
    read_prediction_csv,
    read_prediction_set,
    write_frame_pair,
    write_label_frame,
    write_manifest,
    write_point_frame,
    write_prediction_set,
)
from .trust_scores import (
    MahalanobisModel,
    data_uncertainty,
    fit_mahalanobis,
    load_mahalanobis,
    mahalanobis_distance,
    model_uncertainty,
    normalize_trust,
    odin_score,
    save_mahalanobis,
    score_prediction_set,
    softmax_confidence,
)
from .seg_metrics import (
    ClassMetricRow,
    ConfusionMatrix,
    class_metrics,
    confusion_matrix,
    per_class_nll,
    weighted_ce,
    wpr_bcr,
)
from .detect_eval import (
    DetectionCounts,
    EvalRecords,
    TaskSpec,
    TSDMatrix,
    auroc_pairwise,
    build_records,
    build_report,
    decide,
    detection_counts,
    make_task_spec,
    roc_auroc,
    task_records,
    tpr_fpr,
    tsd_matrix,
    uniform_edges,
    weighted_precision_at,
    write_report,
)
from .augment import (
    AugmentConfig,
    AugmentedFrame,
    BillboardMask,
    Instance,
    PlacementPose,
    apply_pose,
    augment_dataset,
    build_billboard_mask,
    build_instance_bank,
    check_placement,
    ground_shift,
    transplant_instance,
)

__version__ = "0.1.0"
