"""Classification of mild traumatic brain injury from diffusion MRI parametric maps.

Two feature pipelines share one SVM / cross-validation / greedy selection
back end: region-of-interest means of each metric map, and bag-of-visual-
words histograms over 16x16 axial patches.
"""

__version__ = "0.1.0"

from .core import (
    ALL_METRICS,
    ATOMIC_REGIONS,
    BOW_METRICS,
    BOW_REGIONS,
    CLINICAL_FEATURES,
    CONTROL,
    MTBI,
    FeatureMatrix,
    FeatureName,
    Metric,
    MtbiError,
    Region,
    SplitMix64,
    SubjectRecord,
    derive_seed,
)
from .ingest import (
    Dataset,
    MetricVolume,
    RoiMask,
    read_manifest,
    read_mask,
    read_volume,
    validate_dataset,
    write_manifest,
    write_mask,
    write_volume,
)
from .roi import RoiConfig, build_mean_feature_table, mean_in_roi
from .bow import (
    BowConfig,
    Dictionary,
    build_bow_feature_table,
    build_dictionary,
    encode_histogram,
    extract_patches,
    kmeans,
)
from .svm import SvmConfig, SvmModel, decision_value, predict, standardize_apply, standardize_fit, train_svm
from .selection import (
    BowFeatureSource,
    FoldPlan,
    SelectionTrace,
    cv_accuracy,
    greedy_forward_select,
    stratified_kfold,
)
from .synthetic import PhantomSpec, generate_phantom
