"""Covariance descriptors on the SPD manifold with a log-Euclidean kernel SVM.

Stacks of 2-D feature maps are encoded as regularized covariance
matrices, compared through the log-Euclidean metric, and classified by a
one-vs-one SMO-trained SVM over precomputed Gram matrices, with optional
per-region descriptors and late score fusion.
"""

from .covariance import ObservationMatrix, SpdMatrix, compute_covariance, regularize, tensor_to_observations
from .evaluation import (
    EvalReport,
    FoldAssignment,
    evaluate_units,
    evaluate_video,
    make_folds,
    softmax_video_rule,
)
from .fusion import FusionConfig, fuse, preset_config
from .kernel import (
    GramMatrix,
    LogDescriptor,
    gram_matrix,
    load_gram,
    rbf_kernel,
    save_gram,
    video_distance,
)
from .regions import (
    MappedRegion,
    Region,
    build_default_regions,
    frontal_landmark_template,
    map_point,
    map_region,
)
from .spd import EigenDecomposition, log_euclidean_distance, matrix_log, sym_eig
from .store import DescriptorStore
from .svm import (
    COST_GRID,
    GAMMA_GRID,
    BinaryModel,
    GridSearchResult,
    SvmModel,
    grid_search,
    load_model,
    predict_scores,
    save_model,
    train_binary,
    train_multiclass,
)
from .synth import generate_synthetic_dataset
from .tensorio import (
    DatasetManifest,
    FeatureTensor,
    SampleRecord,
    load_dataset_manifest,
    load_feature_tensor,
    resize_feature_maps,
    save_dataset_manifest,
    save_feature_tensor,
)

__version__ = "0.1.0"
