"""splift: learning-free uplifting of 2D features into Gaussian Splatting scenes."""

from .scene import (
    Camera,
    Gaussian,
    GaussianScene,
    covariance_of,
    load_cameras,
    load_scene,
    remove_gaussians,
    save_cameras,
    save_scene,
)
from .raster import (
    RasterSettings,
    RenderOutput,
    WeightFragmentBuffer,
    project,
    rasterize_weights,
    render,
)
from .uplift import (
    GaussianFeatures,
    prune_by_importance,
    refine_by_gradient,
    reproject_mask,
    uplift,
    uplift_count_normalized,
)
from .graph import (
    DiffusionState,
    FeatureGraph,
    GraphParams,
    build_graph,
    diffuse,
    fit_logistic,
    knn_graph,
    rbf_similarity,
)
from .feature_io import (
    FeatureMap,
    PatchGrid,
    pca_reduce,
    read_feature_container,
    read_mask,
    sliding_window_aggregate,
    threshold_li,
    threshold_otsu,
    write_feature_container,
    write_mask,
)
from .segmentation import (
    ForegroundSpec,
    SegmentationConfig,
    SegmentationResult,
    average_external_masks,
    generate_prompts,
    init_g0,
    iou,
    score_foreground_cosine,
    score_foreground_logistic,
    segment_by_diffusion,
    tune_hyperparameters,
)
from .openvocab import (
    CanonicalSet,
    QueryEmbedding,
    RelevancyMap,
    localize,
    pool_multiscale,
    relevancy,
    relevancy_map,
    select_bandwidth,
    top_q_prompts,
)
from .synthetic import (
    SyntheticSpec,
    benchmark_uplift,
    dense_oracle,
    make_oracle_scene,
    make_two_cluster_scene,
)

__version__ = "0.1.0"
