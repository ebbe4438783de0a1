"""graphsim: similarity metric learning between labelled graphs that share
a common node structure, via a siamese spectral graph convolutional
network with Chebyshev polynomial filters and a pairwise global loss."""

from .connectome import (
    GraphSignal,
    RoiAtlas,
    SpatialGraph,
    SubjectRecord,
    build_spatial_graph,
    graph_hash,
    load_cohort,
    pearson_profiles,
    signal_from_record,
    synth_atlas,
    synth_cohort,
    znormalize_timeseries,
)
from .errors import DegenerateGraphError, GraphsimError, NumericError, ValidationError
from .evaluation import (
    EvalReport,
    evaluate,
    knn_classify,
    learned_distance,
    pca_euclidean_baseline,
    permutation_test,
    roc_auc,
)
from .model import (
    GcnLayerParams,
    SiameseModel,
    gcn_layer_forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    siamese_backward,
    siamese_forward,
)
from .objective import AdamState, LossConfig, adam_step, global_loss, l2_penalty
from .spectral import (
    Adjacency,
    ChebCoeffs,
    Laplacian,
    SpectralDecomposition,
    chebyshev_filter,
    estimate_lambda_max,
    graph_fourier,
    inverse_graph_fourier,
    normalized_laplacian,
    rescale_laplacian,
    spectral_filter_oracle,
    symmetric_eig,
)
from .training import (
    PairSet,
    TrainConfig,
    all_test_pairs,
    default_pair_budget,
    sample_pairs,
    split_cohort,
    train,
)

__version__ = "0.1.0"
