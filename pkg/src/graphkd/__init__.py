"""Knowledge distillation through latent-space similarity graphs.

The package couples a small float64 autodiff engine with block-MLP models,
graph construction over batch representations, distillation losses
(IKD / RKD-D / GKD), an SGD training loop, post-hoc analyses, and an
experiment CLI.
"""

from .autodiff import Tensor, backward
from .config import ConfigError, DistillConfig, load_config, parse_config
from .datasets import (
    DataSplit,
    Dataset,
    gen_gaussian_mixture,
    gen_two_arcs,
    load_idx,
    split_dataset,
)
from .graphs import (
    GraphParams,
    GraphSignal,
    SimilarityGraph,
    adjacency_power,
    build_similarity_graph,
    class_mask,
    cosine_similarity_matrix,
    degree_normalize,
    fiedler_vector,
    knn_sparsify,
    laplacian,
    smoothness,
    symmetric_eig,
)
from .losses import (
    LossBreakdown,
    combined_loss,
    gkd_loss,
    huber,
    ikd_loss,
    per_example_gkd,
    rkdd_loss,
    task_loss,
)
from .models import (
    BlockNet,
    TapOutput,
    build_blocknet,
    forward_with_taps,
    load_checkpoint,
    save_checkpoint,
)
from .training import Schedule, lr_at, sgd_momentum_step, train
from .analysis import (
    ConsistencyCurve,
    LogisticProbe,
    SmoothnessCurve,
    consistency_curve,
    consistency_probe,
    concentration_report,
    loss_concentration,
    spectral_report,
)

__version__ = "0.1.0"
