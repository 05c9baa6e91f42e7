"""Federated learning with similarity-based client selection.

Clients are clustered by the similarity of their label distributions and
one client per cluster trains each round; the result is compared against
random selection in rounds to convergence and modeled training energy.
"""

from .clustering import ClusterModel, kmedoids, select_cluster_count, silhouette_mean
from .dataio import ClientShard, Dataset, generate_synthetic, load_idx, partition_dirichlet
from .distmatrix import build_distribution_matrix, label_histogram, pca_project
from .energy import EnergyLedger, InjectedTiming, PowerModel, WallClockTiming
from .fedcore import (
    FedConfig,
    HyperParams,
    RunRecord,
    aggregate,
    check_convergence,
    evaluate,
    local_train,
    run_federated,
)
from .metrics import MetricId, compute_metric, pairwise_dissimilarity
from .selection import SelectionPlan, select_clustered, select_random

__version__ = "0.1.0"
