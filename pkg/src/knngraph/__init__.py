"""Approximate k-NN graph construction by multiple random divisions and neighborhood propagation."""

from .core import Dataset, InvalidInputError, KnnGraph, Neighbor, NeighborList, distance, try_insert, validate_graph
from .partition import Division, DivisionConfig, random_division, random_principal_direction, split_subset
from .builder import (
    BuildConfig,
    BuildStats,
    PairCache,
    build_graph,
    build_leaf_subgraph,
    cached_distance,
    effective_rate,
    pairwise_update,
)
from .propagation import propagate_all, propagate_point
from .oracle import bench_run, brute_force_graph, graph_accuracy
from .io import (
    DigestMismatchError,
    FormatError,
    gaussian_mixture,
    load_graph,
    load_vectors,
    save_graph,
    write_bvecs,
    write_csv,
    write_fvecs,
)
from .theory import (
    TreeModel,
    combined_lower_bound,
    cosine_collision_prob,
    euclidean_collision_prob,
    multi_tree_prob,
    new_discovery_prob,
    path_propagation_prob,
    propagation_prob,
    simulate_discovery,
    single_tree_prob,
)

__version__ = "0.1.0"
