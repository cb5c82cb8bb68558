"""Multiresolution attention policies and classical baselines for Euclidean
TSP/CVRP: instance tooling, clustering hierarchies, an equivariant pointer
policy with its own reverse-mode autodiff, REINFORCE training, evaluation
protocols, and checkpoint/plot/CLI plumbing.
"""

from .autodiff import AdamState, MaskError, ShapeError, Tape, Tensor, no_grad
from .baselines import (
    BRUTE_FORCE_MAX_N,
    HELD_KARP_MAX_N,
    TooLargeError,
    brute_force,
    cvrp_reference,
    held_karp,
    heuristic_tour,
    nearest_neighbor,
    two_opt,
)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import (
    CrossEvalReport,
    EvalReport,
    SymmetryReport,
    TransformSpec,
    apply_transform,
    cross_distribution_eval,
    evaluate,
    load_report_csv,
    sample_rollouts,
    save_report,
    symmetry_suite,
)
from .instances import (
    CVRP,
    TSP,
    CvrpSolution,
    InfeasibleSolutionError,
    Instance,
    ParseError,
    Tour,
    cvrp_feasible,
    cvrp_solution_length,
    generate_clustered,
    generate_cvrp,
    generate_mixed,
    generate_uniform,
    load_dataset,
    load_solutions,
    pairwise_distances,
    save_dataset,
    save_solutions,
    solution_cost,
    tour_length,
    validate_cvrp_solution,
    vehicle_capacity,
)
from .multires import (
    ClusterPartition,
    DegenerateHierarchyError,
    MultiresHierarchy,
    SubInstance,
    build_hierarchy,
    build_subgraphs,
    coarsen,
    kmeans,
)
from .plotting import save_plots, svg_plot
from .policy import (
    DegenerateInstanceError,
    InvariantFeatures,
    PolicyParams,
    canonicalize,
    decode_step,
    encode,
    init_params,
    log_prob,
    raw_features,
    rollout,
    rollout_batch,
    teacher_forced_log_prob,
)
from .training import (
    BaselineState,
    EpochStats,
    TrainConfig,
    TrainResult,
    advantage,
    init_baseline,
    multires_loss_terms,
    pomo_rollouts,
    train,
    train_epoch,
    train_step,
    update_baseline,
)
from .tsplib import parse_tsplib, serialize_tsplib, tsplib_euc2d_length

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
