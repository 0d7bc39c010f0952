"""Output-constrained multi-target regression trees and forests."""

from .data import (
    DEFAULT_FEAS_TOL,
    Cardinality,
    Dataset,
    FeasibleSet,
    InfeasibleSetError,
    Loss,
    PredictionResult,
    STATUS_ITER_LIMIT,
    STATUS_OPTIMAL,
    UnsupportedError,
    ViolationReport,
    check_feasibility,
    loss_eval,
)
from .datagen import (
    HtsRecipe,
    SyntheticRecipe,
    build_hts_constraints,
    build_synthetic_constraints,
    gen_end_to_end,
    gen_hts,
    gen_synthetic,
)
from .downstream import (
    TwoGroupKnapsack,
    end_to_end_leaf_prediction,
    regret_metrics,
    solve_downstream,
)
from .ensemble import (
    Forest,
    forest_from_json,
    forest_predict,
    forest_predict_matrix,
    forest_to_json,
    train_forest,
)
from .prediction import (
    predict_constrained,
    predict_unconstrained,
    solve_cardinality_prediction,
    weighted_loss_prediction,
)
from .projection import (
    project_capped_simplex,
    project_equalities,
    project_polyhedron,
    project_simplex_fixed_sum,
)
from .tree import (
    Branch,
    Leaf,
    SplitDecision,
    SplitRejectedError,
    TrainConfig,
    Tree,
    best_split_exhaustive,
    grow_tree,
    postprocess_leaves,
    solve_split_mip_exact,
    split_gain,
    train_tree,
    tree_from_json,
    tree_predict,
    tree_predict_matrix,
    tree_to_json,
)

__version__ = "0.1.0"
