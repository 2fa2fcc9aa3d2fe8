from .forest import (
    Forest,
    ForestConfig,
    OobPrediction,
    forest_predict,
    matrix_to_csv,
    misclassification_matrix,
    oob_predict,
    train_forest,
)
from .tree import (
    PROB_FLOOR,
    Tree,
    TreeConfig,
    UndefinedNode,
    clamp_probs,
    gini,
    grow_tree,
    prune_tree,
    tree_predict,
)
