"""Multi-behavior cascaded recommendation with shared embeddings.

The target behavior (e.g. purchase) sits at the end of an ordered chain of
weaker behaviors (view, cart, ...). One interaction unit per behavior scores a
user/item pair and each level's prediction feeds the next, so that all levels
are trained jointly on a weighted sum of their log losses.
"""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    BehaviorDataset,
    BehaviorSchema,
    DataError,
    SplitDataset,
    SynthConfig,
    filter_multi_behavior_users,
    ingest_csv,
    leave_one_out_split,
    synthesize_cascade,
)
from .evaluation import EvalReport, evaluate, hit_ratio, ndcg, rank_test_item  # noqa: E402
from .model import NmtrModel  # noqa: E402
from .training import TrainConfig, joint_loss, train, train_multitask, train_sequential  # noqa: E402

__all__ = [
    "BehaviorDataset", "BehaviorSchema", "DataError", "SplitDataset", "SynthConfig",
    "filter_multi_behavior_users", "ingest_csv", "leave_one_out_split", "synthesize_cascade",
    "EvalReport", "evaluate", "hit_ratio", "ndcg", "rank_test_item",
    "NmtrModel", "TrainConfig", "joint_loss", "train", "train_multitask", "train_sequential",
]
