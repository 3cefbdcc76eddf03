from mgplan.training.losses import LossReport, LossWeights, plan_loss, total_loss
from mgplan.training.loop import TrainConfig, Trainer, evaluate_open_loop, load_model, train
from mgplan.training.matching import MatchResult, align_match, select_style_granularity

__all__ = [
    "LossReport", "LossWeights", "MatchResult", "TrainConfig", "Trainer", "align_match", "evaluate_open_loop",
    "load_model", "plan_loss", "select_style_granularity", "total_loss", "train",
]
