"""Scaled-down experiments shared by the runner scripts and the acceptance suite.

Two experiments live here: overfitting the toy planner on a few scenarios
(open-loop), and a closed-loop comparison of the full granularity layout
against the temporal-2Hz-only layout on held-out scenarios.
"""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from mgplan.metrics import aggregate_metrics
from mgplan.model import ModelConfig
from mgplan.planning_head import GranularityLayout
from mgplan.scene.families import generate_scenarios
from mgplan.simulator import ModelPolicy, SimConfig, run_episode
from mgplan.training import TrainConfig, Trainer
from mgplan.training.losses import LossWeights

log = logging.getLogger(__name__)

OVERFIT_TRAIN = dict(epochs=150, max_frames=2, lr=1.5e-3, grad_clip=1.0, eval_every=10)
OVERFIT_PLAN_WEIGHT = 3.0


def overfit_trainer(n_scenarios=8, seed=0, plan_weight=OVERFIT_PLAN_WEIGHT, **overrides):
    """Trainer for the toy model (6 modalities, 32 channels, 3 layers) on ``n_scenarios`` scenarios.

    Each scenario contributes its first two frames; the planning loss is weighted up
    because the open-loop error is the quantity being driven down.
    """
    cfg = TrainConfig(weights=LossWeights(plan=plan_weight), **{**OVERFIT_TRAIN, **overrides})
    model_cfg = ModelConfig(layout=GranularityLayout(modalities=6))
    return Trainer(model_cfg, cfg, generate_scenarios(n_scenarios, seed), seed=seed)


def moving_average_rises(values, window=20, start=0):
    """Epoch indices (window end) where the ``window``-epoch moving average goes up, with the rise."""
    v = np.asarray(values, dtype=float)[start:]
    if len(v) <= window:
        return []
    ma = np.convolve(v, np.ones(window) / window, mode="valid")
    d = np.diff(ma)
    return [(start + i + window, float(x)) for i, x in enumerate(d) if x > 0]


@dataclass
class AblationConfig:
    rows: tuple = (7, 1)
    seeds: tuple = (0, 1, 2)
    n_train: int = 12
    n_test: int = 24
    test_seed_offset: int = 1000
    dim: int = 16
    layers: int = 2
    modalities: int = 6
    epochs: int = 30
    max_frames: int = 6
    lr: float = 3e-3
    sim: SimConfig = field(default_factory=lambda: SimConfig(duration=25.0))


def ablation_cell(row, seed, cfg=AblationConfig()):
    """Train one layout on the training split of ``seed`` and drive its held-out split."""
    t0 = time.time()
    model_cfg = ModelConfig(dim=cfg.dim, layers=cfg.layers,
                            layout=GranularityLayout.preset(row, modalities=cfg.modalities))
    train_cfg = TrainConfig(epochs=cfg.epochs, max_frames=cfg.max_frames, lr=cfg.lr, eval_every=cfg.epochs)
    trainer = Trainer(model_cfg, train_cfg, generate_scenarios(cfg.n_train, seed), seed=seed)
    trainer.fit()
    trained = time.time() - t0
    policy = ModelPolicy(trainer.model, n_slots=cfg.sim.n_slots)
    held_out = generate_scenarios(cfg.n_test, cfg.test_seed_offset + seed)
    results = [run_episode(scn, policy, cfg.sim) for scn in held_out]
    summary = aggregate_metrics(results)
    log.info("row %d seed %d: SR %.1f TO %.1f DS %.1f (train %.0fs, drive %.0fs)", row, seed,
             summary["success_rate"], summary["timeout_rate"], summary["driving_score"], trained,
             time.time() - t0 - trained)
    return {"row": row, "seed": seed, "open_loop_l2": trainer.history[-1]["open_loop_l2"], **summary}


def run_ablation(cfg=AblationConfig()):
    """Per-cell rows plus per-layout means over seeds."""
    cells = [ablation_cell(row, seed, cfg) for row in cfg.rows for seed in cfg.seeds]
    means = {}
    for row in cfg.rows:
        mine = [c for c in cells if c["row"] == row]
        means[row] = {k: float(np.mean([c[k] for c in mine]))
                      for k in ("success_rate", "timeout_rate", "collision_rate", "driving_score", "open_loop_l2")}
    return cells, means


def format_table(means):
    lines = ["layout  SR%    TO%    coll%  DS     L2(m)"]
    for row, m in means.items():
        name = "full" if row == 7 else f"row{row}"
        lines.append(f"{name:<7} {m['success_rate']:5.1f}  {m['timeout_rate']:5.1f}  {m['collision_rate']:5.1f}  "
                     f"{m['driving_score']:5.1f}  {m['open_loop_l2']:.3f}")
    return "\n".join(lines)
