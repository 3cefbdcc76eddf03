"""Two-phase training with cosine learning-rate decay and per-epoch open-loop L2."""
import csv
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from mgplan.decoder.memory import MemoryBank
from mgplan.errors import LoadError, MgplanError, TrainingError
from mgplan.metrics import open_loop_l2, temporal_2hz
from mgplan.model import ModelConfig, Planner
from mgplan.numerics.checkpoint import load_checkpoint, save_checkpoint
from mgplan.numerics.optim import AdamW, cosine_lr
from mgplan.numerics.tensor import Tape
from mgplan.training.data import anchor_data, build_samples
from mgplan.training.losses import (
    LossReport,
    LossWeights,
    aux_loss,
    det_loss,
    det_match,
    det_targets,
    map_loss,
    motion_loss,
    plan_loss,
    total_loss,
)
from mgplan.training.matching import match, select_style_granularity

log = logging.getLogger(__name__)

DIVERGENCE = 1e6


@dataclass
class TrainConfig:
    epochs: int = 30
    phase1_fraction: float = 2.0 / 3.0
    lr: float = 2e-3
    min_lr: float = 1e-5
    warmup_steps: int = 20
    weight_decay: float = 1e-4
    grad_clip: float = 5.0
    max_frames: int = None
    weights: LossWeights = field(default_factory=LossWeights)
    eval_every: int = 1

    @property
    def phase1_epochs(self):
        return int(round(self.epochs * self.phase1_fraction))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        return cls(**d)


def memory_for(cfg):
    return MemoryBank(1, {"agent": cfg.k_agent, "map": cfg.k_map, "planning": cfg.k_planning})


def sample_loss(model, sample, memory, style_enabled, weights):
    """Forward one frame on the active tape and assemble every loss term."""
    f = sample.frame
    mem = memory.read(f.pose, model.cfg.dim)
    out = model(sample.grid, f.target_point, f.command, f.ego_status[0], mem, style_enabled)
    layout = model.cfg.layout
    m = match([w.data for w in out.plan.waypoints], sample.gt, layout)
    if m is None:
        return None, None, out
    bins, target = select_style_granularity(sample.gt, layout)
    plan, breakdown = plan_loss(out.plan, sample.gt, m, bins, target, style_enabled)
    gt_boxes, _ = det_targets(f)
    rows, cols = det_match(out.boxes.data, gt_boxes)
    det = det_loss(out.boxes, out.det_logits, gt_boxes, rows, cols)
    motion = motion_loss(out.motion, rows, cols, f)
    mp = map_loss(out.polylines, out.map_logits, f.map_pieces)
    aux = aux_loss(out.ego_status, f)
    loss, report = total_loss(plan, det, motion, mp, aux, weights, breakdown)
    return loss, report, out


def store(memory, out, pose):
    feats, centers, scores = out.memory_payload()
    memory.store(pose, feats, centers, scores)


def evaluate_open_loop(model, groups):
    """Mean L2 over the first 2 s at 2 Hz of the top-scored modality, across all samples.

    Runs the scenario frames in order with the same one-slot memory as training.
    """
    errors = []
    for group in groups:
        memory = memory_for(model.cfg)
        for s in group:
            f = s.frame
            out = model(s.grid, f.target_point, f.command, f.ego_status[0], memory.read(f.pose, model.cfg.dim))
            store(memory, out, f.pose)
            i = int(np.argmax(out.plan.modality_scores.data))
            pred = temporal_2hz(out.plan, i)
            gt = temporal_2hz_gt(s.frame)
            e = open_loop_l2(pred, gt.waypoints, gt.padded)
            if e is not None:
                errors.append(e)
    return float(np.mean(errors)) if errors else float("nan")


def temporal_2hz_gt(frame):
    from mgplan.trajectory import resample_temporal

    return resample_temporal(frame.future, 2.0, 4)


LOG_FIELDS = ("epoch", "phase", "style_enabled", "lr", "total", "det", "motion", "map", "plan", "aux",
              "plan_reg", "plan_cls_m", "plan_cls_d", "open_loop_l2", "seconds")


class Trainer:
    def __init__(self, model_cfg, train_cfg, scenarios, seed=0, log_path=None, groups=None, log_extra=None):
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.groups = groups if groups is not None else build_samples(scenarios, model_cfg.layout,
                                                                     train_cfg.max_frames)
        map_init, plan_init = anchor_data(self.groups, model_cfg, seed)
        self.model = Planner(model_cfg, np.random.default_rng(seed), map_init, plan_init)
        self.params = self.model.parameters()
        self.opt = AdamW(self.params, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
        self.log_path = log_path
        self.log_extra = dict(log_extra or {})
        self.history = []
        self.step = 0

    @property
    def total_steps(self):
        return self.cfg.epochs * sum(len(g) for g in self.groups)

    def lr_at(self, step):
        if step < self.cfg.warmup_steps:
            return self.cfg.lr * (step + 1) / self.cfg.warmup_steps
        return cosine_lr(step, self.total_steps, self.cfg.lr, self.cfg.min_lr)

    def train_step(self, sample, memory, style_enabled):
        for p in self.params:
            p.grad = None
        with Tape() as tape:
            loss, report, out = sample_loss(self.model, sample, memory, style_enabled, self.cfg.weights)
        store(memory, out, sample.frame.pose)
        if loss is None:
            return None
        if not np.isfinite(report.total) or report.total > DIVERGENCE:
            raise TrainingError(
                f"training diverged at step {self.step}: loss {report.total:.4g} "
                f"(scenario {sample.scenario}, t={sample.t:.1f}s, terms {report.row()})")
        tape.backward(loss, self.params)
        self._clip()
        self.opt.lr = self.lr_at(self.step)
        self.opt.step()
        self.step += 1
        return report

    def _clip(self):
        norm = np.sqrt(sum(float((p.grad ** 2).sum()) for p in self.params))
        if not np.isfinite(norm):
            bad = [p.name for p in self.params if not np.isfinite(p.grad).all()]
            raise TrainingError(f"non-finite gradient in {', '.join(bad[:5])}")
        if norm > self.cfg.grad_clip:
            scale = self.cfg.grad_clip / norm
            for p in self.params:
                p.grad = p.grad * scale

    def run_epoch(self, epoch):
        style_enabled = epoch >= self.cfg.phase1_epochs
        if epoch == self.cfg.phase1_epochs:
            log.info("phase transition at epoch %d: driving-style head enabled", epoch)
        t0 = time.time()
        reports = []
        for gi in self.rng.permutation(len(self.groups)):
            memory = memory_for(self.model_cfg)
            for sample in self.groups[gi]:
                r = self.train_step(sample, memory, style_enabled)
                if r is not None:
                    reports.append(r)
        mean = {k: float(np.mean([r.row()[k] for r in reports])) for k in reports[0].row()} if reports else {}
        last = epoch == self.cfg.epochs - 1
        l2 = evaluate_open_loop(self.model, self.groups) if last or (epoch + 1) % self.cfg.eval_every == 0 \
            else float("nan")
        row = {"epoch": epoch, "phase": 2 if style_enabled else 1, "style_enabled": int(style_enabled),
               "lr": self.opt.lr, **mean, "open_loop_l2": l2, "seconds": time.time() - t0}
        self.history.append(row)
        self._log(row)
        log.info("epoch %d phase %d loss %.4f L2 %.4f (%.1fs)", epoch, row["phase"], mean.get("total", 0.0),
                 l2, row["seconds"])
        return row

    def _log(self, row):
        if not self.log_path:
            return
        new = not os.path.exists(self.log_path)
        with open(self.log_path, "a", newline="") as fp:
            w = csv.DictWriter(fp, fieldnames=LOG_FIELDS + tuple(self.log_extra), extrasaction="ignore")
            if new:
                w.writeheader()
            w.writerow({**row, **self.log_extra})

    def fit(self):
        for epoch in range(self.cfg.epochs):
            self.run_epoch(epoch)
        return self.history

    def save(self, path, extra_config=None):
        tensors = dict(self.model.state_dict())
        tensors.update({f"buffer.{k}": v for k, v in self.model.buffers().items()})
        config = {"model": self.model_cfg.to_dict(), "train": self.cfg.to_dict(), "seed": self.seed}
        config.update(extra_config or {})
        meta = {"final_open_loop_l2": self.history[-1]["open_loop_l2"] if self.history else None,
                "epochs": len(self.history)}
        save_checkpoint(path, tensors, config, meta)


def load_model(path):
    """Planner and its stored config from a checkpoint."""
    tensors, config, meta = load_checkpoint(path)
    try:
        cfg = ModelConfig.from_dict(config["model"])
        model = Planner(cfg, np.random.default_rng(0))
        model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("buffer.")})
        model.load_buffers({k[len("buffer."):]: v for k, v in tensors.items() if k.startswith("buffer.")})
    except (KeyError, TypeError, ValueError, MgplanError) as e:
        raise LoadError(f"{path}: checkpoint does not describe a planner ({e})") from e
    return model, config, meta


def train(model_cfg, train_cfg, scenarios, seed=0, log_path=None, checkpoint=None, log_extra=None):
    trainer = Trainer(model_cfg, train_cfg, scenarios, seed, log_path, log_extra=log_extra)
    trainer.fit()
    if checkpoint:
        trainer.save(checkpoint)
    return trainer
