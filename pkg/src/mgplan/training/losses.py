"""Loss terms for planning and the auxiliary perception tasks."""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from mgplan.errors import TrainingError
from mgplan.geometry import wrap_angle
from mgplan.numerics import tensor as T
from mgplan.numerics.tensor import Tensor
from mgplan.training.matching import supervised_groups

ZERO = 0.0


def cross_entropy(logits, target):
    """Negative log-likelihood of ``target`` under ``softmax(logits)`` for a 1-D logit vector."""
    return -T.log_softmax_last(logits)[target]


def bce_logits(logits, targets):
    """Mean binary cross-entropy, written as ``softplus(x) - t x`` for stability."""
    t = np.asarray(targets, dtype=float)
    return T.mean(T.softplus(logits) - logits * t)


def masked_smooth_l1(pred, target, valid, beta=1.0):
    """Smooth-L1 summed over coordinates and averaged over the valid rows."""
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        return None
    diff = pred - Tensor(np.asarray(target, dtype=float))
    per = T.smooth_l1(diff, beta)
    mask = valid.reshape(valid.shape + (1,) * (per.ndim - valid.ndim)).astype(float)
    return T.tsum(per * mask) * (1.0 / n)


def _value(x):
    return 0.0 if x is None or isinstance(x, float) else float(x.data)


def _check(name, x):
    if x is not None and not isinstance(x, float) and not np.isfinite(x.data).all():
        raise TrainingError(f"loss term {name} is not finite")


# --- planning -------------------------------------------------------------------

def plan_loss(out, gt, match, style_bins, style_target, style_enabled=True):
    """Regression on the matched modality per granularity, plus modality and style classification.

    Returns ``(total, breakdown)`` where ``breakdown`` holds tensors (or 0.0) for
    ``reg[gid]``, ``cls_m`` and ``cls_d``.
    """
    layout = out.layout
    supervised = supervised_groups(layout, style_bins)
    reg = {}
    total = None
    for j, (gid, spec) in enumerate(zip(layout.ids, layout.specs)):
        if not supervised[j]:
            reg[gid] = ZERO
            continue
        pred = out.waypoints[j][match.per_group[gid]]
        term = masked_smooth_l1(pred, gt[gid].waypoints, gt[gid].valid)
        if term is None:
            reg[gid] = ZERO
            continue
        _check(f"reg[{gid}]", term)
        reg[gid] = term
        total = term if total is None else total + term
    cls_m = cross_entropy(out.modality_scores, match.ref_index)
    _check("cls_m", cls_m)
    total = cls_m if total is None else total + cls_m
    cls_d = ZERO
    if style_enabled and out.style_scores is not None and style_target is not None:
        cls_d = cross_entropy(out.style_scores[match.ref_index], style_target)
        _check("cls_d", cls_d)
        total = total + cls_d
    return total, {"reg": reg, "cls_m": cls_m, "cls_d": cls_d}


# --- detection, motion, map -------------------------------------------------------------

def det_targets(frame):
    """Objects to detect: moving agents followed by static obstacles, ego frame."""
    boxes = np.concatenate([frame.agent_boxes, frame.obstacles]).reshape(-1, 5)
    n_agents = len(frame.agent_boxes)
    return boxes, n_agents


def det_match(pred_boxes, gt_boxes):
    """Hungarian assignment on center distance. Returns ``(query_idx, gt_idx)``."""
    if len(gt_boxes) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    cost = np.linalg.norm(pred_boxes[:, None, :2] - gt_boxes[None, :, :2], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return rows, cols


def det_loss(boxes, logits, gt_boxes, rows, cols):
    target = np.zeros(logits.shape[0])
    target[rows] = 1.0
    loss = bce_logits(logits, target)
    if len(rows):
        pred = boxes[rows]
        gt = gt_boxes[cols].copy()
        # compare headings through the wrapped difference
        gt[:, 4] = pred.data[:, 4] + wrap_angle(gt[:, 4] - pred.data[:, 4])
        loss = loss + masked_smooth_l1(pred, gt, np.ones(len(rows), bool))
    return loss


def motion_loss(motion, rows, cols, frame):
    """Future offsets of matched moving agents (obstacles carry no motion target)."""
    keep = cols < len(frame.agent_boxes)
    if not keep.any():
        return ZERO
    r, c = rows[keep], cols[keep]
    valid = frame.agent_future_valid[c]
    return masked_smooth_l1(motion[r], frame.agent_futures[c], valid) if valid.any() else ZERO


def chamfer_matrix(pred, gt):
    """Symmetric vertex Chamfer distance between every predicted and GT polyline."""
    d = np.linalg.norm(pred[:, None, :, None] - gt[None, :, None, :], axis=-1)
    return 0.5 * (d.min(axis=3).mean(axis=2) + d.min(axis=2).mean(axis=2))


def chamfer(pred, gt, eps=1e-9):
    """Differentiable symmetric Chamfer distance of one ``P x 2`` polyline to a fixed one."""
    diff = T.reshape(pred, (pred.shape[0], 1, 2)) - Tensor(np.asarray(gt)[None])
    d = T.sqrt(T.tsum(diff * diff, axis=-1) + eps)
    return 0.5 * (T.mean(T.amin(d, axis=1)) + T.mean(T.amin(d, axis=0)))


def map_loss(polylines, logits, gt_pieces):
    target = np.zeros(logits.shape[0])
    if len(gt_pieces) == 0:
        return bce_logits(logits, target)
    rows, cols = linear_sum_assignment(chamfer_matrix(polylines.data, gt_pieces))
    target[rows] = 1.0
    loss = bce_logits(logits, target)
    terms = [chamfer(polylines[r], gt_pieces[c]) for r, c in zip(rows, cols)]
    return loss + T.tsum(T.stack(terms)) * (1.0 / len(terms))


def aux_loss(ego_status, frame):
    return masked_smooth_l1(T.reshape(ego_status, (1, 2)), frame.ego_status[None], np.ones(1, bool))


# --- total --------------------------------------------------------------------

@dataclass
class LossReport:
    total: float
    det: float
    motion: float
    map: float
    plan: float
    aux: float
    plan_reg: dict = field(default_factory=dict)
    plan_cls_m: float = 0.0
    plan_cls_d: float = 0.0

    FIELDS = ("total", "det", "motion", "map", "plan", "aux", "plan_reg", "plan_cls_m", "plan_cls_d")

    def row(self):
        return {"total": self.total, "det": self.det, "motion": self.motion, "map": self.map,
                "plan": self.plan, "aux": self.aux, "plan_reg": sum(self.plan_reg.values()),
                "plan_cls_m": self.plan_cls_m, "plan_cls_d": self.plan_cls_d}


@dataclass
class LossWeights:
    det: float = 1.0
    motion: float = 1.0
    map: float = 1.0
    plan: float = 1.0
    aux: float = 1.0


def total_loss(plan, det, motion, map_, aux, weights=LossWeights(), plan_breakdown=None):
    """Weighted sum of the task losses and a report of each term's value."""
    terms = {"det": det, "motion": motion, "map": map_, "plan": plan, "aux": aux}
    total = None
    for name, x in terms.items():
        _check(name, x)
        if x is None or isinstance(x, float):
            continue
        w = getattr(weights, name)
        total = x * w if total is None else total + x * w
    if total is None:
        total = Tensor(np.zeros(()))
    b = plan_breakdown or {}
    report = LossReport(
        total=_value(total), det=_value(det), motion=_value(motion), map=_value(map_), plan=_value(plan),
        aux=_value(aux),
        plan_reg={k: _value(v) for k, v in b.get("reg", {}).items()},
        plan_cls_m=_value(b.get("cls_m")), plan_cls_d=_value(b.get("cls_d")),
    )
    return total, report
