"""Top-k query memory with several round-robin slots.

A slot holds, per task, the features and anchor centers of the queries kept
from one earlier model call, plus the ego pose at that call so the centers
can be moved into the current ego frame.
"""
from dataclasses import dataclass, field

import numpy as np

from mgplan.errors import ConfigError, StateError
from mgplan.geometry import ego_to_world, world_to_ego

TASKS = ("agent", "map", "planning")


def topk_indices(scores, k):
    """Indices of the ``k`` highest scores, ties going to the lower index, in rank order."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    if k > len(scores):
        raise ConfigError(f"cannot keep top {k} of {len(scores)} queries")
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    # stable sort on the negated scores keeps the lower index first among ties
    return np.argsort(-scores, kind="stable")[:k]


@dataclass
class SlotEntry:
    features: np.ndarray
    centers: np.ndarray


@dataclass
class Slot:
    pose: np.ndarray = None
    tasks: dict = field(default_factory=dict)

    @property
    def empty(self):
        return self.pose is None


class MemoryBank:
    def __init__(self, n_slots=5, k=None):
        if n_slots < 1:
            raise ConfigError("memory needs at least one slot")
        self.n_slots = n_slots
        self.k = dict(k or {"agent": 0, "map": 0, "planning": 0})
        self.slots = [Slot() for _ in range(n_slots)]
        self.active_slot = 0

    def reset(self):
        self.slots = [Slot() for _ in range(self.n_slots)]
        self.active_slot = 0

    def select(self, step):
        """Point the bank at slot ``step mod n_slots``."""
        self.active_slot = step % self.n_slots
        return self.active_slot

    def read(self, pose, dim):
        """Stored entries of the active slot with centers in the frame of ``pose``."""
        slot = self.slots[self.active_slot]
        if slot.empty:
            return {}
        out = {}
        for task, entry in slot.tasks.items():
            if entry.features.shape[-1] != dim:
                raise StateError(
                    f"memory holds {task} features of width {entry.features.shape[-1]}, model uses {dim}")
            if len(entry.features) == 0:
                continue
            centers = world_to_ego(ego_to_world(entry.centers, slot.pose), pose)
            out[task] = SlotEntry(entry.features, centers)
        return out

    def store(self, pose, features, centers, scores):
        """Keep each task's top-k queries in the active slot, then advance the pointer."""
        slot = Slot(pose=np.array(pose, dtype=float))
        for task in TASKS:
            k = self.k.get(task, 0)
            if task not in features:
                continue
            idx = topk_indices(scores[task], k)
            slot.tasks[task] = SlotEntry(np.array(features[task][idx]), np.array(centers[task][idx]))
        self.slots[self.active_slot] = slot
        self.active_slot = (self.active_slot + 1) % self.n_slots
        return self
