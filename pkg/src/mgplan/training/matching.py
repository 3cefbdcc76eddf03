"""Winner-takes-all modality matching and driving-style bin selection."""
import logging
from dataclasses import dataclass

import numpy as np

from mgplan.trajectory import classify_speed

log = logging.getLogger(__name__)


@dataclass
class MatchResult:
    """``ref_index`` is the supervised modality; ``per_group[gid]`` the index used for group ``gid``."""

    ref_index: int
    per_group: dict

    @property
    def broadcast(self):
        return all(v == self.ref_index for v in self.per_group.values())


def modality_errors(pred, gt_points, valid):
    """Mean Euclidean error of each modality over the valid waypoints, ``N_m``."""
    pred = np.asarray(pred, dtype=float)
    d = np.linalg.norm(pred[:, valid] - np.asarray(gt_points)[valid][None], axis=-1)
    return d.mean(axis=1)


def best_modality(pred, gt_set):
    """Index of the closest modality; ties go to the lower index. None when GT is fully padded."""
    valid = gt_set.valid
    if not valid.any():
        return None
    # argmin returns the first minimum, which is the lower-index tie rule
    return int(np.argmin(modality_errors(pred, gt_set.waypoints, valid)))


def align_match(waypoints, gt, layout):
    """Match on the reference granularity and share the winner with every other group.

    ``waypoints`` holds one ``N_m x T_j x 2`` array per granularity in layout
    order. Returns None (with a warning) when the reference GT is all padding.
    """
    ids = layout.ids
    ref_id = layout.reference_id
    ref = best_modality(waypoints[ids.index(ref_id)], gt[ref_id])
    if ref is None:
        log.warning("reference ground truth fully padded; sample skipped")
        return None
    return MatchResult(ref, {gid: ref for gid in ids})


def independent_match(waypoints, gt, layout):
    """Each granularity picks its own closest modality; the reference group's winner scores."""
    ids = layout.ids
    ref = best_modality(waypoints[ids.index(layout.reference_id)], gt[layout.reference_id])
    if ref is None:
        log.warning("reference ground truth fully padded; sample skipped")
        return None
    per = {}
    for j, gid in enumerate(ids):
        b = best_modality(waypoints[j], gt[gid])
        per[gid] = ref if b is None else b
    return MatchResult(ref, per)


def match(waypoints, gt, layout):
    return align_match(waypoints, gt, layout) if layout.align_matching else independent_match(waypoints, gt, layout)


def select_style_granularity(gt, layout):
    """Speed bin per temporal frequency from the mean GT speed over the horizon.

    Returns ``(bins_by_frequency, target)`` where ``target`` is the bin at the
    reference frequency, used as the style classification label.
    """
    if layout.n_d == 0:
        return {}, None
    bins = layout.bins
    by_freq = {f: classify_speed(gt.mean_speed(f), bins) for f in layout.temporal_hz}
    ref_spec = layout.specs[layout.index(layout.reference_id)]
    return by_freq, by_freq[ref_spec.frequency_hz]


def supervised_groups(layout, style_bins):
    """Boolean per granularity: does its regression head receive loss for this sample?"""
    out = []
    for spec in layout.specs:
        if spec.kind == "driving_style":
            out.append(style_bins.get(spec.frequency_hz) == spec.speed_bin)
        else:
            out.append(True)
    return out
