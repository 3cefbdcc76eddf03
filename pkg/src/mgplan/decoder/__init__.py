from mgplan.decoder.attention import AttentionBlock, geometric_attention, scaled_dot_attention
from mgplan.decoder.deformable import DeformableBlock, deformable_aggregate
from mgplan.decoder.distances import DistanceMatrix, build_distances
from mgplan.decoder.layer import DecoderLayer
from mgplan.decoder.memory import MemoryBank, topk_indices
from mgplan.decoder.queries import QuerySet

__all__ = [
    "AttentionBlock", "DecoderLayer", "DeformableBlock", "DistanceMatrix", "MemoryBank", "QuerySet",
    "build_distances", "deformable_aggregate", "geometric_attention", "scaled_dot_attention", "topk_indices",
]
