"""Training-free few-shot segmentation over per-layer backbone features."""

from ._core import (
    Episode,
    LayerStack,
    ProtosegError,
    analyze_layers,
    class_gram,
    class_scores,
    encode_feature_file,
    episode_miou,
    generate_synthetic,
    grid_search,
    oracle_select,
    read_feature_file,
    read_mask,
    segment_episode,
    spherical_kmeans,
    write_feature_file,
    write_mask,
    write_synthetic_dataset,
)

__all__ = [
    "Episode",
    "LayerStack",
    "ProtosegError",
    "analyze_layers",
    "class_gram",
    "class_scores",
    "encode_feature_file",
    "episode_miou",
    "generate_synthetic",
    "grid_search",
    "oracle_select",
    "read_feature_file",
    "read_mask",
    "segment_episode",
    "spherical_kmeans",
    "write_feature_file",
    "write_mask",
    "write_synthetic_dataset",
]
