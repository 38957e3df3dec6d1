"""Codecs between native task ground truth and 3-channel task images."""
from .dense import (color_distances, decode_depth, decode_semseg, encode_depth,
                    encode_semseg, restoration_codec)
from .instances import (InstanceDecodeConfig, decode_instances, encode_instances,
                        mask_iou_matrix, matrix_nms)
from .keypoints import KeypointCodecConfig, decode_keypoints, encode_keypoints
from .palette import (ColorTable, generate_color_table, keypoint_color_table,
                      location_cell, location_color, location_colors, min_pairwise_l1,
                      semseg_base, snap_location)
from .panoptic import PanopticMergeConfig, merge_panoptic, vote_instance_classes

__all__ = [
    "ColorTable", "generate_color_table", "keypoint_color_table", "location_colors",
    "location_cell", "location_color", "snap_location", "min_pairwise_l1", "semseg_base",
    "encode_depth", "decode_depth", "encode_semseg", "decode_semseg", "color_distances",
    "restoration_codec",
    "encode_keypoints", "decode_keypoints", "KeypointCodecConfig",
    "encode_instances", "decode_instances", "InstanceDecodeConfig", "matrix_nms",
    "mask_iou_matrix",
    "vote_instance_classes", "merge_panoptic", "PanopticMergeConfig",
]
