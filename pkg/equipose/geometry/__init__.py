from .pointcloud import PointCloud, Pose, Scale, as_float_tensor
from .rotations import (
    apply_pose,
    geodesic_angle,
    matrix_to_quat,
    normalize_quaternion,
    quat_multiply,
    quat_to_matrix,
    random_rotation,
    transform_points,
)
from .group import RotationGroup, get_group, icosahedral_group, tetrahedral_group, trivial_group
from .neighbors import ball_query, batched_chamfer, chamfer, farthest_point_sample, knn, pairwise_sq_dists

__all__ = [
    "PointCloud", "Pose", "Scale", "as_float_tensor",
    "apply_pose", "geodesic_angle", "matrix_to_quat", "normalize_quaternion",
    "quat_multiply", "quat_to_matrix", "random_rotation", "transform_points",
    "RotationGroup", "get_group", "icosahedral_group", "tetrahedral_group", "trivial_group",
    "ball_query", "batched_chamfer", "chamfer", "farthest_point_sample", "knn", "pairwise_sq_dists",
]
