"""Point-cloud landmark capture and localization toolkit."""

from .geometry import (
    OrientedBox,
    Point3,
    PointCloud,
    RigidTransform,
    box_contains,
    centroid,
    compose,
    crop_to_box,
    transform_point,
)
from .registration import IcpParams, IcpResult, estimate_rigid_transform, icp_align
from .search import (
    Candidate,
    Landmark,
    Match,
    SearchParams,
    candidate_error,
    capture_landmark,
    find_landmark,
    non_max_suppression,
    transfer_pose,
)
from .spatial import (
    AxisAlignedBounds,
    SeededRng,
    SpatialIndex,
    build_index,
    crop_to_workspace,
    sample_points,
    voxel_downsample,
)

__version__ = "0.1.0"
