"""
Point cloud filters.
Filters remove outliers from the accumulated point cloud of an object before
its pose is optimized. Each filter works on world-frame points together with
the object's current pose estimate. Filters can be chained using a FilterChain.
"""
import logging
import typing

import numpy as np

from pyobjmap.constants import GRID_RESOLUTION
from pyobjmap.obj_types import ObjectPose
from pyobjmap.objmap import slice_filter

logger = logging.getLogger(__name__)

MAD_SCALE = 1.4826  # MAD to standard deviation for normally distributed data


class Filter:
    """
    Base class for all filters.
    """

    def __init__(self) -> None:
        self.next_filter: typing.Optional[Filter] = None

    def set_next(self, filter: 'Filter') -> None:
        """
        Set the next filter in the chain.

        Parameters:
        filter (Filter): The next filter to set.
        """
        self.next_filter = filter

    def filter(self, points: np.ndarray, pose: ObjectPose) -> np.ndarray:
        """
        Apply the filter to the points and then pass the result to the next filter.

        Parameters:
        points (np.ndarray): (N, 3) world-frame points.
        pose (ObjectPose): current estimate of the object the points belong to.

        Returns:
        np.ndarray: the points that passed every filter.
        """
        points = self.filter_data(points, pose)
        if self.next_filter:
            return self.next_filter.filter(points, pose)
        return points

    def filter_data(self, points: np.ndarray, pose: ObjectPose) -> np.ndarray:
        """
        Abstract method to filter points. Should be implemented by subclasses.
        """
        raise NotImplementedError("This method should be overridden by subclasses.")


class MedianDistanceFilter(Filter):
    """
    Drops points whose distance to the median point exceeds the median distance
    by more than `k` robust standard deviations (scaled median absolute deviation).
    """

    def __init__(self, k: float = 3.0) -> None:
        super().__init__()
        self.k = k

    def filter_data(self, points: np.ndarray, pose: ObjectPose) -> np.ndarray:
        if len(points) < 4:
            return points
        dist = np.linalg.norm(points - np.median(points, axis=0), axis=1)
        med = float(np.median(dist))
        mad = MAD_SCALE * float(np.median(np.abs(dist - med)))
        if mad <= 0.0:
            return points
        keep = dist <= med + self.k * mad
        logger.debug("median distance filter dropped %d of %d points", int((~keep).sum()), len(points))
        return points[keep]  # type: ignore


class SliceFilter(Filter):
    """
    Removes sparse edge slices of the cube (see objmap.slice_filter).
    """

    def __init__(self, resolution: float = GRID_RESOLUTION) -> None:
        super().__init__()
        self.resolution = resolution

    def filter_data(self, points: np.ndarray, pose: ObjectPose) -> np.ndarray:
        result = slice_filter(pose.to_object(points), pose, self.resolution)
        return points[result.kept]  # type: ignore


class FilterChain:
    """
    Chains multiple filters together.
    """

    def __init__(self, filters: typing.List[Filter]) -> None:
        """
        Initialize the filter chain with a sequence of filters.

        Parameters:
        filters (list of Filter): A list of filters to be applied in order.
        """
        if not filters:
            raise ValueError('At least one filter required')

        # Link filters together in the order provided
        for current, next in zip(filters[:-1], filters[1:]):
            current.set_next(next)

        self.filters = filters
        self.start = filters[0]

    def filter(self, points: np.ndarray, pose: ObjectPose) -> np.ndarray:
        """
        Apply the chain of filters to the points.
        """
        return self.start.filter(np.asarray(points, dtype=float).reshape(-1, 3), pose)


def default_chain(resolution: float = GRID_RESOLUTION) -> FilterChain:
    """The pre-optimization chain: statistical distance filter followed by the slice filter."""
    return FilterChain([MedianDistanceFilter(), SliceFilter(resolution)])
