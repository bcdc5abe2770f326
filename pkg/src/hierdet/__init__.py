"""Hierarchical object detection with a deep Q-learning agent."""

from hierdet.geometry import Box, HierarchyScheme, children, iou

__version__ = "0.1.0"

__all__ = ["Box", "HierarchyScheme", "children", "iou", "__version__"]
