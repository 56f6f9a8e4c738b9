"""Classical restoration toolbox and registry."""

from .deblur import MotionEstimate, estimate_motion_kernel, wiener_deconvolve
from .tools import (BIT_TO_TASK, TaskLabel, ToolRegistry, ToolSpec, UnknownTool, apply_tool, default_registry,
                    tasks_from_vector)

__all__ = [
    "BIT_TO_TASK", "MotionEstimate", "TaskLabel", "ToolRegistry", "ToolSpec", "UnknownTool", "apply_tool",
    "default_registry", "estimate_motion_kernel", "tasks_from_vector", "wiener_deconvolve",
]
