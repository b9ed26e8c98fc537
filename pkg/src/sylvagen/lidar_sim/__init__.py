"""Pulse generation, scene indexing and first-return ray tracing."""

from .bvh import BVH, build_bvh, trace_rays
from .scanners import (
    ConfigurationError,
    PulseBlock,
    ScannerModel,
    count_pulses,
    default_scanner,
    generate_pulses,
    load_scanners,
    make_schedule,
)
from .scene import SceneIndex, build_scene_index, scene_from_primitives
from .simulate import (
    CountSummary,
    LabeledPoint,
    Pulse,
    reduced_tls_counts,
    simulate,
    simulate_counts,
    trace,
    trace_block,
    worker_count,
)
