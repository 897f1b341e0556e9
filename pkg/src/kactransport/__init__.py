"""Poisson-driven transport approximations of complex Brownian motion.

Subpackages mirror the pipeline: random streams, the thinned Poisson
skeleton, exact transport paths, the Skorokhod coupling, statistical
checks and the combinatorial appendix oracles.
"""

from kactransport.rng import RandomStream, SeedSpec, derive_stream, stream_id
from kactransport.poisson import JumpSkeleton, simulate_master, count_at
from kactransport.transport import (
    ThetaSet,
    TransportPath,
    evaluate_transport,
    simulate_family,
    sample_path_grid,
)
from kactransport.coupling import (
    CouplingRealization,
    build_grid_coupling,
    build_skeleton_coupling,
    decomposition_diagnostics,
    generate_walk_inputs,
    sample_exit_time,
)

__version__ = "0.1.0"

__all__ = [
    "RandomStream",
    "SeedSpec",
    "derive_stream",
    "stream_id",
    "JumpSkeleton",
    "simulate_master",
    "count_at",
    "ThetaSet",
    "TransportPath",
    "evaluate_transport",
    "simulate_family",
    "sample_path_grid",
    "CouplingRealization",
    "build_grid_coupling",
    "build_skeleton_coupling",
    "decomposition_diagnostics",
    "generate_walk_inputs",
    "sample_exit_time",
]
