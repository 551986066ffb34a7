"""Layout-driven multiscale thermal analysis of chip interconnect (BEOL) stacks.

The workflow reads a GDSII layout and a process-stack description, builds
voxel RVEs around sample points, homogenizes each into an anisotropic
conductivity tensor, and solves chip-scale steady conduction with the
resulting conductivity map.
"""

from .farm import ConductivityMap, RveOptions, TensorCache, build_conductivity_map
from .gdsii import LayoutDatabase, parse_gdsii, query_window, read_gdsii, write_gdsii
from .homogenize import (
    ConductivityTensor,
    HomogenizationOptions,
    assemble_subscale,
    extract_tensor,
    solve_loadcase,
    verify_hill_mandel,
)
from .linalg import SolveReport, apply_dirichlet, cg_solve
from .macro import (
    BoundarySpec,
    CircularPatch,
    Convection,
    DirichletPatch,
    MacroModel,
    PatchFlux,
    UniformFlux,
    assemble_macro,
    build_macro_mesh,
    sample_plane,
    solve_macro,
)
from .pipeline import PipelineError, run_pipeline
from .rve import RveSpec, VoxelGrid, build_rve, metal_fraction
from .stack import LayerStack, layer_at, load_stack
from .synthetic import SyntheticLayoutSpec, generate_synthetic_layout

__version__ = "0.1.0"

__all__ = [
    "BoundarySpec", "CircularPatch", "ConductivityMap", "ConductivityTensor", "Convection",
    "DirichletPatch", "HomogenizationOptions", "LayerStack", "LayoutDatabase", "MacroModel",
    "PatchFlux", "PipelineError", "RveOptions", "RveSpec", "SolveReport", "SyntheticLayoutSpec",
    "TensorCache", "UniformFlux", "VoxelGrid", "apply_dirichlet", "assemble_macro", "assemble_subscale",
    "build_conductivity_map", "build_macro_mesh", "build_rve", "cg_solve", "extract_tensor",
    "generate_synthetic_layout", "layer_at", "load_stack", "metal_fraction", "parse_gdsii",
    "query_window", "read_gdsii", "run_pipeline", "sample_plane", "solve_loadcase", "solve_macro",
    "verify_hill_mandel", "write_gdsii",
]
