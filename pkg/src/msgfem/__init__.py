"""msgfem: desk-scale laboratory for the multiscale spectral generalized FEM."""

from .mesh import (
    CONVECTION_DIFFUSION,
    DIFFUSION,
    HELMHOLTZ,
    Checkerboard,
    Constant,
    Mesh2D,
    ProblemDef,
    RandomContrast,
    SparseForm,
    assemble_form,
    build_unit_square_mesh,
    make_coefficient,
    solve_fine_reference,
)
from .cover import Cover, Subdomain, build_cover, cover_constants, pou_apply
from .localops import (
    LocalProblem,
    ParticularFunction,
    assemble_local,
    harmonic_extension,
    local_rhs,
    solve_particular,
)
from .specsolve import (
    LocalBasis,
    local_error_certificate,
    oracle_harmonic_eigen,
    solve_mixed_eigen,
    solve_reduced_elliptic,
)
from .globalsolve import GlobalSolution, GlobalSpace, build_global_space, galerkin_solve, select_dims
from .greenrank import BlockPair, GreenBlockReport, block_pair_from_boxes, green_block, separability_report

__version__ = "0.1.0"
