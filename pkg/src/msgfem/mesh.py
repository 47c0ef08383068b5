"""Fine-scale machinery on the unit square: uniform P1 triangulation,
piecewise-constant coefficient fields, form assembly, and the fine reference solve.

Every assembled matrix is indexed by global nodal dofs, regardless of the element
subset it was integrated over. Matrix convention: ``A[i, j] = form(phi_j, phi_i)``
(test index first), which for the sesquilinear Helmholtz form yields a complex
symmetric matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    EmptyRegionError,
    FactorizationError,
    InvalidResolutionError,
    NonpositiveCoefficientError,
    ConfigError,
)

DIFFUSION = "diffusion"
CONVECTION_DIFFUSION = "convection_diffusion"
HELMHOLTZ = "helmholtz"
KINDS = (DIFFUSION, CONVECTION_DIFFUSION, HELMHOLTZ)

FORM_B = "b"
FORM_BPLUS = "bplus"
FORM_BPLUS_K = "bplus_k"
FORM_MASS = "mass"
FORMS = (FORM_B, FORM_BPLUS, FORM_BPLUS_K, FORM_MASS)

SYM_SYMMETRIC = "symmetric"
SYM_HERMITIAN = "hermitian"
SYM_GENERAL = "general"


# ---------------------------------------------------------------------------
# coefficient specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Checkerboard:
    cells: int      # checker cells per side
    lo: float
    hi: float


@dataclass(frozen=True)
class RandomContrast:
    lo: float
    hi: float


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------

@dataclass
class Mesh2D:
    """Uniform right-triangle mesh of [0,1]^2 with n cells per side.

    nodes are ordered row-major: node (ix, iy) has index iy*(n+1) + ix.
    Cell (cx, cy) is split along the (cx,cy)->(cx+1,cy+1) diagonal into a lower
    element 2*(cy*n+cx) and an upper element 2*(cy*n+cx)+1, both counterclockwise.
    """

    n: int
    nodes: np.ndarray          # (N, 2)
    elems: np.ndarray          # (M, 3) int
    boundary_nodes: np.ndarray # sorted global indices on the outer boundary
    elem_areas: np.ndarray     # (M,)
    elem_grads: np.ndarray     # (M, 3, 2) gradients of the barycentric basis
    edge_nodes: np.ndarray     # (4n, 2) boundary edge endpoints
    edge_elems: np.ndarray     # (4n,) owning element of each boundary edge
    edge_len: np.ndarray       # (4n,)

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elems(self):
        return self.elems.shape[0]

    def node_index(self, ix, iy):
        return iy * (self.n + 1) + ix

    def nodes_in_box(self, x0, x1, y0, y1):
        """Global indices of nodes with x-index in [x0, x1] and y-index in [y0, y1]."""
        xs = np.arange(x0, x1 + 1)
        ys = np.arange(y0, y1 + 1)
        return (ys[:, None] * (self.n + 1) + xs[None, :]).ravel()

    def elems_in_cells(self, x0, x1, y0, y1):
        """Element indices of all cells with cell-x in [x0, x1) and cell-y in [y0, y1)."""
        cxs = np.arange(x0, x1)
        cys = np.arange(y0, y1)
        if cxs.size == 0 or cys.size == 0:
            return np.empty(0, dtype=np.int64)
        cells = (cys[:, None] * self.n + cxs[None, :]).ravel()
        return np.sort(np.concatenate([2 * cells, 2 * cells + 1]))


def build_unit_square_mesh(n):
    """Uniform triangulation of the unit square with n >= 2 cells per side."""
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidResolutionError(f"mesh resolution must be an integer >= 2, got {n!r}")
    n = int(n)
    ii = np.arange(n + 1)
    X, Y = np.meshgrid(ii / n, ii / n, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    cx, cy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    cx = cx.ravel()
    cy = cy.ravel()
    v00 = cy * (n + 1) + cx
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elems = np.empty((2 * n * n, 3), dtype=np.int64)
    elems[0::2] = lower
    elems[1::2] = upper

    p = nodes[elems]                       # (M, 3, 2)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    grads = np.empty((elems.shape[0], 3, 2))
    for k in range(3):
        a = p[:, (k + 1) % 3]
        b = p[:, (k + 2) % 3]
        grads[:, k, 0] = (a[:, 1] - b[:, 1]) / (2.0 * areas)
        grads[:, k, 1] = (b[:, 0] - a[:, 0]) / (2.0 * areas)

    on_bnd = (
        (nodes[:, 0] == 0.0) | (nodes[:, 0] == 1.0) |
        (nodes[:, 1] == 0.0) | (nodes[:, 1] == 1.0)
    )
    boundary_nodes = np.flatnonzero(on_bnd)

    # boundary edges in a deterministic order: bottom, right, top, left
    ix = np.arange(n)
    bottom = np.column_stack([ix, ix + 1])
    right = np.column_stack([ix * (n + 1) + n, (ix + 1) * (n + 1) + n])
    top = np.column_stack([n * (n + 1) + ix, n * (n + 1) + ix + 1])
    left = np.column_stack([ix * (n + 1), (ix + 1) * (n + 1)])
    edge_nodes = np.vstack([bottom, right, top, left])
    edge_elems = np.concatenate([
        2 * ix,                      # lower triangle of cell (ix, 0)
        2 * (ix * n + (n - 1)),      # lower triangle of cell (n-1, iy)
        2 * ((n - 1) * n + ix) + 1,  # upper triangle of cell (ix, n-1)
        2 * (ix * n) + 1,            # upper triangle of cell (0, iy)
    ])
    edge_len = np.full(4 * n, 1.0 / n)

    return Mesh2D(n, nodes, elems, boundary_nodes, areas, grads,
                  edge_nodes, edge_elems, edge_len)


def make_coefficient(spec, mesh, seed=0):
    """Per-element scalar field from a coefficient spec, deterministic in (spec, seed)."""
    m = mesh.n_elems
    if isinstance(spec, Constant):
        if spec.value <= 0:
            raise NonpositiveCoefficientError(f"constant coefficient must be > 0, got {spec.value}")
        return np.full(m, float(spec.value))
    if isinstance(spec, Checkerboard):
        if spec.lo <= 0:
            raise NonpositiveCoefficientError(f"checkerboard lower value must be > 0, got {spec.lo}")
        cells = np.arange(m) // 2
        fx = cells % mesh.n
        fy = cells // mesh.n
        px = (fx * spec.cells) // mesh.n
        py = (fy * spec.cells) // mesh.n
        odd = (px + py) % 2 == 1
        return np.where(odd, float(spec.hi), float(spec.lo))
    if isinstance(spec, RandomContrast):
        if spec.lo <= 0:
            raise NonpositiveCoefficientError(f"random contrast lower value must be > 0, got {spec.lo}")
        rng = np.random.default_rng(seed)
        # log-uniform between the contrast bounds
        return np.exp(rng.uniform(np.log(spec.lo), np.log(spec.hi), size=m))
    raise ConfigError(f"unknown coefficient spec {spec!r}")


# ---------------------------------------------------------------------------
# problem definition
# ---------------------------------------------------------------------------

@dataclass
class ProblemDef:
    """PDE kind plus per-element coefficient data on a fixed mesh.

    a      per-element diffusion coefficient, > 0
    b      per-element velocity (convection-diffusion only), shape (M, 2)
    k, V   wavenumber and per-element refraction field (Helmholtz only)
    beta   per-boundary-edge impedance (Helmholtz only), > 0
    f      per-node load values
    g      per-boundary-edge boundary data (Helmholtz impedance rhs)
    """

    kind: str
    a: np.ndarray
    b: np.ndarray | None = None
    k: float = 0.0
    V: np.ndarray | None = None
    beta: np.ndarray | None = None
    f: np.ndarray | None = None
    g: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown problem kind {self.kind!r}")
        self.a = np.asarray(self.a, dtype=float)
        if np.any(self.a <= 0) or not np.all(np.isfinite(self.a)):
            raise NonpositiveCoefficientError("diffusion coefficient must be positive and finite")
        if self.kind == CONVECTION_DIFFUSION:
            if self.b is None:
                raise ConfigError("convection-diffusion requires a velocity field b")
            self.b = np.asarray(self.b, dtype=float)
        elif self.b is not None:
            raise ConfigError("velocity field b is only valid for convection-diffusion")
        if self.kind == HELMHOLTZ:
            if self.k < 0:
                raise ConfigError("wavenumber k must be >= 0")
            if self.V is None or self.beta is None:
                raise ConfigError("helmholtz requires V and beta fields")
            self.V = np.asarray(self.V, dtype=float)
            self.beta = np.asarray(self.beta, dtype=float)
            if np.any(self.beta <= 0):
                raise NonpositiveCoefficientError("impedance beta must be > 0")
        else:
            if self.V is not None or self.beta is not None:
                raise ConfigError("V/beta are only valid for helmholtz")
            if self.g is not None and np.any(np.asarray(self.g) != 0):
                raise ConfigError("boundary flux g must vanish for Dirichlet kinds")

    @property
    def scalar_field(self):
        return "complex" if self.kind == HELMHOLTZ else "real"

    @property
    def a_min(self):
        return float(self.a.min())

    @property
    def a_max(self):
        return float(self.a.max())


@dataclass
class SparseForm:
    matrix: sp.csr_matrix
    symmetry: str
    form: str

    @property
    def triplets(self):
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data


def _local_matrices(problem, mesh, form, elem_set):
    """Per-element 3x3 local matrices for the requested form.

    Boundary impedance contributions are folded into the owning element's local
    matrix so that per-element quadratic forms sum exactly to the global one.
    """
    dtype = complex if (form == FORM_B and problem.kind == HELMHOLTZ) else float
    grads = mesh.elem_grads[elem_set]       # (m, 3, 2)
    areas = mesh.elem_areas[elem_set]       # (m,)
    loc = np.zeros((elem_set.size, 3, 3), dtype=dtype)

    def add_stiffness(coeff):
        loc_r = np.einsum("e,e,eid,ejd->eij", coeff, areas, grads, grads)
        return loc_r

    if form == FORM_MASS:
        mass_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
        loc += areas[:, None, None] * mass_ref[None, :, :]
        return loc, SYM_SYMMETRIC

    if form == FORM_BPLUS:
        loc += add_stiffness(problem.a[elem_set])
        return loc, SYM_SYMMETRIC

    if form == FORM_BPLUS_K:
        loc += add_stiffness(problem.a[elem_set])
        if problem.kind == HELMHOLTZ and problem.k > 0:
            v2 = problem.V[elem_set] ** 2
            # one-point centroid quadrature for the V^2-weighted mass term
            loc += (problem.k ** 2) * (areas * v2)[:, None, None] * np.full((3, 3), 1.0 / 9.0)
        return loc, SYM_SYMMETRIC

    # form == FORM_B
    loc += add_stiffness(problem.a[elem_set])
    if problem.kind == DIFFUSION:
        return loc, SYM_SYMMETRIC
    if problem.kind == CONVECTION_DIFFUSION:
        # centroid quadrature: integral of (b . grad u) v over the element
        bg = np.einsum("ed,ejd->ej", problem.b[elem_set], grads)   # (m, 3) trial index
        loc += (areas / 3.0)[:, None, None] * bg[:, None, :]
        return loc, SYM_GENERAL
    # Helmholtz: stiffness - k^2 V^2 mass - i k (boundary impedance)
    v2 = problem.V[elem_set] ** 2
    loc -= (problem.k ** 2) * (areas * v2)[:, None, None] * np.full((3, 3), 1.0 / 9.0)
    if problem.k > 0:
        in_set = np.isin(mesh.edge_elems, elem_set)
        edge_ids = np.flatnonzero(in_set)
        if edge_ids.size:
            pos_of = np.full(mesh.n_elems, -1, dtype=np.int64)
            pos_of[elem_set] = np.arange(elem_set.size)
            edge_mass = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
            for e in edge_ids:
                owner = pos_of[mesh.edge_elems[e]]
                en = mesh.edge_nodes[e]
                tri = mesh.elems[mesh.edge_elems[e]]
                li = [int(np.where(tri == v)[0][0]) for v in en]
                w = -1j * problem.k * problem.beta[e] * mesh.edge_len[e]
                for aa in range(2):
                    for bb in range(2):
                        loc[owner, li[aa], li[bb]] += w * edge_mass[aa, bb]
    return loc, SYM_SYMMETRIC  # complex symmetric


def _normalize_elem_set(mesh, elem_set):
    if elem_set is None:
        return np.arange(mesh.n_elems)
    elem_set = np.unique(np.asarray(elem_set, dtype=np.int64))
    if elem_set.size == 0:
        raise EmptyRegionError("empty element set")
    if elem_set.min() < 0 or elem_set.max() >= mesh.n_elems:
        raise EmptyRegionError("element indices out of range")
    return elem_set


def assemble_form(problem, mesh, form, elem_set=None):
    """Assemble one of the forms B, B+, B+_k, Mass over an element subset."""
    if form not in FORMS:
        raise ConfigError(f"unknown form {form!r}")
    elem_set = _normalize_elem_set(mesh, elem_set)
    loc, symmetry = _local_matrices(problem, mesh, form, elem_set)
    conn = mesh.elems[elem_set]
    rows = np.repeat(conn, 3, axis=1).ravel()          # test index i
    cols = np.tile(conn, (1, 3)).ravel()               # trial index j
    vals = loc.reshape(elem_set.size, 9).ravel()       # loc[e, i, j], i major
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    return SparseForm(mat, symmetry, form)


def element_energies(problem, mesh, form, u, elem_set=None):
    """Per-element quadratic contributions conj(u)^T K_e u (complex-aware)."""
    elem_set = _normalize_elem_set(mesh, elem_set)
    loc, _ = _local_matrices(problem, mesh, form, elem_set)
    ue = u[mesh.elems[elem_set]]
    return np.einsum("ei,eij,ej->e", np.conj(ue), loc, ue)


# ---------------------------------------------------------------------------
# fine reference solve
# ---------------------------------------------------------------------------

def free_dofs(problem, mesh):
    """Dofs kept in the fine solve: all for Helmholtz, interior for Dirichlet kinds."""
    if problem.kind == HELMHOLTZ:
        return np.arange(mesh.n_nodes)
    mask = np.ones(mesh.n_nodes, dtype=bool)
    mask[mesh.boundary_nodes] = False
    return np.flatnonzero(mask)


def rhs_vector(problem, mesh):
    """Global load vector F(phi_i) = (f, phi_i) + <g, phi_i>_Gamma."""
    f = problem.f if problem.f is not None else np.zeros(mesh.n_nodes)
    mass = assemble_form(problem, mesh, FORM_MASS).matrix
    rhs = mass @ np.asarray(f, dtype=float)
    if problem.kind == HELMHOLTZ:
        rhs = rhs.astype(complex)
        if problem.g is not None:
            g = np.asarray(problem.g)
            w = g * mesh.edge_len / 2.0
            np.add.at(rhs, mesh.edge_nodes[:, 0], w)
            np.add.at(rhs, mesh.edge_nodes[:, 1], w)
    return rhs


def solve_fine_reference(problem, mesh):
    """Fine-scale Galerkin solution; ground truth for all error measurements."""
    A = assemble_form(problem, mesh, FORM_B).matrix
    rhs = rhs_vector(problem, mesh)
    free = free_dofs(problem, mesh)
    Af = A[free][:, free].tocsc()
    bf = rhs[free]
    u = np.zeros(mesh.n_nodes, dtype=complex if problem.kind == HELMHOLTZ else float)
    nb = np.linalg.norm(bf)
    if nb == 0.0:
        return u
    try:
        lu = spla.splu(Af)
        x = lu.solve(bf)
    except (RuntimeError, ValueError) as exc:
        raise FactorizationError(f"fine system factorization failed: {exc}") from exc
    res = np.linalg.norm(Af @ x - bf)
    if not np.isfinite(res) or res > 1e-10 * nb:
        raise FactorizationError(
            f"fine solve residual {res:.3e} exceeds 1e-10 * ||rhs|| = {1e-10 * nb:.3e}")
    u[free] = x
    return u


def energy_matrix(problem, mesh, elem_set=None):
    """Matrix of the energy norm used for global error reporting.

    B+ for the elliptic kinds, B+_k (stiffness plus k^2 V^2 mass) for Helmholtz.
    """
    form = FORM_BPLUS_K if problem.kind == HELMHOLTZ else FORM_BPLUS
    return assemble_form(problem, mesh, form, elem_set).matrix


def energy_norm(problem, mesh, u, matrix=None):
    M = energy_matrix(problem, mesh) if matrix is None else matrix
    val = np.real(np.vdot(u, M @ u))
    return float(np.sqrt(max(val, 0.0)))
