"""Per-subdomain assembly: the local sesquilinear form B, the energy form B+, the
partition-of-unity Gram matrix P, the local particular solve, and harmonic
extensions. All local matrices follow the test-first convention of `mesh`.

Local dof sets exclude the outer-boundary nodes for the Dirichlet kinds
(diffusion, convection-diffusion); Helmholtz keeps them, with the impedance
term entering the rows of boundary dofs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import mesh as fm
from .errors import FactorizationError, InvariantBreachError, LocalSolveError


@dataclass
class LocalProblem:
    sub: object
    kind: str
    dofs: np.ndarray          # global node indices of the omega* dof set
    I1: np.ndarray            # positions (into dofs) of interior dofs
    I2: np.ndarray            # positions of dofs on boundary(omega*) inside Omega
    B_star: sp.csr_matrix     # B over omega*, local indexing
    Bplus_star: sp.csr_matrix # B+ over omega*, local indexing
    P_gram: sp.csr_matrix     # Gram of the chi-weighted pairing on omega
    E_core: sp.csr_matrix     # energy matrix of the H_0(omega) inner product
    kernel: np.ndarray        # (ndof, l) kernel basis of B+ within the harmonic space
    chi: np.ndarray           # chi values at the local dofs
    _interior_lu: object = field(default=None, repr=False)

    @property
    def n_dofs(self):
        return self.dofs.size

    @property
    def kernel_dim(self):
        return self.kernel.shape[1]

    def interior_solver(self):
        if self._interior_lu is None:
            A = self.B_star[self.I1][:, self.I1].tocsc()
            try:
                self._interior_lu = spla.splu(A)
            except (RuntimeError, ValueError) as exc:
                raise LocalSolveError(self.sub.id, f"interior factorization failed: {exc}") from exc
        return self._interior_lu


@dataclass
class ParticularFunction:
    psi: np.ndarray           # on omega* dofs; restriction to omega implied


def _kernel_basis(problem, sub, ndofs):
    """Analytic kernel of B+ within the local harmonic space.

    Constants for interior diffusion/convection subdomains (and for Helmholtz
    degenerated to k = 0, where no impedance term remains); empty as soon as
    boundary(omega*) meets the Dirichlet boundary or k > 0.
    """
    if problem.kind == fm.HELMHOLTZ:
        has_kernel = problem.k == 0.0
    else:
        has_kernel = not sub.touches_dirichlet
    if not has_kernel:
        return np.zeros((ndofs, 0))
    return np.ones((ndofs, 1))


def assemble_local(problem, mesh, sub):
    """Local matrices (B, B+, P) and kernel for one subdomain."""
    elems_star = sub.omega_star_elems(mesh)
    elems_core = sub.omega_elems(mesh)
    B_full = fm.assemble_form(problem, mesh, fm.FORM_B, elems_star).matrix
    Bp_full = fm.assemble_form(problem, mesh, fm.FORM_BPLUS, elems_star).matrix
    core_form = fm.FORM_BPLUS_K if problem.kind == fm.HELMHOLTZ else fm.FORM_BPLUS
    E_full = fm.assemble_form(problem, mesh, core_form, elems_core).matrix

    nodes = sub.omega_star_nodes
    if problem.kind != fm.HELMHOLTZ:
        gamma = np.zeros(mesh.n_nodes, dtype=bool)
        gamma[mesh.boundary_nodes] = True
        nodes = nodes[~gamma[nodes]]
    dofs = np.sort(nodes)
    pos = {int(g): i for i, g in enumerate(dofs)}
    I2 = np.array(sorted(pos[int(g)] for g in sub.omega_star_boundary_nodes), dtype=np.int64)
    mask = np.ones(dofs.size, dtype=bool)
    mask[I2] = False
    I1 = np.flatnonzero(mask)

    B_star = B_full[dofs][:, dofs].tocsr()
    Bplus_star = Bp_full[dofs][:, dofs].tocsr()
    E_core = E_full[dofs][:, dofs].tocsr()
    chi = sub.chi[dofs]
    D = sp.diags(chi)
    P_gram = (D @ E_core @ D).tocsr()

    kernel = _kernel_basis(problem, sub, dofs.size)
    if kernel.shape[1]:
        scale = np.abs(Bplus_star).max()
        res = np.abs(Bplus_star @ kernel).max()
        if res > 1e-10 * scale:
            raise InvariantBreachError(
                f"subdomain {sub.id}: kernel residual {res:.3e} exceeds 1e-10 * ||B+||")

    return LocalProblem(sub, problem.kind, dofs, I1, I2,
                        B_star, Bplus_star, P_gram, E_core, kernel, chi)


def local_rhs(local, rhs_global):
    """Restriction of the global load vector to the omega* dofs."""
    return rhs_global[local.dofs]


def solve_particular(problem, local, F):
    """Local particular function: solve B against interior tests with zero data
    on boundary(omega*) inside Omega (and on the Dirichlet boundary)."""
    psi = np.zeros(local.n_dofs, dtype=complex if problem.kind == fm.HELMHOLTZ else float)
    b = F[local.I1]
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return ParticularFunction(psi)
    lu = local.interior_solver()
    x = lu.solve(b)
    A = local.B_star[local.I1][:, local.I1]
    res = np.linalg.norm(A @ x - b)
    if not np.isfinite(res) or res > 1e-10 * nb:
        raise LocalSolveError(local.sub.id, f"particular solve residual {res:.3e}")
    psi[local.I1] = x
    return ParticularFunction(psi)


def harmonic_extension(local, boundary_values):
    """Discretely B-harmonic vector matching the given data on the I2 dofs."""
    bvals = np.asarray(boundary_values)
    if bvals.shape != (local.I2.size,):
        raise LocalSolveError(local.sub.id,
                              f"boundary data length {bvals.shape} != {local.I2.size}")
    dtype = complex if (local.kind == fm.HELMHOLTZ or np.iscomplexobj(bvals)) else float
    v = np.zeros(local.n_dofs, dtype=dtype)
    v[local.I2] = bvals
    rhs = -(local.B_star[local.I1][:, local.I2] @ bvals)
    lu = local.interior_solver()
    if np.iscomplexobj(rhs) and local.kind != fm.HELMHOLTZ:
        v[local.I1] = lu.solve(rhs.real) + 1j * lu.solve(rhs.imag)
    else:
        v[local.I1] = lu.solve(rhs)
    return v


def harmonicity_residual(local, v):
    """Relative size of the interior-test residual B_star v on the I1 rows."""
    r = local.B_star[local.I1] @ v
    scale = np.abs(local.B_star).max() * max(np.linalg.norm(v), 1e-300)
    return float(np.linalg.norm(r) / scale)


def pou_identity_gap(problem, mesh, local, u, v):
    """Relative gap of the cut-off identity used by the weighted-L2 eigenproblem
    variant: B+_omega(P u, P v) versus the centroid-quadrature evaluation of
    int A |grad chi|^2 u v - 0.5 chi^2 b . grad(u v). Exact in the continuum for
    divergence-free b; at the discrete level the gap shrinks with the mesh size.
    """
    if problem.kind != fm.CONVECTION_DIFFUSION:
        raise LocalSolveError(local.sub.id, "identity check applies to convection-diffusion")
    lhs = np.vdot(local.chi * v, local.E_core @ (local.chi * u)).real

    elems = local.sub.omega_star_elems(mesh)
    conn = mesh.elems[elems]
    grads = mesh.elem_grads[elems]
    areas = mesh.elem_areas[elems]
    chi_g = np.zeros(mesh.n_nodes)
    chi_g[local.dofs] = local.chi
    ug = np.zeros(mesh.n_nodes)
    vg = np.zeros(mesh.n_nodes)
    ug[local.dofs] = u.real
    vg[local.dofs] = v.real
    ce = chi_g[conn]
    ue = ug[conn]
    ve = vg[conn]
    grad_chi = np.einsum("ei,eid->ed", ce, grads)
    grad_u = np.einsum("ei,eid->ed", ue, grads)
    grad_v = np.einsum("ei,eid->ed", ve, grads)
    um = ue.mean(axis=1)
    vm = ve.mean(axis=1)
    cm = ce.mean(axis=1)
    a_e = problem.a[elems]
    b_e = problem.b[elems]
    t1 = np.sum(areas * a_e * np.einsum("ed,ed->e", grad_chi, grad_chi) * um * vm)
    grad_uv = grad_u * vm[:, None] + grad_v * um[:, None]
    t2 = -0.5 * np.sum(areas * cm ** 2 * np.einsum("ed,ed->e", b_e, grad_uv))
    rhs = t1 + t2
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale
