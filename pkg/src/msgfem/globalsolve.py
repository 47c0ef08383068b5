"""Global trial space u^p + span{I_h(chi_i phi_ij)}, the coarse Galerkin solve, and
error measurement against the fine reference."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import mesh as fm
from .errors import CoarseSingularityError, InsufficientSpectrumError, InvariantBreachError
from .mesh import assemble_form, energy_matrix, rhs_vector, solve_fine_reference


@dataclass
class GlobalSpace:
    vectors: sp.csc_matrix      # (N, total_dim) global sparse basis vectors
    sub_ids: np.ndarray         # owning subdomain of each basis vector
    dims: np.ndarray            # per-subdomain n_i (kernel included)
    particular: np.ndarray      # u^p = sum_i I_h(chi_i psi_i)
    lambda_next: np.ndarray     # per-subdomain lambda_{n_i + 1} for the bound
    zeta: int
    zeta_star: int

    @property
    def total_dim(self):
        return int(self.vectors.shape[1])


@dataclass
class GlobalSolution:
    coeffs: np.ndarray
    u_G: np.ndarray
    err_energy_rel: float
    err_l2_rel: float
    bound: float
    galerkin_residual: float
    pruned_columns: tuple = ()


def build_global_space(cover, locals_, bases, particulars, dims):
    """Glue local spectral bases and particular functions with the partition of unity.

    dims[i] counts the whole local space including the kernel family; the first
    kernel_count members of each block are the kernel vectors. dims[i] may equal
    kernel_count (kernel-only coarse space) and must leave lambda_{n_i+1} available
    for the a-posteriori bound.
    """
    dims = np.asarray(dims, dtype=int)
    if dims.size != len(cover.subdomains):
        raise InsufficientSpectrumError("dims must provide one entry per subdomain")
    n_nodes = cover.subdomains[0].chi.size
    cols = []
    sub_ids = []
    lam_next = np.empty(dims.size)
    u_p = None
    for sub, local, basis, part, n_i in zip(cover.subdomains, locals_, bases, particulars, dims):
        l = basis.kernel_count
        if n_i < l:
            raise InsufficientSpectrumError(
                f"subdomain {sub.id}: n_i = {n_i} smaller than kernel dimension {l}")
        n_eig = n_i - l
        if basis.n_finite < n_eig + 1:
            raise InsufficientSpectrumError(
                f"subdomain {sub.id}: n_i = {n_i} needs {n_eig + 1} finite eigenvalues, "
                f"basis holds {basis.n_finite}")
        lam_next[sub.id] = basis.lambdas[n_eig]
        chi_local = sub.chi[local.dofs]
        block = [basis.kernel_vectors[:, j] for j in range(l)]
        block += [basis.vectors[:, j] for j in range(n_eig)]
        piece = chi_local * part.psi
        vec = np.zeros(n_nodes, dtype=piece.dtype)
        vec[local.dofs] = piece
        u_p = vec if u_p is None else u_p + vec
        for row in block:
            g = np.zeros(n_nodes, dtype=row.dtype)
            g[local.dofs] = chi_local * row
            cols.append(g)
            sub_ids.append(sub.id)
        # per-subdomain independence check of the glued block (normalized columns)
        if l + n_eig:
            blk = np.column_stack([cols[k] for k in range(len(cols) - (l + n_eig), len(cols))])
            norms = np.linalg.norm(blk, axis=0)
            if np.any(norms <= 0):
                raise InvariantBreachError(f"subdomain {sub.id}: glued basis vector vanishes")
            gram = (blk / norms).conj().T @ (blk / norms)
            rank = np.linalg.matrix_rank(gram, tol=1e-10)
            if rank < l + n_eig:
                raise InvariantBreachError(
                    f"subdomain {sub.id}: glued basis block is rank deficient "
                    f"({rank} < {l + n_eig})")
    dtype = complex if any(np.iscomplexobj(c) for c in cols) or np.iscomplexobj(u_p) else float
    if cols:
        V = sp.csc_matrix(np.column_stack(cols).astype(dtype))
    else:
        V = sp.csc_matrix((n_nodes, 0), dtype=dtype)
    return GlobalSpace(V, np.asarray(sub_ids, dtype=int), dims, u_p.astype(dtype),
                       lam_next, cover.zeta, cover.zeta_star)


def _solve_coarse(G, b):
    """Dense coarse solve with pivoted-QR column pruning on rank deficiency."""
    dim = G.shape[0]
    if dim == 0:
        return np.zeros(0, dtype=G.dtype), ()
    try:
        c = np.linalg.solve(G, b)
        res = np.linalg.norm(G @ c - b)
        if np.isfinite(res) and res <= 1e-8 * (np.linalg.norm(b) + np.abs(G).max() * np.linalg.norm(c)):
            return c, ()
    except np.linalg.LinAlgError:
        pass
    import scipy.linalg as sla
    Q, R, piv = sla.qr(G, pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(diag.max(), 1e-300) * 1e-12
    rank = int(np.sum(diag > tol))
    keep = np.sort(piv[:rank])
    dropped = tuple(int(j) for j in np.sort(piv[rank:]))
    warnings.warn(f"coarse matrix rank deficient; pruning columns {dropped}",
                  RuntimeWarning, stacklevel=2)
    sub = G[np.ix_(keep, keep)]
    try:
        c_sub = np.linalg.solve(sub, b[keep])
    except np.linalg.LinAlgError as exc:
        raise CoarseSingularityError(
            f"coarse matrix singular even after pruning columns {dropped}") from exc
    c = np.zeros(dim, dtype=G.dtype)
    c[keep] = c_sub
    return c, dropped


def galerkin_solve(problem, mesh, space, u_ref=None):
    """Coarse Galerkin solve in the glued space; errors against the fine reference."""
    A = assemble_form(problem, mesh, fm.FORM_B).matrix
    rhs = rhs_vector(problem, mesh)
    V = space.vectors
    r0 = rhs - A @ space.particular
    G = np.asarray((V.conj().T @ (A @ V)).todense()) if V.shape[1] else np.zeros((0, 0))
    b = V.conj().T @ r0
    coeffs, pruned = _solve_coarse(G, np.asarray(b).ravel())
    u_G = space.particular + (V @ coeffs if coeffs.size else 0.0)

    u_h = solve_fine_reference(problem, mesh) if u_ref is None else u_ref
    E = energy_matrix(problem, mesh)
    Mass = assemble_form(problem, mesh, fm.FORM_MASS).matrix

    def _norm(M, v):
        return float(np.sqrt(max(np.real(np.vdot(v, M @ v)), 0.0)))

    diff = u_h - u_G
    nh_e = _norm(E, u_h)
    nh_l2 = _norm(Mass, u_h)
    err_e = _norm(E, diff) / nh_e if nh_e > 0 else 0.0
    err_l2 = _norm(Mass, diff) / nh_l2 if nh_l2 > 0 else 0.0

    bound = float(np.sqrt(space.zeta * space.zeta_star) *
                  np.sqrt(np.max(space.lambda_next))) if space.dims.size else float("nan")

    if V.shape[1]:
        resid = np.asarray((V.conj().T @ (A @ diff))).ravel()
        vnorms = np.array([_norm(E, np.asarray(V[:, j].todense()).ravel())
                           for j in range(V.shape[1])])
        denom = np.maximum(vnorms * nh_e, 1e-300)
        g_res = float(np.max(np.abs(resid) / denom)) if nh_e > 0 else 0.0
    else:
        g_res = 0.0

    return GlobalSolution(coeffs, u_G, err_e, err_l2, bound, g_res, pruned)


def select_dims(bases, cover, tau):
    """Smallest admissible n_i with sqrt(zeta zeta*) * lambda_{n_i+1}^(1/2) <= tau."""
    if tau <= 0:
        raise InvariantBreachError(f"threshold tau must be positive, got {tau}")
    thresh = tau ** 2 / (cover.zeta * cover.zeta_star)
    dims = np.empty(len(bases), dtype=int)
    for i, basis in enumerate(bases):
        l = basis.kernel_count
        hit = None
        for n in range(l + 1, l + basis.n_finite):
            if basis.lambdas[n - l] <= thresh:
                hit = n
                break
        if hit is None:
            raise InsufficientSpectrumError(
                f"subdomain {i}: threshold {tau} unreachable within the computed "
                f"spectrum of {basis.n_finite} eigenvalues")
        dims[i] = hit
    return dims
