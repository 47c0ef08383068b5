"""Constrained local eigensolvers returning the optimal spectral basis.

Three interchangeable routes compute the eigenpairs of

    (P-hat phi, P-hat v) = lambda * B+(phi, v)   over the discretely B-harmonic space,

with non-ascending lambda and the kernel of B+ treated as a separate family:

* solve_mixed_eigen      saddle-point pencil with a Lagrange multiplier relaxing the
                         harmonicity constraint, solved by dense QZ in mu = 1/lambda
                         form; kernel handled by a second multiplier block.
* solve_reduced_elliptic factorize-once fast path. For the real elliptic structure
                         (B == B+) it is the reduced eigenproblem in the multiplier
                         with an LDL^T factorization; for Helmholtz it reduces the
                         Hermitian pencil by congruence with a Cholesky factor of
                         the (low-rank) right-hand block.
* oracle_harmonic_eigen  brute force: build one harmonic extension per boundary dof
                         and solve the dense projected Hermitian problem.

All routes post-process identically: vectors are re-harmonized from their boundary
data, eigenvalues are refreshed as Rayleigh quotients, and clustered eigenvectors
are orthonormalized blockwise in the B+ inner product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import mesh as fm
from .errors import (
    ConfigError,
    FactorizationError,
    InsufficientSpectrumError,
    OracleTooLargeError,
    SaddleSingularityError,
    SolverInconsistencyError,
)
from .localops import harmonic_extension, harmonicity_residual

MULTIPLIER_ENERGY_CAP = 1e6     # ||p|| / ||phi|| beyond this marks the infinite family
MU_MEDIAN_CAP = 1e12            # |mu| > cap * median(|mu|) marks the infinite family
SPAN_PAD = 8                    # extra Ritz directions carried by the approximate routes


@dataclass
class LocalBasis:
    lambdas: np.ndarray          # finite eigenvalues, non-ascending
    vectors: np.ndarray          # (ndof, m) B+-normalized eigenvectors
    kernel_count: int            # number of conceptually infinite eigenvalues
    kernel_vectors: np.ndarray   # (ndof, kernel_count)
    nwidths: np.ndarray          # d_n = lambda_{n+1}^{1/2}, n = 0, 1, ...
    route: str
    imag_residue: float = 0.0
    harmonic_residual: float = 0.0

    @property
    def n_finite(self):
        return self.lambdas.size


def local_error_certificate(basis, n):
    """Certified local contraction factor d_n = lambda_{n+1}^{1/2}, indexed past
    the kernel family."""
    if n < 0 or n >= basis.nwidths.size:
        raise IndexError(f"certificate index {n} outside [0, {basis.nwidths.size})")
    return float(basis.nwidths[n])


def _check_request(local, n_ev):
    dim = local.I2.size
    l = local.kernel_dim
    if n_ev < 1:
        raise ConfigError(f"n_ev must be >= 1, got {n_ev}")
    if dim == 0:
        raise InsufficientSpectrumError(
            f"subdomain {local.sub.id}: discrete harmonic space is trivial (no free boundary dofs)")
    if n_ev + l > dim:
        raise InsufficientSpectrumError(
            f"subdomain {local.sub.id}: requested {n_ev} eigenpairs + kernel {l} "
            f"exceeds harmonic dimension {dim}")


def _rayleigh(local, v):
    num = np.vdot(v, local.P_gram @ v)
    den = np.vdot(v, local.Bplus_star @ v)
    if abs(den) < 1e-300:
        return 0.0
    return float(num.real / den.real)


def _saddle_sparse(local):
    """Sparse kernel-augmented saddle matrix of the mixed pencil."""
    C = local.B_star[local.I1].tocsr()
    dtype = complex if np.iscomplexobj(local.B_star.data) else float
    blocks = [[local.Bplus_star.astype(dtype), C.conj().T.astype(dtype), None],
              [C.astype(dtype), None, None],
              [None, None, None]]
    if local.kernel_dim:
        M = sp.csr_matrix(np.asarray(local.P_gram @ local.kernel, dtype=dtype))
        blocks[0][2] = M
        blocks[2][0] = M.conj().T
    else:
        blocks = [row[:2] for row in blocks[:2]]
    return sp.bmat(blocks, format="csc")


def _finalize(local, lam_raw, vecs, route, reharmonize=True, n_keep=None,
              refine=False):
    """Rayleigh-Ritz pass on the computed span: re-harmonize, optionally enrich by
    one block power step with the saddle solve, B+-orthonormalize, and refresh the
    eigenpairs from the exact projected pencil."""
    n_keep = len(lam_raw) if n_keep is None else n_keep
    complex_local = np.iscomplexobj(local.B_star.data)
    cols = []
    for j in range(vecs.shape[1]):
        v = vecs[:, j]
        if not complex_local and np.iscomplexobj(v):
            # real pencil: complex-conjugate artifacts carry real span in both parts
            parts = [v.real]
            if np.linalg.norm(v.imag) > 1e-12 * max(np.linalg.norm(v), 1e-300):
                parts.append(v.imag)
        else:
            parts = [v]
        for w in parts:
            if reharmonize:
                w = harmonic_extension(local, w[local.I2])
            nrm = np.linalg.norm(w)
            if nrm > 1e-300:
                cols.append(w / nrm)
    if not cols:
        raise InsufficientSpectrumError(f"subdomain {local.sub.id}: empty eigenvector span")
    S = np.column_stack(cols)
    if refine:
        # one step of subspace iteration toward the dominant lambdas of the
        # harmonic pencil: solve the augmented saddle system against P * span
        Lsp = _saddle_sparse(local)
        try:
            lu = spla.splu(Lsp)
        except (RuntimeError, ValueError) as exc:
            raise SaddleSingularityError(
                f"subdomain {local.sub.id}: saddle refinement factorization failed: {exc}") from exc
        rhs = np.zeros((Lsp.shape[0], S.shape[1]), dtype=Lsp.dtype)
        rhs[:local.n_dofs] = local.P_gram @ S
        Z = lu.solve(rhs)[:local.n_dofs]
        nz = np.linalg.norm(Z, axis=0)
        Z = Z[:, nz > 1e-300] / np.maximum(nz[nz > 1e-300], 1e-300)
        S = np.column_stack([S, Z]) if Z.size else S

    def _ritz(span):
        Gb_raw = span.conj().T @ (local.Bplus_star @ span)
        Gb = 0.5 * (Gb_raw + Gb_raw.conj().T)
        w, U = np.linalg.eigh(Gb)
        keep = w > 1e-13 * max(w.max(), 1e-300)
        Q = span @ (U[:, keep] / np.sqrt(w[keep]))    # B+-orthonormal span basis
        if local.kernel_dim:
            # remove kernel components, invisible to B+ but carrying P-mass
            K = local.kernel
            KPK = K.conj().T @ (local.P_gram @ K)
            KPQ = K.conj().T @ (local.P_gram @ Q)
            Q = Q - K @ np.linalg.solve(KPK, KPQ)
        Gp_raw = Q.conj().T @ (local.P_gram @ Q)
        Gp = 0.5 * (Gp_raw + Gp_raw.conj().T)
        ritz, Zr = np.linalg.eigh(Gp)
        # the returned eigenvalues are real because these matrices are Hermitian;
        # the relative deviation from Hermitian symmetry is the imaginary residue
        asym = 0.0
        for raw, sym in ((Gp_raw, Gp), (Gb_raw, Gb)):
            scale = max(np.abs(raw).max(), 1e-300)
            asym = max(asym, float(np.abs(raw - raw.conj().T).max() / scale))
        return ritz, Q, Zr, asym

    ritz, Q, Zr, imag_residue = _ritz(S)
    if ritz.size < n_keep:
        # degenerate span (numerically invisible tail): complete it with the
        # explicit harmonic basis, which the request size is guaranteed to fit
        S = np.column_stack([S, harmonic_basis(local)])
        ritz, Q, Zr, imag_residue = _ritz(S)
    order = np.argsort(-ritz, kind="stable")[:n_keep]
    if order.size < n_keep:
        raise InsufficientSpectrumError(
            f"subdomain {local.sub.id}: span collapsed to {order.size} directions "
            f"(requested {n_keep})")
    lams = np.maximum(ritz[order], 0.0)
    V = Q @ Zr[:, order]
    m = n_keep

    hres = max((harmonicity_residual(local, V[:, j]) for j in range(m)), default=0.0)
    kern = local.kernel.copy()
    for j in range(kern.shape[1]):
        nrm = np.linalg.norm(kern[:, j])
        if nrm > 0:
            kern[:, j] /= nrm
    return LocalBasis(
        lambdas=lams,
        vectors=V,
        kernel_count=local.kernel_dim,
        kernel_vectors=kern,
        nwidths=np.sqrt(lams),
        route=route,
        imag_residue=float(imag_residue),
        harmonic_residual=float(hres),
    )


def _pencil_blocks(local):
    """Kernel-augmented Hermitian pencil of the mixed formulation (dense)."""
    nd = local.n_dofs
    n1 = local.I1.size
    l = local.kernel_dim
    cplx = np.iscomplexobj(local.B_star.data)
    dtype = complex if cplx else float
    dim = nd + n1 + l
    L = np.zeros((dim, dim), dtype=dtype)
    R = np.zeros((dim, dim), dtype=dtype)
    Ap = local.Bplus_star.toarray().astype(dtype)
    C = local.B_star[local.I1].toarray().astype(dtype)
    L[:nd, :nd] = Ap
    L[:nd, nd:nd + n1] = C.conj().T
    L[nd:nd + n1, :nd] = C
    if l:
        M = np.asarray(local.P_gram @ local.kernel, dtype=dtype)
        L[:nd, nd + n1:] = M
        L[nd + n1:, :nd] = M.conj().T
    R[:nd, :nd] = local.P_gram.toarray().astype(dtype)
    return L, R, nd, n1, l


def solve_mixed_eigen(local, n_ev):
    """Saddle-point route: dense QZ on the multiplier-relaxed pencil."""
    _check_request(local, n_ev)
    L, R, nd, n1, l = _pencil_blocks(local)
    try:
        mu, X = sla.eig(L, R, right=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise SaddleSingularityError(
            f"subdomain {local.sub.id}: QZ failed on the saddle pencil: {exc}") from exc

    finite = np.isfinite(mu)
    if not finite.any():
        raise InsufficientSpectrumError(
            f"subdomain {local.sub.id}: no finite eigenvalues in the mixed pencil")
    mu_f = mu[finite]
    X_f = X[:, finite]
    med = np.median(np.abs(mu_f))
    phi_norm = np.linalg.norm(X_f[:nd], axis=0)
    p_norm = np.linalg.norm(X_f[nd:nd + n1], axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        energy_ratio = np.where(phi_norm > 0, p_norm / np.maximum(phi_norm, 1e-300), np.inf)
    sane = np.abs(mu_f) <= MU_MEDIAN_CAP * max(med, 1e-300)
    good = sane & (energy_ratio <= MULTIPLIER_ENERGY_CAP)
    if not good.any():
        raise InsufficientSpectrumError(
            f"subdomain {local.sub.id}: spurious filter removed every eigenvalue")
    with np.errstate(divide="ignore"):
        lam = np.where(mu_f != 0, (1.0 / mu_f).real, -np.inf)
    # eigenpair candidates: the filtered family first; vectors classified as the
    # multiplier-dominated family may still enrich the span for the Ritz cleanup
    order_good = np.flatnonzero(good)[np.argsort(-lam[good], kind="stable")]
    sel = list(order_good[:n_ev + SPAN_PAD])
    if len(sel) < n_ev + SPAN_PAD:
        rest = np.flatnonzero(sane & ~good)
        rest = rest[np.argsort(-lam[rest], kind="stable")]
        sel += list(rest[: n_ev + SPAN_PAD - len(sel)])
    sel = np.asarray(sel, dtype=int)
    return _finalize(local, lam[sel], X_f[:nd, sel], "mixed", n_keep=n_ev, refine=True)


class _LDLSolver:
    """Dense LDL^T factorization with forward/backward triangular application."""

    def __init__(self, A):
        try:
            lu, d, perm = sla.ldl(A, lower=True)
        except (sla.LinAlgError, ValueError) as exc:
            raise FactorizationError(f"LDL factorization failed: {exc}") from exc
        self.L = lu[perm]
        self.perm = perm
        main = d.diagonal().copy()
        if np.min(np.abs(main)) == 0.0 and np.all(d.diagonal(1) == 0):
            raise FactorizationError("LDL factorization produced a zero pivot")
        band = np.zeros((3, d.shape[0]))
        band[0, 1:] = d.diagonal(1)
        band[1, :] = main
        band[2, :-1] = d.diagonal(-1)
        self.band = band

    def solve(self, B):
        Bp = B[self.perm]
        z = sla.solve_triangular(self.L, Bp, lower=True, unit_diagonal=True)
        try:
            z = sla.solve_banded((1, 1), self.band, z)
        except (sla.LinAlgError, ValueError) as exc:
            raise FactorizationError(f"singular block-diagonal factor: {exc}") from exc
        w = sla.solve_triangular(self.L.T, z, lower=False, unit_diagonal=True)
        out = np.empty_like(w)
        out[self.perm] = w
        return out


def _reduced_real_elliptic(local, n_ev):
    """Paper path for B == B+: reduced eigenproblem in the multiplier, one LDL^T."""
    nd = local.n_dofs
    n1 = local.I1.size
    l = local.kernel_dim
    perm = np.concatenate([local.I1, local.I2])
    Ap = local.Bplus_star[perm][:, perm].toarray()
    Btil = np.zeros((nd + l, nd + l))
    Btil[:nd, :nd] = Ap
    if l:
        M = np.asarray(local.P_gram @ local.kernel)[perm]
        Btil[:nd, nd:] = M
        Btil[nd:, :nd] = M.T
    solver = _LDLSolver(Btil)

    rhs = np.zeros((nd + l, n1))
    rhs[n1:nd] = -Ap[n1:, :n1]
    X = solver.solve(rhs)
    P11 = local.P_gram[local.I1][:, local.I1].toarray()
    T = P11 @ X[:n1]
    B11 = Ap[:n1, :n1]
    try:
        lam_c, PV = sla.eig(T, B11, right=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise FactorizationError(
            f"subdomain {local.sub.id}: reduced eigensolve failed: {exc}") from exc
    finite = np.isfinite(lam_c)
    lam = lam_c[finite].real
    PV = PV[:, finite]
    order = np.argsort(-lam, kind="stable")[:n_ev + SPAN_PAD]
    if order.size < n_ev:
        raise InsufficientSpectrumError(
            f"subdomain {local.sub.id}: reduced route found only {order.size} eigenvalues")
    vecs_perm = X[:nd] @ PV[:, order]
    vecs = np.empty((nd, order.size))
    vecs[perm] = vecs_perm.real
    return _finalize(local, lam[order], vecs, "reduced", n_keep=n_ev, refine=True)


def _reduced_congruence(local, n_ev):
    """Helmholtz path: factorize the Hermitian saddle matrix once and reduce the
    pencil by congruence with a Cholesky factor of the rank-deficient right block."""
    nd = local.n_dofs
    Lsp = _saddle_sparse(local)
    try:
        lu = spla.splu(Lsp)
    except (RuntimeError, ValueError) as exc:
        raise SaddleSingularityError(
            f"subdomain {local.sub.id}: saddle matrix factorization failed: {exc}") from exc

    active = np.flatnonzero(local.chi > 0)
    if active.size == 0:
        raise InsufficientSpectrumError(
            f"subdomain {local.sub.id}: partition-of-unity weight vanishes on omega*")
    P_core = local.P_gram[active][:, active].toarray()
    try:
        chol = sla.cholesky(0.5 * (P_core + P_core.T), lower=True)
    except sla.LinAlgError as exc:
        raise FactorizationError(
            f"subdomain {local.sub.id}: right-hand block is not positive definite: {exc}") from exc
    dim = Lsp.shape[0]
    G = np.zeros((dim, active.size), dtype=complex)
    G[active] = chol
    Y = lu.solve(G)
    S_raw = G.conj().T @ Y
    S = 0.5 * (S_raw + S_raw.conj().T)
    lam_all, W = np.linalg.eigh(S)
    order = np.argsort(-lam_all, kind="stable")[:n_ev + SPAN_PAD]
    if order.size < n_ev:
        raise InsufficientSpectrumError(
            f"subdomain {local.sub.id}: congruence reduction found only {order.size} eigenvalues")
    vecs = (Y @ W[:, order])[:nd]
    return _finalize(local, lam_all[order], vecs, "reduced", n_keep=n_ev, refine=True)


def solve_reduced_elliptic(local, n_ev):
    """Factorize-once route; agrees with solve_mixed_eigen on its supported kinds."""
    _check_request(local, n_ev)
    if local.kind == fm.CONVECTION_DIFFUSION:
        raise ConfigError("reduced route requires a Hermitian B form; "
                          "use mixed or oracle for convection-diffusion")
    if local.kind == fm.HELMHOLTZ and np.iscomplexobj(local.B_star.data):
        basis = _reduced_congruence(local, n_ev)
    else:
        basis = _reduced_real_elliptic(local, n_ev)
    if basis.harmonic_residual > 1e-8:
        raise SolverInconsistencyError(
            f"subdomain {local.sub.id}: reduced route harmonicity residual "
            f"{basis.harmonic_residual:.3e} exceeds 1e-8")
    return basis


def harmonic_basis(local):
    """Matrix whose columns are harmonic extensions of unit data at each I2 dof."""
    n2 = local.I2.size
    dtype = complex if local.kind == fm.HELMHOLTZ else float
    H = np.zeros((local.n_dofs, n2), dtype=dtype)
    H[local.I2, np.arange(n2)] = 1.0
    rhs = -local.B_star[local.I1][:, local.I2].toarray().astype(dtype)
    H[local.I1] = local.interior_solver().solve(rhs)
    return H


def projected_grams(local, H):
    """Dense Hermitian Gram matrices of (P-hat ., P-hat .) and B+ on a harmonic basis."""
    Ph = H.conj().T @ (local.P_gram @ H)
    Bh = H.conj().T @ (local.Bplus_star @ H)
    return 0.5 * (Ph + Ph.conj().T), 0.5 * (Bh + Bh.conj().T)


def oracle_harmonic_eigen(local, n_ev, max_boundary_dofs=600):
    """Brute-force route on the explicit harmonic basis (dense, size #I2)."""
    _check_request(local, n_ev)
    n2 = local.I2.size
    if n2 > max_boundary_dofs:
        raise OracleTooLargeError(
            f"subdomain {local.sub.id}: {n2} boundary dofs exceed the dense-oracle cap "
            f"{max_boundary_dofs}")
    H = harmonic_basis(local)
    Ph, Bh = projected_grams(local, H)
    l = local.kernel_dim
    if l:
        K_coef = local.kernel[local.I2]            # kernel vectors are harmonic
        constraint = (Ph @ K_coef).conj().T        # rows: P-orthogonality to the kernel
        W = sla.null_space(constraint)
    else:
        W = np.eye(n2, dtype=H.dtype)
    A = W.conj().T @ Ph @ W
    B = W.conj().T @ Bh @ W
    try:
        vals, Z = sla.eigh(0.5 * (A + A.conj().T), 0.5 * (B + B.conj().T))
    except sla.LinAlgError as exc:
        raise FactorizationError(
            f"subdomain {local.sub.id}: projected B+ Gram is not positive definite: {exc}") from exc
    order = np.argsort(-vals, kind="stable")[:n_ev]
    if order.size < n_ev:
        raise InsufficientSpectrumError(
            f"subdomain {local.sub.id}: oracle found only {order.size} eigenvalues")
    vecs = H @ (W @ Z[:, order])
    return _finalize(local, vals[order], vecs, "oracle", reharmonize=False)


ROUTES = {
    "mixed": solve_mixed_eigen,
    "reduced": solve_reduced_elliptic,
    "oracle": oracle_harmonic_eigen,
}


def solve_route(route, local, n_ev):
    if route not in ROUTES:
        raise ConfigError(f"unknown solver route {route!r}; expected one of {sorted(ROUTES)}")
    return ROUTES[route](local, n_ev)
