"""Singular-value studies of inverse-matrix blocks between well-separated node
boxes: the discrete stand-in for separable approximation of Green's functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import mesh as fm
from .errors import FactorizationError, InvalidBlockPairError
from .mesh import assemble_form, free_dofs
from .util import LinearFit, linear_fit

SIGMA_FLOOR_REL = 1e-13   # fit only singular values above this times sigma_1


@dataclass
class BlockPair:
    d1_nodes: np.ndarray    # global node indices (free dofs only)
    d2_nodes: np.ndarray
    rho: float              # dist(D1, D2) / diam(D2)
    box1: tuple
    box2: tuple


@dataclass
class GreenBlockReport:
    sigmas: np.ndarray
    ranks: dict             # tolerance -> r(eps)
    fit: LinearFit
    fit_range: tuple


def _box_distance(b1, b2):
    dx = max(0.0, b2[0] - b1[1], b1[0] - b2[1])
    dy = max(0.0, b2[2] - b1[3], b1[2] - b2[3])
    return float(np.hypot(dx, dy))


def block_pair_from_boxes(problem, mesh, box1, box2):
    """Node sets of two axis-aligned boxes (x0, x1, y0, y1) in physical coordinates.

    Nodes eliminated by Dirichlet conditions are dropped from both sets.
    """
    for box in (box1, box2):
        if not (0.0 <= box[0] < box[1] <= 1.0 and 0.0 <= box[2] < box[3] <= 1.0):
            raise InvalidBlockPairError(f"box {box} is not a valid subrectangle of the unit square")
    dist = _box_distance(box1, box2)
    if dist <= 0.0:
        raise InvalidBlockPairError("boxes must be disjoint with positive separation")
    diam2 = float(np.hypot(box2[1] - box2[0], box2[3] - box2[2]))
    rho = dist / diam2

    free = np.zeros(mesh.n_nodes, dtype=bool)
    free[free_dofs(problem, mesh)] = True

    def nodes_of(box):
        x = mesh.nodes[:, 0]
        y = mesh.nodes[:, 1]
        eps = 1e-12
        inside = (x >= box[0] - eps) & (x <= box[1] + eps) & \
                 (y >= box[2] - eps) & (y <= box[3] + eps)
        return np.flatnonzero(inside & free)

    d1 = nodes_of(box1)
    d2 = nodes_of(box2)
    if d1.size == 0 or d2.size == 0:
        raise InvalidBlockPairError("a box contains no free dofs at this resolution")
    return BlockPair(d1, d2, rho, tuple(box1), tuple(box2))


def green_block(problem, mesh, pair, max_columns=400, lu=None):
    """Dense block (A_fine^{-1})[D1, D2] via one factorization and |D2| solves."""
    if pair.d2_nodes.size > max_columns:
        raise InvalidBlockPairError(
            f"|D2| = {pair.d2_nodes.size} exceeds the per-column solve cap {max_columns}")
    if np.intersect1d(pair.d1_nodes, pair.d2_nodes).size:
        raise InvalidBlockPairError("D1 and D2 must be disjoint")
    A = assemble_form(problem, mesh, fm.FORM_B).matrix
    free = free_dofs(problem, mesh)
    pos = np.full(mesh.n_nodes, -1, dtype=np.int64)
    pos[free] = np.arange(free.size)
    if lu is None:
        try:
            lu = spla.splu(A[free][:, free].tocsc())
        except (RuntimeError, ValueError) as exc:
            raise FactorizationError(f"fine matrix factorization failed: {exc}") from exc
    dtype = complex if problem.kind == fm.HELMHOLTZ else float
    rhs = np.zeros((free.size, pair.d2_nodes.size), dtype=dtype)
    rhs[pos[pair.d2_nodes], np.arange(pair.d2_nodes.size)] = 1.0
    X = lu.solve(rhs)
    return X[pos[pair.d1_nodes], :]


def separability_report(block, tolerances, fit_n_range=(2, 15)):
    """Singular values, ranks r(eps), and the log sigma_n versus sqrt(n) fit."""
    block = np.asarray(block)
    if block.size == 0:
        raise InvalidBlockPairError("empty block")
    tolerances = [float(t) for t in tolerances]
    if any(not (0.0 < t < 1.0) for t in tolerances):
        raise InvalidBlockPairError("tolerances must lie in (0, 1)")
    if any(b >= a for a, b in zip(tolerances, tolerances[1:])) and len(tolerances) > 1:
        raise InvalidBlockPairError("tolerances must be strictly descending")
    sigmas = np.linalg.svd(block, compute_uv=False)
    s1 = sigmas[0] if sigmas.size else 0.0
    ranks = {}
    for eps in tolerances:
        ranks[eps] = int(np.sum(sigmas > eps * s1)) if s1 > 0 else 0

    lo, hi = fit_n_range
    hi = min(hi, sigmas.size)
    ns = np.arange(lo, hi + 1)
    ns = ns[ns <= sigmas.size]
    if s1 > 0:
        ns = ns[sigmas[ns - 1] > SIGMA_FLOOR_REL * s1]
    if ns.size >= 2 and s1 > 0:
        fit = linear_fit(np.sqrt(ns), np.log(sigmas[ns - 1]))
        fit_range = (int(ns[0]), int(ns[-1]))
    else:
        fit = LinearFit(float("nan"), float("nan"), float("nan"), int(ns.size))
        fit_range = (0, 0)
    return GreenBlockReport(sigmas, ranks, fit, fit_range)
