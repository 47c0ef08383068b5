"""Overlapping cover of the unit square: subdomains omega_i, oversampling domains
omega_i*, nodal partition-of-unity weights chi_i, and the overlap constants.

Geometry is rectangular and expressed in fine node/cell indices. A coarse grid of
mx x my cells is extended by `overlap` fine layers to produce omega_i, and by a
further `oversampling * (n/mx) // 2` fine layers per side (half-coarse-cell
units, clipped at the outer boundary) to produce omega_i*. With square coarse
cells this makes the side ratio H*/H equal to 1 + oversampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegenerateOversamplingError,
    IncompatibleCoverError,
    InvariantBreachError,
)


@dataclass
class Subdomain:
    id: int
    core_rect: tuple          # (cx, cy) coarse cell indices
    omega_box: tuple          # (x0, x1, y0, y1) node-index bounds, inclusive
    omega_star_box: tuple
    omega_nodes: np.ndarray
    omega_star_nodes: np.ndarray
    omega_star_interior_nodes: np.ndarray   # nodes not on boundary(omega*) inside Omega
    omega_star_boundary_nodes: np.ndarray   # nodes on boundary(omega*) inside Omega
    chi: np.ndarray                          # (N,) weights, supported in omega
    touches_dirichlet: bool                  # boundary(omega*) meets the outer boundary

    def omega_elems(self, mesh):
        x0, x1, y0, y1 = self.omega_box
        return mesh.elems_in_cells(x0, x1, y0, y1)

    def omega_star_elems(self, mesh):
        x0, x1, y0, y1 = self.omega_star_box
        return mesh.elems_in_cells(x0, x1, y0, y1)


@dataclass
class Cover:
    subdomains: list
    mx: int
    my: int
    overlap_layers: int
    oversampling_layers: int
    zeta: int
    zeta_star: int

    def __iter__(self):
        return iter(self.subdomains)

    def __len__(self):
        return len(self.subdomains)


def _axis_ramp(n, lo_core, hi_core, lo_w, hi_w):
    """Per-axis hat profile: 1 on the core range, linear to 0 at the omega edge."""
    j = np.arange(n + 1, dtype=float)
    r = np.zeros(n + 1)
    r[(j >= lo_core) & (j <= hi_core)] = 1.0
    if lo_w < lo_core:
        band = (j >= lo_w) & (j < lo_core)
        r[band] = (j[band] - lo_w) / (lo_core - lo_w)
    if hi_w > hi_core:
        band = (j > hi_core) & (j <= hi_w)
        r[band] = (hi_w - j[band]) / (hi_w - hi_core)
    return r


def _box_nodes(mesh, box):
    x0, x1, y0, y1 = box
    return mesh.nodes_in_box(x0, x1, y0, y1)


def _box_perimeter_nodes(mesh, box):
    x0, x1, y0, y1 = box
    nodes = _box_nodes(mesh, box)
    ix = nodes % (mesh.n + 1)
    iy = nodes // (mesh.n + 1)
    on_perim = (ix == x0) | (ix == x1) | (iy == y0) | (iy == y1)
    return nodes[on_perim]


def build_cover(mesh, mx, my, overlap, oversampling):
    """Build the overlapping cover with partition-of-unity weights.

    overlap      number of fine layers omega_i extends past its coarse cell
    oversampling half-coarse-cell layers omega_i* extends past omega_i
    """
    n = mesh.n
    if mx < 1 or my < 1 or n % mx or n % my:
        raise IncompatibleCoverError(
            f"mesh resolution {n} is not divisible by the coarse grid {mx}x{my}")
    if overlap < 1 or oversampling < 1:
        raise ConfigError("overlap and oversampling layer counts must be >= 1")
    sx, sy = n // mx, n // my
    ext_x = (oversampling * sx) // 2
    ext_y = (oversampling * sy) // 2

    subdomains = []
    ramps = {}
    for cy in range(my):
        for cx in range(mx):
            sid = cy * mx + cx
            lo_cx, hi_cx = cx * sx, (cx + 1) * sx
            lo_cy, hi_cy = cy * sy, (cy + 1) * sy
            ox0, ox1 = max(0, lo_cx - overlap), min(n, hi_cx + overlap)
            oy0, oy1 = max(0, lo_cy - overlap), min(n, hi_cy + overlap)
            sx0, sx1 = max(0, ox0 - ext_x), min(n, ox1 + ext_x)
            sy0, sy1 = max(0, oy0 - ext_y), min(n, oy1 + ext_y)
            # a side interior to Omega must gain at least one oversampling layer
            if (ox0 > 0 and sx0 == ox0) or (ox1 < n and sx1 == ox1) or \
               (oy0 > 0 and sy0 == oy0) or (oy1 < n and sy1 == oy1):
                raise DegenerateOversamplingError(
                    f"subdomain {sid}: no room to oversample (omega* == omega on an interior side)")
            rampx = _axis_ramp(n, lo_cx, hi_cx, ox0, ox1)
            rampy = _axis_ramp(n, lo_cy, hi_cy, oy0, oy1)
            chi_hat = np.outer(rampy, rampx).ravel()
            omega_box = (ox0, ox1, oy0, oy1)
            star_box = (sx0, sx1, sy0, sy1)
            star_nodes = _box_nodes(mesh, star_box)
            perim = _box_perimeter_nodes(mesh, star_box)
            px = perim % (n + 1)
            py = perim // (n + 1)
            on_gamma = (px == 0) | (px == n) | (py == 0) | (py == n)
            bnd = perim[~on_gamma]
            interior = np.setdiff1d(star_nodes, bnd, assume_unique=True)
            subdomains.append(Subdomain(
                id=sid,
                core_rect=(cx, cy),
                omega_box=omega_box,
                omega_star_box=star_box,
                omega_nodes=_box_nodes(mesh, omega_box),
                omega_star_nodes=star_nodes,
                omega_star_interior_nodes=interior,
                omega_star_boundary_nodes=bnd,
                chi=chi_hat,   # normalized below
                touches_dirichlet=bool(sx0 == 0 or sx1 == n or sy0 == 0 or sy1 == n),
            ))

    total = np.zeros(mesh.n_nodes)
    for sub in subdomains:
        total += sub.chi
    if np.any(total <= 0):
        raise InvariantBreachError("partition-of-unity weights vanish at a node")
    for sub in subdomains:
        sub.chi = sub.chi / total

    pou = np.zeros(mesh.n_nodes)
    mult = np.zeros(mesh.n_nodes, dtype=int)
    mult_star = np.zeros(mesh.n_nodes, dtype=int)
    for sub in subdomains:
        pou += sub.chi
        mult[sub.omega_nodes] += 1
        mult_star[sub.omega_star_nodes] += 1
    err = np.max(np.abs(pou - 1.0))
    if err > 1e-12:
        raise InvariantBreachError(f"partition-of-unity reconstruction error {err:.3e} > 1e-12")

    return Cover(subdomains, mx, my, overlap, oversampling,
                 int(mult.max()), int(mult_star.max()))


def pou_apply(cover, u):
    """Split a nodal vector into its partition-of-unity pieces I_h(chi_i u)."""
    return [sub.chi * u for sub in cover.subdomains]


def cover_constants(cover):
    """(zeta, zeta_star): max pointwise multiplicities of the omega and omega* covers."""
    return cover.zeta, cover.zeta_star


def box_subdomain(mesh, omega_box, star_box, sid=0):
    """Standalone nested-box subdomain (used by the Caccioppoli study); chi is unused."""
    x0, x1, y0, y1 = star_box
    star_nodes = _box_nodes(mesh, star_box)
    perim = _box_perimeter_nodes(mesh, star_box)
    px = perim % (mesh.n + 1)
    py = perim // (mesh.n + 1)
    on_gamma = (px == 0) | (px == mesh.n) | (py == 0) | (py == mesh.n)
    bnd = perim[~on_gamma]
    return Subdomain(
        id=sid,
        core_rect=(-1, -1),
        omega_box=omega_box,
        omega_star_box=star_box,
        omega_nodes=_box_nodes(mesh, omega_box),
        omega_star_nodes=star_nodes,
        omega_star_interior_nodes=np.setdiff1d(star_nodes, bnd, assume_unique=True),
        omega_star_boundary_nodes=bnd,
        chi=np.zeros(mesh.n_nodes),
        touches_dirichlet=bool(x0 == 0 or x1 == mesh.n or y0 == 0 or y1 == mesh.n),
    )
