"""Discretized group-invariant domains and grid functions.

A Domain carries nodes with positive quadrature weights that sum to the
volume of the continuum region, a homogeneous-Dirichlet boundary mask,
and a set of integration cells.  Each cell knows how to form the average
and the first-difference gradient of the nodal values it touches, so the
energy density j(u, |Du|) is evaluated per cell and the discrete energy
is exactly differentiable with respect to the nodal values.

Polar grids exclude the r = 0 node; the disk closes the core with cells
whose inner value is the angular average of the first ring (a virtual
node in the extended value vector).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DomainMismatchError,
    ParameterError,
)

GRIDFUNCTION_HEADER = "# symcrit-gridfunction v1"

#: Largest rotation order the polar builders promise to support; the
#: angular resolution must be divisible by it unless the caller relaxes it.
DEFAULT_MAX_ROTATION_ORDER = 8


@dataclass(frozen=True)
class CellSet:
    """Quadrature cells with sparse linear maps for averages and gradients.

    ``nodes[c, k]`` indexes the *extended* value vector (real nodes first,
    then virtual nodes such as the reconstructed polar center).  The cell
    average is ``sum_k avg[c, k] * u_ext[nodes[c, k]]`` and each gradient
    component is the analogous sum with ``grad[i]``.
    """

    nodes: np.ndarray
    avg: np.ndarray
    grad: tuple
    weights: np.ndarray

    @property
    def count(self) -> int:
        return self.weights.shape[0]


@dataclass
class Domain:
    """A discretized symmetric domain.

    Treat instances as immutable; all arrays are set once by build_domain.
    """

    kind: str
    dim: int
    extents: dict
    resolution: int
    coords: np.ndarray          # (n_nodes, n_coord) Cartesian embedding
    radius2: np.ndarray         # squared distance to the symmetry center
    weights: np.ndarray         # (n_nodes,) positive, sums to the volume
    boundary: np.ndarray        # (n_nodes,) bool Dirichlet mask
    cells: CellSet
    edges: np.ndarray           # (n_edges, 2) grid-neighbor node pairs
    virtual_rows: np.ndarray    # (n_virtual, n_nodes) reconstruction rows
    volume: float
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    def extend(self, values: np.ndarray) -> np.ndarray:
        """Append virtual-node values (e.g. the polar core average)."""
        if self.virtual_rows.shape[0] == 0:
            return values
        return np.concatenate([values, self.virtual_rows @ values])

    def fold(self, ext_values: np.ndarray) -> np.ndarray:
        """Adjoint of extend: push virtual contributions back onto nodes."""
        n = self.n_nodes
        if self.virtual_rows.shape[0] == 0:
            return ext_values
        return ext_values[:n] + self.virtual_rows.T @ ext_values[n:]


@dataclass
class GridFunction:
    """Nodal values on a Domain, zero on the Dirichlet boundary."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if v.shape[0] != self.domain.n_nodes:
            raise DomainMismatchError(
                f"expected {self.domain.n_nodes} nodal values, got {v.shape[0]}"
            )
        if not np.all(np.isfinite(v)):
            raise ParameterError("grid function contains non-finite values")
        v[self.domain.boundary] = 0.0
        self.values = v

    def copy(self) -> "GridFunction":
        return GridFunction(self.domain, self.values)


def zeros(domain: Domain) -> GridFunction:
    return GridFunction(domain, np.zeros(domain.n_nodes))


def _check_same_domain(a, b):
    if a is not b:
        raise DomainMismatchError("operands live on different domains")


# ---------------------------------------------------------------------------
# domain builders


def _sphere_area(n: int) -> float:
    """Surface area of the unit (n-1)-sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def _build_square(side: float, resolution: int) -> Domain:
    n = resolution
    na = n + 2                        # nodes per axis including boundary
    h = side / (n + 1)
    axis = -0.5 * side + h * np.arange(na)
    xs, ys = np.meshgrid(axis, axis, indexing="xy")
    # node index = iy * na + ix
    coords = np.column_stack([xs.reshape(-1), ys.reshape(-1)])
    ix = np.tile(np.arange(na), na)
    iy = np.repeat(np.arange(na), na)
    boundary = (ix == 0) | (ix == na - 1) | (iy == 0) | (iy == na - 1)

    # trapezoid tensor weights: the sum telescopes to side**2 exactly
    wa = np.full(na, h)
    wa[0] = wa[-1] = 0.5 * h
    weights = (wa[iy] * wa[ix]).reshape(-1)

    # cells between node columns/rows; corners SW, SE, NW, NE
    cx, cy = np.meshgrid(np.arange(na - 1), np.arange(na - 1), indexing="xy")
    cx = cx.reshape(-1)
    cy = cy.reshape(-1)
    sw = cy * na + cx
    se = sw + 1
    nw = sw + na
    ne = nw + 1
    nodes = np.column_stack([sw, se, nw, ne])
    avg = np.full(nodes.shape, 0.25)
    gx = np.tile(np.array([-1.0, 1.0, -1.0, 1.0]) / (2 * h), (nodes.shape[0], 1))
    gy = np.tile(np.array([-1.0, -1.0, 1.0, 1.0]) / (2 * h), (nodes.shape[0], 1))
    cw = np.full(nodes.shape[0], h * h)
    cells = CellSet(nodes=nodes, avg=avg, grad=(gx, gy), weights=cw)

    right = np.column_stack([sw, se])
    up = np.column_stack([sw, nw])
    top = np.column_stack([nw, ne])       # closes the last row/column
    rightmost = np.column_stack([se, ne])
    edges = np.unique(np.sort(np.vstack([right, up, top, rightmost]), axis=1), axis=0)

    return Domain(
        kind="square",
        dim=2,
        extents={"side": float(side)},
        resolution=n,
        coords=coords,
        radius2=coords[:, 0] * coords[:, 0] + coords[:, 1] * coords[:, 1],
        weights=weights,
        boundary=boundary,
        cells=cells,
        edges=edges,
        virtual_rows=np.zeros((0, na * na)),
        volume=float(side) ** 2,
        meta={"axis_nodes": na, "h": h},
    )


def _polar_ring_cells(ring_lo, r_lo, dr, n_theta, na_total, d_theta):
    """Cells between node ring ``ring_lo`` and ``ring_lo + 1``."""
    k = np.arange(n_theta)
    kp = (k + 1) % n_theta
    a = ring_lo * n_theta + k
    b = ring_lo * n_theta + kp
    c = (ring_lo + 1) * n_theta + k
    d = (ring_lo + 1) * n_theta + kp
    nodes = np.column_stack([a, b, c, d])
    avg = np.full(nodes.shape, 0.25)
    r_mid = r_lo + 0.5 * dr
    gr = np.tile(np.array([-1.0, -1.0, 1.0, 1.0]) / (2 * dr), (n_theta, 1))
    gt = np.tile(
        np.array([-1.0, 1.0, -1.0, 1.0]) / (2 * r_mid * d_theta), (n_theta, 1)
    )
    w = np.full(n_theta, 0.5 * d_theta * ((r_lo + dr) ** 2 - r_lo ** 2))
    return nodes, avg, gr, gt, w


def _build_polar(kind: str, resolution: int, angular_resolution: int,
                 r_inner: float, r_outer: float,
                 max_rotation_order: int) -> Domain:
    if angular_resolution % max_rotation_order != 0:
        raise ConfigurationError(
            f"angular resolution {angular_resolution} must be divisible by the "
            f"largest supported rotation order {max_rotation_order}"
        )
    n_theta = angular_resolution
    d_theta = 2 * math.pi / n_theta

    if kind == "disk-polar":
        # rings i = 1..m at r_i = i*dr; ring m is the Dirichlet boundary
        m = resolution + 1
        dr = r_outer / m
        radii = dr * np.arange(1, m + 1)
        boundary_rings = [m - 1]          # position in the radii array
    else:
        # annulus: rings i = 0..m at R_in + i*dr; rings 0 and m are boundary
        m = resolution + 1
        dr = (r_outer - r_inner) / m
        radii = r_inner + dr * np.arange(0, m + 1)
        boundary_rings = [0, m]

    n_rings = radii.shape[0]
    n_nodes = n_rings * n_theta
    theta = d_theta * np.arange(n_theta)
    coords = np.empty((n_nodes, 2))
    radius2 = np.empty(n_nodes)
    for i, r in enumerate(radii):
        sl = slice(i * n_theta, (i + 1) * n_theta)
        coords[sl, 0] = r * np.cos(theta)
        coords[sl, 1] = r * np.sin(theta)
        radius2[sl] = r * r

    boundary = np.zeros(n_nodes, dtype=bool)
    for i in boundary_rings:
        boundary[i * n_theta:(i + 1) * n_theta] = True

    # node weights: ring i owns the radial slab between the midpoints to its
    # neighbors, clipped to [inner, outer]; the disk core goes to ring 1.
    lo_clip = 0.0 if kind == "disk-polar" else r_inner
    cuts = np.empty(n_rings + 1)
    cuts[0] = lo_clip
    cuts[1:-1] = 0.5 * (radii[:-1] + radii[1:])
    cuts[-1] = r_outer
    ring_w = 0.5 * d_theta * (cuts[1:] ** 2 - cuts[:-1] ** 2)
    weights = np.repeat(ring_w, n_theta)

    cell_parts = []
    for i in range(n_rings - 1):
        cell_parts.append(
            _polar_ring_cells(i, radii[i], dr, n_theta, n_nodes, d_theta)
        )
    nodes = np.vstack([p[0] for p in cell_parts])
    avg = np.vstack([p[1] for p in cell_parts])
    gr = np.vstack([p[2] for p in cell_parts])
    gt = np.vstack([p[3] for p in cell_parts])
    cw = np.concatenate([p[4] for p in cell_parts])

    if kind == "disk-polar":
        # core cells close the disk: inner corner value is the angular
        # average of ring 1, held by virtual node index n_nodes
        r1 = radii[0]
        k = np.arange(n_theta)
        kp = (k + 1) % n_theta
        v = np.full(n_theta, n_nodes)
        core_nodes = np.column_stack([v, v, k, kp])
        core_avg = np.tile(np.array([0.25, 0.25, 0.25, 0.25]), (n_theta, 1))
        core_gr = np.tile(np.array([-0.5, -0.5, 0.5, 0.5]) / r1, (n_theta, 1))
        core_gt = np.tile(
            np.array([0.0, 0.0, -1.0, 1.0]) / (0.5 * r1 * d_theta), (n_theta, 1)
        )
        core_w = np.full(n_theta, 0.5 * d_theta * r1 ** 2)
        nodes = np.vstack([core_nodes, nodes])
        avg = np.vstack([core_avg, avg])
        gr = np.vstack([core_gr, gr])
        gt = np.vstack([core_gt, gt])
        cw = np.concatenate([core_w, cw])
        virtual = np.zeros((1, n_nodes))
        virtual[0, :n_theta] = 1.0 / n_theta
    else:
        virtual = np.zeros((0, n_nodes))

    cells = CellSet(nodes=nodes, avg=avg, grad=(gr, gt), weights=cw)

    ring_idx = np.arange(n_rings)[:, None] * n_theta
    k = np.arange(n_theta)
    ang = np.vstack([
        np.column_stack([base + k, base + (k + 1) % n_theta]) for base in ring_idx
    ])
    rad = np.vstack([
        np.column_stack([i * n_theta + k, (i + 1) * n_theta + k])
        for i in range(n_rings - 1)
    ])
    edges = np.unique(np.sort(np.vstack([ang, rad]), axis=1), axis=0)

    extents = {"radius": float(r_outer)} if kind == "disk-polar" else {
        "inner_radius": float(r_inner), "outer_radius": float(r_outer)}
    volume = math.pi * (r_outer ** 2 - (0.0 if kind == "disk-polar" else r_inner ** 2))
    return Domain(
        kind=kind,
        dim=2,
        extents=extents,
        resolution=resolution,
        coords=coords,
        radius2=radius2,
        weights=weights,
        boundary=boundary,
        cells=cells,
        edges=edges,
        virtual_rows=virtual,
        volume=volume,
        meta={"rings": n_rings, "n_theta": n_theta, "dr": dr,
              "radii": radii, "d_theta": d_theta},
    )


def _build_radial_ball(dimension: int, radius: float, resolution: int) -> Domain:
    n = resolution                     # interior nodes, r = 0 .. R - dr
    dr = radius / n
    r = dr * np.arange(n + 1)
    sigma = _sphere_area(dimension)

    lo = np.clip(r - 0.5 * dr, 0.0, None)
    hi = np.minimum(r + 0.5 * dr, radius)
    weights = sigma * (hi ** dimension - lo ** dimension) / dimension

    boundary = np.zeros(n + 1, dtype=bool)
    boundary[-1] = True

    i = np.arange(n)
    nodes = np.column_stack([i, i + 1])
    avg = np.full(nodes.shape, 0.5)
    g = np.tile(np.array([-1.0, 1.0]) / dr, (n, 1))
    cw = sigma * (r[1:] ** dimension - r[:-1] ** dimension) / dimension
    cells = CellSet(nodes=nodes, avg=avg, grad=(g,), weights=cw)
    edges = nodes.copy()

    return Domain(
        kind="radial-ball-1d",
        dim=dimension,
        extents={"radius": float(radius)},
        resolution=n,
        coords=r[:, None].copy(),
        radius2=r * r,
        weights=weights,
        boundary=boundary,
        cells=cells,
        edges=edges,
        virtual_rows=np.zeros((0, n + 1)),
        volume=sigma * radius ** dimension / dimension,
        meta={"dr": dr},
    )


def build_domain(kind: str, *, resolution: int, dimension: int | None = None,
                 side: float | None = None, radius: float | None = None,
                 inner_radius: float | None = None,
                 outer_radius: float | None = None,
                 angular_resolution: int | None = None,
                 max_rotation_order: int = DEFAULT_MAX_ROTATION_ORDER) -> Domain:
    """Construct a supported domain.

    kind is one of ``square``, ``disk-polar``, ``annulus-polar``,
    ``radial-ball-1d``.  ``resolution`` counts interior nodes per axis
    (interior rings for polar kinds, interior radial nodes for the ball).
    """
    # the 1-d radial chain is meaningful from two interior nodes up
    floor = 2 if kind == "radial-ball-1d" else 3
    if resolution < floor:
        raise ConfigurationError(
            f"resolution must be at least {floor} for kind {kind!r}")

    if kind == "square":
        if side is None or side <= 0:
            raise ConfigurationError("square domain needs a positive side")
        dom = _build_square(side, resolution)
    elif kind in ("disk-polar", "annulus-polar"):
        if angular_resolution is None or angular_resolution < 3:
            raise ConfigurationError("polar domains need angular_resolution >= 3")
        if kind == "disk-polar":
            if radius is None or radius <= 0:
                raise ConfigurationError("disk domain needs a positive radius")
            dom = _build_polar(kind, resolution, angular_resolution,
                               0.0, radius, max_rotation_order)
        else:
            if (inner_radius is None or outer_radius is None
                    or not 0 < inner_radius < outer_radius):
                raise ConfigurationError(
                    "annulus domain needs 0 < inner_radius < outer_radius")
            dom = _build_polar(kind, resolution, angular_resolution,
                               inner_radius, outer_radius, max_rotation_order)
    elif kind == "radial-ball-1d":
        if dimension is None or dimension < 2:
            raise ConfigurationError(
                "radial-ball-1d needs the ambient dimension N >= 2")
        if radius is None or radius <= 0:
            raise ConfigurationError("ball domain needs a positive radius")
        dom = _build_radial_ball(dimension, radius, resolution)
    else:
        raise ConfigurationError(f"unknown domain kind {kind!r}")

    _validate_domain(dom)
    return dom


def _validate_domain(dom: Domain):
    if np.any(dom.weights <= 0):
        raise ConfigurationError("quadrature weights must be positive")
    total = float(np.sum(dom.weights))
    if abs(total - dom.volume) > 1e-10 * dom.volume:
        raise ConfigurationError(
            f"weights sum to {total!r}, expected volume {dom.volume!r}")
    ctotal = float(np.sum(dom.cells.weights))
    if abs(ctotal - dom.volume) > 1e-10 * dom.volume:
        raise ConfigurationError(
            f"cell weights sum to {ctotal!r}, expected volume {dom.volume!r}")


# ---------------------------------------------------------------------------
# differential and norm operations


def cell_values(domain: Domain, values: np.ndarray):
    """Per-cell averages and gradient components of a nodal value array."""
    ext = domain.extend(values)
    gathered = ext[domain.cells.nodes]
    avg = np.sum(domain.cells.avg * gathered, axis=1)
    grads = tuple(np.sum(g * gathered, axis=1) for g in domain.cells.grad)
    return avg, grads


def gradient_magnitude(u: GridFunction) -> np.ndarray:
    """|Du| per cell from first differences of the nodal values."""
    _, grads = cell_values(u.domain, u.values)
    if len(grads) == 1:
        return np.abs(grads[0])
    return np.sqrt(sum(g * g for g in grads))


def norm_lm(u: GridFunction, m: float) -> float:
    """Discrete Lebesgue norm with the node quadrature weights."""
    if m < 1:
        raise ParameterError(f"Lebesgue exponent must satisfy m >= 1, got {m}")
    return float(np.sum(u.domain.weights * np.abs(u.values) ** m) ** (1.0 / m))


def norm_w1p(u: GridFunction, p: float) -> float:
    """Discrete W^{1,p} norm: (||u||_p^p + ||Du||_p^p)^{1/p}."""
    if p <= 1:
        raise ParameterError(f"Sobolev exponent must satisfy p > 1, got {p}")
    du = gradient_magnitude(u)
    up = np.sum(u.domain.weights * np.abs(u.values) ** p)
    dup = np.sum(u.domain.cells.weights * du ** p)
    return float((up + dup) ** (1.0 / p))


def norm(u: GridFunction, which: str, exponent: float) -> float:
    """Dispatch to norm_lm ("Lm") or norm_w1p ("W1p")."""
    if which == "Lm":
        return norm_lm(u, exponent)
    if which == "W1p":
        return norm_w1p(u, exponent)
    raise ParameterError(f"unknown norm selector {which!r}")


def hat_w1p_norms(domain: Domain, p: float) -> np.ndarray:
    """W^{1,p} norms of all nodal hat functions (vectorized, cached)."""
    if p <= 1:
        raise ParameterError(f"Sobolev exponent must satisfy p > 1, got {p}")
    key = ("hat_w1p", float(p))
    if key in domain._cache:
        return domain._cache[key]
    n = domain.n_nodes
    cs = domain.cells
    # dense (n_cells, n) gradient tables; desk-scale domains keep this small
    tables = []
    for g in cs.grad:
        t = np.zeros((cs.count, n))
        for k in range(cs.nodes.shape[1]):
            idx = cs.nodes[:, k]
            real = idx < n
            np.add.at(t, (np.nonzero(real)[0], idx[real]), g[real, k])
            for v in range(domain.virtual_rows.shape[0]):
                rows = np.nonzero(idx == n + v)[0]
                if rows.size:
                    t[rows] += np.outer(g[rows, k], domain.virtual_rows[v])
        tables.append(t)
    gmag = np.sqrt(sum(t * t for t in tables))
    out = (domain.weights + gmag.T ** p @ cs.weights) ** (1.0 / p)
    domain._cache[key] = out
    return out


# ---------------------------------------------------------------------------
# serialization


def write_gridfunction(u: GridFunction, path, extra_comments=()):
    """Write the fixed CSV format: header, comments, index/coords/value rows."""
    dom = u.domain
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(GRIDFUNCTION_HEADER + "\n")
        for line in extra_comments:
            fh.write(f"# {line}\n")
        ncoord = dom.coords.shape[1]
        cols = ",".join(f"x{i}" for i in range(ncoord))
        fh.write(f"index,{cols},value\n")
        for i in range(dom.n_nodes):
            coord_txt = ",".join(f"{c:.17g}" for c in dom.coords[i])
            fh.write(f"{i},{coord_txt},{u.values[i]:.17g}\n")


def read_gridfunction(domain: Domain, path) -> GridFunction:
    """Read the CSV format back onto an existing domain."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != GRIDFUNCTION_HEADER:
            raise ConfigurationError(
                f"not a symcrit grid-function file (header {first!r})")
        values = np.full(domain.n_nodes, np.nan)
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("index,"):
                continue
            parts = line.split(",")
            idx = int(parts[0])
            if not 0 <= idx < domain.n_nodes:
                raise ConfigurationError(f"node index {idx} out of range")
            values[idx] = float(parts[-1])
    if np.any(np.isnan(values)):
        raise ConfigurationError("grid-function file does not cover every node")
    return GridFunction(domain, values)
