"""Structured bilinear-quadrilateral finite-element mesh.

The mesh is logically rectangular with optionally graded axis spacing
(refinement boxes are realized as tensor-product grading, no hanging
nodes).  Holes (rebars, wires, notches) are cut by removing elements whose
centroid falls inside; their boundary facets carry the hole's marker and
default to zero flux in the solver.  1D case studies run as a single-row
strip with zero-flux lateral facets.

All integrals use 2x2 Gauss quadrature on the reference square.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

_GP = 1.0 / np.sqrt(3.0)
# 2x2 Gauss points on [-1, 1]^2, unit weights
QUAD_POINTS = np.array([(-_GP, -_GP), (_GP, -_GP), (_GP, _GP), (-_GP, _GP)])


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class CircleHole:
    name: str
    cx: float
    cy: float
    r: float

    def contains(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 < self.r ** 2

    def distance(self, x, y):
        return np.abs(np.hypot(x - self.cx, y - self.cy) - self.r)


@dataclass(frozen=True)
class RectHole:
    name: str
    x0: float
    x1: float
    y0: float
    y1: float

    def contains(self, x, y):
        return (self.x0 < x) & (x < self.x1) & (self.y0 < y) & (y < self.y1)

    def distance(self, x, y):
        dx = np.maximum.reduce([self.x0 - x, x - self.x1, np.zeros_like(x)])
        dy = np.maximum.reduce([self.y0 - y, y - self.y1, np.zeros_like(y)])
        inside = self.contains(x, y)
        d = np.hypot(dx, dy)
        return np.where(inside, 0.0, d)


def shape_functions(xi, eta):
    """Bilinear shape functions and reference gradients, CCW node order."""
    n = 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                         (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
    dn = 0.25 * np.array([
        [-(1 - eta), -(1 - xi)],
        [(1 - eta), -(1 + xi)],
        [(1 + eta), (1 + xi)],
        [-(1 + eta), (1 - xi)],
    ])
    return n, dn


@dataclass
class Mesh:
    nodes: np.ndarray                 # (n_nodes, 2), m
    elems: np.ndarray                 # (n_elems, 4), CCW connectivity
    facet_nodes: np.ndarray           # (n_facets, 2) boundary facet node pairs
    facet_markers: list               # marker string per facet
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if np.any(self.wdetj <= 0):
            raise MeshError("non-positive Jacobian in at least one element")

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elems(self):
        return len(self.elems)

    # -- quadrature tables ------------------------------------------------

    @property
    def shape(self):
        """Shape values at quadrature points, (nq, 4)."""
        if "shape" not in self._cache:
            self._cache["shape"] = np.array(
                [shape_functions(xi, eta)[0] for xi, eta in QUAD_POINTS])
        return self._cache["shape"]

    def _geometry(self):
        if "dshape" not in self._cache:
            xe = self.nodes[self.elems]                     # (ne, 4, 2)
            dshape = np.empty((self.n_elems, 4, 4, 2))
            wdetj = np.empty((self.n_elems, 4))
            for q, (xi, eta) in enumerate(QUAD_POINTS):
                _, dn = shape_functions(xi, eta)            # (4, 2)
                jac = np.einsum("eak,al->ekl", xe, dn)      # (ne, 2, 2)
                det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
                inv = np.empty_like(jac)
                inv[:, 0, 0] = jac[:, 1, 1]
                inv[:, 1, 1] = jac[:, 0, 0]
                inv[:, 0, 1] = -jac[:, 0, 1]
                inv[:, 1, 0] = -jac[:, 1, 0]
                inv /= det[:, None, None]
                dshape[:, q] = np.einsum("al,elk->eak", dn, inv)
                wdetj[:, q] = det
            self._cache["dshape"] = dshape
            self._cache["wdetj"] = wdetj
        return self._cache["dshape"], self._cache["wdetj"]

    @property
    def dshape(self):
        """Physical shape gradients at quadrature points, (ne, nq, 4, 2)."""
        return self._geometry()[0]

    @property
    def wdetj(self):
        """Quadrature weight times Jacobian determinant, (ne, nq)."""
        return self._geometry()[1]

    @property
    def qpoints(self):
        """Physical coordinates of quadrature points, (ne, nq, 2)."""
        if "qpoints" not in self._cache:
            xe = self.nodes[self.elems]
            self._cache["qpoints"] = np.einsum("qa,eak->eqk", self.shape, xe)
        return self._cache["qpoints"]

    @property
    def lumped_mass(self):
        """Row-sum lumped mass vector, (n_nodes,); sums to the domain area."""
        if "lumped" not in self._cache:
            contrib = np.einsum("eq,qa->ea", self.wdetj, self.shape)
            self._cache["lumped"] = np.bincount(
                self.elems.ravel(), weights=contrib.ravel(), minlength=self.n_nodes)
        return self._cache["lumped"]

    @property
    def element_size(self):
        """Max edge length per element, (ne,)."""
        if "hsize" not in self._cache:
            xe = self.nodes[self.elems]
            edges = xe - np.roll(xe, 1, axis=1)
            self._cache["hsize"] = np.linalg.norm(edges, axis=2).max(axis=1)
        return self._cache["hsize"]

    # -- field evaluation -------------------------------------------------

    def value_at_qp(self, nodal):
        return np.einsum("qa,ea->eq", self.shape, nodal[self.elems])

    def grad_at_qp(self, nodal):
        return np.einsum("eqak,ea->eqk", self.dshape, nodal[self.elems])

    def integrate(self, nodal=None):
        """Consistent quadrature of a nodal field (or of 1 if omitted)."""
        if nodal is None:
            return float(self.wdetj.sum())
        return float(np.einsum("eq,eq->", self.wdetj, self.value_at_qp(nodal)))

    def integrate_lumped(self, nodal):
        return float(self.lumped_mass @ nodal)

    # -- operators ---------------------------------------------------------

    def scatter_add(self, elem_vec):
        """Accumulate element vectors (ne, 4) into a nodal vector."""
        return np.bincount(self.elems.ravel(), weights=elem_vec.ravel(),
                           minlength=self.n_nodes)

    def assemble_matrix(self, elem_mat):
        """Assemble element matrices (ne, 4, 4) into CSR."""
        rows = np.repeat(self.elems, 4, axis=1).ravel()
        cols = np.tile(self.elems, (1, 4)).ravel()
        mat = sp.coo_matrix((elem_mat.ravel(), (rows, cols)),
                            shape=(self.n_nodes, self.n_nodes))
        return mat.tocsr()

    def stiffness_matrix(self, coeff_q=None, tensor_q=None):
        """Galerkin stiffness for -div(D grad u).

        ``coeff_q``: scalar coefficient at quadrature points (ne, nq) or None
        for unit coefficient; ``tensor_q``: (ne, nq, 2, 2) tensor coefficient.
        """
        if tensor_q is not None:
            flux = np.einsum("eqkl,eqal->eqak", tensor_q, self.dshape)
        elif coeff_q is not None:
            flux = coeff_q[:, :, None, None] * self.dshape
        else:
            flux = self.dshape
        ke = np.einsum("eq,eqak,eqbk->eab", self.wdetj, self.dshape, flux)
        return self.assemble_matrix(ke)

    def mass_matrix(self, coeff_q=None):
        w = self.wdetj if coeff_q is None else self.wdetj * coeff_q
        me = np.einsum("eq,qa,qb->eab", w, self.shape, self.shape)
        return self.assemble_matrix(me)

    # -- boundaries ---------------------------------------------------------

    def nodes_on_marker(self, marker):
        sel = [f for f, m in zip(self.facet_nodes, self.facet_markers) if m == marker]
        if not sel:
            raise MeshError(f"unknown boundary marker {marker!r}")
        return np.unique(np.concatenate(sel))

    @property
    def markers(self):
        return sorted(set(self.facet_markers))

    def nearest_node(self, x, y):
        return int(np.argmin(np.hypot(self.nodes[:, 0] - x, self.nodes[:, 1] - y)))


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def graded_axis(length, h_coarse, fine_intervals=(), ratio=1.25, pins=()):
    """1D coordinates on [0, length] honouring local size targets.

    ``fine_intervals`` is a sequence of (lo, hi, h_fine); spacing is at most
    h_fine inside each interval and grows away from it with bounded
    neighbour ratio.  ``pins`` lists coordinates that must coincide exactly
    with a node (the nearest generated node is snapped).
    """
    if length <= 0 or h_coarse <= 0:
        raise MeshError("length and spacing must be positive")
    xs = np.linspace(0.0, length, 4 * max(64, int(8 * length / min(
        [h_coarse] + [h for *_r, h in fine_intervals]))) + 1)
    h = np.full_like(xs, float(h_coarse))
    for lo, hi, h_fine in fine_intervals:
        if not (0 <= lo < hi <= length) or h_fine <= 0:
            raise MeshError(f"invalid refinement interval ({lo}, {hi}, {h_fine})")
        dist = np.maximum.reduce([lo - xs, xs - hi, np.zeros_like(xs)])
        h = np.minimum(h, h_fine + (ratio - 1.0) * dist)
    # cumulative 1/h integral; nodes go at equal increments of it, with pins
    # promoted to exact segment boundaries
    dens = np.concatenate([[0.0], np.cumsum(0.5 * (1 / h[1:] + 1 / h[:-1]) * np.diff(xs))])
    for pin in pins:
        if not 0 <= pin <= length:
            raise MeshError(f"pin coordinate {pin} outside axis")
    cuts = np.unique(np.concatenate([[0.0, length], np.asarray(pins, dtype=float)]))
    coords = [np.array([0.0])]
    for a, b in zip(cuts[:-1], cuts[1:]):
        da, db = np.interp([a, b], xs, dens)
        n_cells = max(1, int(np.ceil(db - da - 1e-12)))
        seg = np.interp(np.linspace(da, db, n_cells + 1), dens, xs)
        seg[0], seg[-1] = a, b
        coords.append(seg[1:])
    coords = np.concatenate(coords)
    if np.any(np.diff(coords) <= 0):
        raise MeshError("axis grading produced non-monotone coordinates")
    return coords


def build_rect_mesh(width, height, nx=None, ny=None, *, xs=None, ys=None,
                    holes=(), markers=("left", "right", "bottom", "top")):
    """Structured quad mesh of [0, width] x [0, height].

    Either uniform (nx, ny) or explicit coordinate arrays (xs, ys) from
    :func:`graded_axis`.  Outer facets carry the four side markers in the
    order (left, right, bottom, top); hole facets carry the hole name.
    """
    if xs is None:
        if not (nx and ny) or nx < 1 or ny < 1 or width <= 0 or height <= 0:
            raise MeshError("need positive dimensions and at least 1x1 elements")
        xs = np.linspace(0.0, width, nx + 1)
    if ys is None:
        if ny is None:
            raise MeshError("ny or ys required")
        ys = np.linspace(0.0, height, ny + 1)
    nx, ny = len(xs) - 1, len(ys) - 1
    xg, yg = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([xg.ravel(), yg.ravel()])

    def nid(i, j):
        return j * (nx + 1) + i

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()
    elems = np.column_stack([nid(ii, jj), nid(ii + 1, jj),
                             nid(ii + 1, jj + 1), nid(ii, jj + 1)])

    if holes:
        cx = nodes[elems, 0].mean(axis=1)
        cy = nodes[elems, 1].mean(axis=1)
        keep = np.ones(len(elems), bool)
        for hole in holes:
            keep &= ~hole.contains(cx, cy)
        if not keep.any():
            raise MeshError("holes removed every element")
        elems = elems[keep]
        used = np.unique(elems)
        remap = -np.ones(len(nodes), dtype=int)
        remap[used] = np.arange(len(used))
        nodes = nodes[used]
        elems = remap[elems]

    facet_nodes, facet_markers = _extract_boundary(nodes, elems, width, height,
                                                   holes, markers)
    return Mesh(nodes=nodes, elems=elems, facet_nodes=facet_nodes,
                facet_markers=facet_markers)


def _extract_boundary(nodes, elems, width, height, holes, markers):
    # edges in CCW element order: (0,1), (1,2), (2,3), (3,0)
    edges = np.concatenate([elems[:, [0, 1]], elems[:, [1, 2]],
                            elems[:, [2, 3]], elems[:, [3, 0]]])
    key = np.sort(edges, axis=1)
    _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    bfacets = edges[idx[counts == 1]]
    left, right, bottom, top = markers
    tol = 1e-9 * max(width, height)
    out_nodes, out_markers = [], []
    for a, b in bfacets:
        xm = 0.5 * (nodes[a, 0] + nodes[b, 0])
        ym = 0.5 * (nodes[a, 1] + nodes[b, 1])
        onx0 = abs(nodes[a, 0]) < tol and abs(nodes[b, 0]) < tol
        onx1 = abs(nodes[a, 0] - width) < tol and abs(nodes[b, 0] - width) < tol
        ony0 = abs(nodes[a, 1]) < tol and abs(nodes[b, 1]) < tol
        ony1 = abs(nodes[a, 1] - height) < tol and abs(nodes[b, 1] - height) < tol
        if onx0:
            m = left
        elif onx1:
            m = right
        elif ony0:
            m = bottom
        elif ony1:
            m = top
        else:
            m = "internal"
            best = np.inf
            for hole in holes:
                d = float(hole.distance(np.asarray(xm), np.asarray(ym)))
                if d < best:
                    best, m = d, hole.name
        out_nodes.append((a, b))
        out_markers.append(m)
    return np.array(out_nodes, dtype=int), out_markers


def build_strip_mesh(length, n, thickness=None, markers=("left", "right", "bottom", "top")):
    """1D domain realized as a single-row quad strip with lateral zero flux."""
    thickness = thickness if thickness is not None else length / n
    return build_rect_mesh(length, thickness, n, 1, markers=markers)


# ---------------------------------------------------------------------------
# VTK legacy export
# ---------------------------------------------------------------------------

def write_vtk(path, mesh: Mesh, point_data=None, title="carbsim snapshot"):
    """Write mesh and named nodal fields as legacy ASCII VTK (float64)."""
    point_data = point_data or {}
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    for x, y in mesh.nodes:
        lines.append(f"{x:.17g} {y:.17g} 0")
    lines.append(f"CELLS {mesh.n_elems} {5 * mesh.n_elems}")
    for e in mesh.elems:
        lines.append("4 " + " ".join(str(int(i)) for i in e))
    lines.append(f"CELL_TYPES {mesh.n_elems}")
    lines.extend(["9"] * mesh.n_elems)   # VTK_QUAD
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (mesh.n_nodes,):
                raise MeshError(f"field {name!r} has wrong length")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.17g}" for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
