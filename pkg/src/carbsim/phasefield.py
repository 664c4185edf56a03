"""Phase-field regularization of prescribed cracks.

Cracks are introduced by pinning phi = 1 on seed nodes and smoothing with
the screened-Poisson problem

    phi - ell^2 lap(phi) = 0,

which produces the exp(-d/ell) transverse profile expected of phase-field
crack regularizations.  (The governing relation is sometimes printed with
the opposite Laplacian sign, which is anti-diffusive and admits no decaying
solution; the screened form is the standard one.)

The regularized field feeds two crack-enhancement channels from the same
geometry: the laminar (cubic-law) crack permeability tensor for water and
the phi^10 porosity enhancement of CO2 diffusivity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import MaterialParams, bulk_permeability
from .mesh import Mesh

# n_phi is undefined where grad(phi) ~ 0 (crack centreline, far field);
# below g_min = GRAD_FLOOR / ell the anisotropic term is omitted.
GRAD_FLOOR = 1e-8


class CrackError(ValueError):
    pass


@dataclass
class CrackSpec:
    """Prescribed crack: pinned seed nodes plus regularization parameters."""

    seeds: np.ndarray        # node ids with phi = 1
    ell: float               # m, phase-field length scale
    w_cr: float              # m, prescribed crack opening
    phi_t: float = 0.5       # threshold defining the open-crack contour

    def __post_init__(self):
        self.seeds = np.asarray(self.seeds, dtype=int)
        if self.ell <= 0:
            raise CrackError(f"length scale must be positive, got {self.ell}")
        if self.w_cr < 0:
            raise CrackError(f"crack opening must be non-negative, got {self.w_cr}")
        if not 0 < self.phi_t < 1:
            raise CrackError(f"phi_t must lie in (0, 1), got {self.phi_t}")
        if self.seeds.size == 0:
            raise CrackError("crack spec needs at least one seed node")


def seed_nodes_for_segment(mesh: Mesh, p0, p1, tol=None):
    """Node ids within ``tol`` of the segment p0-p1 (defaults to 0.51 of the
    local element size, guaranteeing a connected node path on grid-aligned
    cracks)."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    d = p1 - p0
    length = np.hypot(*d)
    if length == 0:
        dist = np.hypot(*(mesh.nodes - p0).T)
    else:
        t = np.clip((mesh.nodes - p0) @ d / length ** 2, 0.0, 1.0)
        proj = p0 + t[:, None] * d
        dist = np.hypot(*(mesh.nodes - proj).T)
    if tol is None:
        tol = 0.51 * mesh.element_size.min()
    ids = np.nonzero(dist <= tol)[0]
    if ids.size == 0:
        raise CrackError("no mesh nodes within tolerance of the crack segment")
    return ids


def merge_specs(specs):
    """Merge several cracks sharing (ell, w_cr, phi_t) into one spec."""
    specs = list(specs)
    if not specs:
        return None
    first = specs[0]
    for s in specs[1:]:
        if (s.ell, s.w_cr, s.phi_t) != (first.ell, first.w_cr, first.phi_t):
            raise CrackError("cracks in one scenario must share ell, w_cr and phi_t")
    seeds = np.unique(np.concatenate([s.seeds for s in specs]))
    return CrackSpec(seeds=seeds, ell=first.ell, w_cr=first.w_cr, phi_t=first.phi_t)


def regularize_crack(mesh: Mesh, spec: CrackSpec):
    """Solve phi - ell^2 lap(phi) = 0 with phi = 1 pinned on the seeds.

    Returns the nodal phase field, clipped into [0, 1].
    """
    if spec.seeds.size == 0:
        raise CrackError("cannot regularize a crack without seeds")
    if np.any(spec.seeds < 0) or np.any(spec.seeds >= mesh.n_nodes):
        raise CrackError("seed node id outside mesh")
    a = (mesh.mass_matrix() + spec.ell ** 2 * mesh.stiffness_matrix()).tolil()
    rhs = np.zeros(mesh.n_nodes)
    for n in spec.seeds:
        a.rows[n] = [n]
        a.data[n] = [1.0]
        rhs[n] = 1.0
    phi = spla.spsolve(a.tocsr(), rhs)
    phi = np.clip(phi, 0.0, 1.0)
    phi[spec.seeds] = 1.0
    return phi


def crack_opening(phi, spec: CrackSpec):
    """Thresholded crack opening: w_cr where phi >= phi_t, else 0."""
    phi = np.asarray(phi, dtype=float)
    return np.where(phi >= spec.phi_t, spec.w_cr, 0.0)


def crack_permeability_q(mesh: Mesh, phi, spec: CrackSpec):
    """Anisotropic crack permeability at quadrature points, (ne, nq, 2, 2).

    K_c = phi (w^2/12) (1 - n x n) with n = grad(phi)/|grad(phi)|; the term
    is dropped where |grad(phi)| is below the gradient floor.  Static per
    scenario since phi does not evolve.
    """
    phi_q = mesh.value_at_qp(phi)
    grad_q = mesh.grad_at_qp(phi)
    norm = np.linalg.norm(grad_q, axis=-1)
    g_min = GRAD_FLOOR / spec.ell
    active = norm >= g_min
    n = np.zeros_like(grad_q)
    n[active] = grad_q[active] / norm[active][:, None]
    w_q = crack_opening(phi_q, spec)
    proj = np.zeros(phi_q.shape + (2, 2))
    proj[..., 0, 0] = 1.0
    proj[..., 1, 1] = 1.0
    proj -= np.einsum("...i,...j->...ij", n, n)
    kc = (phi_q * w_q ** 2 / 12.0 * active)[..., None, None] * proj
    return kc


def permeability_tensor(mesh: Mesh, theta_q, phi, spec, params: MaterialParams):
    """Total intrinsic permeability K = k_m(theta) 1 + K_c at quadrature points."""
    km = bulk_permeability(theta_q, params)
    k = np.zeros(km.shape + (2, 2))
    k[..., 0, 0] = km
    k[..., 1, 1] = km
    if spec is not None:
        k = k + crack_permeability_q(mesh, phi, spec)
    return k
