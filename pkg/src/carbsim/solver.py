"""Fully implicit time integration of the coupled transport system.

Unknowns are nodal water saturation S, gas-phase CO2 concentration c and
Ca(OH)2 concentration g (all per-node), advanced with backward Euler and a
monolithic Newton solve:

    d/dt(theta S)          - div( mob(S) K(theta) grad S ) = src
    d/dt(theta (1-S) c)    - div( D(theta,S,phi) grad c )  = -theta S R_n
    d/dt g                                                 = -theta S R_n

Porosity theta follows the carbonation front (theta = theta0 +
varphi (theta_c - theta0)) and is taken at the new time level, so its
coupling into the water and CO2 equations is part of the analytic
Jacobian.  Storage and reaction terms use the row-sum lumped mass (with a
consistent-mass option for verification studies); diffusion terms use 2x2
Gauss quadrature.  Dirichlet conditions are enforced by exact row
elimination.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import constitutive as con
from .mesh import Mesh
from .phasefield import CrackSpec, crack_permeability_q, regularize_crack

FIELDS = ("water", "co2", "caoh2")

# nonlinear-iteration opening moves before full Newton is attempted
PICARD_WARMUP = 3


class SolverError(RuntimeError):
    pass


class SimulationAbort(SolverError):
    """Time step fell below dt_min; carries the diagnostic dump path if any."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass
class Diagnostics:
    negative_concentration: int = 0
    newton_iterations: int = 0
    rejected_steps: int = 0
    accepted_steps: int = 0
    max_clamp: float = 0.0


@dataclass
class BoundaryCondition:
    """Dirichlet condition on one marker for one unknown.

    ``value`` is either a constant or a callable of time (seconds).
    Markers without a condition default to zero flux.
    """

    marker: str
    field: str
    value: object

    def __post_init__(self):
        if self.field not in ("water", "co2"):
            raise ValueError(f"Dirichlet conditions apply to 'water' or 'co2', got {self.field!r}")

    def value_at(self, t):
        v = self.value(t) if callable(self.value) else self.value
        return float(v)


@dataclass
class TimeStepPlan:
    t_end: float                 # s
    dt_init: float               # s
    dt_min: float = 1e-6         # s
    dt_max: float = np.inf       # s
    newton_tol: float = 1e-8     # relative residual
    newton_abstol: float = 1e-12  # scaled absolute floor (field units per step)
    newton_max_iter: int = 25
    max_ds_update: float = 0.25  # trust region on the saturation Newton update
    grow: float = 1.2
    shrink: float = 0.5

    def __post_init__(self):
        if not (self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need dt_min <= dt_init <= dt_max")
        if self.t_end < 0 or self.newton_tol <= 0 or self.newton_abstol < 0:
            raise ValueError("tolerances and horizon must be positive")
        if not (0 < self.shrink < 1 <= self.grow):
            raise ValueError("need 0 < shrink < 1 <= grow")


@dataclass
class FieldState:
    """Nodal solution at one time level."""

    t: float
    s: np.ndarray
    c_co2: np.ndarray
    c_ch: np.ndarray

    def copy(self):
        return FieldState(self.t, self.s.copy(), self.c_co2.copy(), self.c_ch.copy())


@dataclass
class StepResult:
    state: Optional[FieldState]
    iterations: int
    residual: float


class TransportSystem:
    """Assembles residual and Jacobian of the coupled (or water-only) system."""

    def __init__(self, mesh: Mesh, params: con.MaterialParams, *,
                 theta0_field=None, crack: CrackSpec | None = None,
                 phi=None, bcs=(), carbonation=True, mass_lumping=True,
                 water_source: Callable | None = None,
                 crack_mobility_cap: float | None = None,
                 diagnostics: Diagnostics | None = None):
        self.mesh = mesh
        self.params = params
        self.carbonation = bool(carbonation)
        self.mass_lumping = bool(mass_lumping)
        self.water_source = water_source
        self.diagnostics = diagnostics if diagnostics is not None else Diagnostics()
        n = mesh.n_nodes
        self.theta0 = (np.full(n, params.theta_0) if theta0_field is None
                       else np.asarray(theta0_field, dtype=float))
        if self.theta0.shape != (n,):
            raise ValueError("theta0 field has wrong length")
        self.crack = crack
        # water mobility entering the crack-permeability term may be capped:
        # a flooded crack is quasi-instantaneous against matrix transport at
        # any cap a few orders above matrix mobility, and the cap removes
        # most of the 1e8-ish stiffness contrast on coarse meshes
        self.crack_mobility_cap = crack_mobility_cap
        if crack is not None and phi is None:
            phi = regularize_crack(mesh, crack)
        self.phi = np.zeros(n) if phi is None else np.asarray(phi, dtype=float)
        self.phi_q = mesh.value_at_qp(self.phi)
        self.kc_q = (crack_permeability_q(mesh, self.phi, crack)
                     if crack is not None else None)
        self.dtheta_dch = (self.theta0 - params.theta_c) / params.c_CaOH2_0

        seen = set()
        for bc in bcs:
            key = (bc.marker, bc.field)
            if key in seen:
                raise ValueError(f"duplicate boundary condition for {key}")
            seen.add(key)
        self.bcs = [bc for bc in bcs if self.carbonation or bc.field == "water"]
        self._bc_nodes = {bc.marker: mesh.nodes_on_marker(bc.marker) for bc in self.bcs}
        if not self.mass_lumping:
            self._mass = mesh.mass_matrix()

        self.fields = FIELDS if self.carbonation else FIELDS[:1]
        self.n_dof = n * len(self.fields)
        self.khat = con.reaction_rate_coeff(params)

    # -- state helpers ------------------------------------------------------

    def pack(self, state: FieldState):
        if self.carbonation:
            return np.concatenate([state.s, state.c_co2, state.c_ch])
        return state.s.copy()

    def unpack(self, x, t):
        n = self.mesh.n_nodes
        if self.carbonation:
            return FieldState(t, x[:n].copy(), x[n:2 * n].copy(), x[2 * n:].copy())
        return FieldState(t, x.copy(), np.zeros(n), np.full(n, self.params.c_CaOH2_0))

    def theta_of(self, c_ch):
        varphi = 1.0 - np.asarray(c_ch) / self.params.c_CaOH2_0
        return self.theta0 + varphi * (self.params.theta_c - self.theta0)

    def initial_state(self, s, c_co2=None, c_ch=None):
        n = self.mesh.n_nodes
        s = np.full(n, float(s)) if np.isscalar(s) else np.asarray(s, float).copy()
        s = np.clip(s, con.S_MIN, 1.0 - con.S_MIN)
        c = np.zeros(n) if c_co2 is None else np.full(n, float(c_co2))
        g = np.full(n, self.params.c_CaOH2_0) if c_ch is None else np.full(n, float(c_ch))
        return FieldState(0.0, s, c, g)

    def dirichlet(self, t):
        """(dof rows, values) of all Dirichlet constraints at time t."""
        n = self.mesh.n_nodes
        offs = {"water": 0, "co2": n}
        rows, vals = [], []
        for bc in self.bcs:
            nodes = self._bc_nodes[bc.marker]
            v = bc.value_at(t)
            if bc.field == "water":
                v = float(np.clip(v, con.S_MIN, 1.0 - con.S_MIN))
            rows.append(nodes + offs[bc.field])
            vals.append(np.full(len(nodes), v))
        if rows:
            return np.concatenate(rows), np.concatenate(vals)
        return np.empty(0, dtype=int), np.empty(0)

    # -- assembly ------------------------------------------------------------

    def assemble(self, x, state_old: FieldState, dt, t_new, with_jacobian=True,
                 picard=False):
        mesh, p = self.mesh, self.params
        n = mesh.n_nodes
        mL = mesh.lumped_mass
        conn = mesh.elems
        wdetj = mesh.wdetj
        dsh = mesh.dshape
        sh = mesh.shape

        s = x[:n]
        theta_old = self.theta_of(state_old.c_ch)
        if self.carbonation:
            c, g = x[n:2 * n], x[2 * n:]
            theta = self.theta_of(g)
        else:
            c = g = None
            theta = self.theta0

        s_e = s[conn]
        s_q = np.einsum("qa,ea->eq", sh, s_e)
        grad_s_q = np.einsum("eqak,ea->eqk", dsh, s_e)
        theta_q = np.einsum("qa,ea->eq", sh, theta[conn])

        # saturation is clamped into its admissible box before entering any
        # constitutive law; the Jacobian masks the derivative accordingly
        s_q_box = con.clamp_saturation(s_q)
        in_box = (s_q > con.S_MIN) & (s_q < 1.0 - con.S_MIN)
        mob_q = con.water_mobility(s_q_box, p)
        km_q = con.bulk_permeability(np.clip(theta_q, 1e-6, 1 - 1e-6), p)

        # flux = mob * K * grad s  with K = km I + Kc
        flux_q = (mob_q * km_q)[..., None] * grad_s_q
        if self.kc_q is not None:
            if self.crack_mobility_cap is not None:
                mob_c_q = np.minimum(mob_q, self.crack_mobility_cap)
            else:
                mob_c_q = mob_q
            flux_q = flux_q + mob_c_q[..., None] * np.einsum(
                "eqkl,eql->eqk", self.kc_q, grad_s_q)

        F = np.zeros(self.n_dof)
        # water storage (lumped or consistent) + diffusion
        if self.mass_lumping:
            F[:n] = mL * (theta * s - theta_old * state_old.s) / dt
        else:
            F[:n] = self._mass @ (theta * s - theta_old * state_old.s) / dt
        fe = np.einsum("eq,eqak,eqk->ea", wdetj, dsh, flux_q)
        F[:n] += mesh.scatter_add(fe)
        if self.water_source is not None:
            xq = mesh.qpoints
            f_q = self.water_source(xq[..., 0], xq[..., 1], t_new)
            F[:n] -= mesh.scatter_add(np.einsum("eq,qa->ea", wdetj * f_q, sh))

        if self.carbonation:
            # Newton iterates may transiently undershoot; clamp silently here,
            # accepted states are checked and counted in _clamp
            rn_c = np.maximum(c, 0.0)
            rn_g = np.maximum(g, 0.0)
            rn = self.khat * rn_c * rn_g
            sink = theta * s * rn

            c_e = c[conn]
            grad_c_q = np.einsum("eqak,ea->eqk", dsh, c_e)
            d_q = con.co2_diffusivity(theta_q, s_q_box, self.phi_q)

            F[n:2 * n] = mL * (theta * (1 - s) * c
                               - theta_old * (1 - state_old.s) * state_old.c_co2) / dt
            F[n:2 * n] += mesh.scatter_add(
                np.einsum("eq,eqak,eqk->ea", wdetj, dsh, d_q[..., None] * grad_c_q))
            F[n:2 * n] += mL * sink
            F[2 * n:] = mL * ((g - state_old.c_ch) / dt + sink)

        rows, vals = self.dirichlet(t_new)
        F[rows] = x[rows] - vals

        if not with_jacobian:
            return F, None

        # -- Jacobian -------------------------------------------------------
        # ``picard`` drops the coefficient-linearization (advective) terms,
        # leaving the storage + frozen-coefficient diffusion operator; that
        # direction is robust on sharp fronts where full Newton misfires.
        dmob_q = con.dwater_mobility_ds(s_q_box, p) * in_box
        dkm_q = con.dbulk_permeability_dtheta(np.clip(theta_q, 1e-6, 1 - 1e-6), p)
        dtheta_dch_e = self.dtheta_dch[conn]

        # water-water: diffusion + mobility linearization (bulk and crack
        # contributions carry separate mobilities when the cap is active)
        j_ww = np.einsum("eq,eqak,eqbk->eab", wdetj * mob_q * km_q, dsh, dsh)
        if self.kc_q is not None:
            kcgradN = np.einsum("eqkl,eqal->eqak", self.kc_q, dsh)
            j_ww += np.einsum("eq,eqak,eqbk->eab", wdetj * mob_c_q, dsh, kcgradN)
        if not picard:
            adv = np.einsum("eqak,eqk->eqa", dsh, km_q[..., None] * grad_s_q)
            j_ww += np.einsum("eq,eqa,qb->eab", wdetj * dmob_q, adv, sh)
            if self.kc_q is not None:
                dmob_c_q = dmob_q * (mob_q == mob_c_q)
                adv_c = np.einsum("eqak,eqk->eqa", dsh,
                                  np.einsum("eqkl,eql->eqk", self.kc_q, grad_s_q))
                j_ww += np.einsum("eq,eqa,qb->eab", wdetj * dmob_c_q, adv_c, sh)

        blocks = {}
        diag = {}
        blocks[(0, 0)] = j_ww
        if self.mass_lumping:
            diag[(0, 0)] = mL * theta / dt
        else:
            # consistent storage: d/ds of M (theta s) has matrix structure
            pass

        if self.carbonation:
            # water storage coupling to caoh2 through theta(g)
            diag[(0, 2)] = mL * s * self.dtheta_dch / dt
            if not picard:
                gradN_grads = np.einsum("eqak,eqk->eqa", dsh, grad_s_q)
                blocks[(0, 2)] = np.einsum("eq,eqa,qb,eb->eab",
                                           wdetj * mob_q * dkm_q,
                                           gradN_grads, sh, dtheta_dch_e)

            dd_ds = con.dco2_diffusivity_ds(theta_q, s_q_box, self.phi_q) * in_box
            dd_dth = con.dco2_diffusivity_dtheta(theta_q, s_q_box, self.phi_q)
            gradN_gradc = np.einsum("eqak,eqk->eqa", dsh, grad_c_q)

            blocks[(1, 1)] = np.einsum("eq,eqak,eqbk->eab", wdetj * d_q, dsh, dsh)
            diag[(1, 1)] = mL * (theta * (1 - s) / dt
                                 + theta * s * self.khat * rn_g * (c > 0))
            diag[(1, 0)] = mL * (-theta * c / dt + theta * rn)
            if not picard:
                blocks[(1, 0)] = np.einsum("eq,eqa,qb->eab", wdetj * dd_ds,
                                           gradN_gradc, sh)
                blocks[(1, 2)] = np.einsum("eq,eqa,qb,eb->eab", wdetj * dd_dth,
                                           gradN_gradc, sh, dtheta_dch_e)
            diag[(1, 2)] = mL * (self.dtheta_dch * (1 - s) * c / dt
                                 + self.dtheta_dch * s * rn
                                 + theta * s * self.khat * rn_c * (g > 0))
            diag[(2, 0)] = mL * theta * rn
            diag[(2, 1)] = mL * theta * s * self.khat * rn_g * (c > 0)
            diag[(2, 2)] = mL * (1.0 / dt + theta * s * self.khat * rn_c * (g > 0)
                                 + self.dtheta_dch * s * rn)

        jac = self._assemble_sparse(blocks, diag, n)
        if not self.mass_lumping:
            mass_s = self._mass @ sp.diags(theta / dt)
            jac = jac + sp.bmat(self._expand_block(mass_s, 0, 0), format="csr")
        if len(rows):
            # Dirichlet row elimination (rows only; columns stay so the
            # Jacobian remains the exact derivative of the returned residual)
            keep = np.ones(self.n_dof)
            keep[rows] = 0.0
            ident = sp.coo_matrix((np.ones(len(rows)), (rows, rows)),
                                  shape=(self.n_dof, self.n_dof))
            jac = sp.diags(keep) @ jac + ident.tocsr()
        return F, jac.tocsr()

    def _expand_block(self, mat, i, j):
        nb = len(self.fields)
        grid = [[None] * nb for _ in range(nb)]
        grid[i][j] = mat
        for k in range(nb):
            if grid[k][k] is None:
                grid[k][k] = sp.csr_matrix((self.mesh.n_nodes, self.mesh.n_nodes))
        return grid

    def _assemble_sparse(self, blocks, diag, n):
        nb = len(self.fields)
        grid = [[None] * nb for _ in range(nb)]
        for (i, j), elem_mat in blocks.items():
            grid[i][j] = self.mesh.assemble_matrix(elem_mat)
        for (i, j), d in diag.items():
            m = sp.diags(d)
            grid[i][j] = m if grid[i][j] is None else grid[i][j] + m
        for k in range(nb):
            if grid[k][k] is None:
                grid[k][k] = sp.csr_matrix((n, n))
        return sp.bmat(grid, format="csr")

    # -- residual norm --------------------------------------------------------

    def _field_scales(self, state: FieldState, bc_vals):
        scales = [1.0]
        if self.carbonation:
            c_scale = max(float(np.abs(state.c_co2).max()), 1e-300)
            for bc in self.bcs:
                if bc.field == "co2":
                    c_scale = max(c_scale, abs(bc.value_at(state.t)) + 1e-300)
            scales.append(max(c_scale, 1e-30))
            scales.append(self.params.c_CaOH2_0)
        return scales

    def scaled_norm(self, F, dt, rows, scales, x=None):
        """Per-field residual norm in field-change-per-step units.

        When the iterate ``x`` is supplied, box-pinned entries whose residual
        pushes outward are excluded: at a bound the projected solution
        satisfies the complementarity condition instead of F = 0 (e.g. a
        flooded node next to a reservoir cannot absorb further inflow).
        """
        n = self.mesh.n_nodes
        mL = self.mesh.lumped_mass
        norms = []
        w = np.ones(self.n_dof)
        for k, sc in enumerate(scales):
            w[k * n:(k + 1) * n] = dt / (mL * sc)
        if len(rows):
            # Dirichlet rows already live in field units
            fs = np.repeat(np.asarray(scales), n)
            w[rows] = 1.0 / fs[rows]
        scaled = F * w
        if x is not None:
            scaled[self.complementarity_mask(x, F)] = 0.0
        for k in range(len(scales)):
            fk = scaled[k * n:(k + 1) * n]
            norms.append(float(np.linalg.norm(fk)) / np.sqrt(n))
        return max(norms)

    # -- stepping --------------------------------------------------------------

    def solve_time_step(self, state_old: FieldState, dt, plan: TimeStepPlan) -> StepResult:
        """One backward-Euler step via a Picard/Newton hybrid.

        Iterations start with the Picard (frozen-coefficient) operator whose
        direction is robust on sharp wetting fronts, switch to the full
        Newton Jacobian once the residual has dropped into its basin, and
        fall back on line-search failure.  Saturation updates are limited
        per node and iterates are projected onto the admissible box.
        """
        t_new = state_old.t + dt
        x = self._project(self.pack(state_old))
        rows, vals = self.dirichlet(t_new)
        x[rows] = vals
        scales = self._field_scales(state_old, vals)

        F, _ = self.assemble(x, state_old, dt, t_new, with_jacobian=False)
        r0 = self.scaled_norm(F, dt, rows, scales, x)
        r = r0
        target = max(plan.newton_tol * r0, plan.newton_abstol)
        newton_block = 0
        best_r = r0
        stall = 0
        it = 0
        while True:
            if r <= target:
                state = self.unpack(x, t_new)
                self._clamp(state)
                if not (np.isfinite(state.s).all()
                        and np.isfinite(state.c_co2).all()
                        and np.isfinite(state.c_ch).all()):
                    return StepResult(None, it, r)
                return StepResult(state, it, r)
            if it >= plan.newton_max_iter:
                return StepResult(None, it, r)
            it += 1
            self.diagnostics.newton_iterations += 1
            # Picard opens each step (robust direction on sharp fronts);
            # Newton takes over for quadratic finish unless recently failed
            use_newton = newton_block == 0 and (it > PICARD_WARMUP or r <= 2e-2 * r0)
            newton_block = max(0, newton_block - 1)
            _, J = self.assemble(x, state_old, dt, t_new, picard=not use_newton)
            pinned = self.complementarity_mask(x, F)
            rhs = np.where(pinned, 0.0, -F)
            if pinned.any():
                keep = sp.diags((~pinned).astype(float))
                J = keep @ J @ keep + sp.diags(pinned.astype(float))
            try:
                dx = spla.spsolve(J.tocsc(), rhs)
            except RuntimeError:
                return StepResult(None, it, r)
            if not np.isfinite(dx).all():
                return StepResult(None, it, r)
            # per-node saturation limiter: on degenerate fronts the linear
            # model can demand absurd local updates; clipping each node
            # (not rescaling the whole step) keeps the front advancing
            np.clip(dx[:self.mesh.n_nodes], -plan.max_ds_update,
                    plan.max_ds_update, out=dx[:self.mesh.n_nodes])
            lam, improved = 1.0, False
            for _ in range(5):
                x_try = self._project(x + lam * dx)
                F_try, _ = self.assemble(x_try, state_old, dt, t_new,
                                         with_jacobian=False)
                r_try = self.scaled_norm(F_try, dt, rows, scales, x_try)
                if np.isfinite(r_try) and r_try < r:
                    improved = True
                    break
                lam *= 0.5
            if not np.isfinite(r_try):
                return StepResult(None, it, r)
            if not improved and use_newton:
                newton_block = 2
                continue
            # active-set changes make the norm legitimately non-monotone, so
            # a damped non-descending iterate is still accepted; sustained
            # stagnation is what rejects the step
            x, F, r = x_try, F_try, r_try
            if r < 0.999 * best_r:
                best_r, stall = r, 0
            else:
                stall += 1
                if stall >= 6:
                    return StepResult(None, it, r)

    def complementarity_mask(self, x, F):
        """Dofs pinned at a box bound whose residual pushes outward.

        At such dofs the projected solution satisfies the complementarity
        condition rather than F = 0 (e.g. a flooded node beside a reservoir
        cannot absorb more water); they are excluded from both the residual
        norm and the linearized solve.
        """
        n = self.mesh.n_nodes
        mask = np.zeros(self.n_dof, dtype=bool)
        s = x[:n]
        mask[:n] = ((s >= 1.0 - con.S_MIN) & (F[:n] < 0)) | \
                   ((s <= con.S_MIN) & (F[:n] > 0))
        if self.carbonation:
            c, g = x[n:2 * n], x[2 * n:]
            mask[n:2 * n] = (c <= 0.0) & (F[n:2 * n] > 0)
            g0 = self.params.c_CaOH2_0
            mask[2 * n:] = ((g <= 0.0) & (F[2 * n:] > 0)) | \
                           ((g >= g0) & (F[2 * n:] < 0))
        return mask

    def _project(self, x):
        """Project a Newton iterate onto the admissible box (the accepted
        solution must live there anyway; unprojected iterates can run away
        on degenerate wetting fronts)."""
        n = self.mesh.n_nodes
        x = x.copy()
        x[:n] = np.clip(x[:n], con.S_MIN, 1.0 - con.S_MIN)
        if self.carbonation:
            x[n:2 * n] = np.maximum(x[n:2 * n], 0.0)
            x[2 * n:] = np.clip(x[2 * n:], 0.0, self.params.c_CaOH2_0)
        return x

    def _clamp(self, state: FieldState):
        p = self.params
        clamp = 0.0
        s_c = np.clip(state.s, con.S_MIN, 1.0 - con.S_MIN)
        clamp = max(clamp, float(np.abs(s_c - state.s).max()))
        state.s = s_c
        if self.carbonation:
            n_neg = (int(np.count_nonzero(state.c_co2 < -con.NEG_CONC_TOL))
                     + int(np.count_nonzero(state.c_ch < -con.NEG_CONC_TOL)))
            if n_neg:
                self.diagnostics.negative_concentration += n_neg
            c_c = np.maximum(state.c_co2, 0.0)
            g_c = np.clip(state.c_ch, 0.0, p.c_CaOH2_0)
            clamp = max(clamp, float(np.abs(c_c - state.c_co2).max()),
                        float(np.abs(g_c - state.c_ch).max()))
            state.c_co2, state.c_ch = c_c, g_c
        self.diagnostics.max_clamp = max(self.diagnostics.max_clamp, clamp)

    # -- verification -----------------------------------------------------------

    def fd_jacobian(self, x, state_old, dt, t_new, rel_eps=1e-7):
        """Dense central-difference Jacobian for verification."""
        n_dof = self.n_dof
        jac = np.zeros((n_dof, n_dof))
        scales = np.ones(n_dof)
        n = self.mesh.n_nodes
        if self.carbonation:
            scales[n:2 * n] = max(np.abs(x[n:2 * n]).max(), 1e-6)
            scales[2 * n:] = self.params.c_CaOH2_0
        for j in range(n_dof):
            h = rel_eps * scales[j] * max(1.0, abs(x[j]) / scales[j])
            xp = x.copy()
            xp[j] += h
            fp, _ = self.assemble(xp, state_old, dt, t_new, with_jacobian=False)
            xm = x.copy()
            xm[j] -= h
            fm, _ = self.assemble(xm, state_old, dt, t_new, with_jacobian=False)
            jac[:, j] = (fp - fm) / (2 * h)
        return jac

    def verify_jacobian(self, state, dt, rel_eps=1e-7):
        """Max columnwise relative error of the analytic vs FD Jacobian."""
        x = self.pack(state)
        t_new = state.t + dt
        _, jan = self.assemble(x, state, dt, t_new)
        jan = jan.toarray()
        jfd = self.fd_jacobian(x, state, dt, t_new, rel_eps)
        col_ref = np.maximum(np.abs(jfd).max(axis=0), np.abs(jan).max(axis=0))
        col_ref = np.maximum(col_ref, 1e-30)
        err = np.abs(jan - jfd).max(axis=0) / col_ref
        return float(err.max())


# ---------------------------------------------------------------------------
# Simulation driver
# ---------------------------------------------------------------------------

@dataclass
class SimulationResult:
    times: np.ndarray
    probe_rows: list                    # dict of observable -> value per accepted step
    final_state: FieldState
    snapshots: dict                     # time -> FieldState
    diagnostics: Diagnostics
    wall_time: float = 0.0

    def series(self, name):
        return np.array([row[name] for row in self.probe_rows])


def run_simulation(system: TransportSystem, state0: FieldState, plan: TimeStepPlan,
                   probes=(), snapshot_times=(), on_abort_dump=None,
                   progress=None) -> SimulationResult:
    """Advance the system with adaptive backward-Euler stepping.

    ``probes`` is a sequence of callables ``(state, system) -> dict``;
    their merged dict is recorded at every accepted step.  ``snapshot_times``
    are hit exactly (dt is clipped to checkpoints).  On abort,
    ``on_abort_dump(state)`` may produce a diagnostic dump path.
    """
    t0 = _time.perf_counter()
    state = state0.copy()
    checkpoints = sorted(set(float(t) for t in snapshot_times) | {plan.t_end})
    snapshots = {}
    rows = [_eval_probes(probes, state, system)]
    times = [state.t]
    dt_ctrl = plan.dt_init

    def maybe_snapshot(st):
        for tc in checkpoints:
            if abs(st.t - tc) < 1e-9 * max(1.0, tc) and tc in set(snapshot_times):
                snapshots[tc] = st.copy()

    maybe_snapshot(state)
    while state.t < plan.t_end - 1e-9 * max(1.0, plan.t_end):
        upcoming = min(tc for tc in checkpoints if tc > state.t + 1e-12)
        dt_used = min(dt_ctrl, upcoming - state.t)
        res = system.solve_time_step(state, dt_used, plan)
        if res.state is None:
            system.diagnostics.rejected_steps += 1
            dt_ctrl = dt_used * plan.shrink
            if dt_ctrl < plan.dt_min:
                dump = on_abort_dump(state) if on_abort_dump else None
                raise SimulationAbort(
                    f"time step fell below dt_min={plan.dt_min} at t={state.t}",
                    dump_path=dump)
            continue
        state = res.state
        system.diagnostics.accepted_steps += 1
        times.append(state.t)
        rows.append(_eval_probes(probes, state, system))
        maybe_snapshot(state)
        if progress:
            progress(state)
        if dt_used >= dt_ctrl * 0.999:  # grow only when the controller step ran
            dt_ctrl = min(dt_ctrl * plan.grow, plan.dt_max)
    return SimulationResult(np.array(times), rows, state, snapshots,
                            system.diagnostics, _time.perf_counter() - t0)


def _eval_probes(probes, state, system):
    row = {}
    for p in probes:
        row.update(p(state, system))
    return row
