import numpy as np
import pytest

from carbsim import mesh as msh
from carbsim import phasefield as pf
from carbsim.constitutive import bulk_permeability, wetting_params

WET = wetting_params()


def _strip_with_seed_column(ell, h, half_width=10.0):
    """Strip of total width 2*half_width*ell with a seed column at centre."""
    n = int(round(2 * half_width * ell / h))
    if n % 2:
        n += 1
    m = msh.build_rect_mesh(2 * half_width * ell, h, n, 1)
    seeds = np.nonzero(np.abs(m.nodes[:, 0] - half_width * ell) < 1e-12)[0]
    return m, seeds


class TestRegularize:
    def test_seed_is_pinned(self):
        m = msh.build_rect_mesh(1.0, 1.0, 14, 14)
        spec = pf.CrackSpec(seeds=[m.nearest_node(0.5, 0.5)], ell=0.1, w_cr=1e-4)
        phi = pf.regularize_crack(m, spec)
        assert phi[spec.seeds[0]] == 1.0
        assert np.all((phi >= 0) & (phi <= 1))

    def test_no_seed_rejected(self):
        with pytest.raises(pf.CrackError):
            pf.CrackSpec(seeds=[], ell=0.1, w_cr=1e-4)

    def test_transverse_profile_is_exponential(self):
        # seed line across a wide strip: phi(d) ~ exp(-d/ell)
        ell = 1.0
        m, seeds = _strip_with_seed_column(ell, ell / 7)
        phi = pf.regularize_crack(m, pf.CrackSpec(seeds=seeds, ell=ell, w_cr=1e-4))
        row = np.nonzero(m.nodes[:, 1] == 0.0)[0]
        x = m.nodes[row, 0] - 10.0 * ell
        # half-decay point: phi(ell ln 2) = 0.5 within 5 percent
        d_half = ell * np.log(2.0)
        val = np.interp(d_half, x[x >= 0], phi[row][x >= 0])
        assert val == pytest.approx(0.5, rel=0.05)

    def test_decays_monotonically_from_seed(self):
        ell = 1.0
        m, seeds = _strip_with_seed_column(ell, ell / 7)
        phi = pf.regularize_crack(m, pf.CrackSpec(seeds=seeds, ell=ell, w_cr=0.0))
        row = np.nonzero(m.nodes[:, 1] == 0.0)[0]
        order = np.argsort(m.nodes[row, 0])
        vals = phi[row][order]
        mid = len(vals) // 2
        assert np.all(np.diff(vals[:mid + 1]) >= -1e-12)
        assert np.all(np.diff(vals[mid:]) <= 1e-12)

    def test_self_convergence_under_refinement(self):
        # probe 2*ell from the seed; successive refinements h = ell/7, /14, /28
        # converge at second order towards the exponential profile
        ell = 1.0
        probes = []
        for h in (ell / 7, ell / 14, ell / 28):
            m, seeds = _strip_with_seed_column(ell, h)
            phi = pf.regularize_crack(m, pf.CrackSpec(seeds=seeds, ell=ell, w_cr=0.0))
            row = np.nonzero(np.abs(m.nodes[:, 1]) < 1e-15)[0]
            x = m.nodes[row, 0] - 10.0 * ell
            probes.append(np.interp(2.0 * ell, x[x >= 0], phi[row][x >= 0]))
        d1 = abs(probes[1] - probes[0])
        d2 = abs(probes[2] - probes[1])
        assert d2 < 0.5 * d1            # converging
        assert d2 < 5e-4                # refined levels already agree closely
        assert probes[-1] == pytest.approx(np.exp(-2.0), rel=2e-2)


class TestCrackOpening:
    def test_threshold_branches(self):
        spec = pf.CrackSpec(seeds=[0], ell=1e-3, w_cr=43e-6, phi_t=0.5)
        assert pf.crack_opening(0.49, spec) == 0.0
        assert pf.crack_opening(0.5, spec) == 43e-6   # boundary belongs to the open branch
        assert pf.crack_opening(0.73, spec) == 43e-6

    def test_zero_width(self):
        spec = pf.CrackSpec(seeds=[0], ell=1e-3, w_cr=0.0)
        assert np.all(pf.crack_opening(np.linspace(0, 1, 11), spec) == 0.0)


class TestPermeabilityTensor:
    def _vertical_crack_setup(self):
        # vertical seed line => grad(phi) along x => enhancement along y
        ell = 5e-3
        m = msh.build_rect_mesh(0.1, 0.02, 140, 2)
        seeds = np.nonzero(np.abs(m.nodes[:, 0] - 0.05) < 1e-9)[0]
        spec = pf.CrackSpec(seeds=seeds, ell=ell, w_cr=43e-6)
        phi = pf.regularize_crack(m, spec)
        return m, spec, phi

    def test_no_crack_isotropic(self):
        m = msh.build_rect_mesh(1.0, 1.0, 3, 3)
        theta_q = np.full((m.n_elems, 4), 0.15)
        k = pf.permeability_tensor(m, theta_q, None, None, WET)
        km = bulk_permeability(0.15, WET)
        assert np.allclose(k[..., 0, 0], km)
        assert np.allclose(k[..., 1, 1], km)
        assert np.allclose(k[..., 0, 1], 0.0)

    def test_open_crack_eigenvalues(self):
        m, spec, phi = self._vertical_crack_setup()
        theta_q = np.full((m.n_elems, 4), 0.15)
        k = pf.permeability_tensor(m, theta_q, phi, spec, WET)
        km = bulk_permeability(0.15, WET)
        phi_q = m.value_at_qp(phi)
        # quadrature point adjacent to the seed column, inside the open contour
        e, q = np.unravel_index(np.argmax(phi_q), phi_q.shape)
        kq = k[e, q]
        expected_tang = km + phi_q[e, q] * spec.w_cr ** 2 / 12.0
        assert kq[1, 1] == pytest.approx(expected_tang, rel=1e-10)
        assert kq[0, 0] == pytest.approx(km, rel=1e-10)
        assert spec.w_cr ** 2 / 12.0 == pytest.approx(1.5408e-10, rel=1e-3)

    def test_normal_direction_unenhanced(self):
        # n . K . n == n . K_m . n wherever the crack term is active
        m, spec, phi = self._vertical_crack_setup()
        theta_q = np.full((m.n_elems, 4), 0.12)
        k = pf.permeability_tensor(m, theta_q, phi, spec, WET)
        km = bulk_permeability(0.12, WET)
        grad_q = m.grad_at_qp(phi)
        norm = np.linalg.norm(grad_q, axis=-1)
        active = norm > pf.GRAD_FLOOR / spec.ell
        n = grad_q[active] / norm[active][:, None]
        knn = np.einsum("pi,pij,pj->p", n, k[active], n)
        assert np.allclose(knn, km, rtol=1e-12)

    def test_rotation_swaps_eigendirections(self):
        # horizontal seed line gives the transposed tensor of the vertical one
        ell = 5e-3
        mv = msh.build_rect_mesh(0.1, 0.1, 40, 40)
        sv = pf.CrackSpec(seeds=pf.seed_nodes_for_segment(mv, (0.05, 0.025), (0.05, 0.075)),
                          ell=ell, w_cr=43e-6)
        phiv = pf.regularize_crack(mv, sv)
        sh = pf.CrackSpec(seeds=pf.seed_nodes_for_segment(mv, (0.025, 0.05), (0.075, 0.05)),
                          ell=ell, w_cr=43e-6)
        phih = pf.regularize_crack(mv, sh)
        th = np.full((mv.n_elems, 4), 0.15)
        kv = pf.permeability_tensor(mv, th, phiv, sv, WET)
        kh = pf.permeability_tensor(mv, th, phih, sh, WET)
        # compare eigenvalue multisets at the domain centre
        e = mv.n_elems // 2
        wv = np.sort(np.linalg.eigvalsh(kv[e, 0]))
        wh = np.sort(np.linalg.eigvalsh(kh[e, 0]))
        assert np.allclose(wv, wh, rtol=1e-6)

    def test_spsd_everywhere(self):
        m, spec, phi = self._vertical_crack_setup()
        theta_q = np.full((m.n_elems, 4), 0.15)
        k = pf.permeability_tensor(m, theta_q, phi, spec, WET)
        assert np.allclose(k, np.swapaxes(k, -1, -2))
        w = np.linalg.eigvalsh(k.reshape(-1, 2, 2))
        assert w.min() >= -1e-30


class TestSeedSelection:
    def test_segment_picks_grid_line(self):
        m = msh.build_rect_mesh(0.1, 0.1, 10, 10)
        ids = pf.seed_nodes_for_segment(m, (0.05, 0.02), (0.05, 0.08))
        assert len(ids) == 7
        assert np.allclose(m.nodes[ids, 0], 0.05)

    def test_far_segment_fails(self):
        m = msh.build_rect_mesh(0.1, 0.1, 10, 10)
        with pytest.raises(pf.CrackError):
            pf.seed_nodes_for_segment(m, (2.0, 2.0), (3.0, 3.0), tol=1e-6)

    def test_merge_specs(self):
        a = pf.CrackSpec(seeds=[1, 2], ell=1e-3, w_cr=1e-4)
        b = pf.CrackSpec(seeds=[2, 3], ell=1e-3, w_cr=1e-4)
        merged = pf.merge_specs([a, b])
        assert list(merged.seeds) == [1, 2, 3]
        c = pf.CrackSpec(seeds=[4], ell=2e-3, w_cr=1e-4)
        with pytest.raises(pf.CrackError):
            pf.merge_specs([a, c])
