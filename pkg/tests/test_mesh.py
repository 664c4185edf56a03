import numpy as np
import pytest

from carbsim import mesh as msh


class TestBuild:
    def test_unit_square_single_element(self):
        m = msh.build_rect_mesh(1.0, 1.0, 1, 1)
        assert m.n_nodes == 4
        assert m.n_elems == 1
        assert len(m.facet_nodes) == 4

    def test_node_count(self):
        m = msh.build_rect_mesh(0.1, 0.1, 100, 100)
        assert m.n_nodes == 101 * 101
        assert m.element_size == pytest.approx(np.full(100 * 100, 1e-3))

    def test_bad_dimensions(self):
        with pytest.raises(msh.MeshError):
            msh.build_rect_mesh(-1.0, 1.0, 2, 2)
        with pytest.raises(msh.MeshError):
            msh.build_rect_mesh(1.0, 1.0, 0, 2)

    def test_side_markers(self):
        m = msh.build_rect_mesh(2.0, 1.0, 4, 2)
        left = m.nodes_on_marker("left")
        assert np.allclose(m.nodes[left, 0], 0.0)
        top = m.nodes_on_marker("top")
        assert np.allclose(m.nodes[top, 1], 1.0)
        with pytest.raises(msh.MeshError):
            m.nodes_on_marker("nope")

    def test_every_facet_has_one_marker(self):
        m = msh.build_rect_mesh(1.0, 1.0, 3, 3)
        assert len(m.facet_markers) == len(m.facet_nodes) == 12

    def test_positive_jacobians(self):
        m = msh.build_rect_mesh(1.0, 2.0, 5, 7)
        assert np.all(m.wdetj > 0)


class TestHoles:
    def test_circle_hole_removes_elements_and_marks(self):
        hole = msh.CircleHole("rebar", 0.5, 0.5, 0.2)
        m = msh.build_rect_mesh(1.0, 1.0, 20, 20, holes=[hole])
        assert m.n_elems < 400
        rebar_nodes = m.nodes_on_marker("rebar")
        r = np.hypot(m.nodes[rebar_nodes, 0] - 0.5, m.nodes[rebar_nodes, 1] - 0.5)
        assert np.all(r < 0.3)
        # area check: hole area removed approximately
        assert m.integrate() == pytest.approx(1.0 - np.pi * 0.04, rel=0.05)

    def test_rect_hole_touching_boundary(self):
        notch = msh.RectHole("notch", 0.4, 0.6, 0.8, 1.0)
        m = msh.build_rect_mesh(1.0, 1.0, 10, 10, holes=[notch])
        assert m.n_elems == 100 - 4
        assert "notch" in m.markers
        # slot removed part of the top edge
        top = m.nodes_on_marker("top")
        assert np.all((m.nodes[top, 0] <= 0.4 + 1e-12) | (m.nodes[top, 0] >= 0.6 - 1e-12))


class TestGradedAxis:
    def test_fine_region_spacing(self):
        xs = msh.graded_axis(0.1, 5e-3, [(0.04, 0.06, 5e-4)])
        d = np.diff(xs)
        inside = (xs[:-1] >= 0.04) & (xs[1:] <= 0.06)
        assert np.all(d[inside] <= 5e-4 * 1.05)
        assert d.max() <= 5e-3 * 1.1
        # bounded neighbour ratio
        ratio = d[1:] / d[:-1]
        assert ratio.max() < 1.35 and ratio.min() > 1 / 1.35

    def test_pins_are_exact(self):
        xs = msh.graded_axis(0.1, 5e-3, [(0.045, 0.055, 5e-4)], pins=[0.05])
        assert np.any(xs == 0.05)

    def test_refinement_box_mesh_honours_target(self):
        # crack-zone sizing: local element size below the requested bound
        xs = msh.graded_axis(0.1, 2e-3, [(0.048, 0.052, 8.6e-6)], pins=[0.05])
        d = np.diff(xs)
        inside = (xs[:-1] >= 0.048) & (xs[1:] <= 0.052)
        assert d[inside].max() <= 8.6e-6 * 1.05


class TestQuadratureAndOperators:
    def test_integrate_one_gives_area(self):
        m = msh.build_rect_mesh(0.05, 0.05, 7, 5)
        assert m.integrate() == pytest.approx(2.5e-3, rel=1e-12)

    def test_lumped_mass_sums_to_area(self):
        m = msh.build_rect_mesh(0.3, 0.2, 6, 4)
        assert m.lumped_mass.sum() == pytest.approx(0.06, rel=1e-12)

    def test_mass_row_sums_equal_lumped(self):
        m = msh.build_rect_mesh(1.0, 1.0, 5, 5)
        mm = m.mass_matrix()
        assert np.allclose(np.asarray(mm.sum(axis=1)).ravel(), m.lumped_mass)

    def test_stiffness_symmetric_psd_zero_row_sums(self):
        m = msh.build_rect_mesh(1.0, 1.0, 6, 6)
        a = m.stiffness_matrix().toarray()
        assert np.allclose(a, a.T, atol=1e-14)
        assert np.abs(a.sum(axis=1)).max() < 1e-13
        w = np.linalg.eigvalsh(a)
        assert w.min() > -1e-12

    def test_linear_field_dirichlet_energy(self):
        # u = x on the unit square: 0.5 * integral |grad u|^2 = 0.5 exactly
        m = msh.build_rect_mesh(1.0, 1.0, 4, 4)
        u = m.nodes[:, 0].copy()
        a = m.stiffness_matrix()
        assert 0.5 * u @ (a @ u) == pytest.approx(0.5, rel=1e-12)

    def test_patch_test_linear_reproduction(self):
        m = msh.build_rect_mesh(1.3, 0.7, 3, 4)
        u = 2.0 * m.nodes[:, 0] - 0.5 * m.nodes[:, 1] + 0.25
        vals = m.value_at_qp(u)
        exact = 2.0 * m.qpoints[..., 0] - 0.5 * m.qpoints[..., 1] + 0.25
        assert np.allclose(vals, exact, atol=1e-13)
        g = m.grad_at_qp(u)
        assert np.allclose(g[..., 0], 2.0, atol=1e-12)
        assert np.allclose(g[..., 1], -0.5, atol=1e-12)

    def test_tensor_stiffness_matches_scalar(self):
        m = msh.build_rect_mesh(1.0, 1.0, 3, 3)
        coeff = np.full((m.n_elems, 4), 2.5)
        tensor = np.zeros((m.n_elems, 4, 2, 2))
        tensor[..., 0, 0] = 2.5
        tensor[..., 1, 1] = 2.5
        a1 = m.stiffness_matrix(coeff_q=coeff).toarray()
        a2 = m.stiffness_matrix(tensor_q=tensor).toarray()
        assert np.allclose(a1, a2, atol=1e-14)

    def test_strip_mesh(self):
        m = msh.build_strip_mesh(0.1, 100)
        assert m.n_elems == 100
        assert m.element_size[0] == pytest.approx(1e-3)


class TestVtk(object):
    def test_roundtrip_header_and_fields(self, tmp_path):
        m = msh.build_rect_mesh(1.0, 1.0, 2, 2)
        f = tmp_path / "snap.vtk"
        msh.write_vtk(f, m, {"saturation": np.linspace(0, 1, m.n_nodes)})
        text = f.read_text().splitlines()
        assert text[0].startswith("# vtk DataFile")
        assert "DATASET UNSTRUCTURED_GRID" in text
        assert f"POINTS {m.n_nodes} double" in text
        assert "SCALARS saturation double 1" in text
        assert text.count("9") >= m.n_elems

    def test_wrong_length_rejected(self, tmp_path):
        m = msh.build_rect_mesh(1.0, 1.0, 2, 2)
        with pytest.raises(msh.MeshError):
            msh.write_vtk(tmp_path / "bad.vtk", m, {"f": np.zeros(3)})
