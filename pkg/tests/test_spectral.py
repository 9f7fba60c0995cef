"""Eigenpairs, wave kernel signature, gradients, and the orientation field."""

import numpy as np
import pytest

from conftest import make_cloud
from sigma import synthetic
from sigma.errors import (InsufficientSpectrum, PointCloudUnsupported,
                          ValidationError)
from sigma.meshes import Shape, TriMesh
from sigma.operators import cotan_stiffness, mass_matrix
from sigma.spectral import (default_eigencount, eigenpairs, orientation_field,
                            vertex_gradient, wks)


@pytest.fixture(scope="module")
def sphere_shape():
    return Shape(synthetic.icosphere(2), [0])


@pytest.fixture(scope="module")
def sphere_basis(sphere_shape):
    return eigenpairs(sphere_shape, 30)


class TestEigenpairs:
    def test_first_eigenpair_is_constant(self, sphere_basis):
        assert sphere_basis.values[0] == pytest.approx(0.0, abs=1e-8)
        first = sphere_basis.vectors[:, 0]
        assert first.std() < 1e-6 * abs(first.mean())

    def test_ascending_and_mass_orthonormal(self, sphere_shape, sphere_basis):
        vals, vecs, m = (sphere_basis.values, sphere_basis.vectors,
                         sphere_basis.mass)
        assert (np.diff(vals) >= -1e-10).all()
        gram = vecs.T @ (m[:, None] * vecs)
        np.testing.assert_allclose(gram, np.eye(30), atol=1e-7)

    def test_eigen_residual(self, sphere_shape, sphere_basis):
        s = cotan_stiffness(sphere_shape.geometry).matrix
        m = sphere_basis.mass
        resid = s @ sphere_basis.vectors - (m[:, None] * sphere_basis.vectors) * sphere_basis.values
        assert np.abs(resid).max() < 1e-7 * np.abs(s).max()

    def test_sphere_spectrum_multiplicity(self, sphere_basis):
        # Laplace spectrum on the sphere: l(l+1) with multiplicity 2l+1,
        # so eigenvalues 1..3 form a near-degenerate triple
        lo = sphere_basis.values[1:4]
        assert lo.std() < 0.05 * lo.mean()

    def test_deterministic_recomputation(self, sphere_shape):
        a = eigenpairs(sphere_shape, 12)
        b = eigenpairs(sphere_shape, 12)
        np.testing.assert_array_equal(a.vectors, b.vectors)

    def test_range_checks(self, sphere_shape):
        with pytest.raises(InsufficientSpectrum):
            eigenpairs(sphere_shape, 0)
        with pytest.raises(InsufficientSpectrum):
            eigenpairs(sphere_shape, sphere_shape.geometry.n_vertices)

    def test_cloud_eigenpairs(self):
        shape = Shape(make_cloud(40, seed=7), [0])
        basis = eigenpairs(shape, 10)
        assert basis.values[0] == pytest.approx(0.0, abs=1e-9)
        assert basis.k == 10

    def test_default_eigencount_caps(self):
        assert default_eigencount(50) == 48
        assert default_eigencount(10_000) == 120


class TestWks:
    def test_shape_and_positivity(self, sphere_basis):
        desc = wks(sphere_basis, num_energies=40)
        assert desc.values.shape == (sphere_basis.vectors.shape[0], 40)
        assert (desc.values >= 0).all()
        assert desc.sigma > 0

    def test_scale_invariance(self, sphere_shape):
        # vertices scaled by s: eigenvalues shift by 1/s^2, mass by s^2; the
        # normalized energies and mass-weighted amplitudes must cancel both
        mesh = sphere_shape.geometry
        scaled = Shape(TriMesh(mesh.vertices * 3.7, mesh.faces), [0])
        a = wks(eigenpairs(sphere_shape, 25), num_energies=30)
        b = wks(eigenpairs(scaled, 25), num_energies=30)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-6, atol=1e-12)

    def test_rigid_invariance(self, sphere_shape, rng):
        mesh = sphere_shape.geometry
        rot = synthetic.random_rotation(rng)
        moved = Shape(TriMesh(mesh.vertices @ rot.T + rng.normal(size=3), mesh.faces), [0])
        a = wks(eigenpairs(sphere_shape, 25), num_energies=30)
        b = wks(eigenpairs(moved, 25), num_energies=30)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-5, atol=1e-10)

    def test_needs_enough_spectrum(self, sphere_shape):
        basis = eigenpairs(sphere_shape, 2)
        with pytest.raises(InsufficientSpectrum):
            wks(basis)

    def test_energy_count_validated(self, sphere_basis):
        with pytest.raises(ValidationError):
            wks(sphere_basis, num_energies=1)


class TestVertexGradient:
    def test_linear_field_exact_gradient(self):
        # f(x, y, z) = 2x + 3y has constant gradient (2, 3, 0)/norm
        mesh = synthetic.grid_mesh(5, 5)
        fld = 2.0 * mesh.vertices[:, 0] + 3.0 * mesh.vertices[:, 1]
        grad = vertex_gradient(mesh, fld)
        expected = np.array([2.0, 3.0, 0.0]) / np.hypot(2.0, 3.0)
        np.testing.assert_allclose(grad, np.tile(expected, (mesh.n_vertices, 1)),
                                    atol=1e-10)

    def test_constant_field_zero(self):
        mesh = synthetic.grid_mesh(4, 4)
        np.testing.assert_array_equal(vertex_gradient(mesh, np.ones(mesh.n_vertices)), 0)

    def test_unit_length_or_zero(self, sphere_shape, rng):
        mesh = sphere_shape.geometry
        grad = vertex_gradient(mesh, rng.normal(size=mesh.n_vertices))
        norms = np.linalg.norm(grad, axis=1)
        assert ((np.abs(norms - 1) < 1e-12) | (norms == 0)).all()

    def test_cloud_rejected(self):
        with pytest.raises(PointCloudUnsupported):
            vertex_gradient(make_cloud(), np.zeros(40))

    def test_length_mismatch(self):
        mesh = synthetic.grid_mesh(3, 3)
        with pytest.raises(ValidationError, match="length"):
            vertex_gradient(mesh, np.zeros(4))


class TestOrientationField:
    def test_bounded(self, sphere_shape):
        h = orientation_field(sphere_shape, k=25).h
        assert (np.abs(h) <= 1.0).all()

    def test_rotation_invariant_reflection_negated(self, sphere_shape, rng):
        mesh = sphere_shape.geometry
        base = orientation_field(sphere_shape, k=25).h
        rot = synthetic.random_rotation(rng)
        rotated = Shape(TriMesh(mesh.vertices @ rot.T, mesh.faces), [0])
        h_rot = orientation_field(rotated, k=25).h
        np.testing.assert_allclose(h_rot, base, atol=1e-8)
        refl = synthetic.random_rotation(rng, reflect=True)
        # winding flips under reflection; reorder faces to keep normals outward
        flipped = Shape(TriMesh(mesh.vertices @ refl.T, mesh.faces[:, ::-1]), [0])
        h_ref = orientation_field(flipped, k=25).h
        np.testing.assert_allclose(h_ref, -base, atol=1e-8)

    def test_explicit_fields(self, sphere_shape, rng):
        n = sphere_shape.geometry.n_vertices
        f, g = rng.normal(size=n), rng.normal(size=n)
        out = orientation_field(sphere_shape, f, g)
        assert out.h.shape == (n,)
        np.testing.assert_array_equal(out.f, f)

    def test_cloud_rejected(self):
        with pytest.raises(PointCloudUnsupported):
            orientation_field(Shape(make_cloud(), [0]))

    def test_column_range_validated(self, sphere_shape):
        with pytest.raises(ValidationError, match="columns"):
            orientation_field(sphere_shape, num_energies=10, g_column=10, k=25)

    def test_default_columns_scale_with_grid(self, sphere_shape):
        # shrinking the energy grid moves the default picks proportionally
        # instead of falling off the end
        out = orientation_field(sphere_shape, num_energies=10, k=25)
        assert np.all(np.abs(out.h) <= 1.0)
