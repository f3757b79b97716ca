import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmwattack.core import (
    ApertureGrid,
    ConfigurationError,
    ImageGrid,
    NumericError,
    RadarConfig,
    ShapeError,
    seeded_rng,
)
from mmwattack.forward import PropagationOperator, adjoint
from mmwattack.imaging import (
    LINEAR_VARIANTS,
    VARIANTS,
    ReconstructorSpec,
    default_step,
    jvp,
    reconstruct,
    reconstruct_values,
    soft_threshold,
    vjp,
)

from conftest import crandn, make_instance


def _op(n, pitch, z0=0.23, n_vox=None, image_origin=None):
    n_vox = n if n_vox is None else n_vox
    ap = ApertureGrid.centered(n, n, pitch, pitch)
    im = ImageGrid.centered(n_vox, n_vox, pitch, pitch, z0)
    if image_origin is not None:
        im = ImageGrid(n_vox, n_vox, pitch, pitch, z0, origin=image_origin)
    return PropagationOperator(ap, im, RadarConfig(), "materialized")


def _spec(variant, **kw):
    if variant in ("CSA", "RMIST"):
        kw.setdefault("iters", 5)
    return ReconstructorSpec(variant, **kw)


def _rinner(a, b):
    return float(np.vdot(a, b).real)


@pytest.fixture(scope="module")
def H8():
    return _op(8, 5e-3)


class TestSoftThreshold:
    def test_examples(self):
        assert soft_threshold(3 + 0j, 1) == 2 + 0j
        assert soft_threshold(0.5j, 1) == 0
        assert soft_threshold(0j, 0.0) == 0

    @given(st.floats(-np.pi, np.pi), st.floats(1.0, 10.0), st.floats(0.0, 0.99))
    def test_phase_preserved(self, phi, mag, frac):
        theta = frac * mag
        out = soft_threshold(mag * np.exp(1j * phi), theta)
        assert abs(out - (mag - theta) * np.exp(1j * phi)) < 1e-12 * mag

    @given(st.complex_numbers(max_magnitude=1e6, allow_nan=False), st.floats(0.0, 1e6))
    def test_is_the_l1_prox(self, x, theta):
        # The prox minimises |z - x|^2 / 2 + theta |z|; compare with nearby points.
        z = soft_threshold(x, theta)
        cost = lambda v: 0.5 * abs(v - x) ** 2 + theta * abs(v)
        for dz in (1e-3, -1e-3, 1e-3j, -1e-3j):
            assert cost(z) <= cost(z + dz * max(1.0, abs(x))) + 1e-9 * max(1.0, abs(x)) ** 2


class TestBPA:
    def test_zero(self, H8):
        assert not np.any(reconstruct(_spec("BPA"), H8, np.zeros(64)).image.values)

    def test_is_adjoint(self, H8):
        y = crandn(seeded_rng(0), 64)
        np.testing.assert_array_equal(reconstruct(_spec("BPA"), H8, y).image.values, adjoint(H8, y).values)

    def test_point_target_peak(self, H8):
        for n in (0, 27, 36, 63):
            e = np.zeros(64)
            e[n] = 1.0
            img = reconstruct(_spec("BPA"), H8, H8.matvec(e)).image.values
            assert int(np.argmax(np.abs(img))) == n


class TestMFA:
    def test_equals_bpa_on_coincident_grids(self, H8):
        y = crandn(seeded_rng(1), 64)
        bpa = reconstruct_values(_spec("BPA"), H8, y)
        mfa = reconstruct_values(_spec("MFA"), H8, y)
        assert np.linalg.norm(mfa - bpa) <= 1e-8 * np.linalg.norm(bpa)

    def test_equals_bpa_on_shifted_image_grid(self):
        H = _op(6, 4e-3, n_vox=9, image_origin=(-0.01, 0.002))
        y = crandn(seeded_rng(2), H.aperture.L)
        bpa = reconstruct_values(_spec("BPA"), H, y)
        mfa = reconstruct_values(_spec("MFA"), H, y)
        assert np.linalg.norm(mfa - bpa) <= 1e-8 * np.linalg.norm(bpa)

    def test_pitch_mismatch(self):
        ap = ApertureGrid.centered(4, 4, 5e-3, 5e-3)
        im = ImageGrid.centered(4, 4, 4e-3, 4e-3, 0.23)
        H = PropagationOperator(ap, im, RadarConfig())
        with pytest.raises(ConfigurationError):
            reconstruct(_spec("MFA"), H, np.zeros(16))


class TestRMA:
    @pytest.mark.parametrize("pitch", [5e-3, 2e-3])
    def test_point_target_matches_bpa(self, pitch):
        H = PropagationOperator.auto(
            ApertureGrid.centered(32, 32, pitch, pitch), ImageGrid.centered(32, 32, pitch, pitch, 0.23), RadarConfig()
        )
        e = np.zeros(H.image.N)
        e[16 * 32 + 16] = 1
        y = H.matvec(e)
        b = np.abs(reconstruct_values(_spec("BPA"), H, y))
        r = np.abs(reconstruct_values(_spec("RMA"), H, y))
        b0, r0 = b - b.mean(), r - r.mean()
        ncc = np.dot(b0, r0) / (np.linalg.norm(b0) * np.linalg.norm(r0))
        assert ncc > 0.9
        assert int(np.argmax(r)) == 16 * 32 + 16

    def test_requires_coincident_grids(self):
        H = _op(4, 5e-3, n_vox=5)
        with pytest.raises(ConfigurationError):
            reconstruct(_spec("RMA"), H, np.zeros(16))

    def test_evanescent_cutoff_changes_output(self):
        # A 1 mm pitch samples spatial frequencies beyond 2k.  Without the cutoff
        # they decay as exp(-|kz| z0), which only stays visible at millimetre depth.
        H = _op(8, 1e-3, z0=2e-3)
        y = crandn(seeded_rng(3), 64)
        cut = reconstruct_values(_spec("RMA"), H, y)
        keep = reconstruct_values(_spec("RMA", evanescent_cutoff=False), H, y)
        assert np.linalg.norm(cut - keep) > 1e-6 * np.linalg.norm(cut)


class TestIterative:
    def test_csa_converges_on_well_posed_instance(self):
        # 7 mm pitch at 0.23 m: condition number ~18.
        H = _op(8, 7e-3)
        sv = np.linalg.svd(H.to_matrix(), compute_uv=False)
        y = H.matvec(seeded_rng(0).standard_normal(64))
        a = reconstruct_values(ReconstructorSpec("CSA", mu=1 / sv[0] ** 2, iters=500), H, y)
        assert np.linalg.norm(H.matvec(a) - y) / np.linalg.norm(y) < 1e-3

    def test_rmist_first_step(self, H8):
        y = crandn(seeded_rng(4), 64)
        mu, theta = 2e-6, 5.0
        one = reconstruct_values(ReconstructorSpec("RMIST", mu=mu, theta=theta, iters=1), H8, y)
        np.testing.assert_array_equal(one, soft_threshold(mu * H8.rmatvec(y), theta))

    def test_csa_threshold_is_step_times_lambda(self, H8):
        y = crandn(seeded_rng(5), 64)
        mu = default_step(H8)
        csa = reconstruct_values(ReconstructorSpec("CSA", lam_reg=3.0, iters=4), H8, y)
        rmist = reconstruct_values(ReconstructorSpec("RMIST", mu=mu, theta=3.0 * mu, iters=4), H8, y)
        np.testing.assert_allclose(csa, rmist, rtol=1e-13, atol=0)

    def test_csa_objective_non_increasing(self, H8):
        sv = np.linalg.svd(H8.to_matrix(), compute_uv=False)[0]
        y = crandn(seeded_rng(6), 64)
        lam = 0.1 * np.max(np.abs(H8.rmatvec(y)))
        rec = reconstruct(ReconstructorSpec("CSA", lam_reg=lam, mu=0.9 / sv**2, iters=60), H8, y)
        d = np.asarray(rec.diagnostics)
        assert d.size == 60
        assert np.all(np.diff(d) <= 1e-12 * d[0])

    def test_default_iterations(self):
        assert ReconstructorSpec("CSA").n_iters == 50
        assert ReconstructorSpec("RMIST").n_iters == 10

    def test_schedule_length_checked(self, H8):
        with pytest.raises(ConfigurationError):
            reconstruct(ReconstructorSpec("RMIST", mu=[1e-6, 1e-6], iters=3), H8, np.zeros(64))

    def test_per_iteration_schedules(self, H8):
        y = crandn(seeded_rng(7), 64)
        mu = default_step(H8)
        sched = ReconstructorSpec("RMIST", mu=[mu, mu, mu], theta=[0.0, 0.0, 0.0], iters=3)
        const = ReconstructorSpec("RMIST", mu=mu, theta=0.0, iters=3)
        np.testing.assert_array_equal(reconstruct_values(sched, H8, y), reconstruct_values(const, H8, y))


class TestValidation:
    @pytest.mark.parametrize(
        "kw", [dict(variant="LIA"), dict(lam_reg=-1.0), dict(iters=0), dict(mu=0.0), dict(theta=-1.0), dict(pad_factor=0)]
    )
    def test_bad_spec(self, kw):
        with pytest.raises(ConfigurationError):
            ReconstructorSpec(**kw)

    def test_non_finite(self, H8):
        y = np.zeros(64, dtype=complex)
        y[3] = np.inf
        with pytest.raises(NumericError):
            reconstruct(_spec("BPA"), H8, y)

    def test_wrong_length(self, H8):
        with pytest.raises(ShapeError):
            reconstruct(_spec("BPA"), H8, np.zeros(63))


@pytest.mark.parametrize("variant", VARIANTS)
def test_positively_homogeneous(H8, variant):
    y = crandn(seeded_rng(8), 64)
    spec = _spec(variant)
    for c in (2.5, 0.3 - 1.1j):
        lhs = reconstruct_values(spec, H8, c * y)
        rhs = c * reconstruct_values(spec, H8, y)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


class TestVJP:
    def test_bpa_vjp_is_forward(self, H8):
        c = crandn(seeded_rng(9), 64)
        np.testing.assert_array_equal(vjp(_spec("BPA"), H8, np.zeros(64), c).values, H8.matvec(c))

    @pytest.mark.parametrize("variant", LINEAR_VARIANTS)
    def test_linear_dot_product(self, H8, variant):
        rng = seeded_rng(10)
        spec = _spec(variant)
        for _ in range(5):
            dy, da = crandn(rng, 64), crandn(rng, 64)
            lhs = np.vdot(da, reconstruct_values(spec, H8, dy))
            rhs = np.vdot(vjp(spec, H8, np.zeros(64), da).values, dy)
            assert abs(lhs - rhs) <= 1e-8 * abs(lhs)

    @pytest.mark.parametrize("variant", ["CSA", "RMIST"])
    def test_unrolled_dot_product(self, H8, variant):
        rng = seeded_rng(11)
        y = crandn(rng, 64)
        spec = _spec(variant, lam_reg=0.05 * np.max(np.abs(H8.rmatvec(y))), theta=None)
        for _ in range(5):
            dy, da = crandn(rng, 64), crandn(rng, 64)
            lhs = _rinner(da, jvp(spec, H8, y, dy).values)
            rhs = _rinner(vjp(spec, H8, y, da).values, dy)
            assert abs(lhs - rhs) <= 1e-5 * abs(lhs)

    def test_csa_finite_differences(self, H8):
        rng = seeded_rng(12)
        y = crandn(rng, 64)
        spec = ReconstructorSpec("CSA", lam_reg=0.05 * np.max(np.abs(H8.rmatvec(y))), iters=3)
        target = crandn(rng, 64) * 1e-4
        loss = lambda v: float(np.sum(np.abs(reconstruct_values(spec, H8, v) - target) ** 2))
        r = reconstruct_values(spec, H8, y) - target
        grad = vjp(spec, H8, y, 2 * r).values
        scale = np.linalg.norm(y)
        for _ in range(4):
            d = crandn(rng, 64)
            d /= np.linalg.norm(d)
            for direction in (d, 1j * d):
                h = 1e-6 * scale
                fd = (loss(y + h * direction) - loss(y - h * direction)) / (2 * h)
                an = _rinner(grad, direction)
                assert abs(fd - an) <= 1e-5 * max(abs(an), 1e-30) + 1e-12 * np.linalg.norm(grad)

    def test_rmist_zero_threshold_matches_jacobian(self, H8):
        spec = ReconstructorSpec("RMIST", theta=0.0, iters=6)
        c = crandn(seeded_rng(13), 64)
        y = crandn(seeded_rng(14), 64)
        # Materialise the linear map column by column, then take its Hermitian adjoint.
        J = np.stack([reconstruct_values(spec, H8, np.eye(64)[:, i]) for i in range(64)], axis=1)
        np.testing.assert_allclose(vjp(spec, H8, y, c).values, J.conj().T @ c, rtol=1e-10, atol=1e-10 * np.abs(J).max())
