import numpy as np
import pytest

import fbt
from fbt.geoflow import BoundaryData, integrate_geodesic
from fbt.jacobi import ConjugateInstant, ConjugateReport, conjugate_scan
from fbt.metric import PhaseState
from fbt.morse import (
    NotCritical,
    _assemble,
    cross_check,
    index_by_counting,
    index_spectral,
)

from _oracles import flat_axis_warped_mu, warped_metric


def _report(instants, tau, kind="conjugate"):
    return ConjugateReport(
        kind=kind, tau=tau,
        instants=[ConjugateInstant(t, m, 0.0) for t, m in instants],
        grid=400, theta_null=1e-6, theta_dip=1e-4, refine_tol=1e-10,
    )


class TestCounting:
    def test_empty(self):
        rep = index_by_counting(_report([], 3.0), 3.0)
        assert (rep.m_minus, rep.m_zero) == (0, 0)

    def test_two_interior(self):
        rep = index_by_counting(
            _report([(np.pi, 1), (2 * np.pi, 1)], 2.5 * np.pi), 2.5 * np.pi
        )
        assert (rep.m_minus, rep.m_zero) == (2, 0)

    def test_instant_at_endpoint_is_nullity(self):
        rep = index_by_counting(_report([(np.pi, 1)], np.pi), np.pi)
        assert (rep.m_minus, rep.m_zero) == (0, 1)


class TestSpectral:
    def test_flat_segment_any_mesh(self, euclid):
        path = integrate_geodesic(euclid, PhaseState([0, 0], [1, 0]), 3.0)
        for mesh in (4, 8, 16):
            rep = index_spectral(path, mesh_fixed=mesh)
            assert (rep.m_minus, rep.m_zero) == (0, 0)
            assert rep.spectral.smallest > 0

    def test_sphere_short_arc(self, sphere):
        path = integrate_geodesic(sphere, PhaseState([0, -1], [1, 0]), 1.5 * np.pi)
        rep = index_spectral(path)
        assert (rep.m_minus, rep.m_zero) == (1, 0)
        assert rep.spectral.mesh <= 256

    def test_sphere_exact_antipode_null(self, sphere):
        path = integrate_geodesic(sphere, PhaseState([0, -1], [1, 0]), np.pi)
        rep = index_spectral(path)
        assert (rep.m_minus, rep.m_zero) == (0, 1)

    def test_non_critical_rejected(self, euclid):
        # an rk4 path of a *different* metric is not a critical point here
        warped = warped_metric(2.0)
        path = integrate_geodesic(warped, PhaseState([0.0, 0.5], [1.0, 0.0]), 1.5)
        bad = integrate_geodesic(euclid, PhaseState([0.0, 0.5], [1.0, 0.3]), 1.5)
        bad.metric = warped
        with pytest.raises(NotCritical):
            index_spectral(bad)


class TestCrossCheck:
    def test_flat(self, euclid):
        path = integrate_geodesic(euclid, PhaseState([0, 0], [1, 0]), 3.0)
        rep = cross_check(path)
        assert rep.agree and (rep.m_minus, rep.m_zero) == (0, 0)

    @pytest.mark.parametrize("tau,want", [(1.5 * np.pi, 1), (2.5 * np.pi, 2)])
    def test_sphere(self, sphere, tau, want):
        path = integrate_geodesic(sphere, PhaseState([0, -1], [1, 0]), tau)
        rep = cross_check(path)
        assert rep.agree
        assert (rep.m_minus, rep.m_zero) == (want, 0)

    def test_warped_flanks(self):
        mu = flat_axis_warped_mu()
        for lam, want in [(mu - 0.2, 0), (mu + 0.2, 1)]:
            m = warped_metric(lam, flat_axis=True)
            path = integrate_geodesic(m, PhaseState([-1.0, 0.0], [1.0, 0.0]), 2.0)
            rep = cross_check(path)
            assert rep.agree
            assert (rep.m_minus, rep.m_zero) == (want, 0)

    def test_constant_wind_straight(self):
        z = fbt.ZermeloData.from_exprs(2, [["1", "0"], ["0", "1"]], ["0.5", "0"])
        m = fbt.zermelo_to_randers(z)
        path = integrate_geodesic(m, PhaseState([0, 0], [1, 0]), 2.0)
        rep = cross_check(path)
        assert rep.agree and (rep.m_minus, rep.m_zero) == (0, 0)

    def test_focal_circle(self, euclid):
        b = BoundaryData([1.0, 0.0], np.array([[0.0], [1.0]]), np.array([[-1.0]]))
        for tau, want in [(2.0, (1, 0)), (1.0, (0, 1)), (0.5, (0, 0))]:
            path = integrate_geodesic(euclid, PhaseState([1.0, 0.0], [1.0, 0.0]), tau)
            rep = cross_check(path, b)
            assert rep.agree
            assert (rep.m_minus, rep.m_zero) == want


class TestMonotonicity:
    def test_index_nondecreasing_and_jumps_by_multiplicity(self, sphere):
        taus = [0.8 * np.pi, 1.2 * np.pi, 1.8 * np.pi, 2.2 * np.pi]
        vals = []
        for tau in taus:
            path = integrate_geodesic(sphere, PhaseState([0, -1], [1, 0]), tau)
            rep = cross_check(path)
            assert rep.agree
            vals.append(rep.m_minus)
        assert vals == [0, 1, 1, 2]

    def test_dim3_jump_is_two(self, sphere3):
        out = []
        for tau in (0.9 * np.pi, 1.1 * np.pi):
            path = integrate_geodesic(sphere3, PhaseState([0, -1, 0], [1, 0, 0]), tau)
            rep = cross_check(path)
            assert rep.agree
            out.append(rep.m_minus)
        assert out == [0, 2]


class TestMeshConvergence:
    def test_negative_eigenvalues_settle(self, sphere):
        from scipy.linalg import eigh

        path = integrate_geodesic(sphere, PhaseState([0, -1], [1, 0]), 2.5 * np.pi)
        rep = index_spectral(path)
        n_final = rep.spectral.mesh
        negs = []
        for mesh in (n_final // 2, n_final):
            K, M = _assemble(path, "point-point", mesh)
            w = eigh(K, M, eigvals_only=True)
            negs.append(np.sort(w[w < 0]))
        assert len(negs[0]) == len(negs[1]) == rep.m_minus
        for a, b in zip(*negs):
            assert abs(a - b) < 0.05 * abs(b)
