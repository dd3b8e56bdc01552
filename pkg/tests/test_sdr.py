import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from suffcast import (
    KernelEstimate,
    default_ct,
    dr_kernel,
    dr_kernel_pairform,
    ensemble_kernel,
    extract_directions,
    select_dimension,
    sir_kernel,
    slice_target,
    subspace_r2,
    tm_kernel,
)

FOUR_POINT_F = np.array([[-2.0], [-1.0], [1.0], [2.0]])


class TestSliceTarget:
    def test_even_split(self):
        s = slice_target(np.arange(1.0, 11.0), 5)
        assert np.array_equal(s.counts, [2, 2, 2, 2, 2])
        assert np.array_equal(s.labels, [0, 0, 1, 1, 2, 2, 3, 3, 4, 4])

    def test_single_slice(self):
        s = slice_target(np.arange(4.0), 1)
        assert np.array_equal(s.labels, [0, 0, 0, 0])

    def test_ties_broken_by_time_index(self):
        s = slice_target(np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0]), 2)
        assert np.array_equal(s.labels, [0, 0, 0, 1, 1, 1])
        # oracle: stable sort by (value, time index) then even split
        y = np.array([3.0, 1.0, 3.0, 1.0, 2.0, 2.0])
        s2 = slice_target(y, 3)
        order = sorted(range(6), key=lambda i: (y[i], i))
        expected = np.empty(6, dtype=int)
        for rank, idx in enumerate(order):
            expected[idx] = rank // 2
        assert np.array_equal(s2.labels, expected)

    def test_uneven_counts(self):
        s = slice_target(np.arange(10.0), 3)
        assert np.array_equal(s.counts, [4, 3, 3])
        assert s.counts.sum() == 10

    def test_boundaries_consistent_without_ties(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(23)
        s = slice_target(y, 4)
        for i, value in enumerate(y):
            lab = s.labels[i]
            assert s.boundaries[lab] < value <= s.boundaries[lab + 1]

    def test_errors(self):
        with pytest.raises(ValueError, match="exceeds"):
            slice_target(np.arange(3.0), 4)
        with pytest.raises(ValueError, match=">= 1"):
            slice_target(np.arange(3.0), 0)


class TestSirKernel:
    def test_single_slice_vanishes(self):
        s = slice_target(FOUR_POINT_F[:, 0], 1)
        assert sir_kernel(FOUR_POINT_F, s).matrix[0, 0] == 0.0

    def test_monotone_link_hand_value(self):
        s = slice_target(FOUR_POINT_F[:, 0], 2)
        assert sir_kernel(FOUR_POINT_F, s).matrix[0, 0] == pytest.approx(2.25, abs=1e-14)

    def test_symmetric_link_blindness_exact(self):
        s = slice_target(FOUR_POINT_F[:, 0] ** 2, 2)
        assert sir_kernel(FOUR_POINT_F, s).matrix[0, 0] == 0.0


class TestDrKernel:
    def test_single_slice_pooled_vanishes(self):
        s = slice_target(FOUR_POINT_F[:, 0], 1)
        assert dr_kernel(FOUR_POINT_F, s, "pooled").matrix[0, 0] == 0.0
        assert dr_kernel_pairform(FOUR_POINT_F, s, "pooled").matrix[0, 0] == 0.0

    def test_symmetric_link_hand_value(self):
        s = slice_target(FOUR_POINT_F[:, 0] ** 2, 2)
        assert dr_kernel(FOUR_POINT_F, s, "pooled").matrix[0, 0] == pytest.approx(4.5)
        assert dr_kernel_pairform(FOUR_POINT_F, s, "pooled").matrix[0, 0] == pytest.approx(4.5)

    def test_unknown_variance_mode(self):
        s = slice_target(FOUR_POINT_F[:, 0], 2)
        with pytest.raises(ValueError, match="variance_mode"):
            dr_kernel(FOUR_POINT_F, s, "bogus")

    @settings(deadline=None, max_examples=40)
    @given(st.integers(0, 10_000), st.integers(1, 5), st.integers(2, 10))
    def test_pairform_identity_pooled(self, seed, k, h):
        rng = np.random.default_rng(seed)
        t_len = int(rng.integers(max(h, 2 * k) + 3, 80))
        f = rng.standard_normal((t_len, k))
        y = rng.standard_normal(t_len)
        s = slice_target(y, h)
        a = dr_kernel(f, s, "pooled").matrix
        b = dr_kernel_pairform(f, s, "pooled").matrix
        scale = max(np.linalg.norm(a), 1e-12)
        assert np.linalg.norm(a - b) / scale < 1e-10


class TestTmKernel:
    def test_symmetric_four_point_zero(self):
        s = slice_target(FOUR_POINT_F[:, 0] ** 2, 2)
        assert tm_kernel(FOUR_POINT_F, s).matrix[0, 0] == pytest.approx(0.0, abs=1e-14)

    def test_scalar_formula_oracle(self):
        # K=1: entry is sum_h p_h (slice third central moment - global third moment)^2
        rng = np.random.default_rng(1)
        f = rng.standard_normal((6, 1))
        y = rng.standard_normal(6)
        s = slice_target(y, 2)
        g = f[:, 0] - f[:, 0].mean()
        global3 = np.mean(g**3)
        expected = 0.0
        for h in range(2):
            d = g[s.labels == h]
            expected += (d.shape[0] / 6) * (np.mean((d - d.mean()) ** 3) - global3) ** 2
        assert tm_kernel(f, s).matrix[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_brute_force_tensor_oracle(self):
        rng = np.random.default_rng(2)
        k, t_len = 2, 8
        f = rng.standard_normal((t_len, k))
        y = rng.standard_normal(t_len)
        s = slice_target(y, 2)
        assert np.allclose(
            tm_kernel(f, s).matrix, brute_force_tm(f, s), rtol=1e-10, atol=1e-12
        )

    def test_slice_too_small(self):
        f = np.arange(3.0)[:, None]
        s = slice_target(np.arange(3.0), 3)
        with pytest.raises(ValueError, match="slice too small"):
            tm_kernel(f, s)


def brute_force_tm(f, slices):
    """Triple-loop evaluation of the third-moment kernel."""
    t_len, k = f.shape
    g = f - f.mean(axis=0)
    global3 = np.zeros((k, k, k))
    for i in range(k):
        for j in range(k):
            for m in range(k):
                global3[i, j, m] = np.mean(g[:, i] * g[:, j] * g[:, m])
    pairs = [(i, j) for i in range(k) for j in range(i, k)]
    out = np.zeros((k, k))
    for h in range(slices.h_count):
        d = g[slices.labels == h]
        d = d - d.mean(axis=0)
        mu = np.zeros((len(pairs), k))
        for r, (i, j) in enumerate(pairs):
            for m in range(k):
                mu[r, m] = np.mean(d[:, i] * d[:, j] * d[:, m]) - global3[i, j, m]
        out += (d.shape[0] / t_len) * mu.T @ mu
    return out


class TestEnsembleKernel:
    def test_degenerate_sides(self):
        rng = np.random.default_rng(3)
        f = rng.standard_normal((20, 2))
        s = slice_target(rng.standard_normal(20), 4)
        dr = dr_kernel(f, s)
        tm = tm_kernel(f, s)
        zero = KernelEstimate(
            method="TM", matrix=np.zeros((2, 2)), eigenvalues=np.zeros(2),
            h_count=4, t_len=20,
        )
        assert np.array_equal(ensemble_kernel(dr, zero).matrix, dr.matrix)
        zero_dr = KernelEstimate(
            method="DR", matrix=np.zeros((2, 2)), eigenvalues=np.zeros(2),
            h_count=4, t_len=20,
        )
        assert np.array_equal(ensemble_kernel(zero_dr, tm).matrix, tm.matrix)

    def test_dimension_mismatch(self):
        a = KernelEstimate("DR", np.zeros((2, 2)), np.zeros(2), 4, 20)
        b = KernelEstimate("TM", np.zeros((3, 3)), np.zeros(3), 4, 20)
        with pytest.raises(ValueError, match="dimensions differ"):
            ensemble_kernel(a, b)

    def test_disjoint_signals_union(self):
        # coordinate 0 carries a variance signal (DR sees it, TM is blind:
        # within-slice symmetric); coordinate 1 carries a pure skew signal
        # with constant mean and variance (TM sees it, DR is blind)
        rng = np.random.default_rng(2024)
        per, k = 500, 4
        scales = [0.6, 1.0, 1.45, 1.9]
        shapes = [0.4, 1.5, 6.0, 40.0]
        blocks, ys = [], []
        for h in range(4):
            z = rng.standard_normal(per) * scales[h]
            g = rng.gamma(shapes[h], 1.0, size=per)
            g = (g - shapes[h]) / np.sqrt(shapes[h])
            blocks.append(np.column_stack([z, g, rng.standard_normal((per, k - 2))]))
            ys.append(np.full(per, float(h)))
        f = np.vstack(blocks)
        s = slice_target(np.concatenate(ys), 4)
        dr = dr_kernel(f, s, "pooled")
        tm = tm_kernel(f, s)
        ens = ensemble_kernel(dr, tm)
        basis = np.eye(k)[:, :2]
        quality = {}
        for name, kern in (("dr", dr), ("tm", tm), ("ens", ens)):
            phi = extract_directions(kern, 2)
            quality[name] = min(subspace_r2(phi[:, j], basis) for j in range(2))
        assert quality["dr"] < 0.2
        assert quality["ens"] > quality["dr"] + 0.02
        assert quality["ens"] > quality["tm"] + 0.02
        assert quality["ens"] > 0.95


class TestExtractDirections:
    def test_diagonal_kernel(self):
        kern = KernelEstimate("DR", np.diag([3.0, 2.0, 1.0]), np.array([3.0, 2.0, 1.0]), 2, 10)
        phi = extract_directions(kern, 2)
        assert np.allclose(np.abs(phi), np.eye(3)[:, :2])
        assert kern.directions is phi

    def test_full_dimension(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((3, 3))
        m = m + m.T
        kern = KernelEstimate("DR", m, np.linalg.eigvalsh(m)[::-1], 2, 10)
        phi = extract_directions(kern, 3)
        assert np.allclose(phi @ phi.T, np.eye(3), atol=1e-10)

    def test_cubic_characteristic_oracle(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((3, 3))
        m = (m + m.T) / 2
        kern = KernelEstimate("DR", m, np.linalg.eigvalsh(m)[::-1], 2, 10)
        phi = extract_directions(kern, 3)
        # roots of det(M - lambda I) from explicit cubic coefficients
        tr = np.trace(m)
        m2 = sum(
            m[i, i] * m[j, j] - m[i, j] ** 2 for i in range(3) for j in range(i + 1, 3)
        )
        roots = np.sort(np.roots([1.0, -tr, m2, -np.linalg.det(m)]).real)[::-1]
        assert np.allclose(kern.eigenvalues, roots, atol=1e-8)
        for j in range(3):
            assert np.linalg.norm(m @ phi[:, j] - roots[j] * phi[:, j]) < 1e-8

    def test_l_out_of_range(self):
        kern = KernelEstimate("DR", np.eye(2), np.ones(2), 2, 10)
        with pytest.raises(ValueError, match="out of range"):
            extract_directions(kern, 3)


class TestSelectDimension:
    def kernel(self, eigenvalues, k=None):
        eigenvalues = np.asarray(eigenvalues, dtype=float)
        k = k or len(eigenvalues)
        return KernelEstimate("DR", np.diag(eigenvalues), eigenvalues, 10, 500)

    def test_clean_spectral_gap(self):
        kern = self.kernel([5.0, 4.0] + [0.0] * 6)
        assert select_dimension(kern, 500, 0.5, 1.0).l_hat == 2

    def test_degenerate_kernel_returns_one(self):
        kern = self.kernel([0.0] * 8)
        sel = select_dimension(kern, 500, 0.5, 1.0)
        assert sel.l_hat == 1
        assert sel.tau == 0

    def test_objective_matches_formula_literally(self):
        lam = np.array([3.0, 1.5, 0.4, 0.1, 0.0, 0.0])
        kern = self.kernel(lam)
        t_len, c_t = 200, 7.0
        sel = select_dimension(kern, t_len, 0.5, c_t)
        k, k_c = 6, 3
        tau = 4
        for l in range(1, k_c + 1):
            w = sum(np.log(lam[i] + 1) - lam[i] for i in range(min(tau, l), k_c))
            expected = (t_len / 2) * w - c_t * l * (2 * k - l + 1) / 2
            assert sel.objective[l - 1] == pytest.approx(expected, rel=1e-12)

    def test_scale_awareness(self):
        # the objective is deliberately not scale-free
        a = select_dimension(self.kernel([5.0, 4.0, 0.3, 0.0, 0.0, 0.0]), 500, 0.5, 40.0)
        b = select_dimension(self.kernel([0.05, 0.04, 0.003, 0.0, 0.0, 0.0]), 500, 0.5, 40.0)
        assert a.l_hat != b.l_hat

    def test_censoring_bounds(self):
        with pytest.raises(ValueError, match="c_censor"):
            select_dimension(self.kernel([1.0, 0.5]), 100, 1.5, 1.0)
        with pytest.raises(ValueError, match="censored range"):
            select_dimension(self.kernel([1.0, 0.5]), 100, 0.1, 1.0)

    def test_default_ct_formulas(self):
        from suffcast.sdr import CT_CALIBRATION

        k, p, t = 6, 100, 500
        base = np.sqrt(k / p) * t
        assert default_ct("DR", k, p, t) == pytest.approx(CT_CALIBRATION * (base + np.sqrt(t)))
        assert default_ct("DR+TM", k, p, t) == pytest.approx(
            CT_CALIBRATION * (base + np.sqrt(k * t))
        )


class TestKernelProperties:
    @settings(deadline=None, max_examples=20)
    @given(st.integers(0, 10_000))
    def test_orthogonal_covariance_sir_dr(self, seed):
        rng = np.random.default_rng(seed)
        k, t_len, h = 3, 60, 5
        f = rng.standard_normal((t_len, k))
        y = rng.standard_normal(t_len)
        q, _ = np.linalg.qr(rng.standard_normal((k, k)))
        s = slice_target(y, h)
        for build in (sir_kernel, dr_kernel):
            m = build(f, s).matrix
            m_rot = build(f @ q.T, s).matrix
            assert np.linalg.norm(m_rot - q @ m @ q.T) <= 1e-10 * max(np.linalg.norm(m), 1.0)

    def test_signed_permutation_covariance_tm(self):
        # the distinct-row reduction keeps TM covariant under signed
        # permutations (the reduced row set maps onto itself); general
        # rotations reweight duplicate rows and are exercised via DR
        rng = np.random.default_rng(6)
        k, t_len = 3, 48
        f = rng.standard_normal((t_len, k))
        s = slice_target(rng.standard_normal(t_len), 4)
        perm = np.zeros((k, k))
        perm[0, 1], perm[1, 2], perm[2, 0] = 1.0, -1.0, 1.0
        m = tm_kernel(f, s).matrix
        m_rot = tm_kernel(f @ perm.T, s).matrix
        assert np.linalg.norm(m_rot - perm @ m @ perm.T) <= 1e-10 * np.linalg.norm(m)

    @settings(deadline=None, max_examples=20)
    @given(st.integers(0, 10_000))
    def test_dr_tm_positive_semidefinite(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.standard_normal((40, 3))
        y = rng.standard_normal(40)
        s = slice_target(y, 4)
        for mode in ("identity", "pooled"):
            assert dr_kernel(f, s, mode).eigenvalues[-1] >= -1e-10
        assert tm_kernel(f, s).eigenvalues[-1] >= -1e-10

    def test_kernel_symmetry(self):
        rng = np.random.default_rng(7)
        f = rng.standard_normal((30, 4))
        s = slice_target(rng.standard_normal(30), 5)
        for kern in (sir_kernel(f, s), dr_kernel(f, s), tm_kernel(f, s)):
            assert np.abs(kern.matrix - kern.matrix.T).max() < 1e-12
