import numpy as np
import pytest
from scipy.linalg import expm

from latticesoliton import _kernels, exact, qmc
from latticesoliton.core import ConfigError, LatticeConfig, RngStream

import oracles


class TestBondHamiltonian:
    def test_one_atom_bond(self):
        cfg = LatticeConfig(L=6, N=4, delta=1.0, kappa=-3.0)
        h = qmc.bond_hamiltonian(cfg, 1)
        assert h.tolist() == [[0.0, -0.5], [-0.5, 0.0]]

    def test_empty_bond(self):
        cfg = LatticeConfig(L=4, N=4)
        assert qmc.bond_hamiltonian(cfg, 0).tolist() == [[0.0]]

    def test_two_atom_bond_with_interaction(self):
        cfg = LatticeConfig(L=6, N=4, delta=1.0, kappa=-1.0)
        h = qmc.bond_hamiltonian(cfg, 2)
        assert np.diag(h) == pytest.approx([-0.5, 0.0, -0.5])
        assert h[1, 0] == pytest.approx(-np.sqrt(2) / 2)
        assert h[2, 1] == pytest.approx(-np.sqrt(2) / 2)

    def test_matches_independent_construction(self):
        for L, m in ((2, 5), (4, 3), (8, 6)):
            cfg = LatticeConfig(L=L, N=8, delta=0.9, kappa=-0.37)
            assert qmc.bond_hamiltonian(cfg, m) == pytest.approx(
                oracles.bond_block(m, 0.9, -0.37, L), rel=1e-14
            )

    def test_dimer_bond_is_full_hamiltonian(self):
        # for L=2 the single double bond carries the entire Hamiltonian
        cfg = LatticeConfig(L=2, N=6, delta=1.1, kappa=-0.4)
        basis = exact.FockBasis(cfg)
        H = exact.build_hamiltonian(basis).matrix.toarray()
        h_bond = qmc.bond_hamiltonian(cfg, 6)
        assert H[::-1, ::-1] == pytest.approx(h_bond, rel=1e-13)

    def test_bond_sum_reassembles_hamiltonian(self):
        # sum of embedded bond blocks over all ring bonds equals the full H
        cfg = LatticeConfig(L=4, N=3, delta=1.0, kappa=-0.6)
        basis = exact.FockBasis(cfg)
        D = basis.dimension
        H_full = exact.build_hamiltonian(basis).matrix.toarray()
        H_sum = np.zeros((D, D))
        for b in range(4):
            i_site, j_site = b, (b + 1) % 4
            for i in range(D):
                si = basis.states[i]
                for j in range(D):
                    sj = basis.states[j]
                    if any(si[s] != sj[s] for s in range(4) if s not in (i_site, j_site)):
                        continue
                    m = si[i_site] + si[j_site]
                    if sj[i_site] + sj[j_site] != m:
                        continue
                    h = qmc.bond_hamiltonian(cfg, m)
                    H_sum[j, i] += h[sj[i_site], si[i_site]]
        assert H_sum == pytest.approx(H_full, abs=1e-12)

    def test_bond_total_bounds(self):
        cfg = LatticeConfig(L=4, N=4)
        with pytest.raises(ValueError):
            qmc.bond_hamiltonian(cfg, 5)


class TestPropagatorTable:
    def test_single_atom_block_analytic(self):
        cfg = LatticeConfig(L=4, N=2, delta=1.0, kappa=0.0)
        table = qmc.build_propagator_table(cfg, dtau=0.3)
        g1 = table.g(1)
        c, s = np.cosh(0.15), np.sinh(0.15)
        assert g1 == pytest.approx(np.array([[c, s], [s, c]]), rel=1e-12)

    def test_identity_limit(self):
        cfg = LatticeConfig(L=4, N=6, delta=1.0, kappa=-0.5)
        table = qmc.build_propagator_table(cfg, dtau=1e-8)
        for m in (1, 3, 6):
            assert np.abs(table.g(m) - np.eye(m + 1)).max() < 1e-6

    def test_positivity_and_symmetry(self):
        cfg = LatticeConfig(L=4, N=12, delta=1.0, kappa=-0.8)
        table = qmc.build_propagator_table(cfg, dtau=0.2)
        for m in range(13):
            g = table.g(m)
            assert (g > 0).all()
            assert np.abs(g - g.T).max() == 0.0

    def test_matches_scipy_expm(self):
        cfg = LatticeConfig(L=6, N=9, delta=0.8, kappa=-0.25)
        table = qmc.build_propagator_table(cfg, dtau=0.17)
        for m in (1, 4, 9):
            expected = expm(-0.17 * oracles.bond_block(m, 0.8, -0.25, 6))
            assert table.g(m) == pytest.approx(expected, rel=1e-10)
            hg = oracles.bond_block(m, 0.8, -0.25, 6) @ expected
            assert table.hg(m) == pytest.approx(hg, abs=1e-10)

    def test_lazy_growth(self):
        cfg = LatticeConfig(L=4, N=50, delta=1.0, kappa=-0.1)
        table = qmc.build_propagator_table(cfg, dtau=0.1)
        assert table.max_total == -1
        table.g(3)
        assert table.max_total == 3
        table.g(10)
        assert table.max_total == 10

    def test_entry_budget(self):
        cfg = LatticeConfig(L=4, N=10_000, delta=1.0, kappa=0.0)
        table = qmc.build_propagator_table(cfg, dtau=0.1)
        with pytest.raises(ConfigError):
            table.ensure(10_000)


class TestSeeding:
    def test_uniform_divisible(self):
        cfg = LatticeConfig(L=4, N=4)
        sampler = qmc.SamplerConfig(beta=1.0, n_samples=1, rng=RngStream(1), n_beta=3)
        grid = qmc.seed_grid(cfg, sampler)
        assert grid.shape == (4, 6)
        assert (grid == 1).all()

    def test_uniform_remainder_rule(self):
        assert qmc.uniform_state(LatticeConfig(L=3, N=4)).tolist() == [2, 1, 1]
        assert qmc.uniform_state(LatticeConfig(L=4, N=7)).tolist() == [2, 2, 2, 1]

    def test_narrow_bump(self):
        cfg = LatticeConfig(L=16, N=256)
        column = qmc.narrow_state(cfg, center=8, width=2.0)
        assert column.sum() == 256
        assert column.argmax() == 8
        assert column[5:12].sum() >= 0.8 * 256  # concentrated around the center
        assert (column >= 0).all()

    def test_every_slice_identical(self):
        cfg = LatticeConfig(L=16, N=256)
        sampler = qmc.SamplerConfig(beta=1.0, n_samples=1, rng=RngStream(1), n_beta=5,
                                    seeding=qmc.Narrow(center=8, width=2.0))
        grid = qmc.seed_grid(cfg, sampler)
        assert (grid == grid[:, :1]).all()
        qmc.check_grid(grid, cfg)
        qmc.check_grid_consistency(grid, cfg)

    def test_narrow_errors(self):
        cfg = LatticeConfig(L=8, N=16)
        with pytest.raises(qmc.SeedingError):
            qmc.narrow_state(cfg, center=3, width=0.0)
        with pytest.raises(qmc.SeedingError):
            qmc.narrow_state(cfg, center=8, width=2.0)

    def test_odd_lattice_rejected(self):
        cfg = LatticeConfig(L=5, N=5)
        sampler = qmc.SamplerConfig(beta=1.0, n_samples=1, rng=RngStream(1))
        with pytest.raises(qmc.OddLatticeError):
            qmc.seed_grid(cfg, sampler)

    def test_default_n_beta_rule(self):
        cfg = LatticeConfig(L=16, N=256, delta=1.0, kappa=-0.004)
        assert qmc.default_n_beta(cfg, beta=100.0) == 2000
        cfg2 = LatticeConfig(L=4, N=4, delta=1.0, kappa=-0.5)
        assert qmc.default_n_beta(cfg2, beta=20.0) == 400


class TestGridIO:
    def test_dump_load_round_trip(self, tmp_path):
        cfg = LatticeConfig(L=4, N=6)
        sampler = qmc.SamplerConfig(beta=1.0, n_samples=1, rng=RngStream(3), n_beta=4)
        grid = qmc.seed_grid(cfg, sampler)
        path = tmp_path / "grid.txt"
        qmc.dump_grid(grid, path)
        text = path.read_text().splitlines()
        assert text[0] == "4 8"
        assert len(text) == 9
        assert np.array_equal(qmc.load_grid(path), grid)


class TestCornerMoves:
    def _setup(self, L=4, N=4, kappa=-0.5, n_beta=6, beta=2.0):
        cfg = LatticeConfig(L=L, N=N, delta=1.0, kappa=kappa)
        sampler = qmc.SamplerConfig(beta=beta, n_samples=1, rng=RngStream(5), n_beta=n_beta)
        grid = qmc.seed_grid(cfg, sampler)
        table = qmc.build_propagator_table(cfg, beta / n_beta)
        return cfg, grid, table

    def test_moves_preserve_slice_sums(self):
        cfg, grid, table = self._setup()
        rng = RngStream(seed=77).generator()
        for _ in range(2000):
            qmc.propose_and_apply_move(grid, table, rng)
        qmc.check_grid(grid, cfg)
        qmc.check_grid_consistency(grid, cfg)

    def test_zero_occupancy_candidate_rejected(self):
        cfg = LatticeConfig(L=4, N=1, delta=1.0, kappa=0.0)
        sampler = qmc.SamplerConfig(beta=1.0, n_samples=1, rng=RngStream(1), n_beta=2)
        grid = qmc.seed_grid(cfg, sampler)  # single atom at site 0
        # site 1 is empty at every slice: moving an atom out of it has zero weight
        accepted, ratio = qmc.corner_move_ratio(grid, table=qmc.build_propagator_table(cfg, 0.5),
                                                k=1, t=1, dr=1, accept=True)
        assert not accepted
        assert ratio == 0.0
        qmc.check_grid(grid, cfg)

    def test_reverse_move_has_inverse_ratio(self):
        cfg, grid, table = self._setup(kappa=-0.7)
        # force-apply a move, then probe the exact reverse proposal
        accepted, ratio_fwd = qmc.corner_move_ratio(grid, table, k=1, t=3, dr=1, accept=True)
        assert accepted and ratio_fwd > 0
        _, ratio_rev = qmc.corner_move_ratio(grid, table, k=2, t=3, dr=-1, accept=False)
        assert ratio_rev == pytest.approx(1.0 / ratio_fwd, rel=1e-12)

    def test_uphill_moves_always_accepted(self):
        # displace a dimer atom for one window, then move it back: the return
        # ratio is cosh^2/sinh^2 > 1 and must be accepted at any u
        cfg = LatticeConfig(L=2, N=1, delta=1.0, kappa=0.0)
        sampler = qmc.SamplerConfig(beta=2.0, n_samples=1, rng=RngStream(1), n_beta=4)
        grid = qmc.seed_grid(cfg, sampler)
        table = qmc.build_propagator_table(cfg, 0.5)
        accepted, ratio = qmc.corner_move_ratio(grid, table, k=0, t=1, dr=1, accept=True)
        assert accepted and 0 < ratio < 1
        gflat, _hg, goff = table.packed(cfg.N)
        accepted_back, ratio_back = _kernels.corner_move(grid, gflat, goff, 1, 1, 1, 0.999999)
        assert ratio_back == pytest.approx(1.0 / ratio, rel=1e-12)
        assert accepted_back

    def test_debug_conservation_run(self):
        cfg = LatticeConfig(L=4, N=3, delta=1.0, kappa=-0.4)
        sampler = qmc.SamplerConfig(beta=1.0, n_samples=20, rng=RngStream(8),
                                    n_beta=4, thermalization_sweeps=30, stride=2)
        result = qmc.run(cfg, sampler, debug_conservation=True)
        assert (result.samples.sum(axis=1) == 3).all()


class TestRun:
    def test_reproducible_for_fixed_stream(self):
        cfg = LatticeConfig(L=4, N=4, delta=1.0, kappa=-0.5)
        def go():
            sampler = qmc.SamplerConfig(beta=2.0, n_samples=50, rng=RngStream(seed=31, stream_id=2),
                                        n_beta=10, thermalization_sweeps=50, stride=2)
            return qmc.run(cfg, sampler)
        a, b = go(), go()
        assert np.array_equal(a.samples, b.samples)
        assert a.acceptance_rate == b.acceptance_rate

    def test_streams_decorrelate(self):
        cfg = LatticeConfig(L=4, N=4, delta=1.0, kappa=-0.5)
        def go(stream):
            sampler = qmc.SamplerConfig(beta=2.0, n_samples=50, rng=RngStream(seed=31, stream_id=stream),
                                        n_beta=10, thermalization_sweeps=50, stride=2)
            return qmc.run(cfg, sampler).samples
        assert not np.array_equal(go(0), go(1))

    def test_samples_satisfy_number_invariant(self):
        cfg = LatticeConfig(L=6, N=7, delta=1.0, kappa=-0.2)
        sampler = qmc.SamplerConfig(beta=1.5, n_samples=40, rng=RngStream(12),
                                    thermalization_sweeps=100, stride=2)
        result = qmc.run(cfg, sampler)
        assert (result.samples.sum(axis=1) == 7).all()
        assert 0.0 < result.acceptance_rate < 1.0
        qmc.check_grid_consistency(result.diagnostics["final_grid"], cfg)

    def test_dimer_single_atom_symmetric(self):
        # the exact thermal state puts the atom on either site with p = 1/2
        cfg = LatticeConfig(L=2, N=1, delta=1.0, kappa=0.0)
        sampler = qmc.SamplerConfig(beta=1.0, n_samples=4000, rng=RngStream(21),
                                    n_beta=4, thermalization_sweeps=100, stride=3)
        result = qmc.run(cfg, sampler)
        frac = result.samples[:, 0].mean()
        sem = qmc.binned_error(result.samples[:, 0].astype(float))
        assert abs(frac - 0.5) < max(3 * sem, 0.05)

    def test_dimer_matches_exact_thermal(self):
        # L=2 has a single bond, so the sampler's stationary law is the exact
        # thermal marginal with no Trotter error at any dtau
        cfg = LatticeConfig(L=2, N=2, delta=1.0, kappa=-0.3)
        basis = exact.FockBasis(cfg)
        H = exact.build_hamiltonian(basis)
        P = exact.thermal_distribution(H, basis, beta=2.0).probabilities
        sampler = qmc.SamplerConfig(beta=2.0, n_samples=20_000, rng=RngStream(91),
                                    n_beta=10, thermalization_sweeps=200, stride=10)
        result = qmc.run(cfg, sampler)
        idx = np.array([basis.index(s) for s in result.samples])
        counts = np.bincount(idx, minlength=3)
        chi2 = np.sum((counts - len(idx) * P) ** 2 / (len(idx) * P))
        df = 2
        assert chi2 < df + 3 * np.sqrt(2 * df)

    def test_corner_moves_match_winding_restricted_reference(self):
        # sharpest balance check for the corner updates alone: the chain must
        # reproduce the zero-winding transfer-matrix law exactly (no Trotter
        # or winding slack in the comparison)
        cfg = LatticeConfig(L=4, N=2, delta=1.0, kappa=-0.5)
        n_beta, beta = 10, 2.0
        basis = exact.FockBasis(cfg)
        states = [tuple(s) for s in basis.states]
        P0 = oracles.winding_restricted_distribution(states, 4, n_beta, beta, 1.0, -0.5, fmax=30)
        sampler = qmc.SamplerConfig(beta=beta, n_samples=30_000, rng=RngStream(55),
                                    n_beta=n_beta, thermalization_sweeps=200, stride=8,
                                    winding_per_sweep=0)
        result = qmc.run(cfg, sampler)
        assert result.diagnostics["winding_attempts_per_sweep"] == 0
        idx = np.array([basis.index(s) for s in result.samples])
        counts = np.bincount(idx, minlength=len(states))
        expected = len(idx) * P0
        chi2 = np.sum((counts - expected) ** 2 / expected)
        df = len(states) - 1
        assert chi2 < df + 3 * np.sqrt(2 * df)

    def test_spiral_moves_restore_all_winding_sectors(self):
        # with spiral moves mixed in, the chain must land on the FULL
        # transfer-matrix law instead of the zero-winding one
        cfg = LatticeConfig(L=4, N=2, delta=1.0, kappa=-0.5)
        n_beta, beta = 10, 2.0
        basis = exact.FockBasis(cfg)
        states = [tuple(s) for s in basis.states]
        P_full = oracles.trotter_slice_distribution(states, 4, n_beta, beta, 1.0, -0.5)
        P0 = oracles.winding_restricted_distribution(states, 4, n_beta, beta, 1.0, -0.5, fmax=30)
        sampler = qmc.SamplerConfig(beta=beta, n_samples=40_000, rng=RngStream(56),
                                    n_beta=n_beta, thermalization_sweeps=300, stride=24,
                                    winding_per_sweep=48)
        result = qmc.run(cfg, sampler)
        assert result.diagnostics["winding_attempts_per_sweep"] == 48
        assert result.diagnostics["winding_acceptance"] > 0
        idx = np.array([basis.index(s) for s in result.samples])
        counts = np.bincount(idx, minlength=len(states))
        M = len(idx)
        df = len(states) - 1
        chi2_full = np.sum((counts - M * P_full) ** 2 / (M * P_full))
        chi2_w0 = np.sum((counts - M * P0) ** 2 / (M * P0))
        assert chi2_full < df + 3 * np.sqrt(2 * df)
        assert chi2_w0 > chi2_full  # and the restricted law is now the wrong one

    def test_noninteracting_site_uniformity(self):
        # coarse imaginary-time grid: site symmetry holds at any dtau and the
        # richer kink activity makes world lines diffuse much faster
        cfg = LatticeConfig(L=6, N=6, delta=1.0, kappa=0.0)
        sampler = qmc.SamplerConfig(beta=3.0, n_samples=4000, rng=RngStream(101),
                                    n_beta=6, thermalization_sweeps=300, stride=12)
        result = qmc.run(cfg, sampler)
        stats = qmc.site_occupation_stats(result)
        for k, s in stats.items():
            assert abs(s.mean - 1.0) < max(3 * s.stderr, 0.08)

    def test_bad_sampler_params(self):
        cfg = LatticeConfig(L=4, N=4)
        with pytest.raises(ConfigError):
            qmc.run(cfg, qmc.SamplerConfig(beta=1.0, n_samples=0, rng=RngStream(1)))
        with pytest.raises(ConfigError):
            qmc.run(cfg, qmc.SamplerConfig(beta=1.0, n_samples=5, rng=RngStream(1), stride=0))

    def test_accuracy_guard_warns(self):
        cfg = LatticeConfig(L=4, N=4, delta=1.0, kappa=-0.5)
        with pytest.warns(UserWarning):
            qmc.check_step_accuracy(cfg, dtau=1.0)


class TestTrotterOrder:
    def test_reference_bias_quarters_per_doubling(self):
        # deterministic transfer-matrix check of the O(dtau^2) systematic error
        cfg = LatticeConfig(L=4, N=4, delta=1.0, kappa=-0.5)
        beta = 10.0
        basis = exact.FockBasis(cfg)
        states = [tuple(s) for s in basis.states]
        H = exact.build_hamiltonian(basis)
        P_exact = exact.thermal_distribution(H, basis, beta).probabilities
        f = (basis.states[:, 0] * basis.states[:, 1]).astype(float)
        exact_val = P_exact @ f
        biases = []
        for n_beta in (8, 16, 32):
            P = oracles.trotter_slice_distribution(states, 4, n_beta, beta, 1.0, -0.5)
            biases.append(P @ f - exact_val)
        assert biases[0] / biases[1] == pytest.approx(4.0, abs=0.5)
        assert biases[1] / biases[2] == pytest.approx(4.0, abs=0.5)


class TestObservables:
    def _result(self, m=400):
        cfg = LatticeConfig(L=4, N=4, delta=1.0, kappa=-0.5)
        sampler = qmc.SamplerConfig(beta=2.0, n_samples=m, rng=RngStream(61),
                                    n_beta=10, thermalization_sweeps=100, stride=4)
        return qmc.run(cfg, sampler)

    def test_total_number_has_zero_variance(self):
        result = self._result()
        stats = qmc.estimate_observables(result, {"total": lambda n: float(n.sum())})["total"]
        assert stats.mean == 4.0
        assert stats.variance == 0.0
        assert stats.stderr == 0.0

    def test_error_bars_shrink_like_root_m_and_cover_truth(self):
        # the oracle case at a stride that decorrelates retained samples;
        # expected shrink per decade of M is 1/sqrt(10) ~ 0.32
        cfg = LatticeConfig(L=4, N=4, delta=1.0, kappa=-0.5)
        errs = {}
        means = {}
        for m in (100, 1000, 10_000):
            sampler = qmc.SamplerConfig(beta=20.0, n_samples=m, rng=RngStream(71),
                                        n_beta=100, thermalization_sweeps=300, stride=40)
            result = qmc.run(cfg, sampler)
            stats = qmc.estimate_observables(result, {"n0": lambda n: float(n[0])})["n0"]
            errs[m], means[m] = stats.stderr, stats.mean
        for m1, m2 in ((100, 1000), (1000, 10_000)):
            assert 0.12 < errs[m2] / errs[m1] < 0.65
        assert abs(means[10_000] - 1.0) < max(3 * errs[10_000], 0.1)

    def test_needs_two_samples(self):
        cfg = LatticeConfig(L=4, N=4, delta=1.0, kappa=-0.5)
        sampler = qmc.SamplerConfig(beta=1.0, n_samples=1, rng=RngStream(3),
                                    n_beta=5, thermalization_sweeps=20, stride=1)
        result = qmc.run(cfg, sampler)
        with pytest.raises(ValueError):
            qmc.estimate_observables(result, {"n0": lambda n: float(n[0])})

    def test_binned_error_on_iid_series(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(4096)
        err = qmc.binned_error(x)
        assert err == pytest.approx(1.0 / np.sqrt(4096), rel=0.35)

    def test_autocorrelation_time_of_ar1(self):
        rng = np.random.default_rng(1)
        phi = 0.8
        x = np.zeros(200_000)
        for i in range(1, len(x)):
            x[i] = phi * x[i - 1] + rng.standard_normal()
        tau = qmc.integrated_autocorrelation(x)
        assert tau == pytest.approx((1 + phi) / (1 - phi), rel=0.2)
