import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stmh.diagnostics import (
    DiagnosticsError,
    RepresentabilityError,
    affine_rank_bound_check,
    align_global_phase,
    common_support,
    construct_representing_ensemble,
    energy_and_variance,
    enumerate_state,
    enumerate_states,
    exact_overlap_matrix,
    ground_space_report,
    numerical_rank,
    phase_aligned_error,
    projection_metrics,
    rank_analysis,
    tolerance_band,
)
from stmh.model import Problem, build_dimer_states, build_momentum_states, exact_diagonalize
from stmh.nqs import Heads, Mode, TabularEnsemble, init_ensemble
from stmh.sampler import SamplerConfig, sample_mixture
from stmh.trainer import forward

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def random_unit(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def momentum(problem):
    return np.stack(build_momentum_states(problem.basis))


class TestEnumeration:
    def test_zero_heads_give_uniform_state(self, problem4):
        ens = init_ensemble(4, 3, 2, Mode.ST_MH, np.random.default_rng(0), head_scale=0.0)
        state = enumerate_state(ens, 0, problem4)
        np.testing.assert_allclose(state, np.full(6, 1 / np.sqrt(6)), atol=1e-15)

    @given(seeds)
    def test_normalised(self, seed):
        p = Problem.build(4)
        ens = init_ensemble(4, 4, 3, Mode.MT_MH, np.random.default_rng(seed), head_scale=2.0)
        states = enumerate_states(ens, p)
        np.testing.assert_allclose(np.linalg.norm(states, axis=1), 1.0, rtol=1e-13)

    def test_large_offsets_do_not_overflow(self, problem4):
        ens = init_ensemble(4, 3, 1, Mode.ST_MH, np.random.default_rng(0))
        ens.heads.beta[0] = 900.0
        assert np.all(np.isfinite(enumerate_states(ens, problem4)))

    def test_pinned_zero_head(self, problem4):
        feats = np.zeros((6, 1))
        ens = TabularEnsemble(feats, Heads.zeros(1, 1), np.ones(6, bool), np.full((1, 6), -np.inf + 0j))
        with pytest.raises(DiagnosticsError):
            enumerate_states(ens, problem4)

    def test_tabular_reproduces_momentum_states(self, problem8):
        targets = momentum(problem8)
        states = enumerate_states(construct_representing_ensemble(targets, 2), problem8)
        for s, t in zip(states, targets):
            assert abs(np.vdot(t, s)) ** 2 == pytest.approx(1.0, abs=1e-12)
            assert phase_aligned_error(s, t) < 1e-10


class TestPhase:
    def test_anchor_real_positive(self):
        v = align_global_phase(np.array([0.1, -2j, 0.5]))
        assert v[1] == pytest.approx(2.0)

    @given(seeds, st.floats(-np.pi, np.pi))
    def test_aligned_error_phase_invariant(self, seed, theta):
        v = random_unit(np.random.default_rng(seed), 7)
        assert phase_aligned_error(np.exp(1j * theta) * v, v) < 1e-12


class TestEnergy:
    def test_two_level(self):
        h = np.diag([-1.0, 1.0])
        for t in np.linspace(0, np.pi, 7):
            psi = np.array([np.cos(t), np.sin(t)])
            e, var = energy_and_variance(psi, h)
            assert e == pytest.approx(-np.cos(2 * t))
            assert var == pytest.approx(np.sin(2 * t) ** 2, abs=1e-14)

    def test_eigenstate_zero_variance(self, problem6):
        for v in momentum(problem6):
            e, var = energy_and_variance(v, problem6.hamiltonian)
            assert e == pytest.approx(-2.25, abs=1e-12)
            assert abs(var) < 1e-12


class TestOverlapMatrix:
    def test_orthonormal(self, problem4):
        sigma, frob = exact_overlap_matrix(momentum(problem4))
        assert frob == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(sigma, np.eye(2), atol=1e-14)

    def test_identical_pair(self):
        v = random_unit(np.random.default_rng(0), 5)
        _, frob = exact_overlap_matrix(np.stack([v, v]))
        assert frob == pytest.approx(np.sqrt(2))


class TestProjection:
    def test_exact_ground_space(self, problem6):
        ed = exact_diagonalize(problem6.hamiltonian)
        pm = projection_metrics(ed.ground_vectors, ed.ground_vectors.T)
        np.testing.assert_allclose(pm.fidelities, 1.0, atol=1e-12)
        assert (pm.rank, pm.g, pm.d_eff) == (2, 2, 2)
        assert pm.kappa == pytest.approx(1.0)

    def test_orthogonal_complement(self, problem4):
        ed = exact_diagonalize(problem4.hamiltonian)
        v0 = ed.ground_vectors
        q, _ = np.linalg.qr(np.hstack([v0, np.eye(6)]))
        psi = q[:, 2:4].T
        pm = projection_metrics(v0, psi)
        np.testing.assert_allclose(pm.fidelities, 0.0, atol=1e-14)
        assert pm.rank == 0 and pm.d_eff == 0

    def test_collinear_heads(self, problem4):
        ed = exact_diagonalize(problem4.hamiltonian)
        v = ed.ground_vectors[:, 0]
        pm = projection_metrics(ed.ground_vectors, np.stack([v, v]))
        assert pm.rank == 1
        assert pm.d_eff == 1
        assert pm.kappa == float("inf") or pm.kappa > 1e12

    @given(seeds, st.integers(1, 4))
    def test_fidelity_matches_projector(self, seed, k):
        p = Problem.build(4)
        rng = np.random.default_rng(seed)
        v0 = exact_diagonalize(p.hamiltonian).ground_vectors
        psi = np.stack([random_unit(rng, 6) for _ in range(k)])
        pm = projection_metrics(v0, psi)
        proj = v0 @ v0.conj().T
        direct = np.array([np.vdot(s, proj @ s).real for s in psi])
        np.testing.assert_allclose(pm.fidelities, direct, atol=1e-12)
        assert np.all((pm.fidelities >= -1e-12) & (pm.fidelities <= 1 + 1e-12))

    @given(seeds, st.integers(1, 4))
    def test_singular_values_bounded_for_orthonormal_heads(self, seed, k):
        p = Problem.build(4)
        v0 = exact_diagonalize(p.hamiltonian).ground_vectors
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.normal(size=(6, k)) + 1j * rng.normal(size=(6, k)))
        pm = projection_metrics(v0, q.T)
        assert np.all(pm.singular_values <= 1 + 1e-10)

    def test_empty_ground_space(self):
        with pytest.raises(DiagnosticsError):
            projection_metrics(np.zeros((4, 0)), np.eye(4)[:1])

    def test_report_json_keys(self, problem4):
        ens = construct_representing_ensemble(momentum(problem4), 2)
        rep = ground_space_report(ens, problem4).to_json()
        assert rep["E0"] == pytest.approx(-1.5)
        assert rep["F_min"] == pytest.approx(1.0)
        assert rep["d_eff"] == 2 and rep["rank"] == 2
        assert {"Ebar", "maxVar", "F_mean", "F_std", "sigma_min", "kappa", "frob_dev"} <= set(rep)


class TestRank:
    def test_numerical_rank(self):
        assert numerical_rank(np.zeros((3, 3))) == 0
        assert numerical_rank(np.diag([1.0, 1e-9, 0.0])) == 1
        assert numerical_rank(np.diag([1.0, 1e-7])) == 2

    def test_four_site_momentum_pair(self, problem4):
        # On the common support the symmetric and antisymmetric combinations
        # differ by sign only, so the phase of one is constant on each half of
        # the support and the other's phase is an affine copy of it.
        rep = rank_analysis(momentum(problem4), problem4.basis)
        assert (rep.r_g, rep.r_omega, rep.r_both) == (1, 2, 2)
        assert rep.support_size == 4
        assert rep.h_star == 1

    @pytest.mark.parametrize("n", [6, 8])
    def test_momentum_pair(self, n):
        p = Problem.build(n)
        rep = rank_analysis(momentum(p), p.basis)
        assert (rep.r_g, rep.r_omega, rep.r_both) == (1, 3, 3)
        assert rep.h_star == 2

    def test_dimer_pair_common_support(self, problem6):
        rep = rank_analysis(np.stack(build_dimer_states(problem6.basis)), problem6.basis)
        assert rep.support_size == 2
        assert rep.r_both <= 3

    def test_single_uniform_state(self):
        rep = rank_analysis(np.ones((1, 10)))
        assert (rep.r_g, rep.r_omega, rep.r_both) == (1, 1, 1)
        assert rep.h_star == 0

    def test_no_common_support(self):
        with pytest.raises(RepresentabilityError):
            rank_analysis(np.array([[1.0, 0.0], [0.0, 1.0]]))

    @given(seeds, st.integers(1, 4), st.integers(3, 20))
    def test_generic_targets_full_rank(self, seed, d, size):
        rng = np.random.default_rng(seed)
        targets = np.stack([random_unit(rng, size) for _ in range(d)])
        rep = rank_analysis(targets)
        assert rep.r_both == min(2 * d + 1, size)

    @given(seeds)
    def test_restricting_support_never_raises_rank(self, seed):
        rng = np.random.default_rng(seed)
        targets = np.stack([random_unit(rng, 12) for _ in range(2)])
        sub = np.sort(rng.choice(12, size=6, replace=False))
        assert rank_analysis(targets[:, sub]).r_both <= rank_analysis(targets).r_both

    def test_support_threshold(self):
        t = np.array([[1.0, 1e-12, 0.5], [1.0, 1.0, 1.0]])
        np.testing.assert_array_equal(common_support(t), [0, 2])


class TestConstruction:
    @pytest.mark.parametrize("n", [4, 6, 8])
    def test_momentum_round_trip(self, n):
        p = Problem.build(n)
        targets = momentum(p)
        ens = construct_representing_ensemble(targets, 2)
        logs = forward(ens, p).log_amps
        np.testing.assert_allclose(np.exp(logs), targets, atol=1e-12)

    @given(seeds, st.integers(1, 3), st.integers(0, 2))
    @settings(max_examples=25)
    def test_random_targets_round_trip(self, seed, d, extra):
        p = Problem.build(6)
        rng = np.random.default_rng(seed)
        targets = np.stack([random_unit(rng, len(p.basis)) for _ in range(d)])
        width = rank_analysis(targets).h_star + extra
        ens = construct_representing_ensemble(targets, width)
        np.testing.assert_allclose(np.exp(forward(ens, p).log_amps), targets, atol=1e-10)

    def test_partial_support_round_trip(self, problem6):
        targets = momentum(problem6)
        targets[:, 0] = 0.0
        targets[1, 3] = 0.0
        ens = construct_representing_ensemble(targets, 2)
        np.testing.assert_allclose(np.exp(forward(ens, problem6).log_amps), targets, atol=1e-12)

    def test_below_minimal_width(self, problem6):
        with pytest.raises(RepresentabilityError):
            construct_representing_ensemble(momentum(problem6), 1)

    def test_four_site_width_one_suffices(self, problem4):
        ens = construct_representing_ensemble(momentum(problem4), 1)
        np.testing.assert_allclose(np.exp(forward(ens, problem4).log_amps), momentum(problem4), atol=1e-12)


class TestAffineRank:
    def test_random_single_trunk_instances(self, problem6):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            ens = init_ensemble(6, 3, 8, Mode.ST_MH, rng, head_scale=1.0)
            res = affine_rank_bound_check(ens, problem6)
            assert res.bound == 4
            assert res.holds

    def test_bound_is_tight_for_generic_heads(self, problem6):
        rng = np.random.default_rng(0)
        ens = init_ensemble(6, 3, 8, Mode.ST_MH, rng, head_scale=1.0)
        ens.heads.beta[:] = rng.normal(size=8)
        assert affine_rank_bound_check(ens, problem6).rank == 4

    def test_offset_only_differences(self, problem4):
        ens = init_ensemble(4, 3, 3, Mode.ST_MH, np.random.default_rng(0), head_scale=0.0)
        ens.heads.beta[:] = [0.0, 0.3, -1.2]
        assert affine_rank_bound_check(ens, problem4).rank == 1

    def test_rejects_multi_trunk(self, problem4):
        ens = init_ensemble(4, 3, 2, Mode.MT_MH, np.random.default_rng(0))
        with pytest.raises(ValueError):
            affine_rank_bound_check(ens, problem4)


def test_tolerance_band_wrapper(problem4):
    ens = init_ensemble(4, 4, 2, Mode.ST_MH, np.random.default_rng(0), head_scale=0.5)
    logs = forward(ens, problem4).log_amps
    batch = sample_mixture(logs, problem4.basis, SamplerConfig(n_samples=64))
    tau = tolerance_band(batch, logs[:, problem4.basis.lookup[batch.configs]])
    assert np.isfinite(tau) and tau >= 0
