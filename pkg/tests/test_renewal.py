import warnings

import numpy as np
import pytest

from elapsednet.fixedpoint import PicardError, damped_fixed_point
from elapsednet.grids import AgeGrid, ConnectivityKernel, DensityField, SpatialGrid, norms
from elapsednet.models import FiringRateModel, InputModel, LearningRule, SigmaMap
from elapsednet.renewal import (
    CFLError,
    NegativeDensityError,
    PicardOptions,
    RunRecord,
    SolverConfig,
    characteristics_oracle,
    large_input_run,
    linear_step,
    nonlinear_run,
)


def step_model(p_inf=1.0, sigma_kind="identity", sigma_max=None):
    return FiringRateModel(kind="step", p_inf=p_inf,
                           sigma=SigmaMap(sigma_kind, sigma_max=sigma_max))


def transport_model():
    # threshold far above the grid: the rate vanishes everywhere sampled
    return step_model(sigma_kind="constant", sigma_max=1e9)


class TestDampedFixedPoint:
    def test_linear_contraction(self):
        res = damped_fixed_point(lambda x: 0.5 * x + 1.0, np.array([0.0]), tol=1e-13)
        assert res.converged
        assert res.value[0] == pytest.approx(2.0, abs=1e-12)

    def test_oscillating_map_needs_damping(self):
        # slope -3 at the fixed point: undamped Picard diverges
        res = damped_fixed_point(lambda x: -3.0 * x + 4.0, np.array([0.0]),
                                 tol=1e-12, max_iters=500, damping=1.0)
        assert res.converged
        assert res.value[0] == pytest.approx(1.0, abs=1e-11)

    def test_reports_nonconvergence(self):
        res = damped_fixed_point(lambda x: x + 1.0, np.array([0.0]), tol=1e-12,
                                 max_iters=30)
        assert not res.converged
        assert res.residual == pytest.approx(1.0)


class TestLinearStep:
    def test_pure_transport_shifts_exactly(self):
        age, space = AgeGrid(ns=200, s_max=10.0), SpatialGrid(nx=3)
        n = DensityField.from_function(age, space,
                                       lambda s, x: np.exp(-20 * (s - 3.0) ** 2) + 0 * x)
        cfg = SolverConfig(dt=age.ds)  # lam = 1: exact shift by one node
        masses = [n.mass()]
        for _ in range(40):
            n, N = linear_step(n, np.zeros(3), transport_model(), cfg)
            assert N.max() == 0.0
            masses.append(n.mass())
        expected = np.exp(-20 * (age.nodes - 40 * age.ds - 3.0) ** 2)
        expected[age.nodes < 40 * age.ds] = 0.0
        interior = slice(0, age.ns - 1)  # last node absorbs the outflow
        assert np.abs(n.values[interior, 0] - expected[interior]).max() < 1e-13
        assert np.abs(np.diff(masses, axis=0)).max() < 1e-12

    def test_exact_mass_conservation_at_half_cfl(self):
        age, space = AgeGrid(ns=400, s_max=20.0), SpatialGrid(nx=4)
        n = DensityField.from_function(age, space,
                                       lambda s, x: (x + 1) * np.exp(-s * (x + 1)))
        n.normalize_mass(1.0)
        cfg = SolverConfig(dt=age.ds / 2)
        S = np.full(4, 0.8)
        for _ in range(500):
            n, _ = linear_step(n, S, step_model(), cfg)
        assert np.abs(n.mass() - 1.0).max() <= 1e-10
        assert n.min_value() >= -1e-12

    def test_discrete_equilibrium_near_exponential(self):
        # with threshold 0 the continuum equilibrium is e^{-s}; the scheme
        # must stay within O(ds) of it after relaxation
        age, space = AgeGrid(ns=160, s_max=16.0), SpatialGrid(nx=2)
        n = DensityField.from_function(age, space, lambda s, x: np.exp(-s) + 0 * x)
        cfg = SolverConfig(dt=age.ds / 2)
        model = step_model(sigma_kind="constant", sigma_max=0.0)
        for _ in range(1000):
            n, _ = linear_step(n, np.zeros(2), model, cfg)
        interior = age.nodes < 12.0
        err = np.abs(n.values[interior, 0] - np.exp(-age.nodes[interior])).max()
        assert err <= age.ds

    def test_cfl_guard(self):
        age, space = AgeGrid(ns=100, s_max=10.0), SpatialGrid(nx=2)
        n = DensityField.from_function(age, space, lambda s, x: np.exp(-s) + 0 * x)
        cfg = SolverConfig(dt=age.ds)  # lam = 1 plus discharge: positivity fails
        with pytest.raises(CFLError):
            linear_step(n, np.zeros(2), step_model(sigma_kind="constant", sigma_max=0.0), cfg)
        with pytest.raises(CFLError):
            SolverConfig(dt=3 * age.ds).validate(age, step_model())

    def test_negative_density_sentinel(self):
        age, space = AgeGrid(ns=100, s_max=10.0), SpatialGrid(nx=1)
        values = np.zeros((100, 1))
        values[50] = 1.0  # isolated spike: unguarded lam = 1 with discharge
        n = DensityField(values, age, space)
        cfg = SolverConfig(dt=age.ds, cfl_guard=False)
        model = step_model(sigma_kind="constant", sigma_max=0.0)
        with pytest.raises(NegativeDensityError):
            for _ in range(5):
                n, _ = linear_step(n, np.zeros(1), model, cfg)


class TestCharacteristicsOracle:
    def test_pure_transport_exact(self):
        age, space = AgeGrid(ns=100, s_max=10.0), SpatialGrid(nx=2)
        n0 = DensityField.from_function(age, space,
                                        lambda s, x: np.exp(-10 * (s - 2.0) ** 2) + 0 * x)
        out = characteristics_oracle(n0, np.zeros(2), transport_model(), t=1.0, refine=4)
        shift = int(round(1.0 / age.ds))
        expected = np.zeros_like(n0.values)
        expected[shift:] = n0.values[:-shift]
        np.testing.assert_allclose(out.values, expected, atol=1e-14)

    def test_relaxes_to_stationary_profile(self):
        age, space = AgeGrid(ns=400, s_max=16.0), SpatialGrid(nx=2)
        model = step_model(sigma_kind="constant", sigma_max=0.0)
        n0 = DensityField.from_function(age, space, lambda s, x: np.exp(-s) + 0 * x)
        out = characteristics_oracle(n0, np.zeros(2), model, t=17.0, refine=4)
        assert np.abs(out.values - np.exp(-age.nodes)[:, None]).max() < 5e-4

    def test_piecewise_constant_path(self):
        # switching the stimulation mid-run must match a single long piece
        # when the two pieces carry the same value
        age, space = AgeGrid(ns=200, s_max=10.0), SpatialGrid(nx=2)
        model = step_model()
        n0 = DensityField.from_function(age, space,
                                        lambda s, x: np.exp(-((s - 1.0) / 0.3) ** 2) + 0 * x)
        S = np.full(2, 1.5)
        one = characteristics_oracle(n0, S, model, t=1.0, refine=4)
        two = characteristics_oracle(n0, [(S, 0.5), (S, 0.5)], model, t=1.0, refine=4)
        np.testing.assert_allclose(one.values, two.values, atol=1e-12)

    def test_matches_closed_form_for_unit_rate(self):
        # with p = 1 for all s > 0 the activity equals the conserved mass m0,
        # so n(t, s) = n0(s - t) e^{-t} for s >= t and m0 e^{-s} below; the
        # datum e^{-s} + c (s + 1/2) e^{-2s} has n0(0) = m0 = 1 + c/2 for any
        # c, so the solution is continuous across the s = t contact line
        age, space = AgeGrid(ns=480, s_max=12.0), SpatialGrid(nx=2)
        model = step_model(sigma_kind="constant", sigma_max=0.0)
        c = 0.8

        def datum(s):
            return np.exp(-s) + c * (s + 0.5) * np.exp(-2 * s)

        n0 = DensityField.from_function(age, space, lambda s, x: datum(s) + 0 * x)
        t = 1.5
        out = characteristics_oracle(n0, np.zeros(2), model, t=t, refine=8)
        s = age.nodes
        exact = np.where(s >= t, datum(s - t) * np.exp(-t),
                         (1 + c / 2) * np.exp(-s))
        assert np.abs(out.values[:, 0] - exact).max() < 1e-4

    def test_upwind_converges_to_oracle(self):
        # two-level refinement of the boundary-compatible bump datum
        model = step_model()
        errs = []
        for ns in (600, 1200):
            age, space = AgeGrid(ns=ns, s_max=6.0), SpatialGrid(nx=3)
            n0 = DensityField.from_function(
                age, space, lambda s, x: np.exp(-((s - 0.55) / 0.12) ** 2) + 0 * x
            )
            S = np.array([1.2, 1.5, 1.8])
            cfg = SolverConfig(dt=age.ds / 2)
            f = n0.copy()
            for _ in range(int(round(1.0 / cfg.dt))):
                f, _ = linear_step(f, S, model, cfg)
            oracle = characteristics_oracle(n0, S, model, t=1.0, refine=8)
            errs.append(norms(f, oracle)["L1_sx"])
        assert errs[0] / errs[1] >= 2.0 ** 0.8


class TestNonlinearRun:
    def test_decoupled_converges_to_survival_activity(self):
        # gamma = 0 and w0 = 0: S = I and N -> g F(I) = 1/(1+I)
        age, space = AgeGrid(ns=400, s_max=20.0), SpatialGrid(nx=8)
        n0 = DensityField.from_function(age, space,
                                        lambda s, x: (x + 1) * np.exp(-s * (x + 1)))
        n0.normalize_mass(1.0)
        w0 = ConnectivityKernel.constant(space, 0.0)
        rec = nonlinear_run(
            n0, w0, step_model(), LearningRule("hebbian", 0.0),
            InputModel("constant", amplitude=1.0), SolverConfig(dt=age.ds / 2),
            t_end=20.0, save_every=1.0,
        )
        assert np.abs(rec.final_N() - 0.5).max() <= 1e-3
        assert np.abs(rec.final_S() - 1.0).max() <= 1e-12

    def test_gamma_zero_kernel_decays_exactly(self):
        age, space = AgeGrid(ns=200, s_max=20.0), SpatialGrid(nx=4)
        n0 = DensityField.from_function(age, space, lambda s, x: np.exp(-s) + 0 * x)
        n0.normalize_mass(1.0)
        w0 = ConnectivityKernel.from_function(space,
                                              lambda x, y: 3.0 * np.exp(-(x - y) ** 2))
        rec = nonlinear_run(
            n0, w0, step_model(), LearningRule("hebbian", 0.0),
            InputModel("constant", amplitude=1.0), SolverConfig(dt=age.ds / 2),
            t_end=2.0, save_every=1.0, snapshot_times=(2.0,),
        )
        # the exponential integrator with a zero target is exact per step
        np.testing.assert_allclose(rec.w_snapshot_at(2.0),
                                   np.exp(-2.0) * w0.values, rtol=1e-12)

    def test_uniform_bounds(self):
        age, space = AgeGrid(ns=400, s_max=20.0), SpatialGrid(nx=8)
        n0 = DensityField.from_function(age, space,
                                        lambda s, x: (x + 1) * np.exp(-s * (x + 1)))
        n0.normalize_mass(1.0)
        w0 = ConnectivityKernel.from_function(space,
                                              lambda x, y: 10 * np.exp(-10 * (x - y) ** 2))
        model = step_model()
        rec = nonlinear_run(
            n0, w0, model, LearningRule("hebbian", 1.0),
            InputModel("constant", amplitude=1.0), SolverConfig(dt=age.ds / 2),
            t_end=5.0, save_every=0.25,
        )
        g_max = 1.0
        assert rec.N_series.max() <= model.p_inf * g_max + 1e-9
        assert max(w.max() for w in rec.w_snapshots.values()) <= 10.0 + 1e-9
        assert np.abs(rec.mass_series - 1.0).max() <= 1e-10

    def test_lagged_vs_iterate_agree_to_first_order(self):
        age, space = AgeGrid(ns=200, s_max=20.0), SpatialGrid(nx=6)
        n0 = DensityField.from_function(age, space,
                                        lambda s, x: (x + 1) * np.exp(-s * (x + 1)))
        n0.normalize_mass(1.0)
        w0 = ConnectivityKernel.constant(space, 0.5)
        model = step_model()
        rule = LearningRule("hebbian", 1.0)
        I = InputModel("constant", amplitude=1.0)
        finals = {}
        for mode in ("lagged", "iterate"):
            cfg = SolverConfig(dt=age.ds / 2,
                               picard=PicardOptions(mode=mode, tol=1e-12))
            rec = nonlinear_run(n0.copy(), w0.copy(), model, rule, I, cfg,
                                t_end=2.0, save_every=0.5)
            finals[mode] = rec.final_S()
        diff = np.abs(finals["lagged"] - finals["iterate"]).max()
        assert diff <= 10.0 * (age.ds / 2)

    def test_inhomogeneous_mass_profile_conserved(self):
        from elapsednet.config import build_experiment
        from elapsednet.presets import get_preset

        exp = build_experiment(get_preset("g1i1v").config)
        rec = nonlinear_run(exp.n0, exp.w0, exp.model, exp.rule, exp.input_model,
                            exp.solver, t_end=2.0, save_every=0.25)
        assert np.abs(rec.mass_series - exp.g[None, :]).max() <= 1e-10

    @pytest.mark.filterwarnings("ignore:initial stimulation fixed point")
    def test_iterate_nonconvergence_reports_residual(self):
        age, space = AgeGrid(ns=100, s_max=20.0), SpatialGrid(nx=4)
        n0 = DensityField.from_function(age, space, lambda s, x: np.exp(-s) + 0 * x)
        n0.normalize_mass(1.0)
        w0 = ConnectivityKernel.constant(space, 8.0)
        cfg = SolverConfig(dt=age.ds / 2,
                           picard=PicardOptions(mode="iterate", tol=1e-14,
                                                max_iters=2, damping=1.0))
        with pytest.raises(PicardError) as err:
            nonlinear_run(n0, w0, step_model(), LearningRule("hebbian", 1.0),
                          InputModel("constant", amplitude=1.0), cfg,
                          t_end=10 * cfg.dt)
        assert err.value.residual > 0

    def test_t_end_must_be_dt_multiple(self):
        age, space = AgeGrid(ns=100, s_max=10.0), SpatialGrid(nx=2)
        n0 = DensityField.from_function(age, space, lambda s, x: np.exp(-s) + 0 * x)
        n0.normalize_mass(1.0)
        w0 = ConnectivityKernel.constant(space, 0.0)
        with pytest.raises(ValueError):
            nonlinear_run(n0, w0, step_model(), LearningRule("hebbian", 0.0),
                          InputModel("constant", amplitude=1.0),
                          SolverConfig(dt=age.ds / 2), t_end=1.0 + 0.3 * age.ds)


class TestSmoothRate:
    @staticmethod
    def smooth_model(theta=0.2):
        # ramp saturates by sigma + theta; the reachable thresholds stay
        # below s_star so the floor never overrides the ramp here
        return FiringRateModel(kind="smooth", p_inf=1.0, sigma=SigmaMap("identity"),
                               p_star=1.0, s_star=16.0, theta=theta,
                               dpdS_bound=1.5 / theta)

    def test_run_invariants(self):
        age, space = AgeGrid(ns=400, s_max=20.0), SpatialGrid(nx=8)
        n0 = DensityField.from_function(age, space,
                                        lambda s, x: (x + 1) * np.exp(-s * (x + 1)))
        n0.normalize_mass(1.0)
        w0 = ConnectivityKernel.constant(space, 0.5)
        rec = nonlinear_run(n0, w0, self.smooth_model(), LearningRule("hebbian", 0.5),
                            InputModel("constant", amplitude=1.0),
                            SolverConfig(dt=age.ds / 2), t_end=5.0, save_every=0.5)
        # the ramp vanishes at s = 0 (sigma >= 1 here), so the boundary
        # bookkeeping stays exact and mass is conserved to round-off
        assert np.abs(rec.mass_series - 1.0).max() <= 1e-10
        assert rec.N_series.max() <= 1.0 + 1e-9
        assert rec.N_series.min() >= 0.0

    def test_narrow_ramp_tracks_step_dynamics(self):
        age, space = AgeGrid(ns=400, s_max=20.0), SpatialGrid(nx=4)
        n0 = DensityField.from_function(age, space,
                                        lambda s, x: (x + 1) * np.exp(-s * (x + 1)))
        n0.normalize_mass(1.0)
        w0 = ConnectivityKernel.constant(space, 0.5)
        rule = LearningRule("hebbian", 0.5)
        I = InputModel("constant", amplitude=1.0)
        cfg = SolverConfig(dt=age.ds / 2)
        finals = {}
        for model in (self.smooth_model(theta=1e-3),
                      FiringRateModel(kind="step", p_inf=1.0, sigma=SigmaMap("identity"))):
            rec = nonlinear_run(n0.copy(), w0.copy(), model, rule, I, cfg,
                                t_end=10.0, save_every=1.0)
            finals[model.kind] = rec.final_S()
        # a ramp narrower than a cell is endpoint-sampled per interval, so
        # the smooth kind carries an O(ds) threshold offset the step kind's
        # fractional overlap avoids; measured 1.4e-3 on this grid
        assert np.abs(finals["smooth"] - finals["step"]).max() <= 3e-3


class TestRunRecord:
    def test_times_strictly_increasing(self):
        space, age = SpatialGrid(nx=2), AgeGrid(ns=4, s_max=1.0)
        with pytest.raises(ValueError):
            RunRecord(times=np.array([0.0, 0.0]), N_series=np.zeros((2, 2)),
                      S_series=np.zeros((2, 2)), mass_series=np.zeros((2, 2)),
                      w_mean_series=np.zeros(2), w_dev_series=np.zeros(2),
                      w_snapshots={}, n_snapshots={}, space=space, age=age)

    def test_snapshot_lookup_tolerates_rounding(self):
        space, age = SpatialGrid(nx=2), AgeGrid(ns=4, s_max=1.0)
        rec = RunRecord(times=np.array([0.0, 1.0]), N_series=np.zeros((2, 2)),
                        S_series=np.zeros((2, 2)), mass_series=np.zeros((2, 2)),
                        w_mean_series=np.zeros(2), w_dev_series=np.zeros(2),
                        w_snapshots={0.5000000000000001: np.eye(2)}, n_snapshots={},
                        space=space, age=age)
        np.testing.assert_array_equal(rec.w_snapshot_at(0.5), np.eye(2))
        with pytest.raises(KeyError):
            rec.w_snapshot_at(0.75)


class TestLargeInput:
    @staticmethod
    def _setup(sigma_kind, sigma_max, input_kind):
        age, space = AgeGrid(ns=320, s_max=16.0), SpatialGrid(nx=16)
        n0 = DensityField.from_function(age, space,
                                        lambda s, x: (x + 1) * np.exp(-s * (x + 1)))
        n0.normalize_mass(1.0)
        w0 = ConnectivityKernel.from_function(space,
                                              lambda x, y: 10 * np.exp(-10 * (x - y) ** 2))
        model = step_model(sigma_kind=sigma_kind, sigma_max=sigma_max)
        rule = LearningRule("hebbian", 1.0)
        I = InputModel(input_kind, amplitude=1.0)
        cfg = SolverConfig(dt=age.ds / 2)
        return n0, w0, model, rule, I, cfg

    def test_rejects_vanishing_input(self):
        n0, w0, model, rule, _, cfg = self._setup("bounded", 2.0, "constant")
        with pytest.raises(ValueError):
            large_input_run([1.0, 10.0], n0, w0, model, rule,
                            InputModel("constant", amplitude=0.0), cfg, t_end=1.0)

    def test_rejects_bad_k_list(self):
        n0, w0, model, rule, I, cfg = self._setup("bounded", 2.0, "constant")
        with pytest.raises(ValueError):
            large_input_run([10.0, 1.0], n0, w0, model, rule, I, cfg, t_end=1.0)

    def test_distance_decreases_with_k(self):
        n0, w0, model, rule, I, cfg = self._setup("bounded", 2.0, "sin_squared")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            study = large_input_run([1.0, 1000.0], n0, w0, model, rule, I, cfg,
                                    t_end=1.0, sample_times=(1.0,))
        assert study.distances[1, 0] < study.distances[0, 0]
        assert study.distances[1, 0] <= 1e-2

    def test_identity_sigma_activity_vanishes(self):
        n0, w0, model, rule, I, cfg = self._setup("identity", None, "constant")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            study = large_input_run([1.0, 10.0, 100.0], n0, w0, model, rule, I, cfg,
                                    t_end=1.0, sample_times=(1.0,))
        sups = [study.records[k].final_N().max() for k in (1.0, 10.0, 100.0)]
        assert sups[0] > sups[1] > sups[2]
