"""The slow-learning limit: density slaved to the kernel, kernel ODE in time.

When learning is much slower than the discharge dynamics the density relaxes
instantaneously, leaving per time step an algebraic fixed point

    S(x) = integral w(x, y) g(y) F(S(y)) dy + I(t, x),

the closed-form activity N = g F(S) and the kernel relaxation toward
gamma G(N(x), N(y)).  There is no transport step and hence no CFL
restriction; the kernel is advanced by the exact one-step exponential
formula.  The inner fixed point is solved by warm-started damped Picard;
it is a guaranteed contraction when ||w|| ||F'|| < 1 and merely damped
outside that regime.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .fixedpoint import PicardError, damped_fixed_point
from .grids import AgeGrid, ConnectivityKernel, DensityField
from .models import FiringRateModel, InputModel, LearningRule, lipschitz_F, survival_F
from .renewal import PicardOptions, RunRecord, SolverConfig, nonlinear_run


@dataclass
class LimitState:
    w: ConnectivityKernel
    S: np.ndarray
    N: np.ndarray
    uniqueness_certificate: bool

    def density(self, age: AgeGrid, model: FiringRateModel, g: np.ndarray) -> DensityField:
        """Reconstruct the slaved age profile (discrete mass normalized to g)."""
        hazard = model.cumulative_hazard(age.nodes, self.S)
        field = DensityField(np.exp(-hazard) * self.N[None, :], age, self.w.space)
        return field.normalize_mass(g)


def inner_fixed_point(
    w: ConnectivityKernel,
    g: np.ndarray,
    model: FiringRateModel,
    I_t: np.ndarray,
    S_guess: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iters: int = 500,
    damping: float = 1.0,
) -> np.ndarray:
    """Solve S = integral(w g F(S)) + I by damped Picard from S_guess."""
    wq = w.values * w.space.weights[None, :]
    gv = np.asarray(g, dtype=float)

    def apply_map(S: np.ndarray) -> np.ndarray:
        return wq @ (gv * np.asarray(survival_F(model, S))) + I_t

    start = I_t if S_guess is None else np.asarray(S_guess, dtype=float)
    result = damped_fixed_point(apply_map, start, tol, max_iters, damping)
    if not result.converged:
        raise PicardError(
            f"inner stimulation fixed point stalled at residual {result.residual:.3e} "
            f"(strong-kernel regime)",
            result.residual,
        )
    return result.value


def uniqueness_certificate(
    w0_max: float, gamma: float, model: FiringRateModel, S_lo: float, S_hi: float
) -> bool:
    """Sufficient uniqueness condition max(||w0||, gamma) ||F'|| < 1."""
    return max(w0_max, gamma) * lipschitz_F(model, S_lo, S_hi) < 1.0


def limit_run(
    w0: ConnectivityKernel,
    g: np.ndarray,
    model: FiringRateModel,
    rule: LearningRule,
    input_model: InputModel,
    age: AgeGrid,
    dt: float,
    t_end: float,
    save_every: float | None = None,
    snapshot_times: tuple[float, ...] = (),
    inner_tol: float = 1e-12,
    warn_certificate: bool = True,
) -> RunRecord:
    """Integrate the limit system: inner fixed point, then kernel relaxation."""
    space = w0.space
    I_vals = input_model.evaluate(space)
    g = np.asarray(g, dtype=float)
    S_lo = float(I_vals.min())
    S_hi = max(float(w0.values.max()), rule.gamma) * model.p_inf * float(g.max()) \
        + float(I_vals.max())
    if warn_certificate and not uniqueness_certificate(
        float(w0.values.max()), rule.gamma, model, S_lo, max(S_hi, S_lo + 1e-9)
    ):
        warnings.warn(
            "limit-system uniqueness certificate max(||w0||, gamma) ||F'|| < 1 fails; "
            "the damped inner iteration reports what it finds",
            stacklevel=2,
        )

    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end = {t_end} is not a multiple of dt = {dt}")
    if save_every is None:
        save_every = t_end
    stride = max(1, int(round(save_every / dt)))
    snap_steps = {int(round(ts / dt)) for ts in snapshot_times}
    snap_steps.add(n_steps)  # the final kernel is always kept
    decay = np.exp(-dt)
    xw = space.weights

    w = w0.values.copy()
    S = inner_fixed_point(ConnectivityKernel(w, space), g, model, I_vals,
                          S_guess=None, tol=inner_tol, damping=0.5)
    N = g * np.asarray(survival_F(model, S))

    times, N_rows, S_rows, mass_rows, wm_rows, wd_rows = [], [], [], [], [], []
    w_snaps: dict[float, np.ndarray] = {}
    n_snaps: dict[float, np.ndarray] = {}

    def record(step: int) -> None:
        t = step * dt
        times.append(t)
        N_rows.append(N.copy())
        S_rows.append(S.copy())
        mass_rows.append(g.copy())
        mean = float(xw @ w @ xw) / space.length**2
        wm_rows.append(mean)
        wd_rows.append(float(np.abs(w - mean).max()))
        if step in snap_steps:
            w_snaps[t] = w.copy()

    record(0)
    wq_holder = ConnectivityKernel(w, space)
    for step in range(1, n_steps + 1):
        target = rule.gamma * rule.evaluate(N[:, None], N[None, :])
        w = decay * w + (1.0 - decay) * target
        wq_holder.values = w
        S = inner_fixed_point(wq_holder, g, model, I_vals, S_guess=S,
                              tol=inner_tol, damping=1.0)
        N = g * np.asarray(survival_F(model, S))
        if step % stride == 0 or step == n_steps or step in snap_steps:
            record(step)

    return RunRecord(
        times=np.asarray(times),
        N_series=np.asarray(N_rows),
        S_series=np.asarray(S_rows),
        mass_series=np.asarray(mass_rows),
        w_mean_series=np.asarray(wm_rows),
        w_dev_series=np.asarray(wd_rows),
        w_snapshots=w_snaps,
        n_snapshots=n_snaps,
        space=space,
        age=age,
    )


def final_limit_state(
    record: RunRecord, w0_max: float, rule: LearningRule, model: FiringRateModel
) -> LimitState:
    S = record.final_S()
    N = record.final_N()
    w_final = record.w_snapshot_at(record.times[-1])
    S_lo, S_hi = float(S.min()), float(S.max()) + 1e-9
    return LimitState(
        w=ConnectivityKernel(w_final, record.space),
        S=S,
        N=N,
        uniqueness_certificate=uniqueness_certificate(w0_max, rule.gamma, model, S_lo, S_hi),
    )


@dataclass
class EpsilonStudy:
    epsilons: tuple[float, ...]
    T: float
    dist_n: np.ndarray  # L1 over (t, s, x)
    dist_N: np.ndarray  # L1 over (t, x)
    fitted_order: float
    limit_record: RunRecord
    records: dict[float, RunRecord]


def epsilon_study(
    eps_list,
    n0: DensityField,
    w0: ConnectivityKernel,
    model: FiringRateModel,
    rule: LearningRule,
    input_model: InputModel,
    T: float,
    observe_stride: int = 2,
    picard=None,
) -> EpsilonStudy:
    """Distances between the rescaled runs and the limit solution on [0, T].

    All epsilon runs share the same grids so scheme error cancels in the
    ratios; each run uses dt = eps * ds / 2 (the exact-mass step) and the
    limit reference is integrated with the smallest of those steps.  The
    time integrals are accumulated on the fly every `observe_stride` solver
    steps, which resolves the width-O(eps) initial layer at every epsilon
    without storing density snapshots.  The reported order is the log-log
    slope of the density distance against epsilon.
    """
    eps = tuple(float(e) for e in eps_list)
    if not eps or any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError(f"epsilons must be positive and decreasing, got {eps}")
    age, space = n0.age, n0.space
    g = n0.mass()

    dt_limit = min(eps) * age.ds / 2.0
    limit_rec = limit_run(
        w0.copy(), g, model, rule, input_model, age, dt_limit, T,
        save_every=dt_limit, snapshot_times=(), warn_certificate=False,
    )

    dist_n = np.zeros(len(eps))
    dist_N = np.zeros(len(eps))
    records: dict[float, RunRecord] = {}
    xw = space.weights
    aw = age.weights

    for i, e in enumerate(eps):
        opts = picard if picard is not None else PicardOptions()
        dt = e * age.ds / 2.0
        cfg = SolverConfig(dt=dt, epsilon=e, picard=opts)
        acc = _DistanceAccumulator(limit_rec, model, age, space, g, xw, aw)
        rec = nonlinear_run(
            n0.copy(), w0.copy(), model, rule, input_model, cfg, T,
            save_every=T, observer=acc, observe_stride=observe_stride,
        )
        records[e] = rec
        dist_n[i], dist_N[i] = acc.totals()

    if len(eps) >= 2:
        slope = float(np.polyfit(np.log(eps), np.log(np.maximum(dist_n, 1e-300)), 1)[0])
    else:
        slope = float("nan")
    return EpsilonStudy(eps, T, dist_n, dist_N, slope, limit_rec, records)


class _DistanceAccumulator:
    """Trapezoid-in-time accumulation of |N - N_bar| and |n - n_bar| integrals."""

    def __init__(self, limit_rec: RunRecord, model, age, space, g, xw, aw):
        self.limit_rec = limit_rec
        self.model = model
        self.age = age
        self.space = space
        self.g = g
        self.xw = xw
        self.aw = aw
        self.samples_t: list[float] = []
        self.samples_N: list[float] = []
        self.samples_n: list[float] = []

    def __call__(self, t: float, values: np.ndarray, N: np.ndarray, S: np.ndarray) -> None:
        steps = int(round(t / (self.limit_rec.times[1] - self.limit_rec.times[0])))
        steps = min(steps, len(self.limit_rec.times) - 1)
        N_bar = self.limit_rec.N_series[steps]
        S_bar = self.limit_rec.S_series[steps]
        hz = self.model.cumulative_hazard(self.age.nodes, S_bar)
        prof = np.exp(-hz)
        prof *= self.g / (self.aw @ prof)  # slaved profile with discrete mass g
        self.samples_t.append(t)
        self.samples_N.append(float(self.xw @ np.abs(N - N_bar)))
        self.samples_n.append(float(self.xw @ (self.aw @ np.abs(values - prof))))

    def totals(self) -> tuple[float, float]:
        t = np.asarray(self.samples_t)
        w = np.zeros(len(t))
        dt = np.diff(t)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
        return float(w @ self.samples_n), float(w @ self.samples_N)
