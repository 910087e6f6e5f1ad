"""Firing-rate families p(s, S), the survival normalization F, learning rules
G and external inputs.

Two rate families are provided.  The step family fires at the full rate
p_inf once the elapsed time exceeds a stimulation-dependent threshold
sigma(S); the smooth family replaces the jump with a clamped-cubic ramp of
width theta and is floored so the lower bound p >= p_star for s > s_star
holds by construction.  F(S) is the reciprocal mean inter-discharge time at
frozen stimulation S and links S to the stationary activity via N = g F(S).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grids import AgeGrid, ConnectivityKernel, SpatialGrid


class ModelError(ValueError):
    """Invalid model descriptor."""


class QuadratureDomainError(RuntimeError):
    """The age domain is too short to resolve a survival integral."""


@dataclass(frozen=True)
class SigmaMap:
    """Firing threshold sigma(S): identity, bounded min(S+, sigma_max) or constant."""

    kind: str = "identity"
    sigma_max: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "bounded", "constant"):
            raise ModelError(f"unknown sigma kind: {self.kind!r}")
        if self.kind in ("bounded", "constant"):
            if self.sigma_max is None or self.sigma_max < 0:
                raise ModelError(f"sigma kind {self.kind!r} needs sigma_max >= 0")

    def __call__(self, S):
        S = np.asarray(S, dtype=float)
        if self.kind == "identity":
            out = np.maximum(S, 0.0)
        elif self.kind == "bounded":
            out = np.minimum(np.maximum(S, 0.0), self.sigma_max)
        else:
            out = np.full_like(S, self.sigma_max)
        return float(out) if out.ndim == 0 else out

    @property
    def lipschitz(self) -> float:
        return 0.0 if self.kind == "constant" else 1.0

    def sup_over(self, s_lo: float, s_hi: float) -> float:
        """sup sigma(S) for S in [s_lo, s_hi] (sigma is nondecreasing)."""
        return self(max(s_lo, s_hi))

    def limit_value(self) -> float:
        """sigma(S) as S -> infinity (inf for the identity map)."""
        return self(np.inf)


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


@dataclass(frozen=True)
class FiringRateModel:
    """Discharge hazard p(s, S) with its structural constants.

    kind 'step':    p = p_inf * 1_{s > sigma(S)}  (p_star = p_inf, s_star = sup sigma)
    kind 'smooth':  p = max(p_inf * ramp((s - sigma(S)) / theta), p_star * 1_{s > s_star})
    """

    kind: str
    p_inf: float
    sigma: SigmaMap
    p_star: float | None = None
    s_star: float | None = None
    theta: float | None = None
    dpdS_bound: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("step", "smooth"):
            raise ModelError(f"unknown rate kind: {self.kind!r}")
        if self.p_inf < 0:
            raise ModelError(f"p_inf must be nonnegative, got {self.p_inf}")
        if self.kind == "smooth":
            if self.theta is None or self.theta <= 0:
                raise ModelError("smooth rate needs a positive smoothing width theta")
            if self.p_star is None or self.s_star is None:
                raise ModelError("smooth rate needs explicit p_star and s_star")
        if self.p_star is not None and not 0 <= self.p_star <= self.p_inf:
            raise ModelError(f"p_star must lie in [0, p_inf], got {self.p_star}")

    @property
    def lower_rate(self) -> float:
        return self.p_inf if self.p_star is None else self.p_star

    def pulse_age(self, s_lo: float, s_hi: float) -> float:
        """s_star valid on the reachable stimulation interval [s_lo, s_hi]."""
        if self.s_star is not None:
            return self.s_star
        return self.sigma.sup_over(s_lo, s_hi)

    def evaluate(self, s, S):
        """p(s, S); total function with values in [0, p_inf]."""
        s = np.asarray(s, dtype=float)
        sig = self.sigma(S)
        if self.kind == "step":
            out = np.where(s > sig, self.p_inf, 0.0)
        else:
            out = self.p_inf * _smoothstep((s - sig) / self.theta)
            floor = np.where(s > self.s_star, self.p_star, 0.0)
            out = np.maximum(out, floor)
        return float(out) if np.ndim(out) == 0 else out

    def interval_rates(self, age: AgeGrid, S) -> np.ndarray:
        """Mean rate over each age interval (s_{i-1}, s_i], shape (ns-1, [nx]).

        For the step kind the cell containing sigma(S) gets the exact
        fractional overlap of the interval with (sigma, inf), which removes
        the staircase dependence of the activity on sigma.
        """
        edges = age.nodes
        sig = np.asarray(self.sigma(S), dtype=float)
        lo, hi = edges[:-1], edges[1:]
        if self.kind == "step":
            if sig.ndim == 0:
                frac = np.clip((hi - sig) / age.ds, 0.0, 1.0)
            else:
                frac = np.clip((hi[:, None] - sig[None, :]) / age.ds, 0.0, 1.0)
            return self.p_inf * frac
        p = self.evaluate(edges[:, None] if sig.ndim else edges, S)
        return 0.5 * (p[:-1] + p[1:])

    def node_rates(self, age: AgeGrid, S) -> np.ndarray:
        """Per-node rates for trapezoid quadratures of the discharge integral."""
        sig = np.asarray(self.sigma(S), dtype=float)
        s = age.nodes
        if self.kind == "step":
            lo = np.maximum(s - 0.5 * age.ds, 0.0)
            hi = s + 0.5 * age.ds
            if sig.ndim == 0:
                frac = np.clip((hi - sig) / (hi - lo), 0.0, 1.0)
            else:
                frac = np.clip((hi[:, None] - sig[None, :]) / (hi - lo)[:, None], 0.0, 1.0)
            return self.p_inf * frac
        return self.evaluate(s[:, None] if sig.ndim else s, S)

    def cumulative_hazard(self, s: np.ndarray, S) -> np.ndarray:
        """Integral of p(u, S) for u in [0, s]; closed form for the step kind."""
        s = np.asarray(s, dtype=float)
        sig = np.asarray(self.sigma(S), dtype=float)
        if self.kind == "step":
            if sig.ndim == 0:
                return self.p_inf * np.maximum(s - sig, 0.0)
            return self.p_inf * np.maximum(s[:, None] - sig[None, :], 0.0)
        p = self.evaluate(s[:, None] if sig.ndim else s, S)
        out = np.zeros_like(p)
        ds = np.diff(s)
        steps = 0.5 * (p[1:] + p[:-1]) * (ds[:, None] if p.ndim == 2 else ds)
        out[1:] = np.cumsum(steps, axis=0)
        return out

    def limit_model(self) -> "FiringRateModel":
        """The frozen large-stimulation rate p(s, inf) as a constant-threshold model."""
        sig_inf = self.sigma.limit_value()
        return FiringRateModel(
            kind=self.kind,
            p_inf=self.p_inf,
            sigma=SigmaMap("constant", sigma_max=sig_inf),
            p_star=self.p_star,
            s_star=self.s_star,
            theta=self.theta,
            dpdS_bound=0.0 if self.kind == "smooth" else None,
        )

    def check_dpdS_bound(self, S_lo: float = 0.0, S_hi: float = 10.0, n: int = 400) -> float:
        """Sampled sup |dp/dS|; raises if it exceeds the declared bound."""
        S_vals = np.linspace(S_lo, S_hi, n)
        span = self.sigma.sup_over(S_lo, S_hi) + (self.theta or 0.0) + 1.0
        s_vals = np.linspace(0.0, span, 4 * n)
        h = (S_hi - S_lo) / (8 * n)
        p_plus = self.evaluate(s_vals[:, None], S_vals[None, :] + h)
        p_minus = self.evaluate(s_vals[:, None], S_vals[None, :] - h)
        seen = float(np.abs(p_plus - p_minus).max() / (2 * h))
        if self.dpdS_bound is not None and seen > self.dpdS_bound * (1 + 1e-6):
            raise ModelError(
                f"sampled |dp/dS| = {seen:.6g} exceeds declared bound {self.dpdS_bound:.6g}"
            )
        return seen


def survival_quadrature_grid(model: FiringRateModel, S) -> AgeGrid:
    """Internal grid resolving both the ramp width and the survival tail."""
    sig = float(np.max(np.asarray(model.sigma(S), dtype=float)))
    p_floor = max(model.lower_rate, 1e-12)
    start = max(sig + (model.theta or 0.0), model.s_star or 0.0)
    s_end = start + 32.0 / p_floor
    h_target = min((model.theta or np.inf) / 8.0, 1.0 / (50.0 * max(model.p_inf, 1e-12)))
    ns = int(min(max(np.ceil(s_end / h_target), 64), 4_000_000))
    return AgeGrid(ns=ns, s_max=s_end)


def survival_F(model: FiringRateModel, S, age: AgeGrid | None = None):
    """F(S) = (integral of exp(-hazard(s)) ds)^(-1), the stationary discharge rate.

    Step kind uses the closed form 1 / (1/p_inf + sigma(S)); the smooth kind
    accumulates the hazard by the trapezoid rule on `age` (or an internally
    refined grid when none is given) and raises QuadratureDomainError when
    the survival tail at s_max is above 1e-12.
    """
    if model.kind == "step":
        if model.p_inf <= 0:
            raise ModelError("survival_F undefined for a vanishing step rate")
        sig = model.sigma(S)
        return 1.0 / (1.0 / model.p_inf + sig)
    S_arr = np.asarray(S, dtype=float)
    if S_arr.ndim == 0:
        grid = age if age is not None else survival_quadrature_grid(model, S)
        hazard = model.cumulative_hazard(grid.nodes, float(S_arr))
        survival = np.exp(-hazard)
        if survival[-1] > 1e-12:
            raise QuadratureDomainError(
                f"survival tail {survival[-1]:.3e} at s_max={grid.s_max} exceeds 1e-12"
            )
        return 1.0 / grid.integrate(survival)
    return np.array([survival_F(model, float(v), age) for v in S_arr])


def lipschitz_F(model: FiringRateModel, S_lo: float, S_hi: float, n: int = 201) -> float:
    """Conservative sampled bound on |F'| over [S_lo, S_hi] (max x 1.05)."""
    S_hi = max(S_hi, S_lo + 1e-9)  # degenerate band: probe a point neighborhood
    S_vals = np.linspace(S_lo, S_hi, n)
    F_vals = np.asarray(survival_F(model, S_vals))
    slopes = np.abs(np.diff(F_vals) / np.diff(S_vals))
    return float(slopes.max() * 1.05)


def sup_F(model: FiringRateModel, S_lo: float, S_hi: float, n: int = 201) -> float:
    S_vals = np.linspace(S_lo, S_hi, n)
    return float(np.max(np.asarray(survival_F(model, S_vals))))


@dataclass(frozen=True)
class LearningRule:
    """Symmetric learning rule G and connectivity gain gamma.

    'hebbian':          G(a, b) = a * b
    'gaussian_sigmoid': G(a, b) = exp(-(a-b)^2) / (1 + exp(-2ab + 2)), values in (0, 1)
    """

    kind: str
    gamma: float

    def __post_init__(self) -> None:
        if self.kind not in ("hebbian", "gaussian_sigmoid"):
            raise ModelError(f"unknown learning rule: {self.kind!r}")
        if self.gamma < 0:
            raise ModelError(f"gamma must be nonnegative, got {self.gamma}")

    def evaluate(self, Na, Nb):
        Na = np.asarray(Na, dtype=float)
        Nb = np.asarray(Nb, dtype=float)
        if self.kind == "hebbian":
            out = Na * Nb
        else:
            out = np.exp(-((Na - Nb) ** 2)) / (1.0 + np.exp(-2.0 * Na * Nb + 2.0))
        return float(out) if out.ndim == 0 else out

    def kernel_target(self, N: np.ndarray, space: SpatialGrid) -> ConnectivityKernel:
        """The relaxation target gamma * G(N(x), N(y)) of the kernel dynamics."""
        N = np.asarray(N, dtype=float)
        return ConnectivityKernel(self.gamma * self.evaluate(N[:, None], N[None, :]), space)

    def warn_if_unnormalized(self, N_max: float) -> None:
        """The Hebbian rule can exceed 1 on large activities; warn, never reject."""
        g_max = float(self.evaluate(N_max, N_max))
        if g_max > 1.0 + 1e-12:
            warnings.warn(
                f"learning rule {self.kind!r} reaches {g_max:.3g} > 1 on the reachable "
                f"activity range; the uniform kernel bound max(||w0||, gamma*G) applies",
                stacklevel=2,
            )


@dataclass(frozen=True)
class InputModel:
    """External input I(x) = k * amplitude * profile(x), constant in time.

    kinds: 'constant' (profile 1), 'sin_squared' (profile sin^2(2 pi x)),
    'scaled' (constant rescaled by k >= 1, for large-input studies),
    'table' (given per-node values times k).
    """

    kind: str
    amplitude: float = 1.0
    k: float = 1.0
    table: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "sin_squared", "scaled", "table"):
            raise ModelError(f"unknown input kind: {self.kind!r}")
        if self.kind == "scaled" and self.k < 1.0:
            raise ModelError(f"scaled input needs k >= 1, got {self.k}")
        if self.kind == "table" and self.table is None:
            raise ModelError("table input needs explicit values")
        if self.kind in ("constant", "sin_squared", "scaled") and self.amplitude < 0:
            raise ModelError(f"built-in inputs must be nonnegative, got {self.amplitude}")

    def evaluate(self, space: SpatialGrid, t: float = 0.0) -> np.ndarray:
        if self.kind == "table":
            vals = np.asarray(self.table, dtype=float)
            if vals.shape != (space.nx,):
                raise ModelError(
                    f"input table has {vals.size} entries, grid needs {space.nx}"
                )
            return self.k * vals
        if self.kind == "sin_squared":
            profile = np.sin(2.0 * np.pi * space.nodes) ** 2
        else:
            profile = np.ones(space.nx)
        return self.k * self.amplitude * profile

    def scaled_by(self, k: float) -> "InputModel":
        return InputModel(self.kind, self.amplitude, self.k * k, self.table)


def stimulation_bounds(
    model: FiringRateModel,
    rule: LearningRule,
    w0_max: float,
    g_max: float,
    input_values: np.ndarray,
) -> tuple[float, float]:
    """A-priori reachable stimulation interval [min I, A p_inf ||g|| + max I].

    A = max(||w0||_inf, gamma) is the uniform kernel bound and p_inf ||g||_inf
    bounds the activity, so S = integral(w N) + I stays in this band.
    """
    A = max(w0_max, rule.gamma)
    lo = float(np.min(input_values))
    hi = A * model.p_inf * g_max + float(np.max(input_values))
    return lo, hi
