"""Waveform-domain attacks on the reconstruction pipeline.

An attacker at ``r_A`` contributes ``y_atk = D w`` to the measurements,
where ``D`` is diagonal with unit-modulus entries set by the attacker path.
The differential imaging attack (DIA) chooses ``w`` by minimising

    f(w) = ||G(y_clean + D w) - alpha_tgt||^2 + lam ||w||^2

with Wirtinger gradient descent through the reconstructor ``G``.  For
linear ``G`` the problem is Tikhonov least squares and
:func:`closed_form_oracle` solves it independently by conjugate gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .core import (
    ApertureGrid,
    ConfigurationError,
    MeasurementVector,
    NumericError,
    RadarConfig,
    ReflectivityImage,
    Scene,
    ShapeError,
    StepSizeError,
    UnsupportedVariantError,
)
from .forward import PropagationOperator, apply, operator_norm
from .imaging import ReconstructorSpec, jvp, reconstruct, reconstruct_values, vjp

__all__ = [
    "POWER_MODES",
    "InjectionOperator",
    "DIAConfig",
    "AttackResult",
    "inject",
    "dia_objective",
    "dia_gradient",
    "dia_optimize",
    "closed_form_oracle",
    "project_power",
    "strategy_conceal",
    "strategy_swap",
    "strategy_random",
    "no_attack",
]

POWER_MODES = ("regularized", "total_cap", "per_look_cap")


@dataclass(frozen=True, eq=False)
class InjectionOperator:
    """Diagonal map from attack weights to measurement perturbations.

    ``phases[l] = exp(j k |r_A - r'_R,l|)``: the carrier phase accrued on
    the one-way attacker path, written ``exp(j 2k R)`` with ``R`` half
    that path length.
    """

    phases: np.ndarray
    r_A: np.ndarray

    def __post_init__(self):
        phases = np.array(self.phases, dtype=np.complex128).reshape(-1)
        if not np.allclose(np.abs(phases), 1.0, rtol=0, atol=1e-12):
            raise ConfigurationError("injection phases must have unit modulus")
        phases.setflags(write=False)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "r_A", np.asarray(self.r_A, dtype=float))

    @classmethod
    def from_geometry(cls, aperture: ApertureGrid, cfg: RadarConfig, r_A) -> "InjectionOperator":
        r_A = np.asarray(r_A, dtype=float)
        path = np.linalg.norm(aperture.rx_positions() - r_A, axis=-1)
        return cls(np.exp(1j * cfg.k * path), r_A)

    @property
    def L(self) -> int:
        return self.phases.size

    def apply(self, w) -> np.ndarray:
        return self.phases * w

    def adjoint(self, v) -> np.ndarray:
        return np.conj(self.phases) * v


def inject(y_clean, D: InjectionOperator, w) -> MeasurementVector:
    """Attacked measurements ``y_clean + D w``."""
    w = np.asarray(w, dtype=np.complex128).reshape(-1)
    y = np.asarray(y_clean.values, dtype=np.complex128)
    if w.size != D.L or y.size != D.L:
        raise ShapeError(f"weights ({w.size}), measurements ({y.size}) and injector ({D.L}) disagree")
    return MeasurementVector(y_clean.grid, y + D.apply(w), y_clean.noise_power)


@dataclass(frozen=True, eq=False)
class DIAConfig:
    """DIA settings.

    ``power_mode`` is ``"regularized"`` (penalty ``lam ||w||^2``),
    ``"total_cap"`` (``||w||^2 <= power_cap``) or ``"per_look_cap"``
    (``|w_l|^2 <= power_cap``).  Cap modes ignore ``lam``; a cap of None
    leaves ``w`` unconstrained.  ``step=None`` picks the step automatically.
    """

    target: ReflectivityImage | None = None
    lam: float = 0.0
    step: float | None = None
    iters: int = 3000
    power_mode: str = "regularized"
    power_cap: float | None = None
    tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lam must be non-negative")
        if self.step is not None and not self.step > 0:
            raise ConfigurationError("step must be positive")
        if self.iters < 0:
            raise ConfigurationError("iters must be non-negative")
        if self.power_mode not in POWER_MODES:
            raise ConfigurationError(f"power_mode must be one of {POWER_MODES}")
        if self.power_cap is not None and self.power_cap < 0:
            raise ConfigurationError("power_cap must be non-negative")

    @property
    def effective_lam(self) -> float:
        return self.lam if self.power_mode == "regularized" else 0.0


@dataclass(frozen=True, eq=False)
class AttackResult:
    w: np.ndarray
    adv_image: ReflectivityImage
    objective_trace: tuple
    clean_image: ReflectivityImage
    target: ReflectivityImage | None = None
    step: float | None = None
    stop_reason: str = ""
    power_ratio: float = field(init=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.complex128).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "power_ratio", float(np.vdot(w, w).real))

    @property
    def iterations(self) -> int:
        return max(len(self.objective_trace) - 1, 0)


def project_power(w: np.ndarray, mode: str, cap: float | None) -> np.ndarray:
    """Euclidean projection onto the feasible power set."""
    if mode == "regularized" or cap is None:
        return w
    if mode == "total_cap":
        energy = float(np.vdot(w, w).real)
        if energy > cap:
            w = w * np.sqrt(cap / energy)
            # Guard against the rescale rounding one ulp above the cap.
            while float(np.vdot(w, w).real) > cap:
                w = w * (1.0 - 1e-15)
        return w
    mag = np.abs(w)
    limit = np.sqrt(cap)
    over = mag > limit
    if not over.any():
        return w
    out = w.copy()
    out[over] = w[over] / mag[over] * limit
    out[over & (np.abs(out) ** 2 > cap)] *= 1.0 - 1e-15
    return out


def _check_target(target, H):
    if target is None:
        raise ConfigurationError("DIA needs a target image")
    if isinstance(target, ReflectivityImage) and target.grid != H.image:
        raise ShapeError("target image lives on a different grid")
    t = np.asarray(getattr(target, "values", target), dtype=np.complex128).reshape(-1)
    if t.size != H.image.N:
        raise ShapeError("target has the wrong number of voxels")
    return t


def dia_objective(spec, H, y_clean, D, target, lam, w) -> float:
    """``||G(y_clean + D w) - target||^2 + lam ||w||^2``."""
    t = _check_target(target, H)
    w = np.asarray(w, dtype=np.complex128)
    r = reconstruct_values(spec, H, y_clean.values + D.apply(w)) - t
    return float(np.vdot(r, r).real + lam * np.vdot(w, w).real)


def dia_gradient(spec, H, y_clean, D, target, lam, w) -> np.ndarray:
    """Wirtinger gradient ``2 df/d conj(w)`` of :func:`dia_objective`."""
    t = _check_target(target, H)
    w = np.asarray(w, dtype=np.complex128)
    y = y_clean.values + D.apply(w)
    r = reconstruct_values(spec, H, y) - t
    return 2.0 * D.adjoint(vjp(spec, H, y, r).values) + 2.0 * lam * w


def _lipschitz(spec, H, y, D, lam, seed):
    """Lipschitz constant of the Wirtinger gradient, ``2 (||J D||^2 + lam)``."""
    L = D.L
    if spec.is_linear:
        fwd = lambda v: reconstruct_values(spec, H, D.apply(v))
    else:
        fwd = lambda v: jvp(spec, H, y, D.apply(v)).values
    adj = lambda r: D.adjoint(vjp(spec, H, y, r).values)
    norm = operator_norm(fwd, adj, L, iters=100, tol=1e-3, seed=seed)
    return 2.0 * (norm**2 + lam)


def dia_optimize(
    cfg: DIAConfig,
    spec: ReconstructorSpec,
    H: PropagationOperator,
    y_clean: MeasurementVector,
    D: InjectionOperator,
) -> AttackResult:
    """Optimise attack weights by (projected) Wirtinger gradient descent from ``w = 0``.

    Linear reconstructors use a fixed step ``0.9 / L_lip``; unrolled ones
    start from the local estimate of the same bound and halve the step (up
    to 20 times) until the objective decreases; each iteration first tries
    twice the previous step, never more than the initial one.  Iteration stops after
    ``cfg.iters`` steps, when the relative decrease drops below ``cfg.tol``
    or when the objective falls below 1e-15.
    """
    t = _check_target(cfg.target, H)
    if y_clean.grid != H.aperture or D.L != H.aperture.L:
        raise ShapeError("measurements, injector and operator disagree on the aperture")
    lam = cfg.effective_lam
    y0 = np.asarray(y_clean.values, dtype=np.complex128)
    clean = reconstruct_values(spec, H, y0)

    def objective(w):
        r = reconstruct_values(spec, H, y0 + D.apply(w)) - t
        return float(np.vdot(r, r).real + lam * np.vdot(w, w).real)

    def gradient(w):
        y = y0 + D.apply(w)
        r = reconstruct_values(spec, H, y) - t
        return 2.0 * D.adjoint(vjp(spec, H, y, r).values) + 2.0 * lam * w

    w = np.zeros(D.L, dtype=np.complex128)
    f = objective(w)
    trace = [f]
    step = cfg.step if cfg.step is not None else 0.9 / _lipschitz(spec, H, y0, D, lam, cfg.seed)
    step0 = step
    increases = 0
    reason = "max_iters"
    for _ in range(cfg.iters):
        if f < 1e-15:
            reason = "objective_zero"
            break
        g = gradient(w)
        if spec.is_linear:
            w_new = project_power(w - step * g, cfg.power_mode, cfg.power_cap)
            f_new = objective(w_new)
        else:
            # Let the step recover after a backtrack, up to the initial bound.
            trial = min(2.0 * step, step0)
            for _ in range(20):
                w_new = project_power(w - trial * g, cfg.power_mode, cfg.power_cap)
                f_new = objective(w_new)
                if f_new < f:
                    break
                trial /= 2.0
            else:
                reason = "no_descent"
                break
            step = trial
        if not np.isfinite(f_new):
            raise NumericError("DIA objective became non-finite")
        if f_new > f:
            increases += 1
            if increases >= 10:
                raise StepSizeError(
                    f"objective increased for 10 consecutive steps (step={step:.3g}, f={f_new:.3g})"
                )
        else:
            increases = 0
        decrease = f - f_new
        w, f = w_new, f_new
        trace.append(f)
        if 0 <= decrease <= cfg.tol * abs(trace[-2]):
            reason = "tol"
            break
    adv = reconstruct_values(spec, H, y0 + D.apply(w))
    return AttackResult(
        w,
        ReflectivityImage(H.image, adv),
        tuple(trace),
        ReflectivityImage(H.image, clean),
        ReflectivityImage(H.image, t),
        step,
        reason,
    )


def closed_form_oracle(spec, H, y_clean, D, target, lam) -> np.ndarray:
    """Regularised least-squares attack for linear reconstructors.

    Solves ``(A^H A + lam I) w = A^H (target - G y_clean)`` with ``A = G D``
    by conjugate gradients (relative tolerance 1e-10, at most ``10 L``
    iterations).
    """
    if not spec.is_linear:
        raise UnsupportedVariantError(f"closed-form oracle needs a linear reconstructor, not {spec.variant}")
    t = _check_target(target, H)
    y0 = np.asarray(y_clean.values, dtype=np.complex128)
    zeros = np.zeros(H.aperture.L, dtype=np.complex128)
    adj = lambda r: D.adjoint(vjp(spec, H, zeros, r).values)
    fwd = lambda v: reconstruct_values(spec, H, D.apply(v))
    normal = LinearOperator((D.L, D.L), matvec=lambda v: adj(fwd(v)) + lam * v, dtype=np.complex128)
    rhs = adj(t - reconstruct_values(spec, H, y0))
    w, info = cg(normal, rhs, rtol=1e-10, atol=0.0, maxiter=10 * D.L)
    if info < 0:
        raise NumericError("conjugate gradients broke down")
    return w


def _result(spec, H, y_clean, D, w, target=None, reason="") -> AttackResult:
    y0 = np.asarray(y_clean.values, dtype=np.complex128)
    clean = reconstruct_values(spec, H, y0)
    adv = reconstruct_values(spec, H, y0 + D.apply(w))
    return AttackResult(
        w, ReflectivityImage(H.image, adv), (), ReflectivityImage(H.image, clean), target, None, reason
    )


def no_attack(spec, H, y_clean, D) -> AttackResult:
    return _result(spec, H, y_clean, D, np.zeros(D.L, dtype=np.complex128), reason="none")


def strategy_conceal(spec, H, y_clean, D, dia: DIAConfig | None = None) -> AttackResult:
    """DIA towards a blank image."""
    dia = dia or DIAConfig()
    return dia_optimize(replace(dia, target=ReflectivityImage.zeros(H.image)), spec, H, y_clean, D)


def _same_scene(a: Scene, b: Scene) -> bool:
    ia, ib = a.to_image(), b.to_image()
    return ia.grid == ib.grid and np.array_equal(ia.values, ib.values)


def strategy_swap(
    spec, H, y_clean, D, swap_scene: Scene, source_scene: Scene | None = None, dia: DIAConfig | None = None
) -> AttackResult:
    """DIA towards the clean reconstruction of a different scene."""
    if source_scene is not None and _same_scene(source_scene, swap_scene):
        raise ConfigurationError("swap target scene is identical to the scanned scene")
    target = reconstruct(spec, H, apply(H, swap_scene.to_image())).image
    dia = dia or DIAConfig()
    return dia_optimize(replace(dia, target=target), spec, H, y_clean, D)


def strategy_random(spec, H, y_clean, D, power: float, rng) -> AttackResult:
    """Unoptimised weights ``sqrt(P / L) exp(j phi)`` with uniform random phases."""
    if power < 0:
        raise ConfigurationError("attack power must be non-negative")
    phi = rng.uniform(0.0, 2.0 * np.pi, D.L)
    w = np.sqrt(power / D.L) * np.exp(1j * phi)
    return _result(spec, H, y_clean, D, w, reason="random")
