"""FMCW waveform simulation, dechirp preprocessing and attack waveforms.

Everything is simulated at complex baseband: the carrier enters only
through analytic phase terms, evaluated in extended precision and reduced
modulo one cycle before exponentiation.

The receiver mixes the *conjugate* of the received signal with the
transmitted chirp.  A received component ``g * p(t - tau)`` therefore shows
up after dechirp as ``conj(g) * exp(j 2 pi (f0 tau + K tau t) - j pi K tau^2)``.
Complex gains handed to the time-domain synthesis functions are physical
(transmitted) gains; the measurement-domain value they produce is their
conjugate.  See :func:`attack_params` for the bridge used by the attack code.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ApertureGrid,
    ConfigurationError,
    DegenerateInputError,
    RadarConfig,
    Scene,
    ShapeError,
    bistatic_delay,
    complex_gaussian,
    look_position,
)

__all__ = [
    "ChirpSpec",
    "DechirpedFrame",
    "AttackParams",
    "ExtractionResult",
    "synth_chirp",
    "simulate_echo",
    "dechirp",
    "plane_delay",
    "extract_measurement",
    "delay_params",
    "attack_params",
    "synth_attack_waveform",
    "received_attack_waveform",
    "attack_delay",
    "extract_attack",
]


@dataclass(frozen=True)
class ChirpSpec:
    """Sampling of one chirp: ``t_n = n / fs`` for ``n < n_samples``.

    ``guard`` is the largest admissible beat frequency as a fraction of
    ``fs``; beat tones above it would alias after dechirp.
    """

    cfg: RadarConfig
    guard: float = 0.5

    @property
    def duration(self) -> float:
        return self.cfg.n_samples / self.cfg.fs

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.cfg.n_samples) / self.cfg.fs

    def check_beat(self, tau) -> None:
        beat = self.cfg.K * np.max(np.abs(np.asarray(tau, dtype=float)))
        if beat >= self.guard * self.cfg.fs:
            raise ConfigurationError(
                f"beat frequency {beat:.4g} Hz exceeds {self.guard} * fs = {self.guard * self.cfg.fs:.4g} Hz"
            )


def _cycles(cfg: RadarConfig, t) -> np.ndarray:
    """Chirp phase ``f0 t + K t^2 / 2`` in cycles, reduced to [0, 1)."""
    t = np.asarray(t, dtype=np.longdouble)
    cyc = np.longdouble(cfg.f0) * t + np.longdouble(0.5) * np.longdouble(cfg.K) * t * t
    return (cyc - np.floor(cyc)).astype(np.float64)


def _tone(cycles) -> np.ndarray:
    return np.exp(2j * np.pi * np.asarray(cycles, dtype=np.float64))


def synth_chirp(spec: ChirpSpec, t=None) -> np.ndarray:
    """Unit-modulus chirp ``p(t) = exp{j 2 pi (f0 t + K t^2 / 2)}``."""
    t = spec.times if t is None else t
    return _tone(_cycles(spec.cfg, t))


def _delayed_chirp(spec: ChirpSpec, tau) -> np.ndarray:
    t = np.asarray(spec.times, dtype=np.longdouble) - np.longdouble(tau)
    return _tone(_cycles(spec.cfg, t))


def simulate_echo(
    spec: ChirpSpec,
    grid: ApertureGrid,
    scene: Scene,
    look: int,
    noise_power: float = 0.0,
    rng=None,
) -> np.ndarray:
    """Received echo at one look.

    Each scatterer contributes ``sigma / (R_T R_R) * p(t - tau)``, evaluated
    analytically at the sample instants.  Circular complex Gaussian noise of
    variance ``noise_power`` is added when positive (requires ``rng``).
    """
    pos = look_position(grid, look)
    tx = pos + np.array([*grid.tx_offset, 0.0])
    rx = pos + np.array([*grid.rx_offset, 0.0])
    z0 = scene.grid.z0
    echo = np.zeros(spec.cfg.n_samples, dtype=np.complex128)
    for x, y, sigma in scene.point_list():
        path = bistatic_delay(spec.cfg, tx, rx, np.array([x, y, z0]))
        echo += sigma / (path.r_t * path.r_r) * _delayed_chirp(spec, path.tau)
    if noise_power > 0:
        if rng is None:
            raise ConfigurationError("noise requires a seeded rng")
        echo += complex_gaussian(rng, echo.size, noise_power)
    return echo


@dataclass
class DechirpedFrame:
    """Dechirped samples of one look; ``bin`` is filled in by extraction."""

    look: int
    samples: np.ndarray
    bin: int | None = None

    def spectrum(self, zero_pad: int = 1) -> np.ndarray:
        n = self.samples.size
        return np.fft.fft(self.samples, n * zero_pad) / n


def dechirp(spec: ChirpSpec, s, look: int = 0) -> DechirpedFrame:
    """Conjugate-mix the received samples with the chirp: ``conj(s) * p``."""
    s = np.asarray(s, dtype=np.complex128)
    if s.shape != (spec.cfg.n_samples,):
        raise ShapeError(f"expected {spec.cfg.n_samples} samples, got shape {s.shape}")
    return DechirpedFrame(look, np.conj(s) * synth_chirp(spec))


def plane_delay(cfg: RadarConfig, z0: float, aperture: ApertureGrid | None = None) -> float:
    """Bistatic delay from a look to the target-plane point in front of it.

    It is the same for every look of a planar aperture.
    """
    tx = np.array([0.0, 0.0, 0.0])
    rx = np.array([0.0, 0.0, 0.0])
    if aperture is not None:
        tx[:2] = aperture.tx_offset
        rx[:2] = aperture.rx_offset
    return float(bistatic_delay(cfg, tx, rx, np.array([0.0, 0.0, z0])).tau)


def extract_measurement(
    frame: DechirpedFrame,
    spec: ChirpSpec,
    z0: float,
    aperture: ApertureGrid | None = None,
    zero_pad: int = 1,
    compensate: bool = False,
) -> complex:
    """Measurement ``y_l`` from the DFT bin of the target plane.

    The DFT (normalised by ``n_samples``, optionally zero-padded by
    ``zero_pad``) is evaluated at the bin nearest the beat frequency of the
    target plane.  With ``compensate`` the residual phase ``-pi K tau^2`` of
    that plane is removed.  Sets ``frame.bin``.
    """
    cfg = spec.cfg
    if zero_pad < 1 or int(zero_pad) != zero_pad:
        raise ConfigurationError("zero_pad must be a positive integer")
    tau = plane_delay(cfg, z0, aperture)
    n = cfg.n_samples
    nfft = n * zero_pad
    b = int(round(cfg.beat_bin(tau) * zero_pad))
    if not 0 <= b < nfft or b >= spec.guard * nfft:
        raise ConfigurationError(f"target-plane bin {b} outside the usable range of {nfft} bins")
    frame.bin = b
    kernel = np.exp(-2j * np.pi * b * np.arange(n) / nfft)
    y = complex(np.dot(frame.samples, kernel) / n)
    if compensate:
        y *= np.exp(1j * np.pi * cfg.K * tau**2)
    return y


@dataclass(frozen=True, eq=False)
class AttackParams:
    """Per-look attack waveform parameters.

    ``w`` are the transmitted complex gains, ``beta`` the time shifts that
    align the attack with the target-plane bin, ``delta = K beta`` the tone
    offsets and ``phi = -2 pi f0 beta + pi K beta^2`` the phases, so that
    ``w = c_gain * exp(j phi)``.
    """

    w: np.ndarray
    r_A: np.ndarray
    delta: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    c_gain: np.ndarray

    def __post_init__(self):
        sizes = {np.size(a) for a in (self.w, self.delta, self.beta, self.phi, self.c_gain)}
        if len(sizes) != 1:
            raise ShapeError("attack parameter arrays must share one length")


def delay_params(spec: ChirpSpec, grid: ApertureGrid, look: int, r, r_A):
    """``(beta, delta, phi)`` aligning an attacker at ``r_A`` with point ``r``.

    ``beta = tau_l(r) - |r_A - r'_R,l| / c``.
    """
    cfg = spec.cfg
    pos = look_position(grid, look)
    tx = pos + np.array([*grid.tx_offset, 0.0])
    rx = pos + np.array([*grid.rx_offset, 0.0])
    tau = bistatic_delay(cfg, tx, rx, np.asarray(r, dtype=float)).tau
    beta = float(tau - attack_delay(cfg, rx, r_A))
    delta = cfg.K * beta
    phi = -2.0 * np.pi * cfg.f0 * beta + np.pi * cfg.K * beta**2
    return beta, delta, phi


def attack_delay(cfg: RadarConfig, rx, r_A) -> np.ndarray:
    """One-way delay from the attacker to the receive antenna(s)."""
    return np.linalg.norm(np.asarray(r_A, float) - np.asarray(rx, float), axis=-1) / cfg.c


def attack_params(
    spec: ChirpSpec,
    grid: ApertureGrid,
    z0: float,
    r_A,
    w=None,
    *,
    measurement_weights=None,
) -> AttackParams:
    """Attack parameters for every look, aimed at the target-plane bin.

    Give either the transmitted gains ``w`` or the ``measurement_weights``
    the attack should produce after dechirp; the latter are conjugated,
    because dechirp conjugates the received amplitude.
    """
    if (w is None) == (measurement_weights is None):
        raise ConfigurationError("give exactly one of w or measurement_weights")
    if w is None:
        w = np.conj(np.asarray(measurement_weights, dtype=np.complex128))
    w = np.asarray(w, dtype=np.complex128).reshape(-1)
    if w.size != grid.L:
        raise ShapeError(f"need {grid.L} gains, got {w.size}")
    pos = grid.positions()
    beta = np.empty(grid.L)
    for look in range(grid.L):
        target = np.array([pos[look, 0], pos[look, 1], z0])
        beta[look] = delay_params(spec, grid, look, target, r_A)[0]
    delta = spec.cfg.K * beta
    phi = -2.0 * np.pi * spec.cfg.f0 * beta + np.pi * spec.cfg.K * beta**2
    c_gain = w * np.exp(-1j * phi)
    return AttackParams(w, np.asarray(r_A, dtype=float), delta, beta, phi, c_gain)


def synth_attack_waveform(spec: ChirpSpec, params: AttackParams, look: int, t=None) -> np.ndarray:
    """Transmitted attack waveform ``w_l p(t) exp(-j 2 pi delta_l t)``.

    Equal sample for sample to the delay-and-weight form ``c_l p(t - beta_l)``.
    """
    t = spec.times if t is None else np.asarray(t, dtype=float)
    t_ld = np.asarray(t, dtype=np.longdouble)
    offset = np.longdouble(params.delta[look]) * t_ld
    cycles = _cycles(spec.cfg, t_ld) - (offset - np.floor(offset)).astype(np.float64)
    return params.w[look] * _tone(cycles)


def received_attack_waveform(spec: ChirpSpec, grid: ApertureGrid, params: AttackParams, look: int) -> np.ndarray:
    """Attack waveform as it arrives at the receiver, delayed by the attacker path."""
    rx = look_position(grid, look) + np.array([*grid.rx_offset, 0.0])
    tau_atk = float(attack_delay(spec.cfg, rx, params.r_A))
    return synth_attack_waveform(spec, params, look, spec.times - tau_atk)


@dataclass(frozen=True, eq=False)
class ExtractionResult:
    a: complex
    d: int
    residual: np.ndarray
    cost: float = 0.0


def _shift(s: np.ndarray, d: int) -> np.ndarray:
    """``s[n - d]`` with zero fill."""
    out = np.zeros_like(s)
    if d >= 0:
        out[d:] = s[: s.size - d] if d else s
    else:
        out[:d] = s[-d:]
    return out


def extract_attack(s1, s2, max_shift: int) -> ExtractionResult:
    """Isolate an injected component from two back-to-back recordings.

    Searches integer shifts ``d`` in ``[-max_shift, max_shift]``; for each the
    least-squares complex scale ``a`` is closed form.  Returns the minimiser
    and the residual ``s2 - a s1[n - d]``.
    """
    s1 = np.asarray(s1, dtype=np.complex128)
    s2 = np.asarray(s2, dtype=np.complex128)
    if s1.shape != s2.shape or s1.ndim != 1:
        raise ShapeError("extract_attack needs two 1-D signals of equal length")
    if not np.any(s1):
        raise DegenerateInputError("reference recording s1 is all zero")
    max_shift = min(int(max_shift), s1.size - 1)
    best = None
    for d in range(-max_shift, max_shift + 1):
        ref = _shift(s1, d)
        energy = np.vdot(ref, ref).real
        if energy == 0:
            continue
        a = np.vdot(ref, s2) / energy
        cost = float(np.vdot(s2 - a * ref, s2 - a * ref).real)
        if best is None or cost < best[0]:
            best = (cost, complex(a), d, ref)
    cost, a, d, ref = best
    return ExtractionResult(a, d, s2 - a * ref, cost)
