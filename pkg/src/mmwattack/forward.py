"""Discrete near-field propagation operator and measurement synthesis.

The operator maps voxel reflectivities to per-look measurements,

    y_l = sum_n alpha_n exp(j 2 k R0(r'_l, r_n)) / R0(r'_l, r_n)^2,

with ``R0`` the mean of the transmit and receive legs.  It is evaluated
matrix-free in fixed-size blocks (so summation order, and therefore the
result, is bit-stable) or from an explicit matrix for small instances.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ApertureGrid,
    ConfigurationError,
    ImageGrid,
    MeasurementVector,
    NumericError,
    RadarConfig,
    ReflectivityImage,
    Scene,
    ShapeError,
    complex_gaussian,
    seeded_rng,
)

__all__ = [
    "MAX_MATERIALIZED_ENTRIES",
    "PropagationOperator",
    "operator_norm",
    "apply",
    "adjoint",
    "synthesize_measurements",
    "ConsistencyReport",
    "timedomain_consistency",
]

MAX_MATERIALIZED_ENTRIES = 2**22
_BLOCK = 256


def _values(x, size: int, what: str) -> np.ndarray:
    arr = np.asarray(getattr(x, "values", x), dtype=np.complex128).reshape(-1)
    if arr.size != size:
        raise ShapeError(f"{what} has {arr.size} entries, expected {size}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class PropagationOperator:
    """The ``L x N`` propagation operator ``H``.

    Parameters
    ----------
    aperture, image, cfg
        Sensing grid, voxel grid and radar parameters.
    mode
        ``"matrix-free"`` (default) recomputes matrix blocks on the fly;
        ``"materialized"`` stores the dense matrix and requires
        ``L * N <= MAX_MATERIALIZED_ENTRIES``.
    """

    aperture: ApertureGrid
    image: ImageGrid
    cfg: RadarConfig
    mode: str = "matrix-free"
    _matrix: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.mode not in ("matrix-free", "materialized"):
            raise ConfigurationError(f"unknown operator mode {self.mode!r}")
        if self.mode == "materialized":
            object.__setattr__(self, "_matrix", self._build_matrix())

    @classmethod
    def auto(cls, aperture, image, cfg) -> "PropagationOperator":
        """Materialized when small enough, matrix-free otherwise."""
        small = aperture.L * image.N <= MAX_MATERIALIZED_ENTRIES
        return cls(aperture, image, cfg, "materialized" if small else "matrix-free")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.aperture.L, self.image.N)

    def _geometry(self):
        return (self.aperture.tx_positions(), self.aperture.rx_positions(), self.image.positions())

    @staticmethod
    def _entries(cfg, tx, rx, vox) -> np.ndarray:
        r_t = np.linalg.norm(vox[None, :, :] - tx[:, None, :], axis=-1)
        r_r = np.linalg.norm(vox[None, :, :] - rx[:, None, :], axis=-1)
        r0 = 0.5 * (r_t + r_r)
        return np.exp(2j * cfg.k * r0) / r0**2

    def block(self, looks: slice, voxels: slice = slice(None)) -> np.ndarray:
        """Rows ``looks`` and columns ``voxels`` of ``H``."""
        if self._matrix is not None:
            return self._matrix[looks, voxels]
        tx, rx, vox = self._geometry()
        return self._entries(self.cfg, tx[looks], rx[looks], vox[voxels])

    def _build_matrix(self) -> np.ndarray:
        L, N = self.shape
        if L * N > MAX_MATERIALIZED_ENTRIES:
            raise ConfigurationError(
                f"materialising {L}x{N} entries exceeds the {MAX_MATERIALIZED_ENTRIES} limit"
            )
        tx, rx, vox = self._geometry()
        matrix = self._entries(self.cfg, tx, rx, vox)
        matrix.setflags(write=False)
        return matrix

    def materialized(self) -> "PropagationOperator":
        if self.mode == "materialized":
            return self
        return PropagationOperator(self.aperture, self.image, self.cfg, "materialized")

    def to_matrix(self) -> np.ndarray:
        return self._matrix if self._matrix is not None else self._build_matrix()

    # Raw ndarray kernels; the public apply/adjoint wrap them in containers.
    def matvec(self, alpha: np.ndarray) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix @ alpha
        L = self.aperture.L
        tx, rx, vox = self._geometry()
        out = np.empty(L, dtype=np.complex128)
        for start in range(0, L, _BLOCK):
            sl = slice(start, min(start + _BLOCK, L))
            out[sl] = self._entries(self.cfg, tx[sl], rx[sl], vox) @ alpha
        return out

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix.conj().T @ y
        N = self.image.N
        tx, rx, vox = self._geometry()
        out = np.empty(N, dtype=np.complex128)
        for start in range(0, N, _BLOCK):
            sl = slice(start, min(start + _BLOCK, N))
            out[sl] = self._entries(self.cfg, tx, rx, vox[sl]).conj().T @ y
        return out

    def norm_estimate(self, iters: int = 100, tol: float = 1e-3, seed: int = 0) -> float:
        """Spectral norm ``||H||`` by power iteration on ``H^H H``."""
        return operator_norm(self.matvec, self.rmatvec, self.image.N, iters=iters, tol=tol, seed=seed)


def operator_norm(fwd, adj, n: int, iters: int = 100, tol: float = 1e-3, seed: int = 0) -> float:
    """Largest singular value of a linear map given forward and adjoint callables."""
    rng = seeded_rng(seed)
    x = complex_gaussian(rng, n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        z = adj(fwd(x))
        nz = np.linalg.norm(z)
        if nz == 0:
            return 0.0
        new = np.sqrt(nz)
        x = z / nz
        if est and abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(est)


def apply(H: PropagationOperator, alpha) -> MeasurementVector:
    """Forward model ``y = H alpha``."""
    a = _values(alpha, H.image.N, "reflectivity")
    if isinstance(alpha, ReflectivityImage) and alpha.grid != H.image:
        raise ShapeError("reflectivity image lives on a different grid")
    return MeasurementVector(H.aperture, H.matvec(a))


def adjoint(H: PropagationOperator, y) -> ReflectivityImage:
    """Adjoint ``H^H y`` (the back-projection image)."""
    v = _values(y, H.aperture.L, "measurement")
    if isinstance(y, MeasurementVector) and y.grid != H.aperture:
        raise ShapeError("measurement lives on a different aperture")
    return ReflectivityImage(H.image, H.rmatvec(v))


def synthesize_measurements(H: PropagationOperator, scene, snr_db=None, rng=None) -> MeasurementVector:
    """Measurements ``H alpha + v``.

    ``v`` is circular complex Gaussian, i.i.d. per look, with variance set by
    ``snr_db`` relative to the mean power of ``H alpha``.  No noise is added
    when ``snr_db`` is None.
    """
    alpha = scene.to_image() if isinstance(scene, Scene) else scene
    clean = apply(H, alpha).values
    if snr_db is None:
        return MeasurementVector(H.aperture, clean)
    if rng is None:
        raise ConfigurationError("a seeded rng is required when snr_db is given")
    noise_power = float(np.mean(np.abs(clean) ** 2)) * 10.0 ** (-snr_db / 10.0)
    noisy = clean + complex_gaussian(rng, clean.size, noise_power)
    return MeasurementVector(H.aperture, noisy, noise_power=noise_power)


@dataclass(frozen=True, eq=False)
class ConsistencyReport:
    y_time: np.ndarray
    y_model: np.ndarray
    per_look_error: np.ndarray

    @property
    def max_error(self) -> float:
        return float(np.max(self.per_look_error)) if self.per_look_error.size else 0.0


def timedomain_consistency(
    H: PropagationOperator,
    scene: Scene,
    compensate: bool = False,
    zero_pad: int = 1,
) -> ConsistencyReport:
    """Compare the waveform pipeline with the discrete model, look by look.

    Each look runs simulate_echo, dechirp and extract_measurement.  The
    dechirp conjugates the received signal, so the time-domain pipeline
    returns ``H conj(alpha)``; that is the reference used here (it equals
    ``H alpha`` for real reflectivities).  The per-look error is
    ``|y_time - y_model| / |y_model|``, or the absolute error where the model
    value is zero.
    """
    from . import waveform

    if H.aperture.L > 4096:
        raise ConfigurationError("time-domain consistency is limited to L <= 4096 looks")
    alpha = scene.to_image().values
    y_model = H.matvec(np.conj(alpha))
    spec = waveform.ChirpSpec(H.cfg)
    y_time = np.empty(H.aperture.L, dtype=np.complex128)
    for look in range(H.aperture.L):
        echo = waveform.simulate_echo(spec, H.aperture, scene, look)
        frame = waveform.dechirp(spec, echo, look=look)
        y_time[look] = waveform.extract_measurement(
            frame, spec, H.image.z0, aperture=H.aperture, zero_pad=zero_pad, compensate=compensate
        )
    diff = np.abs(y_time - y_model)
    mag = np.abs(y_model)
    err = np.where(mag > 0, diff / np.where(mag > 0, mag, 1.0), diff)
    return ConsistencyReport(y_time, y_model, err)
