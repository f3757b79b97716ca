"""Geometry, grids, field containers and seeded randomness.

Conventions used throughout the package:

* The synthetic aperture lies on the plane ``z = 0``; the target plane is
  ``z = z0 > 0``.
* Looks and voxels are enumerated row-major over ``(iy, ix)``:
  ``index = iy * nx + ix``.
* Complex data is double precision (``complex128``).  Round-trip phases
  ``2 k R0`` reach ~10^3 rad, which single precision cannot resolve.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import constants

__all__ = [
    "ConfigurationError",
    "ShapeError",
    "NumericError",
    "DegenerateInputError",
    "StepSizeError",
    "UnsupportedVariantError",
    "RadarConfig",
    "ApertureGrid",
    "ImageGrid",
    "Scene",
    "ReflectivityImage",
    "MeasurementVector",
    "BistaticPath",
    "look_position",
    "bistatic_delay",
    "seeded_rng",
    "complex_gaussian",
]


class ConfigurationError(ValueError):
    """Inconsistent or infeasible configuration."""


class ShapeError(ValueError):
    """Array lengths or grids do not match."""


class NumericError(ArithmeticError):
    """Non-finite values appeared in inputs or intermediate results."""


class DegenerateInputError(ValueError):
    """Input carries no information (e.g. an all-zero reference signal)."""


class StepSizeError(RuntimeError):
    """Gradient descent diverged with the chosen step size."""


class UnsupportedVariantError(ValueError):
    """Operation not defined for the requested reconstructor variant."""


def _pair(value, name: str) -> tuple[float, float]:
    arr = tuple(float(v) for v in value)
    if len(arr) != 2:
        raise ConfigurationError(f"{name} must have two components, got {value!r}")
    return arr


def _readonly(values, dtype=np.complex128) -> np.ndarray:
    arr = np.array(values, dtype=dtype).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RadarConfig:
    """FMCW chirp and sampling parameters.

    The default slope places the beat tone of a reflector at 0.23 m near
    bin 25 of a 256-sample frame sampled at 5 MHz.
    """

    f0: float = 77e9
    K: float = 3.2e14
    fs: float = 5e6
    n_samples: int = 256
    c: float = constants.c

    def __post_init__(self):
        for name in ("f0", "K", "fs", "c"):
            if not float(getattr(self, name)) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise ConfigurationError("n_samples must be an integer >= 2")

    @property
    def k(self) -> float:
        """Wavenumber at the start frequency, rad/m."""
        return 2.0 * np.pi * self.f0 / self.c

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def beat_bin(self, tau) -> np.ndarray:
        """Fractional DFT bin of the beat tone ``K * tau``."""
        return self.K * np.asarray(tau) * self.n_samples / self.fs


@dataclass(frozen=True)
class ApertureGrid:
    """Regular planar aperture at ``z = 0``.

    ``tx_offset`` and ``rx_offset`` place the antennas relative to the look
    phase centre; both default to zero (monostatic).
    """

    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)
    tx_offset: tuple[float, float] = (0.0, 0.0)
    rx_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError("aperture needs at least one look per axis")
        if not (self.dx > 0 and self.dy > 0):
            raise ConfigurationError("aperture steps must be positive")
        object.__setattr__(self, "origin", _pair(self.origin, "origin"))
        object.__setattr__(self, "tx_offset", _pair(self.tx_offset, "tx_offset"))
        object.__setattr__(self, "rx_offset", _pair(self.rx_offset, "rx_offset"))

    @classmethod
    def centered(cls, nx, ny, dx, dy, **kwargs) -> "ApertureGrid":
        """Grid whose look positions are symmetric about ``x = y = 0``."""
        origin = (-(nx - 1) * dx / 2.0, -(ny - 1) * dy / 2.0)
        return cls(nx, ny, dx, dy, origin=origin, **kwargs)

    @property
    def L(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def positions(self) -> np.ndarray:
        """Phase-centre positions, shape ``(L, 3)``."""
        iy, ix = np.divmod(np.arange(self.L), self.nx)
        pos = np.zeros((self.L, 3))
        pos[:, 0] = self.origin[0] + ix * self.dx
        pos[:, 1] = self.origin[1] + iy * self.dy
        return pos

    def tx_positions(self) -> np.ndarray:
        return self.positions() + np.array([*self.tx_offset, 0.0])

    def rx_positions(self) -> np.ndarray:
        return self.positions() + np.array([*self.rx_offset, 0.0])

    def look_index(self, position) -> int:
        """Inverse of :func:`look_position` for on-grid positions."""
        ix = int(round((position[0] - self.origin[0]) / self.dx))
        iy = int(round((position[1] - self.origin[1]) / self.dy))
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise IndexError(f"position {position!r} is outside the aperture")
        return iy * self.nx + ix


@dataclass(frozen=True)
class ImageGrid:
    """Regular voxel grid on the target plane ``z = z0``."""

    nvx: int
    nvy: int
    dvx: float
    dvy: float
    z0: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nvx < 1 or self.nvy < 1:
            raise ConfigurationError("image needs at least one voxel per axis")
        if not (self.dvx > 0 and self.dvy > 0):
            raise ConfigurationError("voxel pitches must be positive")
        if not self.z0 > 0:
            raise ConfigurationError("z0 must be positive")
        object.__setattr__(self, "origin", _pair(self.origin, "origin"))

    @classmethod
    def centered(cls, nvx, nvy, dvx, dvy, z0) -> "ImageGrid":
        origin = (-(nvx - 1) * dvx / 2.0, -(nvy - 1) * dvy / 2.0)
        return cls(nvx, nvy, dvx, dvy, z0, origin=origin)

    @property
    def N(self) -> int:
        return self.nvx * self.nvy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nvy, self.nvx)

    def positions(self) -> np.ndarray:
        """Voxel centres, shape ``(N, 3)``."""
        iy, ix = np.divmod(np.arange(self.N), self.nvx)
        pos = np.empty((self.N, 3))
        pos[:, 0] = self.origin[0] + ix * self.dvx
        pos[:, 1] = self.origin[1] + iy * self.dvy
        pos[:, 2] = self.z0
        return pos

    def voxel_index(self, position) -> int:
        """Index of the voxel nearest to an ``(x, y)`` position."""
        ix = int(round((position[0] - self.origin[0]) / self.dvx))
        iy = int(round((position[1] - self.origin[1]) / self.dvy))
        if not (0 <= ix < self.nvx and 0 <= iy < self.nvy):
            raise IndexError(f"position {position!r} is outside the image grid")
        return iy * self.nvx + ix

    def contains(self, x: float, y: float) -> bool:
        half_x, half_y = self.dvx / 2.0, self.dvy / 2.0
        x_lo, y_lo = self.origin[0] - half_x, self.origin[1] - half_y
        x_hi = self.origin[0] + (self.nvx - 1) * self.dvx + half_x
        y_hi = self.origin[1] + (self.nvy - 1) * self.dvy + half_y
        return x_lo <= x <= x_hi and y_lo <= y <= y_hi


@dataclass(frozen=True, eq=False)
class ReflectivityImage:
    """Complex reflectivity on an :class:`ImageGrid`, row-major."""

    grid: ImageGrid
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        if values.size != self.grid.N:
            raise ShapeError(f"image has {values.size} values, grid needs {self.grid.N}")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: ImageGrid) -> "ReflectivityImage":
        return cls(grid, np.zeros(grid.N, dtype=np.complex128))

    def as_array(self) -> np.ndarray:
        """Values reshaped to ``(nvy, nvx)``."""
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True, eq=False)
class MeasurementVector:
    """Complex per-look measurements ``y`` on an :class:`ApertureGrid`."""

    grid: ApertureGrid
    values: np.ndarray
    noise_power: float = 0.0

    def __post_init__(self):
        values = _readonly(self.values)
        if values.size != self.grid.L:
            raise ShapeError(f"measurement has {values.size} values, grid needs {self.grid.L}")
        object.__setattr__(self, "values", values)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True, eq=False)
class Scene:
    """Point reflectors on the target plane, or a dense reflectivity image.

    Reflectors are ``(x, y, sigma)`` triples; positions are metres on the
    plane ``z = z0`` and ``sigma`` is a complex reflectivity.
    """

    grid: ImageGrid
    reflectors: tuple = ()
    image: ReflectivityImage | None = None
    name: str = ""

    def __post_init__(self):
        if self.image is not None and self.reflectors:
            raise ConfigurationError("give either reflectors or a dense image, not both")
        if self.image is not None and self.image.grid != self.grid:
            raise ShapeError("dense image lives on a different grid")
        refl = tuple((float(x), float(y), complex(s)) for x, y, s in self.reflectors)
        for x, y, _ in refl:
            if not self.grid.contains(x, y):
                raise ConfigurationError(f"reflector at ({x}, {y}) lies outside the image grid")
        object.__setattr__(self, "reflectors", refl)

    @classmethod
    def from_image(cls, image: ReflectivityImage, name: str = "") -> "Scene":
        return cls(image.grid, image=image, name=name)

    @classmethod
    def from_voxels(cls, grid: ImageGrid, voxels: Iterable[tuple[int, complex]], name="") -> "Scene":
        """Reflectors placed exactly at the given voxel centres."""
        pos = grid.positions()
        refl = [(pos[n, 0], pos[n, 1], s) for n, s in voxels]
        return cls(grid, tuple(refl), name=name)

    @property
    def is_empty(self) -> bool:
        if self.image is not None:
            return not np.any(self.image.values)
        return not any(s != 0 for _, _, s in self.reflectors)

    def point_list(self) -> list[tuple[float, float, complex]]:
        """All scatterers as ``(x, y, sigma)``; dense images give one per nonzero voxel."""
        if self.image is None:
            return list(self.reflectors)
        pos = self.grid.positions()
        nz = np.flatnonzero(self.image.values)
        return [(pos[n, 0], pos[n, 1], complex(self.image.values[n])) for n in nz]

    def to_image(self) -> ReflectivityImage:
        """Discretise onto the grid; point reflectors go to their nearest voxel."""
        if self.image is not None:
            return self.image
        values = np.zeros(self.grid.N, dtype=np.complex128)
        for x, y, s in self.reflectors:
            values[self.grid.voxel_index((x, y))] += s
        return ReflectivityImage(self.grid, values)

    def scaled(self, factor: complex) -> "Scene":
        if self.image is not None:
            return Scene.from_image(ReflectivityImage(self.grid, self.image.values * factor), self.name)
        refl = tuple((x, y, s * factor) for x, y, s in self.reflectors)
        return Scene(self.grid, refl, name=self.name)


def look_position(grid: ApertureGrid, index: int) -> np.ndarray:
    """Phase-centre ``(x', y', 0)`` of look ``index`` (row-major enumeration)."""
    if not 0 <= index < grid.L:
        raise IndexError(f"look index {index} outside [0, {grid.L})")
    iy, ix = divmod(int(index), grid.nx)
    return np.array([grid.origin[0] + ix * grid.dx, grid.origin[1] + iy * grid.dy, 0.0])


class BistaticPath(NamedTuple):
    tau: np.ndarray
    r_t: np.ndarray
    r_r: np.ndarray
    r0: np.ndarray


def bistatic_delay(cfg: RadarConfig, tx, rx, r) -> BistaticPath:
    """Two-leg delay ``(|r - tx| + |r - rx|) / c``.

    Broadcasts over leading dimensions; the last axis holds coordinates.
    ``r0`` is the equivalent one-way distance ``(R_T + R_R) / 2``.
    """
    tx, rx, r = (np.asarray(v, dtype=float) for v in (tx, rx, r))
    r_t = np.linalg.norm(r - tx, axis=-1)
    r_r = np.linalg.norm(r - rx, axis=-1)
    return BistaticPath((r_t + r_r) / cfg.c, r_t, r_r, (r_t + r_r) / 2.0)


def seeded_rng(seed: int) -> np.random.Generator:
    """Independent PCG64 generator; equal seeds give equal streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def complex_gaussian(rng: np.random.Generator, size, variance: float = 1.0) -> np.ndarray:
    """Circular complex Gaussian draws with ``E|v|^2 = variance``."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))
