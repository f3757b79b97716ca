"""Built-in desk scenes: binary shapes rasterised onto an image grid."""
from __future__ import annotations

import numpy as np

from .core import ConfigurationError, ImageGrid, ReflectivityImage, Scene
from .forward import PropagationOperator

__all__ = ["SCENE_NAMES", "DESK_SCENES", "builtin_scene", "scale_to_echo_energy"]


def _point(u, v):
    return (np.abs(u) < 0.07) & (np.abs(v) < 0.07)


def _two_points(u, v):
    return ((np.abs(u + 0.35) < 0.07) | (np.abs(u - 0.35) < 0.07)) & (np.abs(v) < 0.07)


def _cross(u, v):
    return ((np.abs(u) < 0.14) & (np.abs(v) < 0.65)) | ((np.abs(v) < 0.14) & (np.abs(u) < 0.65))


def _square(u, v):
    outer = (np.abs(u) < 0.62) & (np.abs(v) < 0.62)
    inner = (np.abs(u) < 0.36) & (np.abs(v) < 0.36)
    return outer & ~inner


def _letter_l(u, v):
    stem = (u > -0.55) & (u < -0.25) & (np.abs(v) < 0.65)
    foot = (v > 0.35) & (v < 0.65) & (u > -0.55) & (u < 0.55)
    return stem | foot


def _bar(u, v):
    return (np.abs(v) < 0.14) & (np.abs(u) < 0.7)


_SHAPES = {
    "point": _point,
    "two_points": _two_points,
    "cross": _cross,
    "square": _square,
    "letter_L": _letter_l,
    "bar": _bar,
}

SCENE_NAMES = tuple(_SHAPES)
DESK_SCENES = ("cross", "square", "letter_L")


def builtin_scene(name: str, grid: ImageGrid, amplitude: complex = 1.0) -> Scene:
    """Binary shape ``name`` with reflectivity ``amplitude`` on its support.

    Shapes live in normalised coordinates ``u, v`` in [-1, 1] spanning the
    grid, with ``v`` increasing along rows.
    """
    try:
        shape = _SHAPES[name]
    except KeyError:
        raise ConfigurationError(f"unknown scene {name!r}; choose from {SCENE_NAMES}") from None
    u = np.linspace(-1, 1, grid.nvx) if grid.nvx > 1 else np.zeros(1)
    v = np.linspace(-1, 1, grid.nvy) if grid.nvy > 1 else np.zeros(1)
    U, V = np.meshgrid(u, v)
    mask = shape(U, V)
    if not mask.any():
        # Coarse grids can miss thin features entirely; fall back to the centre voxel.
        mask[grid.nvy // 2, grid.nvx // 2] = True
    values = np.where(mask, complex(amplitude), 0.0).reshape(-1)
    return Scene.from_image(ReflectivityImage(grid, values), name=name)


def scale_to_echo_energy(H: PropagationOperator, scene: Scene, energy: float) -> Scene:
    """Rescale ``scene`` so that ``||H alpha||^2 == energy``."""
    if energy <= 0:
        raise ConfigurationError("echo energy must be positive")
    y = H.matvec(scene.to_image().values)
    current = float(np.vdot(y, y).real)
    if current == 0:
        raise ConfigurationError("cannot rescale an empty scene")
    return scene.scaled(np.sqrt(energy / current))
