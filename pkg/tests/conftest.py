"""Shared desk-scale instances."""
import sys
from dataclasses import dataclass

import numpy as np
import pytest

from mmwattack.attack import InjectionOperator
from mmwattack.core import ApertureGrid, ImageGrid, RadarConfig
from mmwattack.forward import PropagationOperator


@dataclass(frozen=True)
class Instance:
    cfg: RadarConfig
    aperture: ApertureGrid
    image: ImageGrid
    H: PropagationOperator
    D: InjectionOperator


def make_instance(n=16, pitch=5e-3, z0=0.23, r_A=(0.05, 0.0, 0.23), **aperture_kw):
    cfg = RadarConfig()
    ap = ApertureGrid.centered(n, n, pitch, pitch, **aperture_kw)
    im = ImageGrid.centered(n, n, pitch, pitch, z0)
    H = PropagationOperator.auto(ap, im, cfg)
    return Instance(cfg, ap, im, H, InjectionOperator.from_geometry(ap, cfg, r_A))


@pytest.fixture(scope="session")
def desk():
    return make_instance(16)


@pytest.fixture(scope="session")
def small():
    return make_instance(8)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def fd_gradient(f, w, h):
    """Central-difference Wirtinger gradient ``df/dRe + j df/dIm`` of a real function."""
    g = np.empty(w.size, dtype=complex)
    for i in range(w.size):
        e = np.zeros(w.size, dtype=complex)
        e[i] = h
        dre = (f(w + e) - f(w - e)) / (2 * h)
        dim = (f(w + 1j * e) - f(w - 1j * e)) / (2 * h)
        g[i] = dre + 1j * dim
    return g


def desk_measurements(inst, scene_name="cross", energy=1.0, snr_db=30.0, seed=0):
    from mmwattack.forward import synthesize_measurements
    from mmwattack.scenes import builtin_scene, scale_to_echo_energy

    from mmwattack.core import seeded_rng

    scene = scale_to_echo_energy(inst.H, builtin_scene(scene_name, inst.image), energy)
    return scene, synthesize_measurements(inst.H, scene, snr_db, seeded_rng(seed))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
