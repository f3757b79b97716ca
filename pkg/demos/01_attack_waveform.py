"""From a transmitted waveform to a planted measurement.

An attacker who knows the radar's chirp can synthesise a signal that, once
the radar dechirps it and reads the image-plane range bin, shows up as an
arbitrary complex value at every aperture look.  This script builds that
waveform for a 4x4 aperture and checks what the radar actually measures.
"""
import numpy as np

from mmwattack.core import ApertureGrid, RadarConfig, seeded_rng
from mmwattack.waveform import ChirpSpec, attack_params, dechirp, extract_measurement, received_attack_waveform

# Plane depth chosen so the beat tone sits exactly on DFT bin 25.
cfg = RadarConfig(c=3e8, K=3.2e14, fs=5e6, n_samples=256)
z0 = 25 * cfg.fs / (cfg.n_samples * cfg.K) * cfg.c / 2
spec = ChirpSpec(cfg)
grid = ApertureGrid.centered(4, 4, 1e-3, 1e-3)
r_A = np.array([0.05, 0.0, z0])  # attacker antenna, 5 cm off-axis

rng = seeded_rng(0)
wanted = rng.standard_normal(grid.L) + 1j * rng.standard_normal(grid.L)
params = attack_params(spec, grid, z0, r_A, measurement_weights=wanted)

print(f"plane depth {z0 * 100:.2f} cm, {grid.L} looks")
print("look   wanted            measured / path phase")
rx = grid.rx_positions()
for look in range(grid.L):
    s = received_attack_waveform(spec, grid, params, look)
    y = extract_measurement(dechirp(spec, s, look), spec, z0, compensate=True)
    # The attacker's one-way path adds a known phase on top of the planted value.
    y_planted = y * np.exp(-1j * cfg.k * np.linalg.norm(r_A - rx[look]))
    print(f"{look:>4}   {wanted[look]:>16.4f}  {y_planted:>16.4f}")
