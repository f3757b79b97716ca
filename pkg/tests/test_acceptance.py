"""Acceptance suite: one test per criterion, each with its runtime budget.

Every test records a PASS/FAIL line in ``RESULTS``; the terminal summary
hook in ``conftest.py`` prints them after the run.  Running this file
directly (``python tests/test_acceptance.py``) does the same through pytest.
"""
import json
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from mmwattack.attack import (
    DIAConfig,
    closed_form_oracle,
    dia_gradient,
    dia_objective,
    dia_optimize,
    no_attack,
    strategy_conceal,
    strategy_random,
    strategy_swap,
)
from mmwattack.core import ApertureGrid, ImageGrid, RadarConfig, ReflectivityImage, Scene, seeded_rng
from mmwattack.forward import PropagationOperator, operator_norm, synthesize_measurements, timedomain_consistency
from mmwattack.imaging import VARIANTS, ReconstructorSpec, reconstruct_values, vjp
from mmwattack.metrics import evaluate
from mmwattack.runner import run_experiment
from mmwattack.scenes import DESK_SCENES, builtin_scene, scale_to_echo_energy
from mmwattack.waveform import (
    AttackParams,
    ChirpSpec,
    _delayed_chirp,
    attack_params,
    dechirp,
    extract_attack,
    extract_measurement,
    received_attack_waveform,
    synth_attack_waveform,
)

from conftest import crandn, desk_measurements, fd_gradient, make_instance

RESULTS = {}

# Plane depth whose beat tone falls exactly on bin 25, free of scalloping.
ON_BIN = RadarConfig(c=3e8, K=3.2e14, fs=5e6, n_samples=256)
Z_ON_BIN = 25 * ON_BIN.fs / (ON_BIN.n_samples * ON_BIN.K) * ON_BIN.c / 2


@contextmanager
def criterion(number, title, budget):
    t0 = time.perf_counter()
    detail = {}
    ok = False
    try:
        yield detail
        ok = True
    finally:
        elapsed = time.perf_counter() - t0
        in_budget = elapsed < budget
        status = "PASS" if ok and in_budget else "FAIL"
        note = detail.get("note", "")
        if ok and not in_budget:
            note = f"over budget; {note}"
        RESULTS[number] = f"[{status}] #{number:>2} {title} ({elapsed:.1f}s / {budget:.0f}s) {note}".rstrip()
    assert in_budget, f"criterion {number} took {elapsed:.1f}s, budget {budget}s"


def _lin_spec(variant, H=None, y=None):
    if variant in ("CSA", "RMIST"):
        return ReconstructorSpec(variant, lam_reg=0.05 * np.max(np.abs(H.rmatvec(y.values))))
    return ReconstructorSpec(variant)


def test_01_chirp_shift_identity():
    with criterion(1, "chirp-shift identity, 100 random (beta, f0, K)", 5) as d:
        rng = seeded_rng(101)
        worst = 0.0
        for _ in range(100):
            cfg = RadarConfig(f0=rng.uniform(60e9, 81e9), K=rng.uniform(1e13, 1e15), fs=5e6, n_samples=256)
            spec = ChirpSpec(cfg)
            beta = rng.uniform(0.0, 50e-9)
            w = complex(rng.uniform(0.1, 3.0) * np.exp(1j * rng.uniform(-np.pi, np.pi)))
            phi = -2 * np.pi * cfg.f0 * beta + np.pi * cfg.K * beta**2
            p = AttackParams(np.array([w]), np.zeros(3), np.array([cfg.K * beta]), np.array([beta]),
                             np.array([phi]), np.array([w * np.exp(-1j * phi)]))
            lhs = p.c_gain[0] * _delayed_chirp(spec, beta)
            worst = max(worst, float(np.max(np.abs(lhs - synth_attack_waveform(spec, p, 0)))))
        d["note"] = f"max deviation {worst:.2e}"
        assert worst < 1e-10


def test_02_planted_measurement_end_to_end():
    with criterion(2, "attack waveform -> dechirp -> bin equals w e^{j2kR}, 64 looks", 30) as d:
        spec = ChirpSpec(ON_BIN)
        grid = ApertureGrid.centered(8, 8, 1e-3, 1e-3)
        r_A = np.array([0.05, 0.0, Z_ON_BIN])
        w = crandn(seeded_rng(102), grid.L)
        params = attack_params(spec, grid, Z_ON_BIN, r_A, measurement_weights=w)
        mag_err, ph_err = 0.0, 0.0
        rx = grid.rx_positions()
        for look in range(grid.L):
            y = extract_measurement(dechirp(spec, received_attack_waveform(spec, grid, params, look), look),
                                    spec, Z_ON_BIN, compensate=True)
            expected = w[look] * np.exp(1j * ON_BIN.k * np.linalg.norm(r_A - rx[look]))
            mag_err = max(mag_err, abs(abs(y) / abs(expected) - 1))
            ph_err = max(ph_err, abs(np.angle(y / expected)))
        d["note"] = f"magnitude {mag_err:.2e}, phase {ph_err:.2e} rad"
        assert mag_err < 0.02 and ph_err < 0.05


def test_03_adjoint_and_materialization():
    with criterion(3, "dot-product test (20 pairs) and matrix-free vs materialized", 60) as d:
        rng = seeded_rng(103)
        cfg = RadarConfig()
        worst_dot, worst_mat = 0.0, 0.0
        for i in range(20):
            nl, nv = (32, 32) if i == 0 else (int(rng.integers(2, 33)), int(rng.integers(2, 33)))
            ap = ApertureGrid.centered(nl, nl, 5e-3, 5e-3)
            im = ImageGrid.centered(nv, nv, 5e-3, 5e-3, 0.23)
            H = PropagationOperator(ap, im, cfg, "matrix-free")
            x, y = crandn(rng, im.N), crandn(rng, ap.L)
            lhs, rhs = np.vdot(y, H.matvec(x)), np.vdot(H.rmatvec(y), x)
            worst_dot = max(worst_dot, abs(lhs - rhs) / abs(lhs))
            assert ap.L * im.N <= 2**22
            M = PropagationOperator(ap, im, cfg, "materialized")
            for a, b in ((H.matvec(x), M.matvec(x)), (H.rmatvec(y), M.rmatvec(y))):
                worst_mat = max(worst_mat, np.linalg.norm(a - b) / np.linalg.norm(b))
        d["note"] = f"dot {worst_dot:.2e}, materialized {worst_mat:.2e}"
        assert worst_dot < 1e-10 and worst_mat < 1e-12


def test_04_timedomain_consistency():
    with criterion(4, "time-domain pipeline vs y = H alpha", 60) as d:
        ap = ApertureGrid.centered(4, 4, 5e-4, 5e-4)
        im = ImageGrid.centered(4, 4, 5e-4, 5e-4, Z_ON_BIN)
        H = PropagationOperator(ap, im, ON_BIN, "materialized")
        rng = seeded_rng(104)
        plain, comp = 0.0, 0.0
        for _ in range(3):
            idx = rng.choice(im.N, size=4, replace=False)
            scene = Scene.from_voxels(im, [(int(i), float(rng.uniform(0.3, 1.0))) for i in idx])
            plain = max(plain, timedomain_consistency(H, scene).max_error)
            comp = max(comp, timedomain_consistency(H, scene, compensate=True).max_error)
        d["note"] = f"plain {plain:.2e}, compensated {comp:.2e}"
        assert plain < 0.02 and comp < 0.005


def test_05_gradients():
    with criterion(5, "DIA Wirtinger gradients vs central differences", 120) as d:
        inst = make_instance(8)
        _, y = desk_measurements(inst, "cross")
        rng = seeded_rng(105)
        worst = {}
        for variant in VARIANTS:
            spec = _lin_spec(variant, inst.H, y)
            scale = np.abs(reconstruct_values(spec, inst.H, y.values)).max()
            h = 1e-6 if spec.is_linear else 1e-7
            errs = []
            for _ in range(5):
                target = ReflectivityImage(inst.image, 0.2 * scale * crandn(rng, inst.image.N))
                w = 0.1 * crandn(rng, inst.aperture.L)
                f = lambda v: dia_objective(spec, inst.H, y, inst.D, target, 1e-3, v)
                g = dia_gradient(spec, inst.H, y, inst.D, target, 1e-3, w)
                errs.append(np.linalg.norm(fd_gradient(f, w, h) - g) / np.linalg.norm(g))
            worst[variant] = max(errs)
        d["note"] = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
        for variant, err in worst.items():
            assert err < (1e-5 if variant in ("BPA", "MFA", "RMA") else 1e-4), variant


def test_06_oracle_equivalence():
    with criterion(6, "DIA descent vs closed-form Tikhonov oracle", 120) as d:
        inst = make_instance(8)
        _, y = desk_measurements(inst, "cross")
        rng = seeded_rng(106)
        gaps = []
        for variant in ("BPA", "MFA", "RMA"):
            spec = ReconstructorSpec(variant)
            fwd = lambda v: reconstruct_values(spec, inst.H, inst.D.apply(v))
            adj = lambda r: inst.D.adjoint(vjp(spec, inst.H, y, r).values)
            norm = operator_norm(fwd, adj, inst.aperture.L)
            lam = 0.05 * norm**2
            scale = np.abs(reconstruct_values(spec, inst.H, y.values)).max()
            for _ in range(3):
                t = ReflectivityImage(inst.image, scale * crandn(rng, inst.image.N))
                r = dia_optimize(DIAConfig(target=t, lam=lam, iters=5000, tol=1e-12), spec, inst.H, y, inst.D)
                wo = closed_form_oracle(spec, inst.H, y, inst.D, t, lam)
                fo = dia_objective(spec, inst.H, y, inst.D, t, lam, wo)
                fg = dia_objective(spec, inst.H, y, inst.D, t, lam, r.w)
                gaps.append((fg - fo) / fo)
        d["note"] = f"max relative gap {max(gaps):.2e}"
        assert max(gaps) < 1e-3


def test_07_conceal_bpa():
    with criterion(7, "desk 16x16 BPA conceal, lambda = 1e-6", 120) as d:
        inst = make_instance(16)
        _, y = desk_measurements(inst, "cross")
        r = strategy_conceal(ReconstructorSpec("BPA"), inst.H, y, inst.D, DIAConfig(lam=1e-6))
        m = evaluate(r.clean_image, r.adv_image, r.target, r.power_ratio)
        d["note"] = f"SSIM_AT {m.ssim_at:.4f}, SSIM_AC {m.ssim_ac:.4f}"
        assert m.ssim_at >= 0.99 and m.ssim_ac <= 0.3


def test_08_directional_finding():
    with criterion(8, "all reconstructors: attack lowers AC and raises AT similarity", 600) as d:
        inst = make_instance(16)
        dia = DIAConfig(lam=1e-6, iters=3000)
        failures, cases = [], 0
        for variant in VARIANTS:
            for name in DESK_SCENES:
                scene, y = desk_measurements(inst, name)
                spec = _lin_spec(variant, inst.H, y)
                others = [s for s in DESK_SCENES if s != name]
                runs = [("conceal", strategy_conceal(spec, inst.H, y, inst.D, dia))]
                for other in others:
                    swap = scale_to_echo_energy(inst.H, builtin_scene(other, inst.image), 1.0)
                    runs.append((f"swap->{other}", strategy_swap(spec, inst.H, y, inst.D, swap, scene, dia)))
                for label, r in runs:
                    cases += 1
                    base = evaluate(r.clean_image, r.clean_image, r.target, 0.0)
                    m = evaluate(r.clean_image, r.adv_image, r.target, r.power_ratio)
                    if not (m.ssim_at > base.ssim_at and m.ssim_ac < base.ssim_ac):
                        failures.append(f"{variant}/{name}/{label}")
        d["note"] = f"{cases - len(failures)}/{cases} cases"
        assert not failures, failures


def test_09_power_accounting(tmp_path):
    with criterion(9, "power ratio equals ||w||^2, caps hold, random P=10 reports 10", 10) as d:
        inst = make_instance(8)
        _, y = desk_measurements(inst)
        bpa = ReconstructorSpec("BPA")
        errs = []
        r = strategy_conceal(bpa, inst.H, y, inst.D, DIAConfig(lam=1e-6, iters=300))
        errs.append(abs(r.power_ratio - float(np.vdot(r.w, r.w).real)))
        r_tot = strategy_conceal(bpa, inst.H, y, inst.D, DIAConfig(power_mode="total_cap", power_cap=0.05, iters=300))
        r_look = strategy_conceal(bpa, inst.H, y, inst.D, DIAConfig(power_mode="per_look_cap", power_cap=2e-4, iters=300))
        r_rand = strategy_random(bpa, inst.H, y, inst.D, 10.0, seeded_rng(109))
        out = run_experiment({"attack": {"dia": {"iters": 300}}, "output_dir": str(tmp_path)})
        w = np.load(tmp_path / "w.npy")
        errs.append(abs(out.metrics["power_ratio"] - float(np.vdot(w, w).real)))
        d["note"] = f"accounting {max(errs):.1e}, total {r_tot.power_ratio:.15f}, random {r_rand.power_ratio!r}"
        assert max(errs) <= 1e-12
        assert r_tot.power_ratio <= 0.05 + 1e-12
        assert np.max(np.abs(r_look.w) ** 2) <= 2e-4 + 1e-12
        assert abs(r_rand.power_ratio - 10.0) <= 1e-12


def test_10_randomization_degradation():
    with criterion(10, "random w at P=10 drops PSNR_AC by >= 10 dB (BPA)", 60) as d:
        inst = make_instance(16)
        bpa = ReconstructorSpec("BPA")
        drops = []
        for i, name in enumerate(DESK_SCENES):
            scene, y = desk_measurements(inst, name, seed=2 * i)
            # No-attack baseline: a second acquisition of the same scene with fresh noise.
            y2 = synthesize_measurements(inst.H, scene, 30.0, seeded_rng(2 * i + 1))
            clean = no_attack(bpa, inst.H, y, inst.D).clean_image
            again = no_attack(bpa, inst.H, y2, inst.D).clean_image
            baseline = evaluate(clean, again).psnr_ac
            r = strategy_random(bpa, inst.H, y, inst.D, 10.0, seeded_rng(110 + i))
            drops.append(baseline - evaluate(r.clean_image, r.adv_image, power_ratio=r.power_ratio).psnr_ac)
        d["note"] = "drops " + ", ".join(f"{x:.1f}" for x in drops) + " dB"
        assert min(drops) >= 10


def test_11_extraction():
    with criterion(11, "extraction recovers (d, a, tone)", 10) as d:
        rng = seeded_rng(111)
        n = np.arange(256)
        worst_a, worst_t = 0.0, 0.0
        for shift in (-5, -1, 0, 2, 7):
            s1 = crandn(rng, 256)
            ref = np.roll(s1, shift)
            if shift > 0:
                ref[:shift] = 0
            elif shift < 0:
                ref[shift:] = 0
            tone = 0.3 * np.exp(2j * np.pi * rng.uniform(0.05, 0.2) * n)
            tone -= np.vdot(ref, tone) / np.vdot(ref, ref) * ref
            a = rng.uniform(0.2, 2.0) * np.exp(1j * rng.uniform(-np.pi, np.pi))
            res = extract_attack(s1, a * ref + tone, 8)
            assert res.d == shift
            worst_a = max(worst_a, abs(res.a - a) / abs(a))
            worst_t = max(worst_t, np.linalg.norm(res.residual - tone) / np.linalg.norm(tone))
        d["note"] = f"a {worst_a:.1e}, tone {worst_t:.1e}"
        assert worst_a < 1e-6 and worst_t < 1e-6


def test_12_determinism(tmp_path):
    with criterion(12, "identical config and seed give byte-identical metrics.json", 60) as d:
        cfg = {"reconstructor": {"variant": "CSA"}, "attack": {"strategy": "random"}, "seed": 7}
        a = run_experiment(cfg, output_dir=tmp_path / "a").output_dir / "metrics.json"
        b = run_experiment(cfg, output_dir=tmp_path / "b").output_dir / "metrics.json"
        c = run_experiment({"seed": 7}, output_dir=tmp_path / "c").output_dir / "metrics.json"
        e = run_experiment({"seed": 7}, output_dir=tmp_path / "e").output_dir / "metrics.json"
        d["note"] = f"{len(a.read_bytes())} and {len(c.read_bytes())} bytes"
        assert a.read_bytes() == b.read_bytes() and c.read_bytes() == e.read_bytes()
        assert json.loads(a.read_text())["seed"] == 7


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
