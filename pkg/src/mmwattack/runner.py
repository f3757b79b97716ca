"""Configuration-driven experiments: scan, attack, reconstruct, report.

An experiment is described by one JSON document.  Every section is
optional; missing fields take the defaults in :data:`DEFAULTS` and unknown
fields are errors.  ``run_experiment`` writes into ``output_dir``:

* ``clean.pgm/.mmwimg``, ``adversarial.pgm/.mmwimg`` and, when the
  strategy has one, ``target.pgm/.mmwimg``;
* ``w.npy`` with the attack weights;
* ``metrics.json`` (fixed key order);
* ``resolved_config.json``, the input with every default filled in;
* ``manifest.json`` listing each file with its SHA-256.
"""
from __future__ import annotations

import copy
import csv
import itertools
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import artifacts
from .attack import (
    DIAConfig,
    InjectionOperator,
    no_attack,
    strategy_conceal,
    strategy_random,
    strategy_swap,
)
from .core import (
    ApertureGrid,
    ConfigurationError,
    ImageGrid,
    NumericError,
    RadarConfig,
    Scene,
    ShapeError,
    StepSizeError,
    UnsupportedVariantError,
)
from .forward import PropagationOperator, synthesize_measurements
from .imaging import ReconstructorSpec, check_grids
from .metrics import default_roi, evaluate, to_magnitude
from .scenes import builtin_scene, scale_to_echo_energy

__all__ = [
    "DEFAULTS",
    "STRATEGIES",
    "ConfigParseError",
    "ExperimentConfig",
    "RunOutcome",
    "load_config",
    "run_experiment",
    "run_sweep",
]

STRATEGIES = ("conceal", "swap", "random", "none")

DEFAULTS = {
    "radar": {"f0": 77e9, "K": 3.2e14, "fs": 5e6, "n_samples": 256, "c": 299792458.0},
    "aperture": {
        "nx": 16, "ny": 16, "dx": 5e-3, "dy": 5e-3,
        "origin": None, "tx_offset": [0.0, 0.0], "rx_offset": [0.0, 0.0],
    },
    "image": {"nvx": 16, "nvy": 16, "dvx": 5e-3, "dvy": 5e-3, "z0": 0.23, "origin": None},
    "scene": "cross",
    "echo_energy": 1.0,
    "reconstructor": {
        "variant": "BPA", "lam_reg": 0.0, "mu": None, "theta": None, "iters": None,
        "evanescent_cutoff": True, "pad_factor": 2,
    },
    "attack": {
        "strategy": "conceal",
        "dia": {
            "lam": 1e-6, "step": None, "iters": 3000, "power_mode": "regularized",
            "power_cap": None, "tol": 1e-10, "seed": 0,
        },
        "attacker_position": None,
        "swap_scene": None,
        "random_power": 10.0,
    },
    "snr_db": 30.0,
    "seed": 0,
    "output_dir": "mmwattack_out",
}

# Fields whose default is null, with the kind of value they accept.
_NULLABLE = {
    "aperture.origin": "pair",
    "image.origin": "pair",
    "reconstructor.mu": "schedule",
    "reconstructor.theta": "schedule",
    "reconstructor.iters": "int",
    "attack.dia.step": "number",
    "attack.dia.power_cap": "number",
    "attack.attacker_position": "triple",
    "attack.swap_scene": "scene",
    "snr_db": "number",
    "echo_energy": "number",
}
_SCENE_FIELDS = {"scene", "attack.swap_scene"}


class ConfigParseError(ConfigurationError):
    """Malformed configuration, located by line and field where possible."""

    def __init__(self, message, field=None, line=None):
        self.field, self.line = field, line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


def _line_of(text: str | None, field: str) -> int | None:
    if not text:
        return None
    key = field.rsplit(".", 1)[-1]
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_kind(value, kind: str, field: str) -> None:
    ok = {
        "number": _is_number(value),
        "int": isinstance(value, int) and not isinstance(value, bool),
        "bool": isinstance(value, bool),
        "str": isinstance(value, str),
        "pair": isinstance(value, list) and len(value) == 2 and all(map(_is_number, value)),
        "triple": isinstance(value, list) and len(value) == 3 and all(map(_is_number, value)),
        "schedule": _is_number(value) or (isinstance(value, list) and value and all(map(_is_number, value))),
    }[kind]
    if not ok:
        raise ConfigParseError(f"expected {kind}, got {value!r}", field)


def _kind_of_default(value) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "str"
    return "pair"


def _normalise_scene(value, field: str) -> dict:
    if isinstance(value, str):
        value = {"shape": value}
    if not isinstance(value, dict):
        raise ConfigParseError("scene must be a shape name or an object", field)
    unknown = set(value) - {"shape", "amplitude", "reflectors"}
    if unknown:
        raise ConfigParseError(f"unknown key(s) {sorted(unknown)}", f"{field}.{sorted(unknown)[0]}")
    shape, refl = value.get("shape"), value.get("reflectors")
    if (shape is None) == (refl is None):
        raise ConfigParseError("give exactly one of 'shape' and 'reflectors'", field)
    amp = value.get("amplitude", 1.0)
    _check_kind(amp, "number", f"{field}.amplitude")
    if shape is not None:
        _check_kind(shape, "str", f"{field}.shape")
        return {"shape": shape, "amplitude": float(amp), "reflectors": None}
    if not isinstance(refl, list) or not refl:
        raise ConfigParseError("reflectors must be a non-empty list", f"{field}.reflectors")
    rows = []
    for item in refl:
        if not (isinstance(item, list) and len(item) in (3, 4) and all(map(_is_number, item))):
            raise ConfigParseError("each reflector is [x, y, re] or [x, y, re, im]", f"{field}.reflectors")
        x, y, re_, im_ = (list(map(float, item)) + [0.0])[:4]
        rows.append([x, y, re_, im_])
    return {"shape": None, "amplitude": float(amp), "reflectors": rows}


def _merge(defaults: dict, user, prefix: str = "") -> dict:
    if not isinstance(user, dict):
        raise ConfigParseError("expected an object", prefix.rstrip(".") or None)
    for key in user:
        if key not in defaults:
            raise ConfigParseError("unknown key", prefix + key)
    out = {}
    for key, dv in defaults.items():
        field = prefix + key
        if key not in user:
            out[key] = copy.deepcopy(dv)
            continue
        uv = user[key]
        if field in _SCENE_FIELDS:
            out[key] = None if uv is None else _normalise_scene(uv, field)
        elif isinstance(dv, dict):
            out[key] = _merge(dv, uv, field + ".")
        elif uv is None:
            if field not in _NULLABLE:
                raise ConfigParseError("may not be null", field)
            out[key] = None
        else:
            _check_kind(uv, _NULLABLE.get(field) or _kind_of_default(dv), field)
            out[key] = uv
    return out


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment description.

    ``resolved`` holds the JSON form with every default materialised;
    feeding it back through :meth:`from_dict` reproduces this object.
    """

    resolved: dict
    radar: RadarConfig
    aperture: ApertureGrid
    image: ImageGrid
    reconstructor: ReconstructorSpec
    dia: DIAConfig

    @classmethod
    def from_dict(cls, data, text: str | None = None) -> "ExperimentConfig":
        try:
            return cls._build(data)
        except ConfigParseError as exc:
            if exc.line is None and exc.field is not None:
                line = _line_of(text, exc.field)
                if line is not None:
                    raise ConfigParseError(str(exc).split(": ", 1)[-1], exc.field, line) from None
            raise

    @classmethod
    def _build(cls, data) -> "ExperimentConfig":
        r = _merge(DEFAULTS, data)
        if isinstance(r["scene"], str):
            r["scene"] = _normalise_scene(r["scene"], "scene")

        def build(field, fn, **kw):
            try:
                return fn(**kw)
            except (ConfigurationError, TypeError, ValueError) as exc:
                raise ConfigParseError(str(exc), field) from None

        radar = build("radar", RadarConfig, **r["radar"])
        ap = dict(r["aperture"])
        if ap["origin"] is None:
            ap["origin"] = [-(ap["nx"] - 1) * ap["dx"] / 2.0, -(ap["ny"] - 1) * ap["dy"] / 2.0]
        r["aperture"] = ap
        aperture = build("aperture", ApertureGrid, **{k: tuple(v) if isinstance(v, list) else v for k, v in ap.items()})
        im = dict(r["image"])
        if im["origin"] is None:
            im["origin"] = [-(im["nvx"] - 1) * im["dvx"] / 2.0, -(im["nvy"] - 1) * im["dvy"] / 2.0]
        r["image"] = im
        image = build("image", ImageGrid, **{k: tuple(v) if isinstance(v, list) else v for k, v in im.items()})

        rec = dict(r["reconstructor"])
        spec_kw = {k: tuple(v) if isinstance(v, list) else v for k, v in rec.items()}
        spec = build("reconstructor", ReconstructorSpec, **spec_kw)
        if rec["iters"] is None:
            rec["iters"] = spec.n_iters
            spec = build("reconstructor", ReconstructorSpec, **{**spec_kw, "iters": spec.n_iters})
        r["reconstructor"] = rec
        try:
            check_grids(spec, PropagationOperator(aperture, image, radar))
        except ConfigurationError as exc:
            raise ConfigParseError(str(exc), "reconstructor.variant") from None

        att = r["attack"]
        if att["strategy"] not in STRATEGIES:
            raise ConfigParseError(f"strategy must be one of {STRATEGIES}", "attack.strategy")
        dia = build("attack.dia", DIAConfig, **att["dia"])
        if att["attacker_position"] is None:
            att["attacker_position"] = [0.05, 0.0, image.z0]
        if att["random_power"] < 0:
            raise ConfigParseError("must be non-negative", "attack.random_power")
        if att["strategy"] == "swap" and att["swap_scene"] is None:
            raise ConfigParseError("the swap strategy needs a swap_scene", "attack.swap_scene")
        if r["echo_energy"] is not None and not r["echo_energy"] > 0:
            raise ConfigParseError("must be positive", "echo_energy")
        # Scenes are built here so bad shapes or off-grid reflectors fail validation.
        _build_scene(r["scene"], image, "scene")
        if att["swap_scene"] is not None:
            _build_scene(att["swap_scene"], image, "attack.swap_scene")
        return cls(r, radar, aperture, image, spec, dia)

    @property
    def seed(self) -> int:
        return int(self.resolved["seed"])


def _build_scene(spec: dict, grid: ImageGrid, field: str) -> Scene:
    try:
        if spec["shape"] is not None:
            return builtin_scene(spec["shape"], grid, spec["amplitude"])
        refl = [(x, y, spec["amplitude"] * complex(a, b)) for x, y, a, b in spec["reflectors"]]
        return Scene(grid, tuple(refl), name="reflectors")
    except ConfigurationError as exc:
        raise ConfigParseError(str(exc), field) from None


def load_config(path, seed: int | None = None, output_dir=None) -> ExperimentConfig:
    """Parse a JSON config file, applying optional seed and output overrides."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(data, dict):
        raise ConfigParseError("top level must be an object", line=1)
    if seed is not None:
        data["seed"] = int(seed)
    if output_dir is not None:
        data["output_dir"] = str(output_dir)
    return ExperimentConfig.from_dict(data, text)


@dataclass(frozen=True, eq=False)
class RunOutcome:
    metrics: dict
    output_dir: Path
    result: object


def _set_dotted(data: dict, path: str, value) -> None:
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigParseError("cannot descend into a non-object", path)
    node[keys[-1]] = value


def _scene_for(cfg, spec, H):
    scene = _build_scene(spec, cfg.image, "scene")
    energy = cfg.resolved["echo_energy"]
    return scene if energy is None else scale_to_echo_energy(H, scene, energy)


def _write_image(out: Path, stem: str, image, reference) -> list[str]:
    artifacts.write_pgm(out / f"{stem}.pgm", to_magnitude(image.as_array(), reference=reference.as_array()))
    artifacts.write_mmwimg(out / f"{stem}.mmwimg", image)
    return [f"{stem}.pgm", f"{stem}.mmwimg"]


def _write_manifest(out: Path, files, status="complete", error=None) -> None:
    manifest = {
        "status": status,
        "error": error,
        "files": {name: artifacts.sha256_file(out / name) for name in sorted(files)},
    }
    artifacts.write_json(out / "manifest.json", manifest)


def run_experiment(config, output_dir=None, seed: int | None = None) -> RunOutcome:
    """Run one scan-attack-reconstruct experiment and write its artifacts.

    ``config`` is an :class:`ExperimentConfig`, a dict or a path to a JSON
    file.  Numeric failures still write a manifest, marked ``partial``,
    before the error propagates.
    """
    if isinstance(config, (str, Path)):
        cfg = load_config(config, seed=seed, output_dir=output_dir)
    else:
        data = copy.deepcopy(config.resolved if isinstance(config, ExperimentConfig) else config)
        if seed is not None:
            data["seed"] = int(seed)
        if output_dir is not None:
            data["output_dir"] = str(output_dir)
        cfg = ExperimentConfig.from_dict(data)
    r = cfg.resolved
    out = Path(r["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_json(out / "resolved_config.json", r)
    files = ["resolved_config.json"]

    try:
        H = PropagationOperator.auto(cfg.aperture, cfg.image, cfg.radar)
        D = InjectionOperator.from_geometry(cfg.aperture, cfg.radar, r["attack"]["attacker_position"])
        noise_seq, attack_seq = np.random.SeedSequence(cfg.seed).spawn(2)
        scene = _scene_for(cfg, r["scene"], H)
        y = synthesize_measurements(
            H, scene, r["snr_db"], np.random.Generator(np.random.PCG64(noise_seq))
        )
        strategy = r["attack"]["strategy"]
        spec = cfg.reconstructor
        roi = None
        if strategy == "conceal":
            result = strategy_conceal(spec, H, y, D, cfg.dia)
        elif strategy == "swap":
            swap = _scene_for(cfg, r["attack"]["swap_scene"], H)
            result = strategy_swap(spec, H, y, D, swap, scene, cfg.dia)
            roi = default_roi(to_magnitude(result.target.as_array()))
        elif strategy == "random":
            rng = np.random.Generator(np.random.PCG64(attack_seq))
            result = strategy_random(spec, H, y, D, r["attack"]["random_power"], rng)
        else:
            result = no_attack(spec, H, y, D)
        for name, img in (("clean", result.clean_image), ("adversarial", result.adv_image)):
            if not np.all(np.isfinite(img.values)):
                raise NumericError(f"{name} image contains non-finite values")
        files += _write_image(out, "clean", result.clean_image, result.clean_image)
        files += _write_image(out, "adversarial", result.adv_image, result.clean_image)
        if result.target is not None:
            files += _write_image(out, "target", result.target, result.clean_image)
        np.save(out / "w.npy", result.w)
        files.append("w.npy")
        report = evaluate(result.clean_image, result.adv_image, result.target, result.power_ratio, roi)
    except (NumericError, StepSizeError) as exc:
        _write_manifest(out, files, status="partial", error=f"{type(exc).__name__}: {exc}")
        raise

    trace = result.objective_trace
    metrics = {
        "strategy": strategy,
        "variant": spec.variant,
        "seed": cfg.seed,
        **report.to_json_dict(),
        "weights_l2": math.sqrt(result.power_ratio),
        "iterations": result.iterations,
        "stop_reason": result.stop_reason,
        "objective_initial": trace[0] if trace else None,
        "objective_final": trace[-1] if trace else None,
    }
    artifacts.write_json(out / "metrics.json", metrics)
    files.append("metrics.json")
    _write_manifest(out, files)
    return RunOutcome(metrics, out, result)


METRIC_COLUMNS = ("psnr_ac", "ssim_ac", "psnr_at", "ssim_at", "power_ratio")


def _run_cell(args):
    data, out = args
    return run_experiment(data, output_dir=out).metrics


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    if all(v == vals[0] for v in vals):
        return vals[0], 0.0
    arr = np.asarray(vals, dtype=float)
    return float(arr.mean()), float(arr.std())


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def run_sweep(config, grid, output_dir=None, jobs: int = 1, seed: int | None = None) -> Path:
    """Cartesian sweep over dotted-path parameters, summarised as CSV.

    ``grid`` (dict or JSON path) has ``"parameters"``, a map from dotted
    config paths to value lists, and optionally ``"seeds"``.  Each cell runs
    once per seed in its own subdirectory; ``sweep.csv`` holds one row per
    cell with mean and standard deviation across seeds.
    """
    if isinstance(config, (str, Path)):
        base = load_config(config, output_dir=output_dir).resolved
    else:
        base = copy.deepcopy(config.resolved if isinstance(config, ExperimentConfig) else config)
        if output_dir is not None:
            base["output_dir"] = str(output_dir)
        base = ExperimentConfig.from_dict(base).resolved
    if isinstance(grid, (str, Path)):
        try:
            grid = json.loads(Path(grid).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigParseError(f"sweep grid: {exc.msg}", line=exc.lineno) from None
        except OSError as exc:
            raise ConfigParseError(f"cannot read sweep grid: {exc}") from None
    if not isinstance(grid, dict) or set(grid) - {"parameters", "seeds"}:
        raise ConfigParseError("sweep grid must be an object with 'parameters' and optional 'seeds'")
    params = grid.get("parameters") or {}
    if not params or any(not isinstance(v, list) or not v for v in params.values()):
        raise ConfigurationError("empty sweep: list at least one parameter with at least one value")
    seeds = grid.get("seeds")
    if seeds is None:
        seeds = [base["seed"] if seed is None else int(seed)]
    if not seeds:
        raise ConfigurationError("empty sweep: no seeds")
    names = list(params)
    out = Path(base["output_dir"])
    out.mkdir(parents=True, exist_ok=True)

    cells, tasks = [], []
    for i, combo in enumerate(itertools.product(*(params[n] for n in names))):
        cell = copy.deepcopy(base)
        for name, value in zip(names, combo):
            _set_dotted(cell, name, value)
        ExperimentConfig.from_dict(cell)  # validate before launching anything
        cells.append(combo)
        for s in seeds:
            run = copy.deepcopy(cell)
            run["seed"] = int(s)
            tasks.append((run, str(out / f"cell_{i:03d}" / f"seed_{s}")))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    path = out / "sweep.csv"
    per = len(seeds)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["cell", *names, "n_seeds"]
        for m in METRIC_COLUMNS:
            header += [f"{m}_mean", f"{m}_std"]
        writer.writerow(header)
        for i, combo in enumerate(cells):
            rows = results[i * per : (i + 1) * per]
            line = [i, *(json.dumps(v) for v in combo), per]
            for m in METRIC_COLUMNS:
                vals = []
                for row in rows:
                    v = row.get(m)
                    if v is not None and row.get(f"{m}_infinite"):
                        v = math.inf
                    vals.append(v)
                mean, std = _stats(vals)
                line += [_fmt(mean), _fmt(std)]
            writer.writerow(line)
    return path


# Errors the CLI maps to exit status 2.
CONFIG_ERRORS = (ConfigurationError, ShapeError, UnsupportedVariantError)
