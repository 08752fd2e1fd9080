"""Configuration parsing and run persistence.

Config files are INI-style (key = value under nested sections) and map 1:1
to the scalar parameter set plus run options; every key has a documented
default, unknown keys are rejected.  Field snapshots are flat little-endian
float64 binaries with a JSON sidecar carrying the grid descriptor, frame,
parity and rescaled time.  A manifest lists every output with its sha256 so
re-reads can be checked.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .evolution import SimOptions
from .grid import Grid, Params, ScalarField, build_grid

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "s", "t_phys", "lambda", "mu", "l1", "l2", "lam_rate", "eps_hk",
    "X", "Y", "E", "l12_drift", "compat_resid", "diff_pref_ratio",
    "dX_scaling", "dX_transport", "dX_diffusion",
    "dE2_scaling", "dE2_transport", "dE2_coupling",
]


@dataclass
class InitialData:
    """Gaussian-bump initial data in the log-radial coordinate."""

    theta_amplitude: float = 0.0
    theta_center: float = 0.0
    theta_width: float = 1.0
    eps_amplitude: float = 0.0
    eps_center: float = 0.0
    eps_width: float = 1.0
    e0_target: float | None = None     # rescale fields to hit E(0)


@dataclass
class RunConfig:
    params: Params
    options: SimOptions
    initial: InitialData
    snapshot_every: int = 0

    def echo(self) -> dict:
        return {"params": asdict(self.params),
                "options": asdict(self.options),
                "initial": asdict(self.initial),
                "snapshot_every": self.snapshot_every}


_SCHEMA = {
    "model": {"alpha": float, "delta": float, "k": int},
    "grid": {"n_beta": int, "n_sigma": int,
             "sigma_min": float, "sigma_max": float},
    "modulation": {"lambda0": float, "l2_0": float},
    "time": {"dt": float, "s_end": float},
    "solver": {"tol_linear": float, "tol_quad": float},
    "initial": {"theta_amplitude": float, "theta_center": float,
                "theta_width": float, "eps_amplitude": float,
                "eps_center": float, "eps_width": float,
                "e0_target": float, "forcing": bool,
                "freeze_velocity": bool, "freeze_modulation": bool},
    "output": {"snapshot_every": int},
}

_PARAM_KEYS = {
    ("model", "alpha"): "alpha", ("model", "delta"): "delta",
    ("model", "k"): "k",
    ("grid", "n_beta"): "n_beta", ("grid", "n_sigma"): "n_sigma",
    ("grid", "sigma_min"): "sigma_min", ("grid", "sigma_max"): "sigma_max",
    ("modulation", "lambda0"): "lambda_0", ("modulation", "l2_0"): "l2_0",
    ("time", "dt"): "dt", ("time", "s_end"): "s_end",
    ("solver", "tol_linear"): "tol_linear",
    ("solver", "tol_quad"): "tol_quad",
}


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    params_kw: dict = {}
    init_kw: dict = {}
    opt_kw: dict = {}
    snapshot_every = 0
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            typ = _SCHEMA[section][key]
            try:
                value = (cp.getboolean(section, key) if typ is bool
                         else typ(raw))
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r}") from exc
            if (section, key) in _PARAM_KEYS:
                params_kw[_PARAM_KEYS[(section, key)]] = value
            elif section == "initial":
                if key in ("forcing", "freeze_velocity", "freeze_modulation"):
                    opt_kw[key] = value
                else:
                    init_kw[key] = value
            elif (section, key) == ("output", "snapshot_every"):
                snapshot_every = value
    try:
        params = Params(**params_kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(params=params, options=SimOptions(**opt_kw),
                     initial=InitialData(**init_kw),
                     snapshot_every=snapshot_every)


def default_config_text() -> str:
    """A commented config with every key at its default."""
    return """\
[model]
alpha = 0.1
; delta defaults to alpha when omitted
k = 4

[grid]
n_beta = 128
n_sigma = 129
sigma_min = -20.0
sigma_max = 20.0

[modulation]
lambda0 = 1.0
l2_0 = 1.0

[time]
dt = 0.01
s_end = 10.0

[solver]
tol_linear = 1e-10
tol_quad = 1e-8

[initial]
theta_amplitude = 0.0
theta_center = 0.0
theta_width = 1.0
eps_amplitude = 0.0
eps_center = 0.0
eps_width = 1.0
; e0_target rescales the initial fields so E(0) equals the given value
forcing = true
freeze_velocity = false
freeze_modulation = false

[output]
snapshot_every = 0
"""


def write_field(directory: str | Path, name: str, field: ScalarField,
                s: float = 0.0, extra: dict | None = None) -> Path:
    """Write `<name>.f64` (little-endian float64, row-major sigma x beta)
    plus a JSON sidecar with the grid descriptor and tags."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bin_path = directory / f"{name}.f64"
    field.data.astype("<f8").tofile(bin_path)
    meta = {
        "field": name,
        "dtype": "<f8",
        "order": "C",
        "shape": list(field.data.shape),
        "frame": field.frame,
        "parity": list(field.parity),
        "s": s,
        "grid": field.grid.descriptor(),
    }
    if extra:
        meta.update(extra)
    (directory / f"{name}.json").write_text(json.dumps(meta, indent=2,
                                                       sort_keys=True))
    return bin_path


def read_field(bin_path: str | Path) -> ScalarField:
    """Rebuild a field (and its grid) from a snapshot pair."""
    bin_path = Path(bin_path)
    meta = json.loads(bin_path.with_suffix(".json").read_text())
    g = meta["grid"]
    params = Params(n_sigma=g["n_sigma"], n_beta=g["n_beta"],
                    sigma_min=g["sigma_min"], sigma_max=g["sigma_max"])
    grid = build_grid(params)
    data = np.fromfile(bin_path, dtype="<f8").reshape(meta["shape"])
    return ScalarField(grid, data, meta["frame"], tuple(meta["parity"]))


class CsvWriter:
    """Fixed-column CSV with value formatting that reproduces bit-identically
    for identical runs (17 significant digits round-trip float64)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(CSV_COLUMNS)

    def write_row(self, row: dict):
        self._writer.writerow([f"{float(row.get(c, 0.0)):.17g}"
                               for c in CSV_COLUMNS])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_history(path: str | Path) -> list[dict]:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append({k: float(v) for k, v in record.items()})
    return rows


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str | Path, config_echo: dict, grid: Grid,
                   seed: int | None, s_start: float, s_end: float) -> Path:
    """Inventory every file in the run directory with checksums."""
    out_dir = Path(out_dir)
    outputs = []
    for p in sorted(out_dir.iterdir()):
        if p.name == "run_manifest.json" or p.is_dir():
            continue
        outputs.append({"path": p.name, "sha256": sha256_of(p),
                        "bytes": p.stat().st_size})
    manifest = {
        "code_version": __version__,
        "config": config_echo,
        "grid": grid.descriptor(),
        "seed": seed,
        "s_start": s_start,
        "s_end": s_end,
        "outputs": outputs,
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def verify_manifest(out_dir: str | Path) -> bool:
    """Re-hash every listed output; True when all checksums match."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "run_manifest.json").read_text())
    for entry in manifest["outputs"]:
        p = out_dir / entry["path"]
        if not p.exists() or sha256_of(p) != entry["sha256"]:
            return False
    return True
