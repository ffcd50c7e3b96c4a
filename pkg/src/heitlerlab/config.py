"""Run configuration: JSON documents validated against the shipped schema."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from .errors import ConfigError
from .model import HomodyneConfig, SystemParams
from .trajectory import DEFAULT_LIFETIME_PS, DetectorChain, UnravelingConfig

DEFAULTS = {
    "seed": 0,
    "system": {"omega": 0.15, "gamma": 1.0},
    "homodyne": {"f": 0.0, "phi": math.pi},
    "simulation": {
        "duration": 1e6,
        "dt": 1e-3,
        "lifetime_ps": DEFAULT_LIFETIME_PS,
        "segment_length": 1e6,
        "workers": None,
    },
    "detectors": {
        "splitting": [0.5, 0.25, 0.25],
        "efficiency": [1.0, 1.0, 1.0],
        "jitter_ps": [20.0, 20.0, 20.0],
        "dead_time_ps": [0.0, 0.0, 0.0],
        "phase_jitter_sigma": 0.0,
        "phase_jitter_tau": 1e4,
    },
    "analysis": {
        "g2_bin_ps": 200,
        "g2_window_ns": 25.0,
        "g3_bin_ps": 500,
        "g3_window_ns": 12.5,
        "radial_bin_ps": 200,
        "radial_source_bin_ps": 100,
        "half_angle": math.pi / 12,
        "plateau_ps": 600.0,
        "zero_delay_bin_ps": 43,
        "zero_delay_window_ns": 5.0,
        "fit_half_width": 3,
    },
    "sweep": {"f_grid": "0:5:0.01", "orders": [2, 3, 4], "ceiling": 1e6, "n_probs": 7},
    "output": {"dir": "out", "tag_file": "tags.qtg"},
}


def schema() -> dict:
    text = resources.files("heitlerlab").joinpath("run_config.schema.json").read_text()
    return json.loads(text)


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def parse_grid(spec: str) -> np.ndarray:
    """'start:stop:step' -> inclusive grid of F values."""
    try:
        start, stop, step = (float(p) for p in spec.split(":"))
    except ValueError:
        raise ConfigError(f"grid must look like start:stop:step, got {spec!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError(f"grid needs step > 0 and stop >= start, got {spec!r}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration (defaults filled in)."""

    data: dict

    @classmethod
    def from_dict(cls, doc: dict | None = None) -> "RunConfig":
        doc = doc or {}
        try:
            jsonschema.validate(doc, schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {exc.message}") from None
        resolved = _merge(DEFAULTS, doc)
        rc = cls(resolved)
        # build the domain objects once so invalid combinations fail early
        rc.system_params()
        rc.homodyne()
        rc.detector_chain()
        return rc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc)

    def with_overrides(self, **sections) -> "RunConfig":
        return RunConfig.from_dict(_merge(self.data, sections))

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def digest(self) -> str:
        # output locations do not change results, so they stay out of the hash
        doc = {k: v for k, v in self.data.items() if k != "output"}
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def analysis(self) -> dict:
        return self.data["analysis"]

    @property
    def sweep(self) -> dict:
        return self.data["sweep"]

    @property
    def output(self) -> dict:
        return self.data["output"]

    def system_params(self) -> SystemParams:
        s = self.data["system"]
        return SystemParams(omega=float(s["omega"]), gamma=float(s["gamma"]))

    def homodyne(self) -> HomodyneConfig:
        h = self.data["homodyne"]
        return HomodyneConfig(f=float(h["f"]), phi=float(h["phi"]))

    def unraveling(self) -> UnravelingConfig:
        s = self.data["simulation"]
        return UnravelingConfig(
            self.system_params(),
            self.homodyne(),
            duration=float(s["duration"]),
            seed=self.seed,
            dt=float(s["dt"]),
            lifetime_ps=float(s["lifetime_ps"]),
            segment_length=float(s["segment_length"]),
        )

    def detector_chain(self) -> DetectorChain:
        d = self.data["detectors"]
        return DetectorChain(
            splitting=d["splitting"],
            efficiency=d["efficiency"],
            jitter_sigma=d["jitter_ps"],
            dead_time=d["dead_time_ps"],
            phase_jitter_sigma=float(d["phase_jitter_sigma"]),
            phase_jitter_tau=float(d["phase_jitter_tau"]),
        )

    def f_grid(self) -> np.ndarray:
        return parse_grid(self.sweep["f_grid"])

    @property
    def workers(self):
        return self.data["simulation"]["workers"]
