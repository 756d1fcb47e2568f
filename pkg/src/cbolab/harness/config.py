"""Experiment configuration: one TOML file, validated into typed objects.

The canonical form is the nested dict produced by :func:`normalize`: all
defaults materialized, all values plain Python scalars/lists.  Parsing a
serialized canonical config reproduces it exactly (round-trip identity),
which is what manifest-based replay builds on.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np
import toml

from .. import dynamics, objectives, theory
from ..errors import ConfigError

__all__ = ["ExperimentConfig", "load_config", "loads_config", "normalize", "dumps_config"]

_EXPERIMENT_KINDS = (
    "simulate",
    "decay",
    "chaos",
    "laplace",
    "meanfield",
    "noise_variants",
    "concentration",
)

# knob name -> default, per experiment kind; None means "required, no default"
_KNOB_DEFAULTS = {
    "simulate": {},
    "decay": {
        "p": 2.0,
        "q": 3.0,
        "rate_slack": 0.15,
        "fit_start_frac": 0.1,
        "r2_min": 0.95,
        "energy_floor": False,
    },
    "chaos": {
        "p": 2.0,
        "q": 3.0,
        "n_ladder": [16, 64, 256],
        "eval_times": [1.0, 3.0],
        "subsample": 256,
        "se_tol": 2.0,
    },
    "laplace": {
        "mode": "static",
        "alpha_ladder": [1.0, 5.0, 20.0, 50.0],
        "n_samples": 10000,
        "replicates": 8,
        "tail_frac": 0.1,
    },
    "meanfield": {
        "p": 2.0,
        "q": 3.0,
        "alpha_ladder": [],
        "replicates": 8,
        "rate_slack": 0.15,
        "fit_start_frac": 0.1,
        "tail_frac": 0.1,
        "max_final_gap": float("inf"),
    },
    "noise_variants": {
        "p": 2.0,
        "q": 3.0,
        "rate_slack": 0.15,
        "fit_start_frac": 0.1,
        "r2_min": 0.95,
        "auto_lambda": True,
        "lambda_rule_mult": 2.0,
        "lambda_rule_offset": 0.5,
    },
    "concentration": {
        "p": 2.0,
        "q": 3.0,
        "kappa_frac": 0.5,
        "a_ladder": [0.5, 1.0, 2.0],
        "n_ladder": [32, 128],
        "se_tol": 2.0,
    },
}

_OBJECTIVE_KEYS = {
    "rastrigin": {"name", "d", "b", "c"},
    "shifted_quadratic": {"name", "d", "center", "scale", "offset"},
}


def _require(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"missing required key {key!r} in [{section}]")
    return table[key]


def _reject_unknown(table: dict, allowed, section: str) -> None:
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")


def normalize(raw: dict) -> dict:
    """Validate a parsed TOML tree and materialize every default."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    _reject_unknown(
        raw,
        {"objective", "model", "ensemble", "monte_carlo", "experiment", "output"},
        "root",
    )

    obj_in = raw.get("objective")
    if not isinstance(obj_in, dict):
        raise ConfigError("missing [objective] table")
    name = _require(obj_in, "name", "objective")
    if name not in _OBJECTIVE_KEYS:
        raise ConfigError(f"unknown objective {name!r}")
    _reject_unknown(obj_in, _OBJECTIVE_KEYS[name], "objective")
    d = int(_require(obj_in, "d", "objective"))
    if name == "rastrigin":
        obj = {"name": name, "d": d, "b": float(obj_in.get("b", 0.0)), "c": float(obj_in.get("c", 1.0))}
    else:
        center = obj_in.get("center", 0.0)
        if isinstance(center, list):
            center = [float(v) for v in center]
        else:
            center = float(center)
        obj = {
            "name": name,
            "d": d,
            "center": center,
            "scale": float(obj_in.get("scale", 1.0)),
            "offset": float(obj_in.get("offset", 1.0)),
        }

    model_in = raw.get("model")
    if not isinstance(model_in, dict):
        raise ConfigError("missing [model] table")
    _reject_unknown(
        model_in,
        {"lambda", "sigma", "alpha", "dt", "t_end", "record_every", "noise", "h"},
        "model",
    )
    lam = float(_require(model_in, "lambda", "model"))
    sigma = float(_require(model_in, "sigma", "model"))
    alpha = float(_require(model_in, "alpha", "model"))
    t_end = float(_require(model_in, "t_end", "model"))
    dt = model_in.get("dt")
    dt = float(dt) if dt is not None else dynamics.default_dt(lam, sigma)
    h_in = model_in.get("h", {"kind": "exp_floor", "eta": 1.0})
    _reject_unknown(h_in, {"kind", "eta", "f_lo"}, "model.h")
    h_kind = h_in.get("kind", "exp_floor")
    if h_kind not in ("constant", "exp_floor"):
        raise ConfigError(f"unknown h kind {h_kind!r}")
    h = {"kind": h_kind, "eta": float(h_in.get("eta", 1.0))}
    if h_kind == "exp_floor":
        # default floor decay matches the objective's declared lower bound
        f_lo_default = {"rastrigin": obj.get("c", 1.0), "shifted_quadratic": obj.get("offset", 1.0)}[name]
        h["f_lo"] = float(h_in.get("f_lo", f_lo_default))
    model = {
        "lambda": lam,
        "sigma": sigma,
        "alpha": alpha,
        "dt": dt,
        "t_end": t_end,
        "record_every": int(model_in.get("record_every", 1)),
        "noise": str(model_in.get("noise", "baseline_scalar")),
        "h": h,
    }

    ens_in = raw.get("ensemble")
    if not isinstance(ens_in, dict):
        raise ConfigError("missing [ensemble] table")
    _reject_unknown(ens_in, {"n", "n_ref", "init"}, "ensemble")
    init_in = _require(ens_in, "init", "ensemble")
    kind = _require(init_in, "kind", "ensemble.init")
    if kind == "uniform_box":
        _reject_unknown(init_in, {"kind", "low", "high"}, "ensemble.init")
        init = {
            "kind": kind,
            "low": [float(v) for v in np.broadcast_to(_require(init_in, "low", "ensemble.init"), (d,))],
            "high": [float(v) for v in np.broadcast_to(_require(init_in, "high", "ensemble.init"), (d,))],
        }
    elif kind == "gaussian":
        _reject_unknown(init_in, {"kind", "mean", "cov"}, "ensemble.init")
        cov = np.asarray(_require(init_in, "cov", "ensemble.init"), dtype=float)
        init = {
            "kind": kind,
            "mean": [float(v) for v in np.broadcast_to(init_in.get("mean", 0.0), (d,))],
            "cov": cov.tolist(),
        }
    elif kind == "point":
        _reject_unknown(init_in, {"kind", "x"}, "ensemble.init")
        init = {"kind": kind, "x": [float(v) for v in np.broadcast_to(_require(init_in, "x", "ensemble.init"), (d,))]}
    else:
        raise ConfigError(f"unknown init kind {kind!r}")
    ensemble = {
        "n": int(_require(ens_in, "n", "ensemble")),
        "n_ref": int(ens_in.get("n_ref", 4096)),
        "init": init,
    }

    mc_in = raw.get("monte_carlo", {})
    _reject_unknown(mc_in, {"trials", "seed"}, "monte_carlo")
    monte_carlo = {"trials": int(mc_in.get("trials", 1)), "seed": int(mc_in.get("seed", 0))}
    if monte_carlo["trials"] < 1:
        raise ConfigError("monte_carlo.trials must be >= 1")

    exp_in = raw.get("experiment")
    if not isinstance(exp_in, dict):
        raise ConfigError("missing [experiment] table")
    kind = _require(exp_in, "kind", "experiment")
    if kind not in _EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; choose from {_EXPERIMENT_KINDS}")
    defaults = _KNOB_DEFAULTS[kind]
    _reject_unknown(exp_in, set(defaults) | {"kind"}, "experiment")
    experiment = {"kind": kind}
    for knob, default in defaults.items():
        v = exp_in.get(knob, default)
        if isinstance(default, bool):
            v = bool(v)
        elif isinstance(default, float):
            v = float(v)
        elif isinstance(default, int):
            v = int(v)
        elif isinstance(default, list) and default and isinstance(default[0], float):
            v = [float(u) for u in v]
        experiment[knob] = copy.deepcopy(v)

    out_in = raw.get("output", {})
    _reject_unknown(out_in, {"directory", "formats"}, "output")
    output = {
        "directory": str(out_in.get("directory", "out")),
        "formats": [str(s) for s in out_in.get("formats", ["csv", "json"])],
    }
    for fmt in output["formats"]:
        if fmt not in ("csv", "json"):
            raise ConfigError(f"unknown output format {fmt!r}")

    return {
        "objective": obj,
        "model": model,
        "ensemble": ensemble,
        "monte_carlo": monte_carlo,
        "experiment": experiment,
        "output": output,
    }


@dataclass(frozen=True)
class ExperimentConfig:
    """Typed access to a normalized config tree."""

    data: dict

    # -- builders -----------------------------------------------------------
    def objective(self) -> objectives.ObjectiveSpec:
        params = dict(self.data["objective"])
        return objectives.by_name(params.pop("name"), params)

    def schedule(self) -> theory.RegularizerSchedule:
        h = self.data["model"]["h"]
        return theory.RegularizerSchedule(kind=h["kind"], eta=h["eta"], f_lo=h.get("f_lo", 0.0))

    def model_params(
        self,
        *,
        lam: Optional[float] = None,
        alpha: Optional[float] = None,
        noise: Optional[str] = None,
        dt: Optional[float] = None,
        record_every: Optional[int] = None,
    ) -> dynamics.ModelParams:
        m = self.data["model"]
        return dynamics.ModelParams(
            lam=m["lambda"] if lam is None else float(lam),
            sigma=m["sigma"],
            alpha=m["alpha"] if alpha is None else float(alpha),
            h=self.schedule(),
            dt=m["dt"] if dt is None else float(dt),
            t_end=m["t_end"],
            noise=dynamics.NoiseModel(m["noise"] if noise is None else noise),
            record_every=m["record_every"] if record_every is None else int(record_every),
        )

    def init_law(self):
        spec = self.data["ensemble"]["init"]
        if spec["kind"] == "uniform_box":
            return dynamics.UniformBox(low=spec["low"], high=spec["high"])
        if spec["kind"] == "gaussian":
            return dynamics.GaussianInit(mean_vec=spec["mean"], cov=np.asarray(spec["cov"]))
        return dynamics.PointInit(x=spec["x"])

    def threshold_report(self, *, lam: Optional[float] = None) -> theory.ThresholdReport:
        m = self.data["model"]
        e = self.data["experiment"]
        return theory.threshold_report(
            p=float(e.get("p", 2.0)),
            q=float(e.get("q", 3.0)),
            sigma=m["sigma"],
            alpha=m["alpha"],
            f_min=self.objective().f_min,
            h=self.schedule(),
            lam=m["lambda"] if lam is None else float(lam),
        )

    # -- plain accessors ----------------------------------------------------
    @property
    def kind(self) -> str:
        return self.data["experiment"]["kind"]

    @property
    def knobs(self) -> dict:
        return self.data["experiment"]

    @property
    def n(self) -> int:
        return self.data["ensemble"]["n"]

    @property
    def n_ref(self) -> int:
        return self.data["ensemble"]["n_ref"]

    @property
    def trials(self) -> int:
        return self.data["monte_carlo"]["trials"]

    @property
    def seed(self) -> int:
        return self.data["monte_carlo"]["seed"]

    @property
    def out_dir(self) -> str:
        return self.data["output"]["directory"]

    @property
    def formats(self) -> list:
        return self.data["output"]["formats"]

    # -- overrides / serialization ------------------------------------------
    def with_overrides(
        self,
        *,
        seed: Optional[int] = None,
        out_dir: Optional[str] = None,
    ) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["monte_carlo"]["seed"] = int(seed)
        if out_dir is not None:
            data["output"]["directory"] = str(out_dir)
        return ExperimentConfig(data)

    def to_toml(self) -> str:
        return dumps_config(self.data)


def dumps_config(data: dict) -> str:
    return toml.dumps(data)


def loads_config(text: str) -> ExperimentConfig:
    try:
        raw = toml.loads(text)
    except toml.TomlDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return ExperimentConfig(normalize(raw))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads_config(text)
