"""Flat ``section.key = value`` run configuration.

Lines are ``dotted.key = value`` with ``#`` comments.  Values are Python
literals (numbers, lists, booleans, quoted strings); a bare word made of
letters, digits and ``_ . / + -`` is read as a string.  Every key has a
default except ``task.name``.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, fields, replace

import numpy as np

from .ddp import DdpSettings
from .evaluation import EvalGrid
from .task import KINDS, CostParams, Obstacle, TaskModel, make_task, DEFAULT_OBSTACLES
from .trainer import TrainerConfig


class ConfigError(ValueError):
    pass


_NONE = object()
_BARE = re.compile(r"[A-Za-z0-9_./+-]+")

DEFAULTS = {
    "task.name": _NONE,
    "task.dt": 0.05,
    "task.T": 200,
    "task.u_max": None,
    "task.goal": [-7.0, 0.0],
    "task.v_range": 2.0,
    "task.init_low": None,
    "task.init_high": None,
    "cost.w_d": 1e-3,
    "cost.w_p": 5.0,
    "cost.w_ob": 10.0,
    "cost.w_u": 1e-2,
    "cost.alpha1": 50.0,
    "cost.alpha2": 50.0,
    "cost.c2": 1e-4,
    "cost.c3": 1e-4,
    "cost.c4": 0.0,
    "cost.obstacles": [[o.x, o.y, o.a, o.b] for o in DEFAULT_OBSTACLES],
    "eval.x_range": [0.0, 15.0],
    "eval.y_range": [-5.0, 5.0],
    "eval.mesh": 1.0,
    "eval.heading_seed": 0,
    "compare.activations": ["relu", "elu", "sine"],
    "compare.checkpoints": [1000, 5000, 10000],
    "compare.train_episodes": 200,
    "compare.heldout_episodes": 50,
    "compare.heatmap_mesh": 0.5,
    "compare.k_s": 1000.0,
    "run.seeds": [0],
    "run.out_dir": "runs",
    "run.workers": 0,
    "run.ddp_trace": False,
    "run.x0": None,
}
for _f in fields(TrainerConfig):
    if _f.name != "ddp":
        _v = _f.default
        DEFAULTS[f"trainer.{_f.name}"] = list(_v) if isinstance(_v, tuple) else _v
for _f in fields(DdpSettings):
    DEFAULTS[f"ddp.{_f.name}"] = _f.default


@dataclass
class RunConfig:
    task: TaskModel
    trainer: TrainerConfig
    ddp: DdpSettings
    grid: EvalGrid
    seeds: list
    out_dir: str
    workers: int
    values: dict
    compare: dict

    def resolved_text(self) -> str:
        return dump(self.values)


def parse_text(text: str, source: str = "<config>") -> dict:
    """Raw key -> (value, line number) map."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        try:
            value = ast.literal_eval(val)
        except (ValueError, SyntaxError):
            if not _BARE.fullmatch(val):
                raise ConfigError(f"{source}:{lineno}: cannot parse value for '{key}': {val}")
            value = val
        out[key] = (value, lineno)
    return out


def _coerce(key, value, default, where):
    if default is None or default is _NONE or value is None:
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if not isinstance(value, int) or isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, list):
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return list(value)
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: '{key}' expects {type(default).__name__}, got {value!r}")
    return value


def load(path) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    return from_text(text, str(path))


def from_text(text: str, source: str = "<config>", overrides: dict | None = None) -> RunConfig:
    raw = parse_text(text, source)
    values = {}
    for key, default in DEFAULTS.items():
        if key in raw:
            val, lineno = raw[key]
            values[key] = _coerce(key, val, default, f"{source}:{lineno}")
        elif default is _NONE:
            raise ConfigError(f"{source}: missing required key '{key}'")
        else:
            values[key] = default
    for key, val in (overrides or {}).items():
        values[key] = _coerce(key, val, DEFAULTS[key], "command line")
    return build(values, source)


def build(values: dict, source: str = "<config>") -> RunConfig:
    v = values
    name = v["task.name"]
    if name not in KINDS:
        raise ConfigError(f"{source}: task.name must be one of {sorted(KINDS)}, got {name!r}")
    try:
        obstacles = tuple(Obstacle(*map(float, o)) for o in v["cost.obstacles"])
        cost = CostParams(w_d=v["cost.w_d"], w_p=v["cost.w_p"], w_ob=v["cost.w_ob"],
                          w_u=v["cost.w_u"], alpha1=v["cost.alpha1"], alpha2=v["cost.alpha2"],
                          c2=v["cost.c2"], c3=v["cost.c3"], c4=v["cost.c4"], obstacles=obstacles)
        task = make_task(name, dt=v["task.dt"], T=v["task.T"], u_max=v["task.u_max"],
                         goal=v["task.goal"], cost=cost, init_low=v["task.init_low"],
                         init_high=v["task.init_high"], v_range=v["task.v_range"])
        ddp_settings = DdpSettings(**{f.name: v[f"ddp.{f.name}"] for f in fields(DdpSettings)})
        tkw = {}
        for f in fields(TrainerConfig):
            if f.name == "ddp":
                continue
            val = v[f"trainer.{f.name}"]
            tkw[f.name] = tuple(val) if isinstance(val, list) else val
        trainer = TrainerConfig(ddp=ddp_settings, **tkw)
        grid = EvalGrid(tuple(v["eval.x_range"]), tuple(v["eval.y_range"]), v["eval.mesh"],
                        v["eval.heading_seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    seeds = v["run.seeds"]
    if not seeds:
        raise ConfigError(f"{source}: run.seeds must be nonempty")
    compare = {k.split(".", 1)[1]: v[k] for k in v if k.startswith("compare.")}
    return RunConfig(task, trainer, ddp_settings, grid, list(seeds), v["run.out_dir"],
                     v["run.workers"], dict(v), compare)


def dump(values: dict) -> str:
    lines = []
    section = None
    for key in sorted(values, key=lambda k: (list(DEFAULTS).index(k), k)):
        sec = key.split(".", 1)[0]
        if sec != section:
            if section is not None:
                lines.append("")
            lines.append(f"# {sec}")
            section = sec
        val = values[key]
        if isinstance(val, str):
            text = val if _BARE.fullmatch(val) else repr(val)
        elif isinstance(val, np.ndarray):
            text = repr(val.tolist())
        else:
            text = repr(val)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    """Rebuild from resolved values with some keys replaced (dotted names use '__')."""
    values = dict(cfg.values)
    for k, val in changes.items():
        key = k.replace("__", ".")
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key '{key}'")
        values[key] = _coerce(key, val, DEFAULTS[key], "override")
    return build(values)


__all__ = ["ConfigError", "RunConfig", "load", "from_text", "dump", "with_overrides", "replace"]
