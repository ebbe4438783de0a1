"""Run configuration: TOML file + command-line overrides.

One file holds every knob, organized in sections per module. Defaults
mirror the reference training regime (two 64-feature convolution layers,
K = 3, margin 0.6, lambda 0.35, l2 0.005, lr 0.001, dropout 0.2, 100
epochs of 200-pair batches). Each command writes the fully resolved
configuration beside its outputs so a run is reproducible from one
artifact.
"""

from __future__ import annotations

import copy
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ValidationError

DEFAULTS: dict = {
    "paths": {
        "coords": "coords.csv",
        "manifest": "manifest.csv",
        "output_dir": "out",
        "profiles_dir": "profiles",
        "graph_file": "graph.json",
        "adjacency_file": "adjacency.csv",
        "profiles_manifest": "profiles_manifest.csv",
    },
    "graph": {
        "k": 10,
        "weight_mode": "distance",
    },
    "model": {
        "layer_widths": [64, 64],
        "k_order": 3,
    },
    "loss": {
        "margin": 0.6,
        "lambda_weight": 0.35,
        "l2_coeff": 0.005,
    },
    "train": {
        "epochs": 100,
        "batch_size": 200,
        "learning_rate": 0.001,
        "dropout_keep": 0.8,
        "seed": 0,
        "pair_budget": 0,  # 0 = scale the 43000-for-720 reference ratio
        "test_fraction": 151.0 / 871.0,
        "checkpoint_interval": 10,
    },
    "eval": {
        "knn_k": 3,
        "variance_keep": 0.99,
        "n_perm": 10000,
    },
    "synth": {
        "n_subjects": 40,
        "r": 20,
        "t": 80,
        "effect": 1.0,
        "n_sites": 4,
        "noise_scale": 1.0,
        "seed": 0,
    },
}


def _coerce(raw: str, default):
    """Parse a --set override against the default's type."""
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValidationError(f"cannot parse boolean from {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        items = [x for x in raw.replace("[", "").replace("]", "").split(",") if x.strip()]
        return [int(x) for x in items]
    return raw


def load_config(path=None, overrides: list[str] | None = None) -> dict:
    """Defaults, overlaid with a TOML file, overlaid with section.key=value."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            try:
                doc = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ValidationError(f"{path}: {exc}") from exc
        for section, values in doc.items():
            if section not in cfg:
                raise ValidationError(f"{path}: unknown config section [{section}]")
            if not isinstance(values, dict):
                raise ValidationError(f"{path}: top-level keys must live in sections")
            for key, value in values.items():
                if key not in cfg[section]:
                    raise ValidationError(f"{path}: unknown key {section}.{key}")
                cfg[section][key] = value
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValidationError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in cfg or key not in cfg[section]:
            raise ValidationError(f"unknown config key {section}.{key}")
        cfg[section][key] = _coerce(raw, DEFAULTS[section][key])
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    g = cfg["graph"]
    if g["weight_mode"] not in ("distance", "gaussian"):
        raise ValidationError("graph.weight_mode must be 'distance' or 'gaussian'")
    if g["k"] < 1:
        raise ValidationError("graph.k must be >= 1")
    if cfg["model"]["k_order"] < 0:
        raise ValidationError("model.k_order must be >= 0")
    if not cfg["model"]["layer_widths"]:
        raise ValidationError("model.layer_widths must be non-empty")
    t = cfg["train"]
    if not 0.0 <= t["test_fraction"] < 1.0:
        raise ValidationError("train.test_fraction must be in [0, 1)")
    if not 0.0 < t["dropout_keep"] <= 1.0:
        raise ValidationError("train.dropout_keep must be in (0, 1]")
    e = cfg["eval"]
    if e["knn_k"] < 1 or e["n_perm"] < 1:
        raise ValidationError("eval.knn_k and eval.n_perm must be >= 1")


def _format_toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, list):
        return "[" + ", ".join(_format_toml_value(v) for v in value) + "]"
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def write_config_echo(cfg: dict, path) -> None:
    """Serialize the resolved configuration as deterministic TOML."""
    lines = []
    for section in DEFAULTS:
        lines.append(f"[{section}]")
        for key in DEFAULTS[section]:
            lines.append(f"{key} = {_format_toml_value(cfg[section][key])}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
