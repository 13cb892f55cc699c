"""Flat key=value run configuration.

One namespaced key per field ('#' starts a comment, blank lines are
skipped); unknown keys, bad types, duplicate keys, and constraint
violations are rejected with the offending line number. Absent keys take
their defaults, and the fully resolved configuration is echoed into the
run manifest, whose flat form is hashed to name output directories.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

from .datasets import DATASET_KINDS, SyntheticSpec
from .heads import HEAD_KINDS
from .moments import MODES, MomentSpec
from .outlier import GATE_MODES
from .pipeline import GateConfig, RunConfig


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError("expected 'true' or 'false'")


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _enum(options) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


def _fmt_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class _Key:
    parse: Callable[[str], object]
    default: object


SCHEMA: dict[str, _Key] = {
    "run.seed": _Key(int, 0),
    "run.steps": _Key(int, 4000),
    "run.eval_every": _Key(int, 200),
    "opt.lr": _Key(float, 0.03),
    "opt.momentum": _Key(float, 0.9),
    "opt.weight_decay": _Key(float, 5e-4),
    "opt.clip_norm": _Key(float, 1.0),
    "ssl.labeled_batch": _Key(int, 16),
    "ssl.unlabeled_ratio": _Key(int, 7),
    "ssl.conf_threshold": _Key(float, 0.95),
    "ssl.lambda_u": _Key(float, 1.0),
    "ssl.curriculum": _Key(_parse_bool, True),
    "ssl.ema_decay": _Key(float, 0.0),
    "head.kind": _Key(_enum(HEAD_KINDS), "aagmm"),
    "head.latent_dim": _Key(int, 8),
    "mom.orders": _Key(int, 1),
    "mom.weights": _Key(_parse_float_list, (1.0, 0.5, 0.25, 0.125)),
    "mom.mode": _Key(_enum(MODES), "per-cluster-soft"),
    "mom.view": _Key(_enum(("weak", "strong")), "weak"),
    "gate.enabled": _Key(_parse_bool, False),
    "gate.percentile": _Key(float, 90.0),
    "gate.mode": _Key(_enum(GATE_MODES), "max"),
    "gate.refresh": _Key(int, 50),
    "gate.exclude_mom": _Key(_parse_bool, True),
    "data.kind": _Key(_enum(DATASET_KINDS), "warped-mixture"),
    "data.classes": _Key(int, 8),
    "data.ambient": _Key(int, 16),
    "data.unlabeled": _Key(int, 8000),
    "data.test": _Key(int, 2000),
    "data.labels_per_class": _Key(int, 4),
    "data.noise": _Key(float, 0.13),
    "data.outlier_frac": _Key(float, 0.0),
    "data.seed": _Key(int, 0),
}


def parse_config_text(text: str, source: str = "<config>"):
    """Parse config text into ``(RunConfig, SyntheticSpec, effective_dict)``."""
    values: dict[str, object] = {}
    seen_lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value_text = line.partition("=")
        key = key.strip()
        value_text = value_text.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen_lines:
            raise ConfigError(
                f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen_lines[key]})"
            )
        seen_lines[key] = lineno
        try:
            values[key] = SCHEMA[key].parse(value_text)
        except ValueError as e:
            raise ConfigError(
                f"{source}:{lineno}: bad value for {key}: {e}"
            ) from None

    def get(key: str):
        return values.get(key, SCHEMA[key].default)

    try:
        moments = MomentSpec(
            max_order=get("mom.orders"),
            order_weights=get("mom.weights"),
            mode=get("mom.mode"),
        )
        gate = GateConfig(
            enabled=get("gate.enabled"),
            percentile=get("gate.percentile"),
            mode=get("gate.mode"),
            refresh_every=get("gate.refresh"),
            exclude_from_mom=get("gate.exclude_mom"),
        )
        run_config = RunConfig(
            seed=get("run.seed"),
            steps=get("run.steps"),
            eval_every=get("run.eval_every"),
            labeled_batch=get("ssl.labeled_batch"),
            unlabeled_ratio=get("ssl.unlabeled_ratio"),
            lr=get("opt.lr"),
            momentum=get("opt.momentum"),
            weight_decay=get("opt.weight_decay"),
            clip_norm=get("opt.clip_norm"),
            conf_threshold=get("ssl.conf_threshold"),
            lambda_u=get("ssl.lambda_u"),
            curriculum=get("ssl.curriculum"),
            ema_decay=get("ssl.ema_decay"),
            head_kind=get("head.kind"),
            latent_dim=get("head.latent_dim"),
            moments=moments,
            mom_view=get("mom.view"),
            gate=gate,
        )
        data_spec = SyntheticSpec(
            kind=get("data.kind"),
            n_classes=get("data.classes"),
            ambient_dim=get("data.ambient"),
            n_unlabeled=get("data.unlabeled"),
            n_test=get("data.test"),
            labels_per_class=get("data.labels_per_class"),
            cluster_noise=get("data.noise"),
            outlier_frac=get("data.outlier_frac"),
            seed=get("data.seed"),
        )
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None
    return run_config, data_spec, flatten_config(run_config, data_spec)


def parse_config(path):
    with open(path) as f:
        text = f.read()
    return parse_config_text(text, source=str(path))


def flatten_config(config: RunConfig, data_spec: SyntheticSpec) -> dict[str, str]:
    """Every schema key with its effective value, serialized canonically."""
    values = {
        "run.seed": config.seed,
        "run.steps": config.steps,
        "run.eval_every": config.eval_every,
        "opt.lr": config.lr,
        "opt.momentum": config.momentum,
        "opt.weight_decay": config.weight_decay,
        "opt.clip_norm": config.clip_norm,
        "ssl.labeled_batch": config.labeled_batch,
        "ssl.unlabeled_ratio": config.unlabeled_ratio,
        "ssl.conf_threshold": config.conf_threshold,
        "ssl.lambda_u": config.lambda_u,
        "ssl.curriculum": config.curriculum,
        "ssl.ema_decay": config.ema_decay,
        "head.kind": config.head_kind,
        "head.latent_dim": config.latent_dim,
        "mom.orders": config.moments.max_order,
        "mom.weights": config.moments.order_weights,
        "mom.mode": config.moments.mode,
        "mom.view": config.mom_view,
        "gate.enabled": config.gate.enabled,
        "gate.percentile": config.gate.percentile,
        "gate.mode": config.gate.mode,
        "gate.refresh": config.gate.refresh_every,
        "gate.exclude_mom": config.gate.exclude_from_mom,
        "data.kind": data_spec.kind,
        "data.classes": data_spec.n_classes,
        "data.ambient": data_spec.ambient_dim,
        "data.unlabeled": data_spec.n_unlabeled,
        "data.test": data_spec.n_test,
        "data.labels_per_class": data_spec.labels_per_class,
        "data.noise": data_spec.cluster_noise,
        "data.outlier_frac": data_spec.outlier_frac,
        "data.seed": data_spec.seed,
    }
    assert set(values) == set(SCHEMA)
    return {k: _fmt_value(values[k]) for k in SCHEMA}


def config_hash(flat: dict[str, str]) -> str:
    canon = "\n".join(f"{k}={flat[k]}" for k in sorted(flat))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
