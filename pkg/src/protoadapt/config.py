"""Sectioned key=value run configs, validated strictly.

Sections: [data] (synthetic spec or manifest paths), [train], [loss],
[output].  Unknown sections or keys are rejected so typos fail loudly.
Command-line flags override file values before validation.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .data import DomainParams, SynthSpec
from .losses import LossConfig
from .pipeline import TrainConfig


class ConfigError(ValueError):
    pass


_DATA_KEYS = {
    "kind", "classes", "per_class_source", "per_class_target", "seed",
    "base_freqs", "impulse_periods", "harmonic_mix", "amplitude",
    "impulse_amplitude", "impulse_decay",
    "source_amplitude_scale", "source_freq_offset", "source_noise_std",
    "target_amplitude_scale", "target_freq_offset", "target_noise_std",
    "source_manifest", "target_manifest",
}
_TRAIN_KEYS = {
    "variant", "batch_size", "epochs", "fine_tune_epochs", "n_shot", "seed",
    "dropout_rate", "proj_dim", "prototype_std", "pair_batch_size",
    "positive_fraction", "fine_tune_head_only",
}
_LOSS_KEYS = {"gamma_d", "gamma_s", "lambda", "lambda1", "lambda2", "lambda3"}
_OUTPUT_KEYS = {"dir"}
_SECTIONS = {"data": _DATA_KEYS, "train": _TRAIN_KEYS, "loss": _LOSS_KEYS,
             "output": _OUTPUT_KEYS}


@dataclass
class DataConfig:
    kind: str = "synthetic"
    synth: SynthSpec | None = None
    per_class_source: int = 200
    per_class_target: int = 200
    classes: int | None = None
    source_manifest: Path | None = None
    target_manifest: Path | None = None


@dataclass
class RunConfig:
    data: DataConfig
    train: TrainConfig
    output_dir: Path | None = None


def _get(section: dict, key: str, convert, default):
    if key not in section:
        return default
    raw = section[key]
    try:
        return convert(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _float_list(raw: str) -> tuple:
    return tuple(float(p) for p in raw.split(",") if p.strip())


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Parse a config file (optional) and apply flag overrides.

    overrides maps "section.key" to already-typed or string values,
    e.g. {"train.variant": "FPM", "train.n_shot": 3}.
    """
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file {path} not found")
        for name in parser.sections():
            if name not in _SECTIONS:
                raise ConfigError(f"unknown config section [{name}]")
            for key, value in parser.items(name):
                if key not in _SECTIONS[name]:
                    raise ConfigError(f"unknown key {key!r} in section [{name}]")
                sections[name][key] = value
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS or key not in _SECTIONS[section]:
            raise ConfigError(f"unknown override {dotted!r}")
        sections[section][key] = value

    data_sec, train_sec, loss_sec, out_sec = (sections["data"], sections["train"],
                                              sections["loss"], sections["output"])

    try:
        loss = LossConfig(
            gamma_d=_get(loss_sec, "gamma_d", float, 1.0),
            gamma_s=_get(loss_sec, "gamma_s", float, 1.0),
            lambda_=_get(loss_sec, "lambda", float, 0.5),
            lambda1=_get(loss_sec, "lambda1", float, 0.01),
            lambda2=_get(loss_sec, "lambda2", float, 0.01),
            lambda3=_get(loss_sec, "lambda3", float, 0.001),
        )
        train = TrainConfig(
            variant=str(_get(train_sec, "variant", str, "FPM")).upper(),
            loss=loss,
            batch_size=_get(train_sec, "batch_size", int, 64),
            epochs=_get(train_sec, "epochs", int, 50),
            fine_tune_epochs=_get(train_sec, "fine_tune_epochs", int, 20),
            n_shot=_get(train_sec, "n_shot", int, 1),
            seed=_get(train_sec, "seed", int, 0),
            dropout_rate=_get(train_sec, "dropout_rate", float, 0.5),
            proj_dim=_get(train_sec, "proj_dim", int, 5),
            prototype_std=_get(train_sec, "prototype_std", float, 0.1),
            pair_batch_size=_get(train_sec, "pair_batch_size", int, None),
            positive_fraction=_get(train_sec, "positive_fraction", float, 0.5),
            fine_tune_head_only=_get(train_sec, "fine_tune_head_only", _bool, False),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None

    kind = str(_get(data_sec, "kind", str, "synthetic")).lower()
    if kind not in ("synthetic", "manifest"):
        raise ConfigError(f"data kind must be synthetic or manifest, got {kind!r}")
    data = DataConfig(kind=kind)
    data.classes = _get(data_sec, "classes", int, None)
    if kind == "synthetic":
        try:
            data.synth = SynthSpec(
                class_count=data.classes if data.classes is not None else 6,
                base_freqs=_get(data_sec, "base_freqs", _float_list, ()),
                impulse_periods=_get(data_sec, "impulse_periods", _float_list, ()),
                harmonic_mix=_get(data_sec, "harmonic_mix", float, 0.5),
                amplitude=_get(data_sec, "amplitude", float, 1.0),
                impulse_amplitude=_get(data_sec, "impulse_amplitude", float, 1.5),
                impulse_decay=_get(data_sec, "impulse_decay", float, 24.0),
                source=DomainParams(
                    amplitude_scale=_get(data_sec, "source_amplitude_scale", float, 1.0),
                    freq_offset=_get(data_sec, "source_freq_offset", float, 0.0),
                    noise_std=_get(data_sec, "source_noise_std", float, 0.1),
                ),
                target=DomainParams(
                    amplitude_scale=_get(data_sec, "target_amplitude_scale", float, 1.0),
                    freq_offset=_get(data_sec, "target_freq_offset", float, 0.0),
                    noise_std=_get(data_sec, "target_noise_std", float, 0.1),
                ),
                seed=_get(data_sec, "seed", int, 0),
            )
        except ValueError as err:
            raise ConfigError(str(err)) from None
        data.per_class_source = _get(data_sec, "per_class_source", int, 200)
        data.per_class_target = _get(data_sec, "per_class_target", int, 200)
        if min(data.per_class_source, data.per_class_target) < 1:
            raise ConfigError("per_class counts must be >= 1")
    else:
        src = _get(data_sec, "source_manifest", str, None)
        tgt = _get(data_sec, "target_manifest", str, None)
        if not src or not tgt:
            raise ConfigError("manifest data needs source_manifest and target_manifest")
        base = Path(path).parent if path is not None else Path.cwd()
        data.source_manifest = (base / src) if not Path(src).is_absolute() else Path(src)
        data.target_manifest = (base / tgt) if not Path(tgt).is_absolute() else Path(tgt)

    out_dir = _get(out_sec, "dir", str, None)
    return RunConfig(data=data, train=train,
                     output_dir=Path(out_dir) if out_dir else None)


def resolved_sections(cfg: RunConfig, output_dir: Path) -> dict[str, dict]:
    """Fully-resolved key=value view of a RunConfig, for the rerun copy."""
    data: dict[str, object] = {"kind": cfg.data.kind}
    if cfg.data.kind == "synthetic":
        spec = cfg.data.synth
        data.update({
            "classes": spec.class_count,
            "per_class_source": cfg.data.per_class_source,
            "per_class_target": cfg.data.per_class_target,
            "seed": spec.seed,
            "base_freqs": ",".join(f"{v:.17g}" for v in spec.base_freqs),
            "impulse_periods": ",".join(f"{v:.17g}" for v in spec.impulse_periods),
            "harmonic_mix": spec.harmonic_mix,
            "amplitude": spec.amplitude,
            "impulse_amplitude": spec.impulse_amplitude,
            "impulse_decay": spec.impulse_decay,
            "source_amplitude_scale": spec.source.amplitude_scale,
            "source_freq_offset": spec.source.freq_offset,
            "source_noise_std": spec.source.noise_std,
            "target_amplitude_scale": spec.target.amplitude_scale,
            "target_freq_offset": spec.target.freq_offset,
            "target_noise_std": spec.target.noise_std,
        })
    else:
        data.update({
            "source_manifest": str(cfg.data.source_manifest),
            "target_manifest": str(cfg.data.target_manifest),
        })
        if cfg.data.classes is not None:
            data["classes"] = cfg.data.classes
    t = cfg.train
    train = {
        "variant": t.variant, "batch_size": t.batch_size, "epochs": t.epochs,
        "fine_tune_epochs": t.fine_tune_epochs, "n_shot": t.n_shot, "seed": t.seed,
        "dropout_rate": t.dropout_rate, "proj_dim": t.proj_dim,
        "prototype_std": t.prototype_std, "positive_fraction": t.positive_fraction,
        "fine_tune_head_only": t.fine_tune_head_only,
    }
    if t.pair_batch_size is not None:
        train["pair_batch_size"] = t.pair_batch_size
    loss = {
        "gamma_d": t.loss.gamma_d, "gamma_s": t.loss.gamma_s, "lambda": t.loss.lambda_,
        "lambda1": t.loss.lambda1, "lambda2": t.loss.lambda2, "lambda3": t.loss.lambda3,
    }
    return {"data": data, "train": train, "loss": loss,
            "output": {"dir": str(output_dir)}}


def write_resolved(path, sections: dict[str, dict]) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    for name, items in sections.items():
        parser[name] = {k: str(v) for k, v in items.items()}
    with open(path, "w") as fh:
        parser.write(fh)
