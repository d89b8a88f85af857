"""Run configuration: config dataclasses and a flat dotted-key config store."""

from __future__ import annotations

import configparser
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from uecct.errors import ConfigError, bullet_list

logger = logging.getLogger(__name__)


# =============================================================================
# Config dataclasses
# =============================================================================


@dataclass
class ModelConfig:
    layers: int = 2
    heads: int = 2
    d_k: int = 16
    d_l: int | None = None  # None -> S_max of the registry
    d_f: int | None = None  # None -> 4 * heads * d_k
    variant: str = "unified"  # "unified" or "vanilla"
    use_mask: bool = True
    sparse_kernel: bool = True

    @property
    def d_h(self) -> int:
        return self.heads * self.d_k

    @property
    def ffn_dim(self) -> int:
        return self.d_f if self.d_f is not None else 4 * self.heads * self.d_k


@dataclass
class TrainConfig:
    epochs: int = 50
    batches_per_epoch: int = 50
    batch_size: int = 128
    lr_init: float = 1e-3
    lr_final: float = 1e-6
    snr_range_db: tuple[float, float] = (3.0, 7.0)
    seed: int = 0
    code_names: list[str] = field(default_factory=lambda: ["hamming74", "golay24"])
    grad_clip: float = 1.0
    prefetch_workers: int = 0
    divergence_factor: float = 10.0
    divergence_patience: int = 3
    freeze: list[str] = field(default_factory=list)


@dataclass
class EvalConfig:
    ebn0_db: list[float] = field(default_factory=lambda: [4.0, 5.0, 6.0])
    min_blocks: int = 10_000
    batch_blocks: int = 1000
    workers: int = 1
    bp_iters: int = 20
    decoder: str = "model"  # model, hard, ml, bp


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/latest"
    library_dir: str = "data/codes"
    profile: str = "toy"


@dataclass
class RunSettings:
    model: ModelConfig
    train: TrainConfig
    eval: EvalConfig
    run: RunConfig


# =============================================================================
# Flat config store
# =============================================================================

DEFAULTS: dict[str, object] = {
    "model.layers": 2,
    "model.heads": 2,
    "model.d_k": 16,
    "model.d_l": None,
    "model.d_f": None,
    "model.variant": "unified",
    "model.use_mask": True,
    "model.sparse_kernel": True,
    "train.epochs": 50,
    "train.batches_per_epoch": 50,
    "train.batch_size": 128,
    "train.lr_init": 1e-3,
    "train.lr_final": 1e-6,
    "train.snr_range_db": [3.0, 7.0],
    "train.grad_clip": 1.0,
    "train.prefetch_workers": 0,
    "train.divergence_factor": 10.0,
    "train.divergence_patience": 3,
    "train.freeze": [],
    "codes.names": ["hamming74", "golay24"],
    "codes.library_dir": "data/codes",
    "eval.ebn0_db": [4.0, 5.0, 6.0],
    "eval.min_blocks": 10_000,
    "eval.batch_blocks": 1000,
    "eval.workers": 1,
    "eval.bp_iters": 20,
    "eval.decoder": "model",
    "run.seed": 0,
    "run.output_dir": "runs/latest",
    "run.profile": "toy",
}

PROFILES: dict[str, dict[str, object]] = {
    "toy": {},
    "full": {
        "model.layers": 6,
        "model.heads": 8,
        "model.d_k": 64,
        "model.d_l": 64,
        "train.epochs": 1000,
        "train.batches_per_epoch": 1000,
        "train.batch_size": 512,
        "eval.min_blocks": 100_000,
    },
}

_INT_KEYS = {
    "model.layers", "model.heads", "model.d_k", "train.epochs", "train.batches_per_epoch",
    "train.batch_size", "train.prefetch_workers", "train.divergence_patience",
    "eval.min_blocks", "eval.batch_blocks", "eval.workers", "eval.bp_iters", "run.seed",
}
_OPTIONAL_INT_KEYS = {"model.d_l", "model.d_f"}
_FLOAT_KEYS = {"train.lr_init", "train.lr_final", "train.grad_clip", "train.divergence_factor"}
_BOOL_KEYS = {"model.use_mask", "model.sparse_kernel"}
_CHOICES = {
    "model.variant": ("unified", "vanilla"),
    "eval.decoder": ("model", "hard", "ml", "bp"),
    "run.profile": tuple(PROFILES),
}


def parse_value(raw: str):
    """JSON when it parses (numbers, lists, booleans, null), otherwise the raw string."""
    text = raw.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        lowered = text.lower()
        if lowered in ("true", "yes", "on"):
            return True
        if lowered in ("false", "no", "off"):
            return False
        return text


class ConfigStore:
    """Resolved flat ``section.key -> value`` mapping.

    Layers apply in order: DEFAULTS, profile, config file, overrides.
    """

    def __init__(self, values: dict[str, object] | None = None):
        self._values: dict[str, object] = dict(DEFAULTS)
        if values:
            self.set_many(values)

    @classmethod
    def resolve(
        cls,
        *,
        profile: str | None = None,
        path: str | Path | None = None,
        overrides: list[str] | None = None,
    ) -> ConfigStore:
        store = cls()
        file_values = read_config_file(path) if path else {}
        chosen = profile or file_values.get("run.profile") or DEFAULTS["run.profile"]
        if chosen not in PROFILES:
            raise ConfigError(f"Unknown profile {chosen!r}; expected one of {', '.join(PROFILES)}")
        store.set_many(PROFILES[chosen])
        store.set("run.profile", chosen)
        store.set_many(file_values)
        if profile:
            store.set("run.profile", profile)
        for item in overrides or []:
            key, sep, raw = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"Override must look like section.key=value, got {item!r}")
            store.set(key.strip(), parse_value(raw))
        return store

    def get(self, key: str, default=None):
        return self._values.get(key, default)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"Unknown config key: {key}")
        self._values[key] = value

    def set_many(self, items: dict) -> None:
        unknown = [k for k in items if k not in DEFAULTS]
        if unknown:
            raise ConfigError(bullet_list("Unknown config keys", sorted(unknown)))
        self._values.update(items)

    def get_all(self) -> dict[str, object]:
        return dict(self._values)

    def as_text(self) -> str:
        """Render back into the sectioned file format (sorted, stable)."""
        sections: dict[str, list[str]] = {}
        for key in sorted(self._values):
            section, _, name = key.partition(".")
            sections.setdefault(section, []).append(f"{name} = {json.dumps(self._values[key])}")
        return "\n\n".join(f"[{s}]\n" + "\n".join(lines) for s, lines in sections.items()) + "\n"

    def build_config(self) -> RunSettings:
        """Validate every value and build the typed settings bundle."""
        v = self._values
        errors: list[str] = []

        for key in _INT_KEYS:
            if not isinstance(v[key], int) or isinstance(v[key], bool):
                errors.append(f"{key} must be an integer, got {v[key]!r}")
            elif v[key] < 0 or (v[key] == 0 and key not in ("run.seed", "train.prefetch_workers")):
                errors.append(f"{key} must be positive, got {v[key]}")
        for key in _OPTIONAL_INT_KEYS:
            if v[key] is not None and (not isinstance(v[key], int) or isinstance(v[key], bool) or v[key] <= 0):
                errors.append(f"{key} must be a positive integer or null, got {v[key]!r}")
        for key in _FLOAT_KEYS:
            if not isinstance(v[key], (int, float)) or isinstance(v[key], bool):
                errors.append(f"{key} must be a number, got {v[key]!r}")
        for key in _BOOL_KEYS:
            if not isinstance(v[key], bool):
                errors.append(f"{key} must be true or false, got {v[key]!r}")
        for key, choices in _CHOICES.items():
            if v[key] not in choices:
                errors.append(f"{key} must be one of {', '.join(choices)}, got {v[key]!r}")

        if not errors:
            if not v["train.lr_init"] > v["train.lr_final"] > 0:
                errors.append("train.lr_init > train.lr_final > 0 must hold")
        snr = v["train.snr_range_db"]
        if not (isinstance(snr, list) and len(snr) == 2 and all(isinstance(s, (int, float)) for s in snr)):
            errors.append(f"train.snr_range_db must be a [low, high] pair, got {snr!r}")
        elif snr[0] > snr[1]:
            errors.append("train.snr_range_db must be non-empty (low <= high)")
        ebn0 = v["eval.ebn0_db"]
        if not (isinstance(ebn0, list) and ebn0 and all(isinstance(s, (int, float)) for s in ebn0)):
            errors.append(f"eval.ebn0_db must be a non-empty list of numbers, got {ebn0!r}")
        names = v["codes.names"]
        if not (isinstance(names, list) and names and all(isinstance(s, str) for s in names)):
            errors.append(f"codes.names must be a non-empty list of code names, got {names!r}")
        freeze = v["train.freeze"]
        if not (isinstance(freeze, list) and all(isinstance(s, str) for s in freeze)):
            errors.append(f"train.freeze must be a list of parameter-name prefixes, got {freeze!r}")

        if errors:
            raise ConfigError(bullet_list("Invalid config", errors))

        return RunSettings(
            model=ModelConfig(
                layers=v["model.layers"],
                heads=v["model.heads"],
                d_k=v["model.d_k"],
                d_l=v["model.d_l"],
                d_f=v["model.d_f"],
                variant=v["model.variant"],
                use_mask=v["model.use_mask"],
                sparse_kernel=v["model.sparse_kernel"],
            ),
            train=TrainConfig(
                epochs=v["train.epochs"],
                batches_per_epoch=v["train.batches_per_epoch"],
                batch_size=v["train.batch_size"],
                lr_init=float(v["train.lr_init"]),
                lr_final=float(v["train.lr_final"]),
                snr_range_db=(float(snr[0]), float(snr[1])),
                seed=v["run.seed"],
                code_names=list(names),
                grad_clip=float(v["train.grad_clip"]),
                prefetch_workers=v["train.prefetch_workers"],
                divergence_factor=float(v["train.divergence_factor"]),
                divergence_patience=v["train.divergence_patience"],
                freeze=list(freeze),
            ),
            eval=EvalConfig(
                ebn0_db=[float(e) for e in ebn0],
                min_blocks=v["eval.min_blocks"],
                batch_blocks=v["eval.batch_blocks"],
                workers=v["eval.workers"],
                bp_iters=v["eval.bp_iters"],
                decoder=v["eval.decoder"],
            ),
            run=RunConfig(
                seed=v["run.seed"],
                output_dir=str(v["run.output_dir"]),
                library_dir=str(v["codes.library_dir"]),
                profile=v["run.profile"],
            ),
        )


def read_config_file(path: str | Path) -> dict[str, object]:
    """Flatten an INI-style file into ``section.key -> value``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"Unparseable config file {path}: {exc}") from exc
    flat: dict[str, object] = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            flat[f"{section}.{key}"] = parse_value(raw)
    logger.debug("Read %d config values from %s", len(flat), path)
    return flat