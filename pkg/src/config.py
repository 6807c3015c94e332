"""Experiment configuration: YAML settings merged over documented defaults, then validated."""

import copy
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from src.debias_trainer import TrainConfig
from src.encoders import ModelConfig
from src.evaluation import EvalConfig
from src.numerics import ContractError
from src.proposal_map import LabelConfig
from src.synthbench import ScenarioSpec

DEFAULT_CONFIG_PATH = Path("config/settings.yaml")


class ConfigError(ValueError):
    """Invalid or unknown configuration keys/values."""


DEFAULTS: dict = {
    "model": {
        "n_clips": 16,
        "dim_v": 32,
        "dim_s": 32,
        "vocab_size": 64,
        "bm_samples": 8,
        "location_bias": True,
    },
    "labels": {"mu_min": 0.3, "mu_max": 0.7},
    "train": {
        "mode": "debias",
        "alpha": 1.0,
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "batch_size": 4,
        "epochs": 15,
        "seed": 0,
        "detach_bias_weight": True,
        "stop_encoder_grad_from_visual": False,
        "bce_reduction": "mean",
    },
    "eval": {"nms_thresh": 0.4, "top_n": [1, 5], "thetas": [0.5, 0.7], "seed": 0},
    "data": {
        "n_train": 2000,
        "n_test": 500,
        "n_intest": 500,
        "out_dir": "data",
        "bias_grid": 10,
        "top_k": 10,
    },
    "scenarios": {
        "train": {
            "name": "train",
            "n_concepts": 20,
            "zipf_exponent": 1.0,
            "interval_prior": [
                {"center": 0.18, "width": 0.3, "jitter": 0.03, "weight": 1.0},
                {"center": 0.5, "width": 0.3, "jitter": 0.03, "weight": 1.0},
                {"center": 0.82, "width": 0.3, "jitter": 0.03, "weight": 1.0},
            ],
            "bias_strength": 0.9,
            "concept_interval_map": [0] * 20,
            "noise_sigma": 0.5,
            "n_clips": 16,
            "dim": 32,
            "vocab_size": 64,
            "n_distractor_tokens": 2,
            "n_background_events": 1,
            "signature_seed": 0,
            "seed": 1,
        },
        "cross": {
            "cross": {
                "concept_interval_map": [1 + c % 2 for c in range(20)],
                "seed": 2,
            },
        },
    },
    "gradcheck": {"n_clips": 3, "dim": 4, "vocab_size": 6, "n_tokens": 3, "alpha": 1.0, "h": 1e-5, "tol": 1e-4, "seed": 0},
    "sweep": {"alphas": [0.25, 0.5, 1.0, 1.75, 64.0], "seeds": [0, 1, 2]},
    "runtime": {"threads": 1},
}

# sections whose children are free-form names rather than fixed keys
_OPEN_SECTIONS = {("scenarios", "cross")}
_SCENARIO_KEYS = set(DEFAULTS["scenarios"]["train"])


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 2000
    n_test: int = 500
    n_intest: int = 500
    out_dir: str = "data"
    bias_grid: int = 10
    top_k: int = 10


@dataclass(frozen=True)
class GradCheckConfig:
    n_clips: int = 3
    dim: int = 4
    vocab_size: int = 6
    n_tokens: int = 3
    alpha: float = 1.0
    h: float = 1e-5
    tol: float = 1e-4
    seed: int = 0


@dataclass(frozen=True)
class SweepConfig:
    alphas: tuple[float, ...] = (0.25, 0.5, 1.0, 1.75, 64.0)
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass
class ExperimentConfig:
    model: ModelConfig
    labels: LabelConfig
    train: TrainConfig
    eval: EvalConfig
    data: DataConfig
    train_scenario: ScenarioSpec
    cross_scenarios: dict[str, ScenarioSpec]
    gradcheck: GradCheckConfig
    sweep: SweepConfig
    threads: int = 1
    raw: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Override the training and evaluation seeds (and every scenario seed)."""
        return replace(
            self,
            train=replace(self.train, seed=seed),
            eval=replace(self.eval, seed=seed),
            train_scenario=replace(self.train_scenario, seed=seed),
            cross_scenarios={
                name: replace(spec, seed=seed + 1 + i)
                for i, (name, spec) in enumerate(self.cross_scenarios.items())
            },
        )


def _merge(defaults: dict, override: dict, path: tuple = ()) -> dict:
    """Recursive merge that rejects keys absent from the defaults."""
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        where = ".".join(path + (key,))
        if path in _OPEN_SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping of scenario overrides")
            unknown = set(value) - _SCENARIO_KEYS
            if unknown:
                raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
            merged[key] = copy.deepcopy(value)
            continue
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a section, got {type(value).__name__}")
            if path + (key,) in _OPEN_SECTIONS:
                # a named-target mapping replaces the default targets
                merged[key] = _merge({}, value, path + (key,))
            else:
                merged[key] = _merge(defaults[key], value, path + (key,))
        else:
            merged[key] = value
    return merged


def _typed(section: dict, name: str, types: dict) -> dict:
    for key, expected in types.items():
        value = section[key]
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            section[key] = float(value)
        elif not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            raise ConfigError(f"{name}.{key}: expected {getattr(expected, '__name__', expected)}, got {value!r}")
    return section


def build_config(raw: dict) -> ExperimentConfig:
    """Turn a merged settings dict into validated config objects."""
    try:
        model_raw = _typed(dict(raw["model"]), "model", {
            "n_clips": int, "dim_v": int, "dim_s": int, "vocab_size": int,
            "bm_samples": int, "location_bias": bool,
        })
        model = ModelConfig(**model_raw)
        labels = LabelConfig(**_typed(dict(raw["labels"]), "labels", {"mu_min": float, "mu_max": float}))

        train_raw = _typed(dict(raw["train"]), "train", {
            "mode": str, "alpha": float, "lr": float, "beta1": float, "beta2": float, "adam_eps": float,
            "batch_size": int, "epochs": int, "seed": int, "detach_bias_weight": bool,
            "stop_encoder_grad_from_visual": bool, "bce_reduction": str,
        })
        train = TrainConfig(label_cfg=labels, **train_raw)

        eval_raw = _typed(dict(raw["eval"]), "eval", {"nms_thresh": float, "top_n": list, "thetas": list, "seed": int})
        evaluation = EvalConfig(
            nms_thresh=eval_raw["nms_thresh"],
            top_n=tuple(int(n) for n in eval_raw["top_n"]),
            thetas=tuple(float(t) for t in eval_raw["thetas"]),
            seed=eval_raw["seed"],
        )

        data = DataConfig(**_typed(dict(raw["data"]), "data", {
            "n_train": int, "n_test": int, "n_intest": int, "out_dir": str, "bias_grid": int, "top_k": int,
        }))
        if min(data.n_train, data.n_test, data.n_intest) < 1:
            raise ConfigError("data: sample counts must be >= 1")

        train_scenario = ScenarioSpec(**raw["scenarios"]["train"])
        cross = {}
        for name, override in raw["scenarios"]["cross"].items():
            merged = {**raw["scenarios"]["train"], "name": name, **override}
            cross[name] = ScenarioSpec(**merged)
        if not cross:
            raise ConfigError("scenarios.cross needs at least one target scenario")

        gradcheck = GradCheckConfig(**_typed(dict(raw["gradcheck"]), "gradcheck", {
            "n_clips": int, "dim": int, "vocab_size": int, "n_tokens": int,
            "alpha": float, "h": float, "tol": float, "seed": int,
        }))
        sweep_raw = _typed(dict(raw["sweep"]), "sweep", {"alphas": list, "seeds": list})
        sweep = SweepConfig(alphas=tuple(float(a) for a in sweep_raw["alphas"]),
                            seeds=tuple(int(s) for s in sweep_raw["seeds"]))
        if not sweep.alphas or min(sweep.alphas) <= 0:
            raise ConfigError("sweep.alphas needs at least one positive value")
        threads = _typed(dict(raw["runtime"]), "runtime", {"threads": int})["threads"]
    except (ContractError, TypeError) as e:
        raise ConfigError(str(e)) from e

    for spec in [train_scenario, *cross.values()]:
        if (spec.n_clips, spec.dim) != (model.n_clips, model.dim_v):
            raise ConfigError(f"scenario {spec.name!r} is {spec.n_clips}x{spec.dim}, model is {model.n_clips}x{model.dim_v}")
        if spec.vocab_size > model.vocab_size:
            raise ConfigError(f"scenario {spec.name!r} vocabulary exceeds model.vocab_size")
    if model.dim_v != model.dim_s:
        raise ConfigError("the visual-semantic head needs model.dim_v == model.dim_s")

    return ExperimentConfig(
        model=model, labels=labels, train=train, eval=evaluation, data=data,
        train_scenario=train_scenario, cross_scenarios=cross,
        gradcheck=gradcheck, sweep=sweep, threads=max(1, threads), raw=raw,
    )


def load_config(path: Path | str | None = None) -> ExperimentConfig:
    """Load configuration from a YAML file; built-in defaults when the file is absent."""
    override = {}
    if path is not None or DEFAULT_CONFIG_PATH.exists():
        config_path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
        try:
            with open(config_path, "r") as f:
                override = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {config_path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed YAML in {config_path}: {e}") from e
        if not isinstance(override, dict):
            raise ConfigError(f"{config_path}: top level must be a mapping")
    return build_config(_merge(DEFAULTS, override))
