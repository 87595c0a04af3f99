"""Experiment configuration: typed sections loaded from YAML."""
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Any,
    Dict,
    Mapping,
    Optional,
    Tuple,
    Type,
    TypeVar,
    Union,
    get_type_hints,
)

import yaml

from .data.concepts import ConceptSpec
from .errors import ConfigError

_LOGGER = logging.getLogger(__name__)

_DEFAULT_CONFIG_PATH = Path(__file__).parent / "config.yaml"

T = TypeVar("T")


def _require(condition: bool, name: str, message: str) -> None:
    if not condition:
        raise ConfigError(name, message)


@dataclass(frozen=True)
class ModelConfig:
    resolution: int = 16
    channels: int = 3
    base_channels: int = 32
    embed_dim: int = 32
    heads: int = 2
    max_tokens: int = 12
    personalized_slots: int = 8

    def __post_init__(self) -> None:
        _require(
            self.resolution >= 4 and self.resolution % 2 == 0,
            "resolution",
            "must be an even number >= 4",
        )
        _require(self.channels >= 1, "channels", "must be positive")
        _require(self.base_channels >= 1, "base_channels", "must be positive")
        _require(
            self.embed_dim >= 2 and self.embed_dim % 2 == 0,
            "embed_dim",
            "must be an even number >= 2",
        )
        _require(self.heads >= 1, "heads", "must be positive")
        _require(
            self.base_channels % self.heads == 0, "heads", "must divide base_channels"
        )
        _require(self.max_tokens >= 2, "max_tokens", "must be at least 2")
        _require(self.personalized_slots >= 1, "personalized_slots", "must be positive")


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self) -> None:
        _require(self.steps >= 2, "steps", "need at least 2 steps")
        _require(0.0 < self.beta_start < 1.0, "beta_start", "must lie in (0, 1)")
        _require(
            self.beta_start <= self.beta_end < 1.0,
            "beta_end",
            "must lie in [beta_start, 1)",
        )


@dataclass(frozen=True)
class SamplingConfig:
    steps: int = 200
    guidance_scale: float = 7.0
    batch_size: int = 16

    def __post_init__(self) -> None:
        _require(self.steps >= 1, "steps", "must be positive")
        _require(self.guidance_scale >= 0.0, "guidance_scale", "must be non-negative")
        _require(self.batch_size >= 1, "batch_size", "must be positive")


@dataclass(frozen=True)
class LossWeights:
    lam: float = 1.0
    alpha: float = 1.0
    beta_tame: float = 1.0
    gamma: float = 1.0

    def __post_init__(self) -> None:
        for name in ("lam", "alpha", "beta_tame", "gamma"):
            _require(getattr(self, name) >= 0.0, name, "must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    learning_rate: float = 1.5e-3
    batch_size: int = 2
    use_tame: bool = True
    use_ecd: bool = True

    def __post_init__(self) -> None:
        _require(self.steps > 0, "steps", "must be positive")
        _require(self.learning_rate > 0.0, "learning_rate", "must be positive")
        _require(self.batch_size >= 1, "batch_size", "must be positive")


@dataclass(frozen=True)
class PretrainConfig:
    max_steps: int = 3000
    learning_rate: float = 2e-3
    batch_size: int = 32
    cond_dropout: float = 0.1
    images_per_family: int = 64
    heldout_images: int = 40
    eval_every: int = 100
    patience: int = 3
    plateau_tolerance: float = 0.01

    def __post_init__(self) -> None:
        _require(self.max_steps > 0, "max_steps", "must be positive")
        _require(self.learning_rate > 0.0, "learning_rate", "must be positive")
        _require(self.batch_size >= 1, "batch_size", "must be positive")
        _require(0.0 <= self.cond_dropout < 1.0, "cond_dropout", "must lie in [0, 1)")
        _require(self.images_per_family >= 1, "images_per_family", "must be positive")
        _require(self.heldout_images >= 1, "heldout_images", "must be positive")
        _require(self.eval_every >= 1, "eval_every", "must be positive")
        _require(self.patience >= 1, "patience", "must be positive")
        _require(
            self.plateau_tolerance >= 0.0, "plateau_tolerance", "must be non-negative"
        )


@dataclass(frozen=True)
class PriorConfig:
    num_images: int = 200
    subsample: int = 50
    shots: int = 4

    def __post_init__(self) -> None:
        _require(self.num_images > 0, "num_images", "must be positive")
        _require(
            1 <= self.subsample <= self.num_images,
            "subsample",
            "must lie in [1, num_images]",
        )
        _require(3 <= self.shots <= 5, "shots", "a task holds 3 to 5 images")


@dataclass(frozen=True)
class BankConfig:
    eta: int = 4
    beta_score: float = 1.0

    def __post_init__(self) -> None:
        _require(self.eta >= 1, "eta", "must be at least 1")
        _require(self.beta_score >= 0.0, "beta_score", "must be non-negative")


@dataclass(frozen=True)
class GuidanceConfig:
    kernel_size: int = 3
    sigma: float = 0.5
    threshold_ratio: float = 0.5
    mask_from_smoothed: bool = True
    step_size: float = 20.0
    iterations: int = 1
    guided_fraction: float = 0.8
    layers: Tuple[int, ...] = ()
    use_caa: bool = True
    use_oaa: bool = True

    def __post_init__(self) -> None:
        _require(
            self.kernel_size >= 1 and self.kernel_size % 2 == 1,
            "kernel_size",
            "must be odd and positive",
        )
        _require(self.sigma > 0.0, "sigma", "must be positive")
        _require(
            0.0 < self.threshold_ratio <= 1.0, "threshold_ratio", "must lie in (0, 1]"
        )
        _require(self.step_size >= 0.0, "step_size", "must be non-negative")
        _require(self.iterations >= 0, "iterations", "must be non-negative")
        _require(
            0.0 <= self.guided_fraction <= 1.0, "guided_fraction", "must lie in [0, 1]"
        )


@dataclass(frozen=True)
class ExtractorConfig:
    feature_dim: int = 32
    hidden_channels: int = 32
    steps: int = 400
    learning_rate: float = 3e-3
    batch_size: int = 64
    temperature: float = 0.1
    images_per_family: int = 48
    heldout_images: int = 40
    min_retrieval_accuracy: float = 0.9

    def __post_init__(self) -> None:
        _require(self.feature_dim >= 2, "feature_dim", "must be at least 2")
        _require(self.hidden_channels >= 1, "hidden_channels", "must be positive")
        _require(self.steps > 0, "steps", "must be positive")
        _require(self.learning_rate > 0.0, "learning_rate", "must be positive")
        _require(self.batch_size >= 2, "batch_size", "must be at least 2")
        _require(self.temperature > 0.0, "temperature", "must be positive")
        _require(self.images_per_family >= 1, "images_per_family", "must be positive")
        _require(self.heldout_images >= 1, "heldout_images", "must be positive")
        _require(
            0.0 <= self.min_retrieval_accuracy <= 1.0,
            "min_retrieval_accuracy",
            "must be in [0, 1]",
        )


@dataclass(frozen=True)
class EvaluationConfig:
    samples_per_prompt: int = 4
    prompts_per_concept: int = 20
    multi_concept_prompts: int = 2

    def __post_init__(self) -> None:
        _require(self.samples_per_prompt >= 1, "samples_per_prompt", "must be positive")
        _require(
            1 <= self.prompts_per_concept <= 20,
            "prompts_per_concept",
            "must lie in [1, 20]",
        )
        _require(
            self.multi_concept_prompts >= 0,
            "multi_concept_prompts",
            "must be non-negative",
        )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    concepts: Tuple[ConceptSpec, ...] = ()

    def __post_init__(self) -> None:
        _require(
            self.sampling.steps <= self.schedule.steps,
            "sampling.steps",
            f"cannot exceed schedule.steps ({self.schedule.steps})",
        )
        _require(len(self.concepts) >= 1, "concepts", "need at least one concept")
        _require(
            len(self.concepts) <= self.model.personalized_slots,
            "concepts",
            f"more concepts than personalized slots ({self.model.personalized_slots})",
        )
        tokens = [concept.token for concept in self.concepts]
        _require(
            len(set(tokens)) == len(tokens),
            "concepts",
            "personalized tokens must be unique",
        )
        ids = [concept.concept_id for concept in self.concepts]
        _require(len(set(ids)) == len(ids), "concepts", "concept ids must be unique")

    @property
    def method(self) -> str:
        """Label of the training variant, used to compare runs."""
        if self.train.use_tame and self.train.use_ecd:
            return "l2dm"
        if not self.train.use_tame and not self.train.use_ecd:
            return "finetune"
        return "no-tame" if self.train.use_ecd else "no-ecd"

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir)


def _coerce(value: Any, annotation: Any, name: str) -> Any:
    origin = getattr(annotation, "__origin__", None)
    if dataclasses.is_dataclass(annotation):
        if not isinstance(value, Mapping):
            raise ConfigError(name, f"expected a mapping, got {type(value).__name__}")
        return _build(annotation, value, name)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(name, f"expected a list, got {type(value).__name__}")
        item_type = annotation.__args__[0]
        return tuple(
            _coerce(item, item_type, f"{name}[{i}]") for i, item in enumerate(value)
        )
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        return value
    raise ConfigError(name, f"unsupported type {annotation!r}")


def _build(cls: Type[T], data: Mapping[str, Any], prefix: str = "") -> T:
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(data) - known)
    if unknown:
        key = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ConfigError(key, "unknown key")

    kwargs = {}
    for key, value in data.items():
        name = f"{prefix}.{key}" if prefix else key
        kwargs[key] = _coerce(value, hints[key], name)
    try:
        return cls(**kwargs)
    except ConfigError as err:
        key = f"{prefix}.{err.field}" if prefix else err.field
        raise ConfigError(key, err.message) from err


def _merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def _set_dotted(data: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def _read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as config_file:
            data = yaml.safe_load(config_file)
    except yaml.YAMLError as err:
        raise ConfigError(str(path), f"not valid YAML: {err}") from err
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(str(path), "top level must be a mapping")
    return dict(data)


def parse_config(data: Mapping[str, Any]) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Packaged defaults, then the user file, then dotted-key overrides."""
    data = _read_yaml(_DEFAULT_CONFIG_PATH)
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError("--config", f"no such file: {path}")
        data = _merge(data, _read_yaml(path))
    for dotted, value in (overrides or {}).items():
        _set_dotted(data, dotted, value)
    config = parse_config(data)
    _LOGGER.debug("Loaded configuration: %s", config)
    return config


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    def convert(value: Any) -> Any:
        if isinstance(value, dict):
            return {key: convert(item) for key, item in value.items()}
        if isinstance(value, (list, tuple)):
            return [convert(item) for item in value]
        return value

    return convert(dataclasses.asdict(config))


def render_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(render_config(config), encoding="utf-8")
