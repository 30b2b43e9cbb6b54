from contextvars import ContextVar
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type

from pydantic import Field, field_validator
from pydantic.fields import FieldInfo
from pydantic_settings import (
    BaseSettings,
    NoDecode,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
)
from typing_extensions import Annotated

from core.exceptions import ConfigurationError
from core.models import GanMode, Split, Variant

_active_config_file: ContextVar[Optional[Path]] = ContextVar("scen_config_file", default=None)


def read_config_file(path: Path) -> Dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment"""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    values: Dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in text.split("=", 1))
        if key not in RunConfig.model_fields:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


class ConfigFileSettingsSource(PydanticBaseSettingsSource):
    """Values from the config file named by load_run_config"""

    def __init__(self, settings_cls: Type[BaseSettings]):
        super().__init__(settings_cls)
        path = _active_config_file.get()
        self._values = read_config_file(path) if path is not None else {}

    def get_field_value(self, field: FieldInfo, field_name: str) -> Tuple[Any, str, bool]:
        return self._values.get(field_name), field_name, False

    def __call__(self) -> Dict[str, Any]:
        return dict(self._values)


class RunConfig(BaseSettings):
    """Run settings with validation"""

    # Data
    metadata_path: Optional[Path] = Field(default=None)
    features_path: Optional[Path] = Field(default=None)
    output_dir: Path = Field(default=Path("runs"))
    force: bool = Field(default=False)

    # Synthetic generator
    n_states: int = Field(default=8, ge=2)
    n_objects: int = Field(default=10, ge=2)
    seen_fraction: float = Field(default=0.75, gt=0, le=1)
    samples_per_pair: int = Field(default=40, ge=3)
    feature_dim: int = Field(default=32, ge=1)
    noise_sigma: float = Field(default=0.1, ge=0)
    latent_dim: int = Field(default=8, ge=1)
    data_seed: int = Field(default=0)

    # Model dimensions
    embed_dim: Optional[int] = Field(default=None, ge=1)
    hidden: Optional[int] = Field(default=None, ge=1)
    proto_dim: int = Field(default=300, ge=1)
    classifier_layers: int = Field(default=1, ge=1)
    stm_hidden: Optional[int] = Field(default=None, ge=1)

    # Contrastive spaces
    tau_s: float = Field(default=0.1, gt=0)
    tau_o: float = Field(default=0.1, gt=0)
    k: int = Field(default=10, ge=1)
    normalize: bool = Field(default=True)

    # Loss weights
    alpha: float = Field(default=0.1, ge=0)
    beta: float = Field(default=0.5, ge=0)

    # Optimizer
    lr: float = Field(default=4e-5, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)

    # Training
    batch_size: int = Field(default=128, ge=1)
    epochs: int = Field(default=60, ge=0)
    seed: int = Field(default=0)
    variant: Variant = Field(default=Variant.FULL)
    gan_mode: GanMode = Field(default=GanMode.NON_SATURATING)
    deterministic: bool = Field(default=True)

    # Evaluation and experiments
    split: Split = Field(default=Split.TEST)
    checkpoint: Optional[Path] = Field(default=None)
    n_seeds: int = Field(default=5, ge=1)
    alpha_grid: Annotated[List[float], NoDecode] = Field(default=[0.1])
    beta_grid: Annotated[List[float], NoDecode] = Field(default=[0.0, 0.1, 0.5, 1.0])

    log_level: str = Field(default="INFO")

    model_config = SettingsConfigDict(
        env_prefix="SCEN_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("alpha_grid", "beta_grid", mode="before")
    @classmethod
    def _split_grid(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [float(v) for v in value.replace(",", " ").split()]
        return value

    @field_validator("alpha_grid", "beta_grid")
    @classmethod
    def _non_negative_grid(cls, value: List[float]) -> List[float]:
        if not value or any(v < 0 for v in value):
            raise ValueError("grid must hold at least one non-negative weight")
        return value

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # CLI flags > SCEN_* environment > .env > config file > defaults
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            ConfigFileSettingsSource(settings_cls),
            file_secret_settings,
        )


def load_run_config(config_file: Optional[Path] = None, **overrides: Any) -> RunConfig:
    """
    Build a RunConfig from a config file, the environment and explicit overrides

    Args:
        config_file: optional `key = value` file
        overrides: values taking precedence over every other source (CLI flags)

    Returns:
        Validated RunConfig
    """
    token = _active_config_file.set(Path(config_file) if config_file else None)
    try:
        return RunConfig(**overrides)
    finally:
        _active_config_file.reset(token)


# Singleton instance
settings = RunConfig()
