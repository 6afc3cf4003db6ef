from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="NEURALBO_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Only the output directory is environment-driven
    output_dir: Path = Path("./results")

    @property
    def output_dir_from_env(self) -> bool:
        return "output_dir" in self.model_fields_set

    def registry_url(self, output_dir: Path | None = None) -> str:
        root = Path(output_dir) if output_dir is not None else self.output_dir
        return f"sqlite:///{root / 'registry.db'}"


APP_NAME = "NeuralBO"
APP_VERSION = "1.0.0"

settings = Settings()


def resolve_output_dir(configured: Path | None = None) -> Path:
    """Environment override first, then the configured value, then the default."""
    current = Settings()
    if current.output_dir_from_env or configured is None:
        return current.output_dir
    return Path(configured)
