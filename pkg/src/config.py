from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="CORROLAB_",
        case_sensitive=False,
        extra="ignore",
    )

    # App
    app_name: str = "Corrolab"
    app_debug: bool = False
    log_dir: str = "data/logs"

    # Resources
    max_elements: int = 3_000_000  # element budget for generated meshes
    max_workers: int = 64
    worker_start_method: str = "spawn"  # multiprocessing start method of subdomain workers


settings = Settings()
