"""Configuration management for megasplat."""

import logging
import os
import sys
from pathlib import Path

import structlog
from dotenv import load_dotenv
from pydantic import BaseModel, Field

# Load environment variables
load_dotenv()


class Config(BaseModel):
    """Application configuration."""

    log_level: str = Field(default_factory=lambda: os.getenv("LOG_LEVEL", "INFO"))

    # Rendering
    render_workers: int = Field(
        default_factory=lambda: int(os.getenv("MEGASPLAT_RENDER_WORKERS", "1")), ge=1
    )
    tile_size: int = Field(
        default_factory=lambda: int(os.getenv("MEGASPLAT_TILE_SIZE", "16")), ge=1
    )
    eval_concurrency: int = Field(
        default_factory=lambda: int(os.getenv("MEGASPLAT_EVAL_CONCURRENCY", "4")), ge=1
    )

    # Reproducibility
    seed: int = Field(default_factory=lambda: int(os.getenv("MEGASPLAT_SEED", "0")))


# Global config instance
config = Config()


def get_config() -> Config:
    """Get the global configuration instance."""
    return config


def configure_logging(level: str | None = None) -> None:
    """Install the structlog pipeline at the configured level.

    Args:
        level: Log level name; defaults to ``Config.log_level``
    """
    name = (level or config.log_level).upper()
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(getattr(logging, name, logging.INFO)),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def get_manifest_file(dataset_dir: Path) -> Path:
    """Get the camera manifest path of a dataset.

    Args:
        dataset_dir: Root directory of the dataset

    Returns:
        Path to ``cameras.json``
    """
    return Path(dataset_dir) / "cameras.json"


def get_ground_truth_file(dataset_dir: Path) -> Path:
    """Get the path of the ground-truth model written by ``synth``."""
    return Path(dataset_dir) / "ground_truth.npz"
