"""Bundled example configurations."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def example_path(name: str = "m2_mediterranean.yaml") -> Path:
    """Filesystem path of a bundled example configuration."""
    path = Path(str(resources.files(__name__) / name))
    if not path.is_file():
        raise FileNotFoundError(f"no bundled example {name!r}")
    return path
