"""Token adaptation for multi-view, multi-frame transformer inputs."""

__version__ = "0.1.0"
