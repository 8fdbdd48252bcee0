"""Custom exceptions for the application."""

from pathlib import Path
from typing import Union


class NVSError(Exception):
    """Base exception for view-synthesis errors."""
    pass


class InvalidArgumentError(NVSError, ValueError):
    """Exception raised when an operation precondition is violated."""
    pass


class ShapeMismatchError(NVSError, ValueError):
    """Exception raised when tensor or image shapes disagree."""
    def __init__(self, what: str, expected, actual):
        super().__init__(f"{what}: expected shape {tuple(expected)}, got {tuple(actual)}")
        self.expected = expected
        self.actual = actual


class InvalidConfigurationError(NVSError):
    """Exception raised when configuration is invalid."""
    pass


class DatasetWriteError(NVSError):
    """Exception raised when a dataset artifact cannot be written."""
    def __init__(self, path: Union[str, Path], reason: str):
        super().__init__(f"Failed to write dataset artifact {path}: {reason}")
        self.path = Path(path)


class ManifestError(NVSError):
    """Exception raised when a manifest is malformed or references bad images."""
    def __init__(self, path: Union[str, Path], reason: str):
        super().__init__(f"Invalid manifest entry {path}: {reason}")
        self.path = Path(path)


class DatasetUnderflowError(NVSError):
    """Exception raised when a scene has fewer views than a batch requires."""
    def __init__(self, scene_id: int, available: int, required: int):
        super().__init__(
            f"Scene {scene_id} has {available} views, {required} required"
        )
        self.scene_id = scene_id


class CheckpointError(NVSError):
    """Exception raised when a checkpoint is missing or unreadable."""
    def __init__(self, path: Union[str, Path, None], reason: str):
        super().__init__(f"Checkpoint {path}: {reason}")
        self.path = Path(path) if path is not None else None
