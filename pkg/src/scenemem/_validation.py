"""Input validation helpers shared by the estimators and free functions."""

from __future__ import annotations

import numbers

import numpy as np


class ParameterError(ValueError):
    """Raised when an argument violates a documented precondition."""


class ConfigError(ValueError):
    """Raised for malformed or unknown configuration values."""


class ProtocolError(RuntimeError):
    """Raised when an evaluation protocol's pairing assumptions break."""


class OrderingError(ValueError):
    """Raised on non-monotonic insertion into an append-only store."""


class DegenerateScaleError(ValueError):
    """Raised when a trajectory has no translation to normalise by."""


def check_int(value, name: str, *, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_grid(grid, name: str = "grid", *, ndim: int = 2) -> np.ndarray:
    """Return ``grid`` as a finite float64 array with ``ndim`` dimensions."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != ndim:
        raise ParameterError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    return arr


def check_maps(maps, name: str = "maps") -> np.ndarray:
    """Stack a list of equally shaped 2-D confidence maps into ``(n, gh, gw)``."""
    if isinstance(maps, np.ndarray):
        arr = maps.astype(np.float64, copy=False)
    else:
        maps = list(maps)
        if not maps:
            return np.zeros((0, 0, 0))
        shapes = {np.shape(m) for m in maps}
        if len(shapes) != 1:
            raise ParameterError(f"{name} have inconsistent shapes: {sorted(shapes)}")
        arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[0] == 0:
        return arr.reshape(0, 0, 0)
    if arr.ndim != 3:
        raise ParameterError(f"{name} must stack to (n, gh, gw), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contain non-finite values")
    return arr


def check_image(img, name: str = "image") -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ParameterError(f"{name} must be HxW or HxWxC, got {arr.shape}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ParameterError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def check_divisible(height: int, width: int, p: int) -> None:
    p = check_int(p, "patch size", minimum=1)
    if height % p or width % p:
        raise ParameterError(f"resolution {height}x{width} not divisible by patch size {p}")


def check_rotation(r, name: str = "rotation", atol: float = 1e-9) -> np.ndarray:
    """Validate an orthonormal, right-handed 3x3 matrix."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ParameterError(f"{name} must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=atol, rtol=0.0):
        raise ParameterError(f"{name} is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > atol:
        raise ParameterError(f"{name} has determinant != +1")
    return r
