"""Input validation helpers used across the pipeline and the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def as_complex_samples(x, name="samples") -> np.ndarray:
    """Coerce to a finite, nonempty 1-D complex128 array."""
    arr = np.asarray(x, dtype=np.complex128).reshape(-1)
    if arr.size == 0:
        raise ContractError(f"{name} must be nonempty")
    if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
        raise ContractError(f"{name} contains non-finite values")
    return arr


def check_finite(arr, name="array") -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite values")
    return arr


def check_vectors(X, dim=None, name="vectors") -> np.ndarray:
    """Validate a (n, dim) stack of real embedding vectors."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ContractError(f"{name} must be a nonempty (n, dim) array")
    if dim is not None and arr.shape[1] != dim:
        raise ContractError(f"{name} has dim {arr.shape[1]}, expected {dim}")
    check_finite(arr, name)
    return arr


def check_unit_norm(X, tol=1e-6, name="vectors") -> np.ndarray:
    arr = check_vectors(X, name=name)
    norms = np.linalg.norm(arr, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ContractError(f"{name} are not unit L2 norm (max deviation {worst:.2e})")
    return arr


def check_spectrogram_batch(X, name="X") -> np.ndarray:
    """Validate a (n, rows, cols) stack of real feature matrices."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ContractError(f"{name} must be a nonempty (n, rows, cols) array")
    check_finite(arr, name)
    return arr
