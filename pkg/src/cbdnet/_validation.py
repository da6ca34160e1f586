"""Input validation helpers shared by the public API."""

import numpy as np

MIN_SIZE = 16


def check_image(img, name="image", min_size=MIN_SIZE, multiple_of=None):
    """Validate an H x W x 3 float image in [0, 1] and return it as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    if h < min_size or w < min_size:
        raise ValueError(f"{name} is {h}x{w}; minimum size is {min_size}x{min_size}")
    if multiple_of is not None and (h % multiple_of or w % multiple_of):
        raise ValueError(f"{name} dimensions {h}x{w} must be multiples of {multiple_of}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_size(size, min_size=MIN_SIZE):
    h, w = (int(size[0]), int(size[1]))
    if h < min_size or w < min_size:
        raise ValueError(f"size {h}x{w} below minimum {min_size}x{min_size}")
    return h, w


def check_vector(v, n, name="vector", binary=False):
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.shape[0] != n:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
    if binary and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be a 0/1 selection vector")
    return arr


def check_same_shape(a, b, what="inputs"):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what} dimension mismatch: {np.shape(a)} vs {np.shape(b)}")
