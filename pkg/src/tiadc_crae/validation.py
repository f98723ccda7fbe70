"""Input validation helpers for the estimator-style entry points."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .sampler import CaptureRecord


def check_records(X, multiple_of: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D float64 array of records (one per row).

    A single 1-D record is promoted to one row.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    if multiple_of is not None and X.shape[1] % multiple_of:
        raise ValueError(f"record length {X.shape[1]} is not a multiple of {multiple_of}")
    return X


def check_capture(rec) -> CaptureRecord:
    if not isinstance(rec, CaptureRecord):
        raise TypeError(f"expected a CaptureRecord, got {type(rec).__name__}")
    if not (np.all(np.isfinite(rec.ch0)) and np.all(np.isfinite(rec.ch1))):
        raise ValueError("capture contains non-finite samples")
    return rec
