"""Episodic few-shot classification engine.

C++ core exposed through pybind11: set-to-set embedding adaptation,
class-covariance (Mahalanobis) classification, episodic training and the
600-episode evaluation protocol.
"""

from fslkit._core import (
    TaskStatistics,
    adapt,
    cholesky_solve,
    classify,
    estimate_statistics,
    gradient_suite,
    mahalanobis_sq,
    run_compare,
    run_eval,
    run_synth,
    run_train,
    scan,
    softmax_rows,
)

__all__ = [
    "TaskStatistics",
    "adapt",
    "cholesky_solve",
    "classify",
    "estimate_statistics",
    "gradient_suite",
    "mahalanobis_sq",
    "run_compare",
    "run_eval",
    "run_synth",
    "run_train",
    "scan",
    "softmax_rows",
]
