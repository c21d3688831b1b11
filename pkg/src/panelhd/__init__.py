"""Robust estimation, selection and inference for high-dimensional panels.

Modules
-------
panel       balanced-panel data model, CSV ingestion, transforms
lasso       coordinate-descent (weighted) LASSO and modified-BIC tuning
nodewise    nodewise regressions, precision matrix, debiased estimator
longrun     kernel HAC long-run covariance, thresholding, pooled comparator
factors     sparse + low-rank estimation with bias-corrected inference
inference   confidence intervals, CD and Jarque-Bera diagnostics
montecarlo  simulation designs, replication harness, summary metrics
cli         the ``panel-hd`` command-line front end
"""

__version__ = "0.1.0"
