"""scikit-learn style wrappers around the reconstructors.

Each estimator maps rows of flattened measurement data to rows of flattened
images, so a batch of sinograms can go through ``transform`` in one call and
``get_params``/``set_params``/``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_finite
from .forward_fd import DEFAULT_MEMORY_CAP, FdModel, make_frequency_grid
from .forward_td import Sinogram, TdModel
from .geometry import AcousticConfig, ImageGrid, SensorArray
from .metrics import pearson
from .recon import SolverSettings, backproject, tikhonov_solve


def _check_setup(grid, sensors, config):
    if not isinstance(grid, ImageGrid):
        raise TypeError(f"grid must be an ImageGrid, got {type(grid).__name__}")
    if not isinstance(sensors, SensorArray):
        raise TypeError(f"sensors must be a SensorArray, got {type(sensors).__name__}")
    if not isinstance(config, AcousticConfig):
        raise TypeError(f"config must be an AcousticConfig, got {type(config).__name__}")


def _rows(X, n_features, complex_ok=False):
    """2-D float (or complex) array with ``n_features`` columns."""
    if complex_ok and np.iscomplexobj(X):
        X = np.atleast_2d(np.asarray(X, dtype=complex))
        check_finite(X, "X")
    else:
        X = check_array(X, dtype=np.float64)
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


class _ModelReconstructor(TransformerMixin, BaseEstimator):
    def _settings(self):
        return SolverSettings(self.alpha, self.max_iter, self.tol, relative_alpha=self.relative_alpha)

    def _build(self):
        raise NotImplementedError

    def fit(self, X=None, y=None):
        """Assemble the forward model; ``X`` and ``y`` are ignored."""
        _check_setup(self.grid, self.sensors, self.config)
        self.model_ = self._build()
        self.n_features_in_ = self.model_.shape[0]
        return self

    def transform(self, X):
        """Reconstruct one image per row of ``X``."""
        check_is_fitted(self, "model_")
        X = _rows(X, self.n_features_in_, complex_ok=self.model_.kind == "FD")
        settings = self._settings()
        out = np.empty((X.shape[0], self.grid.n_pixels))
        self.n_iter_ = []
        for i, row in enumerate(X):
            res = tikhonov_solve(self.model_, row, settings)
            out[i] = res.values
            self.n_iter_.append(res.iterations_used)
        return out

    def inverse_transform(self, X):
        """Forward-project rows of images back to measurement space."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.grid.n_pixels:
            raise ValueError(f"images have {X.shape[1]} pixels, expected {self.grid.n_pixels}")
        return np.stack([self.model_.apply(row) for row in X])

    def score(self, X, y):
        """Mean Pearson correlation between reconstructions of ``X`` and images ``y``."""
        recon = self.transform(X)
        y = check_array(y, dtype=np.float64)
        return float(np.mean([pearson(a, b) for a, b in zip(recon, y)]))


class TDMMReconstructor(_ModelReconstructor):
    """Time-domain model-based reconstruction with a sparse TOF model."""

    def __init__(self, grid=None, sensors=None, config=None, alpha=0.0, max_iter=50, tol=1e-6,
                 relative_alpha=False, out_of_window="raise"):
        self.grid = grid
        self.sensors = sensors
        self.config = config
        self.alpha = alpha
        self.max_iter = max_iter
        self.tol = tol
        self.relative_alpha = relative_alpha
        self.out_of_window = out_of_window

    def _build(self):
        return TdModel(self.grid, self.sensors, self.config, self.out_of_window)


class FDMMReconstructor(_ModelReconstructor):
    """Frequency-domain model-based reconstruction; rows of ``X`` are complex spectra."""

    def __init__(self, grid=None, sensors=None, config=None, alpha=0.0, max_iter=50, tol=1e-6,
                 relative_alpha=False, representation="auto", memory_cap=DEFAULT_MEMORY_CAP):
        self.grid = grid
        self.sensors = sensors
        self.config = config
        self.alpha = alpha
        self.max_iter = max_iter
        self.tol = tol
        self.relative_alpha = relative_alpha
        self.representation = representation
        self.memory_cap = memory_cap

    def _build(self):
        return FdModel(self.grid, self.sensors, make_frequency_grid(self.config), self.config,
                       self.representation, self.memory_cap)


class BackProjector(TransformerMixin, BaseEstimator):
    """Universal back-projection; rows of ``X`` are flattened sinograms."""

    def __init__(self, grid=None, sensors=None, config=None, surface_element=None):
        self.grid = grid
        self.sensors = sensors
        self.config = config
        self.surface_element = surface_element

    def fit(self, X=None, y=None):
        _check_setup(self.grid, self.sensors, self.config)
        self.n_features_in_ = self.sensors.n_sensors * self.config.nt
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = _rows(X, self.n_features_in_)
        shape = (self.sensors.n_sensors, self.config.nt)
        out = np.empty((X.shape[0], self.grid.n_pixels))
        for i, row in enumerate(X):
            sino = Sinogram(row.reshape(shape), self.config.dt, self.config.t0)
            out[i] = backproject(sino, self.sensors, self.grid, self.config,
                                 self.surface_element).values
        return out

    def score(self, X, y):
        recon = self.transform(X)
        y = check_array(y, dtype=np.float64)
        return float(np.mean([pearson(a, b) for a, b in zip(recon, y)]))
