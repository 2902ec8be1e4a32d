"""Constant-velocity Kalman filter over (cx, cy, w, h).

The state is the box center and extent plus their per-frame velocities. All
noise standard deviations are proportional to the box height, with the
SORT/ByteTrack weights 1/20 (position) and 1/160 (velocity).
"""
from __future__ import annotations

from typing import Union

import numpy as np
import scipy.linalg

from core.models import MIN_EXTENT, BBox, KalmanState

_NDIM = 4


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2.0


class KalmanFilter:
    """Predict/update on immutable KalmanState values.

    ``process_scale`` and ``measurement_scale`` multiply the process and
    measurement standard deviations; 1.0 reproduces the ByteTrack noise model
    and ``process_scale=0`` gives a filter that trusts the constant-velocity
    model exactly.
    """

    def __init__(
        self,
        std_weight_position: float = 1.0 / 20,
        std_weight_velocity: float = 1.0 / 160,
        process_scale: float = 1.0,
        measurement_scale: float = 1.0,
    ):
        self._motion_mat = np.eye(2 * _NDIM)
        for i in range(_NDIM):
            self._motion_mat[i, _NDIM + i] = 1.0
        self._update_mat = np.eye(_NDIM, 2 * _NDIM)
        self._std_weight_position = std_weight_position
        self._std_weight_velocity = std_weight_velocity
        self._process_scale = process_scale
        self._measurement_scale = measurement_scale

    def initiate(self, box: BBox) -> KalmanState:
        mean = np.r_[box.as_array(), np.zeros(_NDIM)]
        std = np.r_[
            np.full(_NDIM, 2 * self._std_weight_position * box.h),
            np.full(_NDIM, 10 * self._std_weight_velocity * box.h),
        ]
        return KalmanState(mean, np.diag(np.square(std)))

    def predict(self, state: KalmanState) -> KalmanState:
        h = max(float(state.mean[3]), MIN_EXTENT)
        std = self._process_scale * np.r_[
            np.full(_NDIM, self._std_weight_position * h),
            np.full(_NDIM, self._std_weight_velocity * h),
        ]
        motion_cov = np.diag(np.square(std))
        mean = self._motion_mat @ state.mean
        covariance = np.linalg.multi_dot(
            (self._motion_mat, state.covariance, self._motion_mat.T)
        ) + motion_cov
        return KalmanState(mean, _symmetrize(covariance))

    def update(self, state: KalmanState, measurement: Union[BBox, np.ndarray]) -> KalmanState:
        z = measurement.as_array() if isinstance(measurement, BBox) else np.asarray(
            measurement, dtype=np.float64
        )
        if z.shape != (_NDIM,) or not np.all(np.isfinite(z)):
            raise ValueError(f"measurement must be 4 finite values, got {z!r}")

        h = max(float(state.mean[3]), MIN_EXTENT)
        std = np.full(_NDIM, self._measurement_scale * self._std_weight_position * h)
        projected_mean = self._update_mat @ state.mean
        projected_cov = np.linalg.multi_dot(
            (self._update_mat, state.covariance, self._update_mat.T)
        ) + np.diag(np.square(std))

        chol_factor, lower = scipy.linalg.cho_factor(projected_cov, lower=True, check_finite=False)
        kalman_gain = scipy.linalg.cho_solve(
            (chol_factor, lower),
            (state.covariance @ self._update_mat.T).T,
            check_finite=False,
        ).T
        innovation = z - projected_mean

        mean = state.mean + kalman_gain @ innovation
        mean[2:4] = np.maximum(mean[2:4], MIN_EXTENT)
        covariance = state.covariance - np.linalg.multi_dot(
            (kalman_gain, projected_cov, kalman_gain.T)
        )
        return KalmanState(mean, _symmetrize(covariance))


_default_filter = KalmanFilter()


def kf_init(box: BBox) -> KalmanState:
    return _default_filter.initiate(box)


def kf_predict(state: KalmanState) -> KalmanState:
    return _default_filter.predict(state)


def kf_update(state: KalmanState, z: Union[BBox, np.ndarray]) -> KalmanState:
    return _default_filter.update(state, z)
