"""Quantitative evaluation: errors, spectra, objective values, TACs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ScanGeometry, pose_for_frame
from .lowrank import FactoredImage, column_difference_energy
from .operator import FrameImage, forward
from .phantoms import DynamicImage, MeasurementSet, TimeActivityCurve
from .solver import data_fidelity


@dataclass(frozen=True)
class MetricSeries:
    """A named list of scalars indexed by frame, rank, or iteration."""

    name: str
    values: np.ndarray
    index_meaning: str = "frame"

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"values must be a vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("metric values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    def mean(self) -> float:
        return float(self.values.mean())


def _frames_matrix(image) -> np.ndarray:
    """Dense (N, K) view of a DynamicImage or FactoredImage."""
    if isinstance(image, DynamicImage):
        return image.frames
    if isinstance(image, FactoredImage):
        return image.to_dense()
    raise TypeError(f"expected DynamicImage or FactoredImage, got {type(image).__name__}")


def nse_per_frame(est, truth: DynamicImage) -> MetricSeries:
    """Per-frame squared error over the peak true-frame energy.

    nSE_k = |f_k_true - f_k_est|^2 / max_k |f_k_true|^2. The average
    over frames is available as ``.mean()`` on the result.
    """
    est_mat = _frames_matrix(est)
    if est_mat.shape != truth.frames.shape:
        raise ValueError(
            f"estimate shape {est_mat.shape} != truth shape {truth.frames.shape}"
        )
    frame_energy = (truth.frames**2).sum(axis=0)
    peak = frame_energy.max()
    if peak <= 0:
        raise ValueError("true object is all zero; nSE is undefined")
    err = ((truth.frames - est_mat) ** 2).sum(axis=0)
    return MetricSeries("nse", err / peak, "frame")


def mse_vs_rank(truth: DynamicImage, ranks) -> MetricSeries:
    """Error of the best rank-R approximation for each requested R.

    Values are squared Frobenius norms of the discarded spectrum tail
    divided by N * K.
    """
    ranks = [int(r) for r in ranks]
    n, k = truth.frames.shape
    limit = min(n, k)
    for r in ranks:
        if not 0 <= r <= limit:
            raise ValueError(f"rank {r} outside [0, {limit}]")
    sigma = np.linalg.svd(truth.frames, compute_uv=False)
    tail = np.concatenate([np.cumsum((sigma**2)[::-1])[::-1], [0.0]])
    values = [tail[r] / (n * k) for r in ranks]
    return MetricSeries("mse_vs_rank", np.array(values), "rank")


def objective_components(
    f, data: MeasurementSet, geometry: ScanGeometry, gamma: float, lam: float
) -> tuple[float, float, float, float]:
    """Evaluate (L, R_t, R_nn, J) for a factored or dense dynamic image.

    L is the data fit 0.5 * sum_k |H_k f_k - g_k|^2, R_t the temporal
    penalty 0.5 * |F D|_F^2, R_nn the nuclear norm, and
    J = L + gamma * R_t + lam * R_nn.
    """
    if isinstance(f, FactoredImage):
        fit = data_fidelity(f, data, geometry)
        temporal = 0.5 * column_difference_energy(f)
        nuclear = f.nuclear_norm()
    else:
        mat = _frames_matrix(f)
        total = 0.0
        for k in range(geometry.frame_count):
            pose = pose_for_frame(geometry, k)
            resid = (
                forward(FrameImage(f.grid, mat[:, k]), pose, geometry).values
                - data.frame(k).values
            )
            total += resid @ resid
        fit = 0.5 * float(total)
        temporal = 0.5 * float(np.sum(np.diff(mat, axis=1) ** 2))
        nuclear = float(np.linalg.svd(mat, compute_uv=False).sum())
    return fit, temporal, nuclear, fit + gamma * temporal + lam * nuclear


def tac_similarity(est_tac, true_tac) -> float:
    """Pearson correlation of two time courses, in [-1, 1]."""
    a = est_tac.values if isinstance(est_tac, TimeActivityCurve) else np.asarray(est_tac, float)
    b = true_tac.values if isinstance(true_tac, TimeActivityCurve) else np.asarray(true_tac, float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"curves must be equal-length vectors, got {a.shape}, {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.linalg.norm(da) * np.linalg.norm(db)
    if denom == 0:
        raise ValueError("a curve has zero variance; correlation is undefined")
    return float(np.clip(da @ db / denom, -1.0, 1.0))
