"""Ordered-subsets accelerated proximal-gradient reconstruction.

Minimizes, over rank-limited space-time images F,

    sum_k 0.5 |H_k f_k - g_k|^2  +  gamma * 0.5 |F D|_F^2  +  lam * |F|_*

where D takes frame-to-frame differences. Each inner step takes a
gradient step over one subset of frames (scaled by the subset count),
applies the nuclear-norm proximal operator with rank cap, and applies
momentum extrapolation against the previous inner iterate. Everything
stays in factored form; the gradient enters as rank-1 terms.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import ScanGeometry, VoxelGrid, pose_for_frame
from .lowrank import (
    FactoredImage,
    LowRankUpdate,
    add_scaled,
    column_difference_energy,
    frame_column,
    prox_nuclear,
)
from .operator import FrameData, adjoint, estimate_operator_norm, forward
from .phantoms import DynamicImage, MeasurementSet

FISTA_VARIANTS = ("standard", "paper-literal")

# Abort when an iteration's squared change exceeds the largest previous
# one by this factor; the objective has blown up, not stalled.
DIVERGENCE_FACTOR = 1e3

# Iterate magnitudes beyond this are unambiguous divergence for image
# reconstruction while still leaving every squared quantity finite.
SIGMA_CEILING = 1e100


class DivergenceError(RuntimeError):
    """The iteration is growing instead of settling."""


@dataclass(frozen=True)
class SolverConfig:
    """Reconstruction settings.

    ``eta`` is the gradient step size: a positive float, or "auto" to
    derive 0.9 / (subsets * (L + 4 * gamma)) from a power-iteration
    estimate L of the per-frame operator's largest eigenvalue.
    ``epsilon`` stops the outer loop once the squared-change ratio
    falls below it (never before iteration 2). ``audit_ranks`` records
    per-step rank bounds in the trace for invariant checking.
    """

    r_max: int
    epsilon: float = 0.0
    gamma: float = 0.0
    lam: float = 0.0
    eta: float | str = "auto"
    subsets: int = 1
    max_iterations: int = 100
    seed: int = 0
    fista_variant: str = "standard"
    track_full_fidelity: bool = False
    audit_ranks: bool = False

    def __post_init__(self):
        if self.r_max < 1:
            raise ValueError(f"r_max must be >= 1, got {self.r_max}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lam must be >= 0")
        if isinstance(self.eta, str):
            if self.eta != "auto":
                raise ValueError(f'eta must be positive or "auto", got {self.eta!r}')
        elif self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.subsets < 1:
            raise ValueError(f"subsets must be >= 1, got {self.subsets}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.fista_variant not in FISTA_VARIANTS:
            raise ValueError(
                f"fista_variant must be one of {FISTA_VARIANTS}, got {self.fista_variant!r}"
            )


@dataclass(frozen=True)
class SubsetSchedule:
    """One outer iteration's frame partition: a shuffled permutation cut
    into ``subsets`` contiguous blocks of size ceil(K / subsets).

    When subsets does not divide K the last blocks run short, possibly
    empty; empty blocks still execute (prox and momentum only).
    """

    permutation: tuple[int, ...]
    block_size: int
    blocks: tuple[tuple[int, ...], ...]

    @classmethod
    def draw(cls, frame_count: int, subsets: int, rng: np.random.Generator):
        if not 1 <= subsets <= frame_count:
            raise ValueError(
                f"subsets must be in [1, {frame_count}], got {subsets}"
            )
        perm = tuple(int(k) for k in rng.permutation(frame_count))
        b = math.ceil(frame_count / subsets)
        blocks = tuple(perm[j * b : (j + 1) * b] for j in range(subsets))
        return cls(perm, b, blocks)


@dataclass
class ConvergenceTrace:
    """Per-outer-iteration solver history.

    ``fidelities`` holds NaN when full-fidelity tracking is off.
    ``seconds`` is wall-clock time and therefore excluded from
    :meth:`signature`, the deterministic content used for
    reproducibility comparisons. ``rank_audit`` rows are
    (subset_size, pre_prox_rank_bound, post_prox_rank,
    extrapolated_rank) per inner step when auditing is on.
    """

    eta: float = 0.0
    iterations: list[int] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    fidelities: list[float] = field(default_factory=list)
    nuclear_norms: list[float] = field(default_factory=list)
    temporal_penalties: list[float] = field(default_factory=list)
    ranks: list[int] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    rank_audit: list[tuple[int, int, int, int]] | None = None

    def signature(self) -> tuple:
        """All algorithmic content; excludes wall-clock measurements."""
        return (
            self.eta,
            tuple(self.iterations),
            tuple(self.ratios),
            tuple(self.fidelities),
            tuple(self.nuclear_norms),
            tuple(self.temporal_penalties),
            tuple(self.ranks),
            None if self.rank_audit is None else tuple(self.rank_audit),
        )

    def rows(self):
        for i in range(len(self.iterations)):
            yield (
                self.iterations[i],
                self.ratios[i],
                self.fidelities[i],
                self.nuclear_norms[i],
                self.temporal_penalties[i],
                self.ranks[i],
                self.seconds[i],
            )

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,ratio,fidelity,nuclear_norm,temporal_penalty,rank,seconds\n")
            for row in self.rows():
                fh.write(
                    f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r},{row[4]!r},"
                    f"{row[5]},{row[6]!r}\n"
                )


def temporal_gradient_term(f: FactoredImage, subset) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rank-1 pieces of the temporal-penalty gradient for one subset.

    For each frame k in the subset except the last frame index, emits
    (F d_k, d_k) where F d_k = f_{k+1} - f_k; the final frame has no
    forward difference and contributes nothing.
    """
    k_count = f.frame_count
    terms = []
    for k in subset:
        if not 0 <= k < k_count:
            raise ValueError(f"frame index {k} outside [0, {k_count})")
        if k == k_count - 1:
            continue
        x = f.column_values(k + 1) - f.column_values(k)
        y = np.zeros(k_count)
        y[k] = -1.0
        y[k + 1] = 1.0
        terms.append((x, y))
    return terms


def gradient_step(
    f_bar: FactoredImage,
    subset,
    data: MeasurementSet,
    geometry: ScanGeometry,
    eta: float,
    gamma: float,
    subsets: int,
) -> LowRankUpdate:
    """One subset's gradient move, kept factored.

    Returns F_bar - eta * subsets * sum over the subset of the data
    residual terms (H_k^T (H_k f_k - g_k)) outer e_k plus
    gamma * (F_bar d_k) outer d_k.
    """
    if eta <= 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    grid = f_bar.grid
    if grid is None:
        raise ValueError("factored image needs a grid to apply the operator")
    k_count = f_bar.frame_count
    update = LowRankUpdate(f_bar, 1.0)
    scale = -eta * subsets
    for k in subset:
        pose = pose_for_frame(geometry, k)
        projected = forward(frame_column(f_bar, k), pose, geometry)
        residual = FrameData(
            projected.values - data.frame(k).values,
            projected.channel_count,
            projected.sample_count,
        )
        grad_image = adjoint(residual, pose, geometry, grid)
        e_k = np.zeros(k_count)
        e_k[k] = 1.0
        update.add_term(grad_image.values, e_k, scale)
    if gamma != 0.0:
        for x, y in temporal_gradient_term(f_bar, subset):
            update.add_term(x, y, scale * gamma)
    return update


def fista_momentum(
    t_j: float, f_new: FactoredImage, f_old: FactoredImage, variant: str = "standard"
) -> tuple[float, FactoredImage]:
    """Momentum update and factored extrapolation.

    t_{j+1} = (1 + sqrt(1 + 4 t_j^2)) / 2. The "standard" variant
    extrapolates with (t_j - 1) / t_{j+1}; "paper-literal" uses
    (t_j - 1) / t_j. Returns (t_{j+1}, F_new + coeff * (F_new - F_old)).
    """
    if t_j < 1:
        raise ValueError(f"momentum scalar must be >= 1, got {t_j}")
    if variant not in FISTA_VARIANTS:
        raise ValueError(f"variant must be one of {FISTA_VARIANTS}, got {variant!r}")
    t_next = (1.0 + math.sqrt(1.0 + 4.0 * t_j * t_j)) / 2.0
    coeff = (t_j - 1.0) / (t_next if variant == "standard" else t_j)
    extrapolated = add_scaled(1.0 + coeff, f_new, -coeff, f_old)
    return t_next, extrapolated


def data_fidelity(f: FactoredImage, data: MeasurementSet, geometry: ScanGeometry) -> float:
    """Full data-fit term 0.5 * sum_k |H_k f_k - g_k|^2."""
    total = 0.0
    for k in range(geometry.frame_count):
        pose = pose_for_frame(geometry, k)
        resid = forward(frame_column(f, k), pose, geometry).values - data.frame(k).values
        total += resid @ resid
    return 0.5 * float(total)


def _resolve_eta(config: SolverConfig, geometry: ScanGeometry, grid: VoxelGrid) -> float:
    if config.eta != "auto":
        return float(config.eta)
    lipschitz = estimate_operator_norm(
        geometry, grid, frames=[0], iterations=40, seed=config.seed
    )
    # 4 bounds the spectrum of the difference operator's normal matrix.
    return 0.9 / (config.subsets * (lipschitz + 4.0 * config.gamma))


def _squared_distance(f1: FactoredImage, f2: FactoredImage) -> float:
    d2 = (
        f1.frobenius_norm() ** 2
        + f2.frobenius_norm() ** 2
        - 2.0 * f1.inner(f2)
    )
    # overflow can cancel to nan here; report it as inf so magnitude
    # checks upstream still trip
    if not math.isfinite(d2):
        return math.inf
    return max(d2, 0.0)


def reconstruct(
    config: SolverConfig,
    data: MeasurementSet,
    geometry: ScanGeometry,
    grid: VoxelGrid,
    init: FactoredImage | None = None,
) -> tuple[FactoredImage, ConvergenceTrace]:
    """Run the full ordered-subsets accelerated proximal loop.

    Starts from zero (or ``init``), reshuffles frames every outer
    iteration, and stops when the ratio of the current squared change
    to the largest squared change so far falls to ``config.epsilon``
    (checked from iteration 2) or ``max_iterations`` is reached.

    Raises
    ------
    DivergenceError
        If an iteration's squared change exceeds the largest previous
        one by more than a factor of 1e3.
    """
    k_count = geometry.frame_count
    if data.geometry != geometry:
        raise ValueError("data was recorded with a different geometry")
    if not 1 <= config.subsets <= k_count:
        raise ValueError(
            f"subsets must be in [1, {k_count}], got {config.subsets}"
        )
    n = grid.n_voxels
    if init is None:
        current = FactoredImage.zeros(n, k_count, grid)
    else:
        if init.shape != (n, k_count):
            raise ValueError(
                f"init has shape {init.shape}, expected ({n}, {k_count})"
            )
        current = init if init.grid is not None else FactoredImage(
            init.u, init.s, init.v, grid
        )

    eta = _resolve_eta(config, geometry, grid)
    threshold = eta * config.lam
    seed_seq = np.random.SeedSequence(config.seed)
    shuffle_rng, prox_rng = (np.random.default_rng(s) for s in seed_seq.spawn(2))

    trace = ConvergenceTrace(eta=eta)
    if config.audit_ranks:
        trace.rank_audit = []

    t_momentum = 1.0
    f_bar = current
    previous_outer = current
    max_diff = 0.0

    for iteration in range(1, config.max_iterations + 1):
        started = time.perf_counter()
        schedule = SubsetSchedule.draw(k_count, config.subsets, shuffle_rng)
        for block in schedule.blocks:
            update = gradient_step(
                f_bar, block, data, geometry, eta, config.gamma, config.subsets
            )
            pre_rank = update.rank_bound
            fresh = prox_nuclear(
                update, threshold, config.r_max, seed=int(prox_rng.integers(2**31))
            )
            t_momentum, f_bar = fista_momentum(
                t_momentum, fresh, current, config.fista_variant
            )
            if trace.rank_audit is not None:
                trace.rank_audit.append((len(block), pre_rank, fresh.rank, f_bar.rank))
            current = fresh
            # With M momentum steps per iteration a blow-up can race from
            # benign to LAPACK-breaking magnitudes between two outer
            # checks, so bound the iterate here as well.
            lead = float(f_bar.s[0]) if f_bar.s.size else 0.0
            if not math.isfinite(lead) or lead > SIGMA_CEILING:
                raise DivergenceError(
                    f"iterate magnitude {lead:.3e} at iteration {iteration} "
                    f"signals divergence; the step size eta = {eta:.3e} is "
                    f"too large for this problem"
                )

        diff = _squared_distance(current, previous_outer)
        if iteration >= 2 and max_diff > 0.0 and (
            not math.isfinite(diff) or diff > DIVERGENCE_FACTOR * max_diff
        ):
            raise DivergenceError(
                f"squared change grew to {diff:.3e} against a previous maximum of "
                f"{max_diff:.3e} at iteration {iteration}; the step size "
                f"eta = {eta:.3e} is too large for this problem"
            )
        max_diff = max(max_diff, diff)
        ratio = diff / max_diff if max_diff > 0.0 else 0.0
        fidelity = (
            data_fidelity(current, data, geometry)
            if config.track_full_fidelity
            else float("nan")
        )
        trace.iterations.append(iteration)
        trace.ratios.append(ratio)
        trace.fidelities.append(fidelity)
        trace.nuclear_norms.append(current.nuclear_norm())
        trace.temporal_penalties.append(0.5 * column_difference_energy(current))
        trace.ranks.append(current.rank)
        trace.seconds.append(time.perf_counter() - started)
        previous_outer = current
        if iteration >= 2 and ratio <= config.epsilon:
            break

    return current, trace


def balanced_regularization(kappa: float, truth: DynamicImage) -> tuple[float, float]:
    """Weights that equalize the two penalties at the true object.

    gamma = kappa / sum_k |f_{k+1} - f_k|^2 and
    lam = kappa / |F_true|_*; kappa = 0 turns both off.
    """
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    if kappa == 0:
        return 0.0, 0.0
    temporal = float(np.sum(np.diff(truth.frames, axis=1) ** 2))
    if temporal <= 0:
        raise ValueError("true object is static; temporal energy is zero")
    nuclear = float(np.linalg.svd(truth.frames, compute_uv=False).sum())
    if nuclear <= 0:
        raise ValueError("true object is zero; nuclear norm is zero")
    return kappa / temporal, kappa / nuclear


KAPPA_GRID_FACTORS = (1e-4, 5e-4, 2.5e-3, 1.25e-2)


def kappa_grid(data: MeasurementSet) -> list[float]:
    """The four sweep values: fixed factors times the data's squared norm."""
    g2 = data.squared_norm()
    return [factor * g2 for factor in KAPPA_GRID_FACTORS]
