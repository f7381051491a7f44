"""Trajectory metrics for the empirical NTK during training.

Kernels are compared with the scale-invariant distance

    d(A, B) = 1 - Tr(A B^T) / (sqrt(Tr(A A^T)) sqrt(Tr(B B^T))),

and located in polar coordinates relative to the initial and final kernels:
r_t = |K_t - K_0|_F / |K_f - K_0|_F, theta_t = arccos(1 - d(K_t, K_0)).
Spectral concentration is the fraction of squared eigenvalue mass in the top
p directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from .datasets import Dataset
from .errors import DivergenceError, NumericalError, ParameterError


def _frob_inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b))


def kernel_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Scale-invariant rotation distance between two symmetric kernels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericalError("kernel distance undefined for a zero matrix")
    return float(1.0 - _frob_inner(a, b) / (na * nb))


def polar_coordinates(theta_t: np.ndarray, theta_0: np.ndarray,
                      theta_f: np.ndarray) -> tuple[float, float]:
    """(r, theta) of a kernel relative to the initial and final kernels."""
    denom = np.linalg.norm(np.asarray(theta_f) - np.asarray(theta_0))
    if denom == 0.0:
        raise NumericalError("polar radius undefined: final kernel equals the "
                             "initial one")
    r = float(np.linalg.norm(np.asarray(theta_t) - np.asarray(theta_0)) / denom)
    angle_arg = np.clip(1.0 - kernel_distance(theta_t, theta_0), -1.0, 1.0)
    return r, float(np.arccos(angle_arg))


def concentration(eigs: np.ndarray, p: int) -> float:
    """Squared-eigenvalue mass of the top p entries of a descending spectrum."""
    eigs = np.asarray(eigs, dtype=np.float64)
    if not 1 <= p <= eigs.size:
        raise ParameterError(f"cutoff p must lie in [1, {eigs.size}], got {p}")
    if np.any(np.diff(eigs) > 0):
        raise ParameterError("eigenvalues must be sorted descending")
    total = float(np.sum(eigs * eigs))
    if total == 0.0:
        raise NumericalError("concentration undefined for an all-zero spectrum")
    return float(np.sum(eigs[:p] * eigs[:p])) / total


def descending_spectrum(kernel: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(kernel)[::-1]


def _top_p_projection(kernel: np.ndarray, p: int) -> np.ndarray:
    lam, vec = np.linalg.eigh(kernel)
    lam, vec = lam[::-1], vec[:, ::-1]
    return (vec[:, :p] * lam[:p]) @ vec[:, :p].T


def top_subspace_polar(kernels: list[np.ndarray],
                       p: int) -> list[tuple[float, float]]:
    """Polar trajectory of each checkpoint's own top-p spectral reconstruction."""
    if not kernels:
        raise ParameterError("need at least one kernel checkpoint")
    if p > kernels[0].shape[0]:
        raise ParameterError("cutoff larger than the kernel")
    projected = [_top_p_projection(k, p) for k in kernels]
    return [polar_coordinates(k, projected[0], projected[-1])
            for k in projected]


def pairwise_distance_matrix(kernels: list[np.ndarray]) -> np.ndarray:
    """Heatmap-ready matrix of kernel distances between all checkpoint pairs."""
    m = len(kernels)
    out = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            out[i, j] = out[j, i] = kernel_distance(kernels[i], kernels[j])
    return out


@dataclass
class TrajectorySnapshot:
    epoch: int
    frobenius_norm: float
    distance_to_init: float
    r: float
    theta: float
    concentration: dict[int, float]
    eigenvalues: np.ndarray | None = None
    flags: list[str] = field(default_factory=list)


def snapshots_from_kernels(epochs: list[int], kernels: list[np.ndarray],
                           cutoffs: tuple[int, ...] = (10, 20),
                           keep_spectra: bool = False
                           ) -> list[TrajectorySnapshot]:
    """Metrics per checkpoint kernel; the last checkpoint plays K_f."""
    if len(epochs) != len(kernels) or not kernels:
        raise ParameterError("epochs and kernels must align and be nonempty")
    k0, kf = kernels[0], kernels[-1]
    degenerate = len(kernels) == 1 or np.linalg.norm(kf - k0) == 0.0
    out = []
    for epoch, k in zip(epochs, kernels):
        spectrum = descending_spectrum(k)
        conc = {p: concentration(spectrum, min(p, spectrum.size))
                for p in cutoffs}
        flags = []
        if degenerate:
            r, theta = float("nan"), float(
                np.arccos(np.clip(1.0 - kernel_distance(k, k0), -1.0, 1.0)))
            flags.append("degenerate_radius")
        else:
            r, theta = polar_coordinates(k, k0, kf)
        out.append(TrajectorySnapshot(
            epoch, float(np.linalg.norm(k)), kernel_distance(k, k0), r, theta,
            conc, spectrum if keep_spectra else None, flags))
    return out


def record_dynamics(net, ds: Dataset, cfg: nets.TrainConfig,
                    tracked_batch: np.ndarray, checkpoints: list[int],
                    cutoffs: tuple[int, ...] = (10, 20),
                    track_attacked: bool = False,
                    val: Dataset | None = None):
    """Train `net`, measuring the empirical NTK of a fixed batch at checkpoints.

    The tracked batch is kept at its clean inputs; with `track_attacked` the
    batch is additionally pushed through the current attack at each checkpoint
    before the kernel is evaluated (requires an adversarial config). Returns
    (snapshots, kernels, train trace); a divergence aborts early, flags the
    trace and keeps the checkpoints reached.
    """
    tracked_batch = np.asarray(tracked_batch, dtype=np.int64)
    if tracked_batch.size == 0 or tracked_batch.max() >= ds.n:
        raise ParameterError("tracked batch must index into the dataset")
    checkpoints = sorted(set(int(c) for c in checkpoints))
    if track_attacked and cfg.attack is None:
        raise ParameterError("track_attacked needs an attack config")
    X = ds.inputs[tracked_batch]
    Y = nets.training_targets(net, ds)[tracked_batch]
    run_cfg = nets.TrainConfig(
        cfg.learning_rate, cfg.epochs, cfg.mode, cfg.attack, cfg.batch_size,
        cfg.seed, tuple(checkpoints), cfg.robust_eval_every)
    aborted = None
    try:
        trace = nets.train(net, ds, run_cfg, val)
    except DivergenceError as err:
        trace = err.trace
        aborted = err.epoch
        trace.flags.append(f"aborted_epoch_{aborted}")
    kernels = []
    epochs = []
    probe = net.copy()
    steps = 0
    if cfg.mode is nets.TrainMode.ADV_FGSM:
        steps = 1
    elif cfg.mode is nets.TrainMode.ADV_PGD:
        steps = cfg.attack.steps
    for epoch in checkpoints:
        if epoch not in trace.checkpoints:
            continue
        probe.set_weights(trace.checkpoints[epoch])
        batch = X
        if track_attacked and steps:
            batch = X + nets.training_attack_delta(probe, X, Y, cfg.attack,
                                                   steps)
        kernels.append(probe.empirical_ntk(batch))
        epochs.append(epoch)
    snaps = snapshots_from_kernels(epochs, kernels, cutoffs)
    if aborted is not None:
        for s in snaps:
            s.flags.append("aborted")
    return snaps, kernels, trace


def save_trajectory(snaps: list[TrajectorySnapshot], path,
                    cutoffs: tuple[int, ...] = (10, 20)) -> None:
    cols = ["epoch", "frob_norm", "dist_to_init", "r", "theta"] + \
        [f"conc_p{p}" for p in cutoffs]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for s in snaps:
            row = [str(s.epoch), repr(s.frobenius_norm),
                   repr(s.distance_to_init), repr(s.r), repr(s.theta)]
            row += [repr(s.concentration[p]) for p in cutoffs]
            f.write(",".join(row) + "\n")


def save_distance_matrix(matrix: np.ndarray, path) -> None:
    with open(path, "w") as f:
        for row in np.atleast_2d(matrix):
            f.write(",".join(repr(float(v)) for v in row) + "\n")
