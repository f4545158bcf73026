"""Hermitian-angle spatial spectrum and multi-speaker DOA picking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SPEED_OF_SOUND, angular_distance, as_positions, far_field_delays, wrap_degrees
from .rtf import RtfEstimate
from .stft import StftConfig

__all__ = [
    "PrototypeDatabase",
    "SpatialSpectrum",
    "DoaEstimate",
    "UndefinedAngleError",
    "build_prototype_db",
    "hermitian_angle",
    "angle_table",
    "spectrum",
    "pick_doas",
    "accuracy",
]


class UndefinedAngleError(ValueError):
    pass


@dataclass
class PrototypeDatabase:
    directions: np.ndarray  # (I,) azimuths in degrees, ascending
    vectors: np.ndarray  # (K, I, M), reference element 1
    geometry: np.ndarray  # (M, 3)
    sample_rate: float
    window_len: int

    @property
    def resolution(self) -> float:
        return 360.0 / len(self.directions)

    @property
    def num_bins(self) -> int:
        return self.vectors.shape[0]

    def save(self, path) -> None:
        """Write the database as CSV-compatible text.

        ``#`` header lines hold ``I, K, M, sample_rate, window_len`` and one
        ``mic`` line per geometry row; every data row is
        ``direction_deg, bin, re_1, im_1, ..., re_M, im_M``.
        """
        n_bins, n_dir, n_mic = self.vectors.shape
        with open(path, "w") as fh:
            fh.write(f"# I={n_dir}, K={n_bins}, M={n_mic}, sample_rate={self.sample_rate!r}, "
                     f"window_len={self.window_len}\n")
            for p in self.geometry:
                fh.write("# mic=" + ", ".join(repr(float(v)) for v in p) + "\n")
            cols = ["direction_deg", "bin"] + [f"{part}_{m + 1}" for m in range(n_mic)
                                               for part in ("re", "im")]
            fh.write(",".join(cols) + "\n")
            for i, theta in enumerate(self.directions):
                for k in range(n_bins):
                    g = self.vectors[k, i]
                    vals = np.column_stack([g.real, g.imag]).ravel()
                    fh.write(f"{float(theta)!r},{k}," + ",".join(repr(float(v)) for v in vals) + "\n")

    @classmethod
    def load(cls, path) -> "PrototypeDatabase":
        meta, mics = {}, []
        with open(path) as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("# mic="):
                mics.append([float(v) for v in line[len("# mic="):].split(",")])
            elif line.startswith("#"):
                for item in line[1:].split(","):
                    key, _, value = item.strip().partition("=")
                    meta[key] = value
            elif line and not line.startswith("direction_deg"):
                body.append(line)
        n_dir, n_bins, n_mic = int(meta["I"]), int(meta["K"]), int(meta["M"])
        data = np.loadtxt(body, delimiter=",", ndmin=2)
        if data.shape != (n_dir * n_bins, 2 + 2 * n_mic):
            raise ValueError(f"{path}: body shape {data.shape} does not match header")
        directions = data[::n_bins, 0]
        pairs = data[:, 2:].reshape(n_dir, n_bins, n_mic, 2)
        vectors = (pairs[..., 0] + 1j * pairs[..., 1]).transpose(1, 0, 2)
        return cls(directions, vectors, np.array(mics), float(meta["sample_rate"]),
                   int(meta["window_len"]))


@dataclass
class SpatialSpectrum:
    scores: np.ndarray  # (I,)
    subset: np.ndarray  # bin indices requested
    contributing_bins: int
    skipped_bins: int = 0

    @property
    def empty(self) -> bool:
        return self.contributing_bins == 0


@dataclass
class DoaEstimate:
    azimuths: np.ndarray
    frame: int | None = None
    degenerate: bool = False
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def build_prototype_db(geometry, grid_resolution: float, config: StftConfig,
                       c: float = SPEED_OF_SOUND) -> PrototypeDatabase:
    """Free-field far-field RTFs of the head microphones on a uniform azimuth grid.

    Grid points are ``-180, -180 + res, ...`` and the first microphone is the
    reference.
    """
    pos = as_positions(geometry)
    if len(pos) < 2:
        raise ValueError("need at least two head microphones")
    dists = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
    if np.any(dists[np.triu_indices(len(pos), 1)] < 1e-9):
        raise ValueError("degenerate geometry: coincident microphones")
    n_dir = 360.0 / grid_resolution
    if grid_resolution <= 0 or abs(n_dir - round(n_dir)) > 1e-9:
        raise ValueError(f"grid resolution {grid_resolution} does not divide 360")
    directions = -180.0 + grid_resolution * np.arange(int(round(n_dir)))
    tau = far_field_delays(pos, directions, c)  # (I, M)
    rel = tau - tau[:, :1]
    omega = config.angular_frequencies()
    vectors = np.exp(-1j * omega[:, None, None] * rel[None])
    return PrototypeDatabase(directions, vectors, pos, config.sample_rate, config.window_len)


def _cross_norm(a, b):
    """sqrt(||a||^2 ||b||^2 - |b^H a|^2) via the Lagrange identity.

    Summing |a_i b_j - a_j b_i|^2 over i < j avoids the cancellation of the
    direct difference, so small angles keep full absolute precision.
    """
    total = 0.0
    for p, q in zip(*np.triu_indices(a.shape[-1], 1)):
        total = total + np.abs(a[..., p] * b[..., q] - a[..., q] * b[..., p]) ** 2
    return np.sqrt(total)


def hermitian_angle(g_est, g_proto):
    """arccos(|g_proto^H g_est| / (||g_proto|| ||g_est||)), in [0, pi/2]; broadcasts.

    Evaluated as atan2(cross norm, |inner product|), which equals the arccos
    form but stays accurate for nearly parallel vectors.
    """
    g_est = np.asarray(g_est)
    g_proto = np.asarray(g_proto)
    ne = np.linalg.norm(g_est, axis=-1)
    npr = np.linalg.norm(g_proto, axis=-1)
    if np.any(ne == 0) or np.any(npr == 0):
        raise UndefinedAngleError("Hermitian angle of a zero vector")
    inner = np.abs(np.sum(g_proto.conj() * g_est, axis=-1))
    angle = np.arctan2(_cross_norm(g_est, g_proto), inner)
    return angle if angle.ndim else float(angle)


def angle_table(g_h, db: PrototypeDatabase, bins=None):
    """Hermitian angle of every estimate against every prototype.

    g_h: (..., K', M) estimates for ``bins`` (default: all database bins).
    Returns (..., K', I). Zero estimates give NaN.
    """
    g_h = np.asarray(g_h)
    protos = db.vectors if bins is None else db.vectors[np.asarray(bins)]
    inner = np.abs(np.einsum("kim,...km->...ki", protos.conj(), g_h))
    ne = np.linalg.norm(g_h, axis=-1)[..., None]
    npr = np.linalg.norm(protos, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = inner / (ne * npr)
    angle = np.arccos(np.clip(ratio, 0.0, 1.0))
    # arccos loses precision near zero; redo nearly parallel pairs exactly
    close = ratio > 1.0 - 1e-4
    if close.any():
        idx = np.nonzero(close)
        a = g_h[idx[:-1]]
        b = protos[idx[-2], idx[-1]]
        angle[close] = np.arctan2(_cross_norm(a, b), inner[close])
    return angle


def spectrum(rtf: RtfEstimate, db: PrototypeDatabase, subset, angles=None) -> SpatialSpectrum:
    """Negated sum of Hermitian angles over the selected bins with valid estimates.

    ``rtf`` holds one estimate per database bin. ``angles`` may pass a
    precomputed :func:`angle_table` for the same estimates.
    """
    subset = np.asarray(subset, dtype=int)
    if angles is None:
        angles = angle_table(rtf.g_h, db)
    usable = subset[np.asarray(rtf.valid)[subset]] if subset.size else subset
    scores = -angles[usable].sum(axis=0) if usable.size else np.zeros(len(db.directions))
    return SpatialSpectrum(scores=scores, subset=subset, contributing_bins=int(usable.size),
                           skipped_bins=int(subset.size - usable.size))


def _local_maxima(scores):
    """Circular local maxima; a plateau counts once, at its leftmost index."""
    n = len(scores)
    if n == 1:
        return np.array([0])
    # rotate so index 0 starts a new run
    change = np.flatnonzero(scores != np.roll(scores, 1))
    if change.size == 0:
        return np.array([], dtype=int)
    start = change[0]
    rolled = np.roll(scores, -start)
    run_starts = np.flatnonzero(np.r_[True, rolled[1:] != rolled[:-1]])
    run_vals = rolled[run_starts]
    prev_vals = np.roll(run_vals, 1)
    next_vals = np.roll(run_vals, -1)
    peaks = run_starts[(run_vals > prev_vals) & (run_vals > next_vals)]
    return np.sort((peaks + start) % n)


def pick_doas(spec: SpatialSpectrum | np.ndarray, J: int, directions=None,
              db: PrototypeDatabase | None = None) -> DoaEstimate:
    """The J highest local maxima of the circular spectrum.

    Missing peaks are filled with the best remaining directions. Ties go to
    the lower azimuth (``directions`` ascending). A flat spectrum returns the
    J lowest azimuths and is flagged degenerate.
    """
    scores = np.asarray(spec.scores if isinstance(spec, SpatialSpectrum) else spec, dtype=float)
    if directions is None:
        directions = db.directions if db is not None else (
            -180.0 + 360.0 / len(scores) * np.arange(len(scores)))
    directions = np.asarray(directions)
    if not 1 <= J <= len(scores):
        raise ValueError(f"J must lie in 1..{len(scores)}, got {J}")
    if np.all(scores == scores[0]):
        idx = np.argsort(directions, kind="stable")[:J]
        return DoaEstimate(directions[idx], degenerate=True, indices=idx)

    def order(idx):
        # descending score, then ascending azimuth
        return idx[np.lexsort((directions[idx], -scores[idx]))]

    peaks = order(_local_maxima(scores))
    chosen = list(peaks[:J])
    if len(chosen) < J:
        rest = np.setdiff1d(np.arange(len(scores)), chosen)
        chosen += list(order(rest)[: J - len(chosen)])
    idx = np.array(chosen, dtype=int)
    return DoaEstimate(directions[idx], indices=idx)


def accuracy(estimates, truth, tolerance: float = 5.0) -> float:
    """Fraction of true DOAs matched one-to-one within ``tolerance`` degrees.

    Pairs are accepted greedily in order of increasing circular distance;
    equal distances are ordered by azimuth value so the result does not
    depend on list order.
    """
    est = np.atleast_1d(np.asarray(getattr(estimates, "azimuths", estimates), dtype=float))
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    if truth.size == 0:
        raise ValueError("no ground-truth directions")
    dist = angular_distance(est[:, None], truth[None, :])
    e_key = np.broadcast_to(wrap_degrees(est)[:, None], dist.shape).ravel()
    t_key = np.broadcast_to(wrap_degrees(truth)[None, :], dist.shape).ravel()
    used_e, used_t, correct = set(), set(), 0
    for flat in np.lexsort((t_key, e_key, dist.ravel())):
        e, t = np.unravel_index(flat, dist.shape)
        if dist[e, t] > tolerance + 1e-9:
            break
        if e in used_e or t in used_t:
            continue
        used_e.add(e)
        used_t.add(t)
        correct += 1
    return correct / truth.size
