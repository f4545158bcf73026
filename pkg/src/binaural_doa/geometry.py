"""Microphone layouts and far-field propagation delays.

Azimuth convention: 0 deg is the look direction (+y), positive angles turn
clockwise towards +x, so the unit vector of azimuth ``theta`` is
``(sin theta, cos theta, 0)``. Default binaural layout: the interaural axis
is the x axis, the left device sits at x = -r/2 and the right at x = +r/2,
each with a front and a rear microphone.
"""

from __future__ import annotations

import numpy as np

SPEED_OF_SOUND = 343.0

__all__ = [
    "SPEED_OF_SOUND",
    "unit_vector",
    "far_field_delays",
    "binaural_geometry",
    "wrap_degrees",
    "angular_distance",
    "load_geometry",
    "save_geometry",
]


def unit_vector(azimuth_deg):
    """Unit DOA vectors for azimuths in degrees, shape (..., 3)."""
    theta = np.deg2rad(np.asarray(azimuth_deg, dtype=float))
    return np.stack([np.sin(theta), np.cos(theta), np.zeros_like(theta)], axis=-1)


def far_field_delays(positions, azimuth_deg, c=SPEED_OF_SOUND):
    """Arrival delay of a plane wave at each microphone, relative to the origin.

    positions: (M, 2 or 3) in meters. Returns (..., M) in seconds.
    """
    pos = as_positions(positions)
    return -(unit_vector(azimuth_deg) @ pos.T) / c


def as_positions(positions) -> np.ndarray:
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    if pos.shape[-1] == 2:
        pos = np.hstack([pos, np.zeros((pos.shape[0], 1))])
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError(f"positions must have shape (M, 2) or (M, 3), got {pos.shape}")
    return pos


def binaural_geometry(r=0.18, mic_spacing=0.012, external=(0.0, 1.0, 0.0)):
    """Four head microphones plus one external microphone.

    Channel order: left-front, left-rear, right-front, right-rear, external.
    ``external=None`` omits the external microphone.
    """
    half, d = r / 2, mic_spacing / 2
    head = np.array([
        [-half, d, 0.0],
        [-half, -d, 0.0],
        [half, d, 0.0],
        [half, -d, 0.0],
    ])
    if external is None:
        return head
    return np.vstack([head, as_positions(external)])


def wrap_degrees(angle):
    """Map angles to [-180, 180)."""
    return (np.asarray(angle, dtype=float) + 180.0) % 360.0 - 180.0


def angular_distance(a, b):
    """Absolute circular distance in degrees, in [0, 180]."""
    return np.abs(wrap_degrees(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def load_geometry(path) -> np.ndarray:
    """Read microphone positions: one ``x, y[, z]`` row per microphone.

    Commas or whitespace separate values; ``#`` starts a comment.
    """
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].replace(",", " ").strip()
            if line:
                rows.append([float(v) for v in line.split()])
    if not rows:
        raise ValueError(f"{path}: no microphone positions")
    return as_positions(np.array(rows))


def save_geometry(path, positions) -> None:
    pos = as_positions(positions)
    with open(path, "w") as fh:
        fh.write("# x, y, z in meters, one microphone per row\n")
        for p in pos:
            fh.write(", ".join(repr(float(v)) for v in p) + "\n")
