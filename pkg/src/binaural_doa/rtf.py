"""Head-mounted RTF vector estimation.

Two estimators, both fed with ``(M+1)``-channel covariance stacks whose last
channel is the external microphone and whose first channel is the reference:

* covariance whitening (CW): uses the head-mounted block of the noisy and
  undesired covariances and a principal eigenvector;
* spatial coherence (SC): reads the last column of the noisy covariance,
  which is valid when the undesired component at the external microphone is
  uncorrelated with the head-mounted ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import CDIV, CMUL, tally, cholesky, principal_eigenvector, whiten

__all__ = ["RtfEstimate", "estimate_rtf_cw", "estimate_rtf_sc", "DIAGONAL_LOADING"]

DIAGONAL_LOADING = 1e-8
# normalisation denominators below this (relative) magnitude mark an estimate invalid
MIN_REFERENCE = 1e-12


@dataclass
class RtfEstimate:
    """RTF vectors for a stack of bins: ``g_h`` has shape ``(..., M)``."""

    g_h: np.ndarray
    valid: np.ndarray
    method: str
    frame: int | None = None
    bins: np.ndarray | None = None

    def __post_init__(self):
        if self.method not in ("CW", "SC"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def num_mics(self) -> int:
        return self.g_h.shape[-1]


def _head_block(phi, num_head):
    phi = np.asarray(phi, dtype=complex)
    if num_head is None:
        num_head = phi.shape[-1] - 1
    if not 2 <= num_head <= phi.shape[-1]:
        raise ValueError(f"invalid head channel count {num_head} for {phi.shape[-1]} channels")
    return phi[..., :num_head, :num_head]


def estimate_rtf_cw(phi_y, phi_u, num_head=None, tol=1e-12, max_iter=500) -> RtfEstimate:
    """Covariance-whitening estimate from the head-mounted covariance blocks.

    ``num_head`` defaults to all channels but the last. The undesired block is
    diagonally loaded with ``1e-8 * trace / M`` before the Cholesky factor is
    taken; the same load is added to the noisy block so that the difference
    ``phi_y - phi_u`` (the desired component) is unchanged. Estimates are invalid when the whitened noisy covariance has no
    eigenvalue above one (no dominant source) or the reference entry vanishes.
    """
    y = _head_block(phi_y, num_head)
    u = _head_block(phi_u, num_head)
    if y.shape != u.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {u.shape}")
    m = y.shape[-1]
    batch = int(np.prod(y.shape[:-2]))
    load = DIAGONAL_LOADING * np.trace(u, axis1=-2, axis2=-1).real / m
    u = u + load[..., None, None] * np.eye(m)
    y = y + load[..., None, None] * np.eye(m)
    tally(4 * m, batch)

    L = cholesky(u)
    v, eigenvalue, _ = principal_eigenvector(whiten(y, L), tol=tol, max_iter=max_iter, psd=True)
    g = np.einsum("...ij,...j->...i", L, v)
    tally(8 * m * (m + 1) // 2, batch)

    ref = g[..., 0]
    norm = np.linalg.norm(g, axis=-1)
    valid = (np.abs(ref) >= MIN_REFERENCE * norm) & (eigenvalue > 1.0 + 1e-9)
    g = g / np.where(valid, ref, 1.0)[..., None]
    tally(CDIV + CMUL * m, batch)
    g[..., 0] = np.where(valid, 1.0, g[..., 0])
    return RtfEstimate(g_h=g, valid=valid, method="CW")


def estimate_rtf_sc(phi_y, num_head=None) -> RtfEstimate:
    """Spatial-coherence estimate: head part of the last column of ``phi_y``
    divided by its reference entry.

    Invalid where the external microphone is (numerically) decorrelated from
    the reference, i.e. ``|phi[0, -1]| < 1e-12 * sqrt(phi[0, 0] phi[-1, -1])``.
    """
    phi_y = np.asarray(phi_y, dtype=complex)
    n = phi_y.shape[-1]
    m = n - 1 if num_head is None else num_head
    if not 2 <= m < n:
        raise ValueError(f"invalid head channel count {m} for {n} channels")
    column = phi_y[..., :m, n - 1]
    ref = column[..., 0]
    scale = np.sqrt(np.abs(phi_y[..., 0, 0].real * phi_y[..., n - 1, n - 1].real))
    valid = np.abs(ref) >= MIN_REFERENCE * scale
    inv = 1.0 / np.where(valid, ref, 1.0)
    g = column * inv[..., None]
    # reference check (|ref|^2, product, sqrt, compare), one reciprocal, M-1 multiplies
    tally(8 + CDIV + CMUL * (m - 1), int(np.prod(phi_y.shape[:-2])))
    g[..., 0] = np.where(valid, 1.0, g[..., 0])
    return RtfEstimate(g_h=g, valid=valid, method="SC")
