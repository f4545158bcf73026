"""Batched Hermitian linear algebra for small matrices.

All routines accept stacks of matrices with shape ``(..., n, n)`` and loop
only over the matrix dimension, so the cost per matrix is easy to account
for. Floating-point work is tallied in real-flop equivalents while a
:func:`count_flops` block is active (complex multiply = 6, complex add = 2,
complex multiply-add = 8, real divide/sqrt = 1).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NotPositiveDefiniteError",
    "FlopCounter",
    "count_flops",
    "cholesky",
    "solve_lower",
    "whiten",
    "principal_eigenvector",
]

CMUL = 6
CADD = 2
CMAC = 8
CDIV = 11


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


@dataclass
class FlopCounter:
    flops: int = 0

    def add(self, per_matrix: int, batch: int = 1) -> None:
        self.flops += int(per_matrix) * int(batch)


_active: list[FlopCounter] = []


@contextlib.contextmanager
def count_flops():
    """Collect flop counts of the routines called inside the block.

    >>> with count_flops() as fc:
    ...     _ = cholesky(np.eye(2))
    >>> fc.flops > 0
    True
    """
    counter = FlopCounter()
    _active.append(counter)
    try:
        yield counter
    finally:
        _active.remove(counter)


def tally(per_matrix, batch=1):
    for counter in _active:
        counter.add(per_matrix, batch)


def _batch_size(a):
    return int(np.prod(a.shape[:-2])) if a.ndim > 2 else 1


def cholesky(a):
    """Lower Cholesky factor ``L`` with ``L @ L^H = a``.

    Raises :class:`NotPositiveDefiniteError` if a pivot is not positive.
    """
    a = np.asarray(a, dtype=complex)
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    batch = _batch_size(a)
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[..., j, j].real - np.sum(np.abs(L[..., j, :j]) ** 2, axis=-1)
        if np.any(~(pivot > 0)):
            raise NotPositiveDefiniteError(f"matrix is not positive definite (pivot {j})")
        d = np.sqrt(pivot)
        L[..., j, j] = d
        if j + 1 < n:
            rows = a[..., j + 1:, j] - np.einsum(
                "...ik,...k->...i", L[..., j + 1:, :j], L[..., j, :j].conj()
            )
            L[..., j + 1:, j] = rows / d[..., None]
        # pivot: j real mults + j adds + sqrt; each of n-j-1 rows: j cmacs + divide
        tally(4 * j + 1 + (n - j - 1) * (CMAC * j + CADD + 2), batch)
    return L


def solve_lower(L, b):
    """Solve ``L x = b`` by forward substitution; ``b`` is ``(..., n)`` or ``(..., n, k)``."""
    L = np.asarray(L)
    b = np.asarray(b, dtype=complex)
    vector = b.ndim == L.ndim - 1
    if vector:
        b = b[..., None]
    n, k = b.shape[-2:]
    x = np.zeros_like(b)
    for i in range(n):
        acc = b[..., i, :] - np.einsum("...j,...jk->...k", L[..., i, :i], x[..., :i, :])
        x[..., i, :] = acc / L[..., i, i][..., None]
        tally(k * (CMAC * i + CADD + 2), _batch_size(L))
    return x[..., 0] if vector else x


def whiten(phi_y, L):
    """``L^-1 phi_y L^-H`` for lower-triangular ``L``."""
    left = solve_lower(L, phi_y)
    # (L^-1 (L^-1 phi_y)^H)^H = L^-1 phi_y L^-H
    w = solve_lower(L, np.swapaxes(left, -1, -2).conj())
    w = np.swapaxes(w, -1, -2).conj()
    return 0.5 * (w + np.swapaxes(w, -1, -2).conj())


def _phase_normalize(v):
    # rotate so the first entry with non-negligible magnitude is real positive
    mag = np.abs(v)
    ref = np.argmax(mag > 1e-8 * mag.max(axis=-1, keepdims=True), axis=-1)
    lead = np.take_along_axis(v, ref[..., None], axis=-1)
    return v * (lead.conj() / np.where(np.abs(lead) > 0, np.abs(lead), 1.0))


def _squared_power(work, tol, max_squarings):
    """Normalised ``work ** (2 ** k)`` by repeated squaring of PSD matrices.

    Squaring stops once the matrix is numerically rank one, i.e.
    ``1 - ||A||_F^2 / tr(A)^2 < tol``; its columns then hold the principal
    direction and plain power steps only need to polish it.
    """
    n = work.shape[-1]
    trace = np.einsum("bii->b", work).real
    a = work / np.where(trace > 0, trace, 1.0)[:, None, None]
    active = np.flatnonzero(trace > 0)
    for _ in range(max_squarings):
        spread = 1.0 - np.sum(np.abs(a[active]) ** 2, axis=(-2, -1))
        # Frobenius norm and comparison
        tally(4 * n * n + 2, active.size)
        active = active[~(spread < tol)]
        if active.size == 0:
            break
        sq = a[active] @ a[active]
        sq = 0.5 * (sq + np.swapaxes(sq, -1, -2).conj())
        trace = np.einsum("bii->b", sq).real
        a[active] = sq / np.where(trace > 0, trace, 1.0)[:, None, None]
        # product, symmetrisation, trace and scaling
        tally(CMAC * n**3 + 2 * CADD * n * n + 2 * n + 2 * n * n + 1, active.size)
    return a


def principal_eigenvector(a, tol=1e-12, max_iter=500, psd=False, max_squarings=32):
    """Eigenvector of the largest eigenvalue by power iteration.

    Returns ``(v, eigenvalue, converged)``: ``v`` has unit 2-norm and its first
    non-negligible entry is real positive. With ``psd=False`` the matrix is
    shifted by its Gershgorin lower bound when that bound is negative, so the
    iteration targets the largest (not largest-magnitude) eigenvalue.

    The iteration is accelerated by up to ``max_squarings`` squarings of the
    (shifted) matrix, so a small eigenvalue gap still converges in a few
    steps; at most ``max_iter`` power steps with step tolerance ``tol``
    follow. Bins that hit ``max_iter`` keep their last iterate and are flagged.
    """
    a = np.asarray(a, dtype=complex)
    n = a.shape[-1]
    batch_shape = a.shape[:-2]
    flat = a.reshape(-1, n, n)
    count = flat.shape[0]

    shift = np.zeros(count)
    if not psd:
        diag = np.einsum("bii->bi", flat).real
        radius = np.sum(np.abs(flat), axis=-1) - np.abs(diag)
        shift = np.maximum(0.0, -np.min(diag - radius, axis=-1))
        tally(n * n * 3, count)
    work = flat + shift[:, None, None] * np.eye(n)
    powered = _squared_power(work, tol, max_squarings)

    # start from the column with the largest diagonal entry, plus a small generic
    # component so the start is never orthogonal to the principal direction
    start = np.argmax(np.einsum("bii->bi", powered).real, axis=-1)
    probe = np.eye(n)[start] + 1e-2 * np.exp(0.7j * np.arange(1, n + 1)) / np.sqrt(n)
    v = np.einsum("bij,bj->bi", powered, probe)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    v = np.where(norm > 0, v / np.where(norm > 0, norm, 1.0), np.eye(n)[0])
    v = _phase_normalize(v)
    converged = np.zeros(count, dtype=bool)
    active = np.arange(count)
    for _ in range(max_iter):
        if active.size == 0:
            break
        w = np.einsum("bij,bj->bi", work[active], v[active])
        norm = np.linalg.norm(w, axis=-1, keepdims=True)
        w = _phase_normalize(w / np.where(norm > 0, norm, 1.0))
        # matvec, norm (n cmags + sqrt), scale, phase rotation
        tally(CMAC * n * n + 4 * n + 1 + 2 * n + CMUL * n + 4, active.size)
        done = np.linalg.norm(w - v[active], axis=-1) < tol
        v[active] = w
        converged[active[done]] = True
        active = active[~done]

    eigenvalue = np.einsum("bi,bij,bj->b", v.conj(), flat, v).real
    tally(CMAC * (n * n + n), count)
    return (
        v.reshape(*batch_shape, n),
        eigenvalue.reshape(batch_shape),
        converged.reshape(batch_shape),
    )
