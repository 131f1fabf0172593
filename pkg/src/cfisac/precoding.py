"""Centralised RZF communication precoders and the null-space sensing precoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class DegenerateNullspaceError(ValueError):
    """The sensing direction lies inside the span of the channel estimates."""


@dataclass(frozen=True, eq=False)
class PrecoderSet:
    """Unit-norm precoders; row 0 is the sensing precoder, rows 1.. the UEs."""

    w: np.ndarray  # (N_ue + 1, N_tx * M)
    M: int

    @property
    def per_ap_blocks(self) -> np.ndarray:
        """``W_k`` for every AP, shape ``(N_tx, M, N_ue + 1)``."""
        return split_per_ap(self.w, self.M)


def rzf_precoders(estimates: np.ndarray, delta: float) -> np.ndarray:
    """Unit-norm regularised zero-forcing precoders, one row per UE.

    Uses ``(H H^H + delta I)^{-1} H = H (H^H H + delta I)^{-1}`` with ``H`` the
    matrix of stacked estimates as columns, so only an ``N_ue x N_ue`` system is
    solved.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    H = np.asarray(estimates).T  # (n, N_ue)
    gram = H.conj().T @ H + delta * np.eye(H.shape[1])
    Wbar = H @ scipy.linalg.solve(gram, np.eye(H.shape[1]), assume_a="pos")
    norms = np.linalg.norm(Wbar, axis=0)
    return (Wbar / norms).T


def orthonormal_basis(estimates: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Columns spanning the estimates, rank decided at ``rtol`` times the top singular value."""
    H = np.asarray(estimates).T
    U, s, _ = np.linalg.svd(H, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    return U[:, s > rtol * s[0]]


def zf_sensing_precoder(estimates: np.ndarray, h0: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Project ``h0`` onto the orthogonal complement of the estimates and normalise."""
    U = orthonormal_basis(estimates, rtol)
    v = h0 - U @ (U.conj().T @ h0)
    # a second pass removes the rounding left by the first projection
    v = v - U @ (U.conj().T @ v)
    nv = np.linalg.norm(v)
    if nv < 1e-10 * np.linalg.norm(h0) or nv == 0:
        raise DegenerateNullspaceError("sensing vector lies in the span of the channel estimates")
    return v / nv


def split_per_ap(w: np.ndarray, M: int) -> np.ndarray:
    """Reshape stacked precoders ``(N_s, N_tx*M)`` into ``W_k`` blocks ``(N_tx, M, N_s)``."""
    w = np.atleast_2d(np.asarray(w))
    if w.shape[1] % M:
        raise ValueError(f"precoder length {w.shape[1]} is not a multiple of M={M}")
    return np.transpose(w.reshape(w.shape[0], -1, M), (1, 2, 0))


def join_per_ap(blocks: np.ndarray) -> np.ndarray:
    """Inverse of :func:`split_per_ap`."""
    N_tx, M, N_s = blocks.shape
    return np.transpose(blocks, (2, 0, 1)).reshape(N_s, N_tx * M)


def precoder_set(estimates: np.ndarray, h0: np.ndarray, delta: float, M: int) -> PrecoderSet:
    w = np.vstack([zf_sensing_precoder(estimates, h0), rzf_precoders(estimates, delta)])
    return PrecoderSet(w, M)
