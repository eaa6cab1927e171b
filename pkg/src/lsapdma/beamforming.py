"""Zero-forcing beamforming over the selected users.

One user is selected per beam (the weakest covered user by the supplied
metric).  The composite precoder is the right pseudo-inverse of the stacked
selected-user channels, so the product of the composite channel and the
composite precoder is the identity: inter-selected-user interference is
nulled exactly.  Each beam's precoding vector is the row-sum collapse of its
block of the composite precoder, optionally renormalized to unit norm so
that allocated powers are actual per-beam radiated powers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelMatrix
from .pattern import PatternMatrix


class SingularChannelError(RuntimeError):
    """Composite selected-user channel too ill-conditioned; redraw the channel."""


@dataclass(frozen=True)
class SelectedUserSet:
    """The (beam, user) pairs whose CSI defines the ZF precoder (0-based)."""

    pairs: tuple[tuple[int, int], ...]

    @property
    def users(self) -> tuple[int, ...]:
        """Selected user per beam, in beam order."""
        return tuple(u for _, u in self.pairs)


@dataclass(frozen=True)
class BeamformerSet:
    """Composite ZF precoder and the per-beam precoding vectors.

    ``composite`` has shape (N_T, N*N_R); its n-th (N_T, N_R) block collapsed
    against the all-ones vector gives beam n's vector.  ``beam_matrix`` holds
    those vectors as columns (unit-norm when ``normalized``).
    """

    composite: np.ndarray  # (N_T, N*N_R)
    beam_matrix: np.ndarray  # (N_T, N)
    selected: SelectedUserSet
    normalized: bool

    @property
    def n_beams(self) -> int:
        return self.beam_matrix.shape[1]

    @property
    def n_tx(self) -> int:
        return self.beam_matrix.shape[0]

    def beam_vector(self, n: int) -> np.ndarray:
        return self.beam_matrix[:, n]


def select_users(
    channels: list[ChannelMatrix],
    pattern: PatternMatrix,
    gains_hint: np.ndarray,
) -> SelectedUserSet:
    """Pick one distinct anchor user per beam, weakest covered first.

    The hint is any per-user weakness proxy available before the receive
    filters exist (the large-scale gain in the simulation pipeline).  Ties
    break toward the lowest user index.  Selected users must be distinct
    across beams (stacking one user's channel twice makes the composite
    exactly rank-deficient), so beams are processed most-constrained first
    and each takes its weakest not-yet-taken covered user, with an
    augmenting-path fallback when a beam's covered set is exhausted.
    """
    hints = np.asarray(gains_hint, dtype=float)
    if hints.shape != (pattern.n_users,):
        raise ValueError("gains_hint must have one entry per user")
    if len(channels) != pattern.n_users:
        raise ValueError("need one channel per user")
    b = pattern.entries
    n_beams = pattern.n_beams
    overlaps = b.sum(axis=1)
    if (overlaps == 0).any():
        raise ValueError(f"beam {int(np.flatnonzero(overlaps == 0)[0])} covers no user")
    beam_order = sorted(range(n_beams), key=lambda n: (overlaps[n], n))
    # covered users by ascending (hint, index) per beam
    prefer = {
        n: sorted(np.flatnonzero(b[n]).tolist(), key=lambda u: (hints[u], u))
        for n in range(n_beams)
    }
    owner: dict[int, int] = {}  # user -> beam

    def reassign(beam: int, visited: set) -> bool:
        for u in prefer[beam]:
            if u in visited:
                continue
            visited.add(u)
            if u not in owner or reassign(owner[u], visited):
                owner[u] = beam
                return True
        return False

    for n in beam_order:
        free = [u for u in prefer[n] if u not in owner]
        if free:
            owner[free[0]] = n
        elif not reassign(n, set()):
            raise ValueError(
                "pattern admits no distinct selected user per beam"
            )
    chosen = {beam: user for user, beam in owner.items()}
    return SelectedUserSet(pairs=tuple((n, chosen[n]) for n in range(n_beams)))


def compute_zfbf(
    channels: list[ChannelMatrix],
    omega: SelectedUserSet,
    *,
    normalize: bool = True,
    cond_limit: float = 1e8,
) -> BeamformerSet:
    """Composite ZF precoder from the selected users' stacked channels.

    Computes F_C = G_C^H (G_C G_C^H)^(-1) for the stacked composite channel
    G_C, then collapses each (N_T, N_R) block against the all-ones vector to
    get the per-beam vectors.  With ``normalize`` each beam vector is scaled
    to unit norm so beam powers are radiated powers.

    Raises SingularChannelError when cond(G_C G_C^H) exceeds ``cond_limit``
    (i.i.d. Gaussian draws are almost surely fine; the guard catches
    pathological draws so the caller can redraw).
    """
    n_beams = len(omega.pairs)
    blocks = [channels[u].entries for _, u in omega.pairs]
    n_rx = blocks[0].shape[0]
    n_tx = blocks[0].shape[1]
    if any(b.shape != (n_rx, n_tx) for b in blocks):
        raise ValueError("selected-user channels must share one shape")
    if n_beams * n_rx > n_tx:
        raise ValueError(
            f"need n_beams*n_rx <= n_tx for zero forcing, got {n_beams}*{n_rx} > {n_tx}"
        )
    g_c = np.vstack(blocks)  # (N*N_R, N_T)
    # Equilibrate per-user block scales before inverting: path-loss spreads of
    # many orders of magnitude would otherwise dominate the Gram's condition
    # number without any directional degeneracy.  The pseudo-inverse of the
    # raw stack is recovered exactly by rescaling columns afterwards.
    scales = np.array([np.linalg.norm(b) / np.sqrt(b.size) for b in blocks])
    if (scales == 0).any():
        raise SingularChannelError("zero channel block for a selected user")
    row_scale = np.repeat(scales, n_rx)
    g_eq = g_c / row_scale[:, None]
    gram = g_eq @ g_eq.conj().T
    if np.linalg.cond(gram) > cond_limit:
        raise SingularChannelError("composite channel is near rank-deficient")
    # F_C = G^H gram^{-1}; gram is Hermitian PD for full-row-rank G.
    composite = np.linalg.solve(gram, g_eq).conj().T / row_scale[None, :]  # (N_T, N*N_R)
    ones = np.ones(n_rx)
    beam_matrix = np.column_stack(
        [composite[:, n * n_rx : (n + 1) * n_rx] @ ones for n in range(n_beams)]
    )
    if normalize:
        beam_matrix = beam_matrix / np.linalg.norm(beam_matrix, axis=0, keepdims=True)
    return BeamformerSet(
        composite=composite,
        beam_matrix=beam_matrix,
        selected=omega,
        normalized=normalize,
    )


def transmit(beams: BeamformerSet, t: np.ndarray) -> np.ndarray:
    """Antenna-domain transmit vector x = F t for a superposed beam signal t."""
    t = np.asarray(t)
    if t.shape != (beams.n_beams,):
        raise ValueError(f"t must have length {beams.n_beams}, got shape {t.shape}")
    return beams.beam_matrix @ t
