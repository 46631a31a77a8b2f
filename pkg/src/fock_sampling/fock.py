"""Fock states over a mode set and their diagonal energies."""

from __future__ import annotations

import io
import os
from numbers import Integral

import numpy as np

from .modes import ModeSet

__all__ = [
    "FockState",
    "apply_move",
    "condensate_occupation",
    "interaction_energy",
    "kinetic_energy",
    "move_delta_energy",
    "read_snapshot",
    "total_energy",
    "write_snapshot",
]


class FockState:
    """Occupation numbers aligned with a :class:`ModeSet`.

    ``e_kin`` and ``sum_sq`` are kept up to date incrementally by
    :func:`apply_move`; :meth:`recompute` rebuilds them from scratch.
    """

    def __init__(self, occupations, modes: ModeSet):
        occ = np.array(occupations, dtype=np.int64)
        if occ.shape != (modes.n_modes,):
            raise ValueError(f"expected {modes.n_modes} occupations, got shape {occ.shape}")
        if np.any(occ < 0):
            raise ValueError("occupation numbers must be non-negative")
        self.modes = modes
        self.occupations = occ
        self.n_total = int(occ.sum())
        self.e_kin, self.sum_sq = self.recompute()

    @classmethod
    def ground(cls, n_atoms: int, modes: ModeSet) -> "FockState":
        """All atoms in the zero-momentum mode."""
        occ = np.zeros(modes.n_modes, dtype=np.int64)
        occ[modes.zero_index] = n_atoms
        return cls(occ, modes)

    @classmethod
    def from_mapping(cls, mapping: dict, modes: ModeSet) -> "FockState":
        """Build from ``{mode index tuple: count}``; missing modes are empty."""
        occ = np.zeros(modes.n_modes, dtype=np.int64)
        for j, n in mapping.items():
            occ[modes.index_of(j)] += n
        return cls(occ, modes)

    def recompute(self) -> tuple[float, int]:
        occ = self.occupations
        return float(occ @ self.modes.energies), int(occ @ occ)

    def copy(self) -> "FockState":
        return FockState(self.occupations, self.modes)

    def energy(self, g: float) -> float:
        return total_energy(self, g)

    def __eq__(self, other):
        if not isinstance(other, FockState):
            return NotImplemented
        return self.modes is other.modes and np.array_equal(self.occupations, other.occupations)

    def __repr__(self):
        occupied = np.flatnonzero(self.occupations)
        parts = [f"{tuple(self.modes.indices[i].tolist())}: {self.occupations[i]}" for i in occupied[:6]]
        more = ", ..." if occupied.size > 6 else ""
        return f"FockState(N={self.n_total}, {{{', '.join(parts)}{more}}})"


def _position(s: FockState, j) -> int:
    if isinstance(j, Integral):
        return int(j)
    return s.modes.index_of(j)


def kinetic_energy(s: FockState, m: ModeSet | None = None) -> float:
    """``sum_j n_j e_j`` computed from scratch."""
    m = s.modes if m is None else m
    return float(s.occupations @ m.energies)


def interaction_energy(s: FockState, g: float) -> float:
    """Contact interaction ``(g/2) (2 N (N - 1) - sum_j n_j^2)`` of a Fock state."""
    n = s.n_total
    return 0.5 * g * (2 * n * (n - 1) - s.sum_sq)


def total_energy(s: FockState, g: float) -> float:
    return s.e_kin + interaction_energy(s, g)


def move_delta_energy(s: FockState, src, dst, g: float) -> float:
    """Energy change when one atom hops from mode ``src`` to mode ``dst``.

    Uses pre-move occupations: ``e_dst - e_src - g (n_dst - n_src + 1)``.
    Modes may be given as positions in the mode set or as index tuples.
    """
    a, b = _position(s, src), _position(s, dst)
    n_src = s.occupations[a]
    if n_src < 1:
        raise ValueError(f"mode {src} is empty; no atom to move")
    if a == b:
        return 0.0
    e = s.modes.energies
    return float(e[b] - e[a] - g * (s.occupations[b] - n_src + 1))


def apply_move(s: FockState, src, dst) -> FockState:
    """Move one atom from ``src`` to ``dst`` in place and return ``s``."""
    a, b = _position(s, src), _position(s, dst)
    occ = s.occupations
    if occ[a] < 1:
        raise ValueError(f"mode {src} is empty; no atom to move")
    if a == b:
        return s
    e = s.modes.energies
    s.sum_sq += 2 * int(occ[b] - occ[a] + 1)
    s.e_kin += e[b] - e[a]
    occ[a] -= 1
    occ[b] += 1
    return s


def condensate_occupation(s: FockState, m: ModeSet | None = None) -> int:
    m = s.modes if m is None else m
    return int(s.occupations[m.zero_index])


def write_snapshot(s: FockState, target) -> None:
    """Write ``j_x [j_y [j_z]] n`` lines for every occupied mode."""
    lines = []
    for i in np.flatnonzero(s.occupations):
        j = " ".join(str(x) for x in s.modes.indices[i].tolist())
        lines.append(f"{j} {int(s.occupations[i])}\n")
    text = "".join(lines)
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w") as fh:
            fh.write(text)
    else:
        target.write(text)


def read_snapshot(source, modes: ModeSet) -> FockState:
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            text = fh.read()
    elif isinstance(source, io.TextIOBase):
        text = source.read()
    else:
        text = str(source)
    occ = np.zeros(modes.n_modes, dtype=np.int64)
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [int(x) for x in line.split()]
        if len(fields) != modes.dim + 1:
            raise ValueError(f"snapshot line {line!r} does not match a {modes.dim}D mode set")
        occ[modes.index_of(fields[:-1])] += fields[-1]
    return FockState(occ, modes)
