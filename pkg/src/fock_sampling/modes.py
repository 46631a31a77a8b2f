"""Plane-wave modes of a periodic box.

Energies are measured in units of ``2 pi^2 hbar^2 / (m L^2)`` where ``L`` is
the shortest box side, so mode ``j`` has energy ``sum_i (j_i / lambda_i)^2``
with ``lambda_i = L_i / L``.  Temperatures use the matching unit
``2 pi^2 hbar^2 / (m k_B L^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DEFAULT_CUTOFF_FACTOR",
    "DEFAULT_MAX_MODES",
    "ModeSet",
    "UnitSystem",
    "build_mode_set",
    "cutoff_for_temperature",
    "mode_energy",
]

DEFAULT_CUTOFF_FACTOR = 16.0
DEFAULT_MAX_MODES = 2_000_000

_HBAR = 1.054571817e-34
_K_B = 1.380649e-23


@dataclass(frozen=True)
class UnitSystem:
    """Conversion between SI quantities and the dimensionless units used here.

    Parameters
    ----------
    mass : float
        Atomic mass in kg.
    length : float
        Shortest box side ``L`` in metres.
    """

    mass: float
    length: float
    hbar: float = _HBAR
    k_b: float = _K_B

    @property
    def energy_unit(self) -> float:
        return 2.0 * math.pi**2 * self.hbar**2 / (self.mass * self.length**2)

    @property
    def temperature_unit(self) -> float:
        return self.energy_unit / self.k_b

    def temperature(self, kelvin: float) -> float:
        return kelvin / self.temperature_unit

    def kelvin(self, temperature: float) -> float:
        return temperature * self.temperature_unit


def mode_energy(j, aspect=None) -> float:
    """Dimensionless kinetic energy of plane wave ``j``.

    >>> mode_energy((1, 1), (1, 2))
    1.25
    """
    j = np.asarray(j, dtype=float)
    if aspect is None:
        aspect = np.ones_like(j)
    aspect = np.asarray(aspect, dtype=float)
    return float(np.sum((j / aspect) ** 2))


def cutoff_for_temperature(temperature: float, factor: float = DEFAULT_CUTOFF_FACTOR) -> float:
    """Energy cutoff ``factor * k_B T`` in dimensionless units."""
    return factor * temperature


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Truncated set of plane-wave modes sorted by energy, then by index.

    The zero mode is always first, so ``zero_index == 0``.
    """

    dim: int
    aspect: tuple
    e_cut: float
    indices: np.ndarray = field(repr=False)
    energies: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.indices.setflags(write=False)
        self.energies.setflags(write=False)

    @property
    def n_modes(self) -> int:
        return self.energies.shape[0]

    @property
    def zero_index(self) -> int:
        return 0

    def __len__(self) -> int:
        return self.n_modes

    def index_of(self, j) -> int:
        """Position of mode ``j`` in the set; raises ``KeyError`` if absent."""
        j = np.asarray(j, dtype=np.int64).reshape(self.dim)
        hit = np.flatnonzero(np.all(self.indices == j, axis=1))
        if hit.size == 0:
            raise KeyError(tuple(int(x) for x in j))
        return int(hit[0])

    def key(self) -> tuple:
        """Hashable identity used to check that two runs share a mode set."""
        return (self.dim, tuple(float(a) for a in self.aspect), float(self.e_cut), self.n_modes)

    def is_subset_of(self, other: "ModeSet") -> bool:
        if other.dim != self.dim or tuple(other.aspect) != tuple(self.aspect):
            return False
        mine = {tuple(row) for row in self.indices.tolist()}
        theirs = {tuple(row) for row in other.indices.tolist()}
        return mine <= theirs


def build_mode_set(dim: int, aspect=None, e_cut: float = 1.0, max_modes: int = DEFAULT_MAX_MODES) -> ModeSet:
    """Every plane wave with dimensionless energy at most ``e_cut``.

    Parameters
    ----------
    dim : int
        Box dimension, 1, 2 or 3.
    aspect : sequence of float, optional
        Side lengths relative to the shortest one (all >= 1).  Cubic by default.
    e_cut : float
        Energy cutoff.
    max_modes : int
        Upper bound on the number of modes; exceeded bounds raise ``MemoryError``.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")
    if aspect is None:
        aspect = (1.0,) * dim
    aspect = tuple(float(a) for a in aspect)
    if len(aspect) != dim:
        raise ValueError(f"aspect has {len(aspect)} entries for a {dim}D box")
    if min(aspect) < 1.0:
        raise ValueError("aspect ratios are relative to the shortest side and must be >= 1")
    if not e_cut >= 0:
        raise ValueError(f"e_cut must be non-negative, got {e_cut}")

    radius = [int(math.floor(a * math.sqrt(e_cut) + 1e-9)) for a in aspect]
    # Volume of the ellipsoid approximates the lattice-point count.
    expected = (math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)) * math.prod(aspect) * e_cut ** (dim / 2)
    if expected > max_modes:
        raise MemoryError(
            f"e_cut={e_cut} needs about {int(expected)} modes, above the bound max_modes={max_modes}"
        )

    axes = [np.arange(-r, r + 1, dtype=np.int64) for r in radius]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    scale = 1.0 / np.asarray(aspect) ** 2
    energies = (grid.astype(float) ** 2) @ scale
    keep = energies <= e_cut
    grid, energies = grid[keep], energies[keep]
    if energies.size > max_modes:
        raise MemoryError(f"{energies.size} modes exceed max_modes={max_modes}")

    # np.lexsort uses the last key as primary.
    order = np.lexsort(tuple(grid[:, i] for i in reversed(range(dim))) + (energies,))
    return ModeSet(
        dim=dim,
        aspect=aspect,
        e_cut=float(e_cut),
        indices=np.ascontiguousarray(grid[order]),
        energies=np.ascontiguousarray(energies[order]),
    )
