"""Exact references: the ideal-gas canonical recurrence and brute-force enumeration.

The canonical partition functions of N ideal bosons follow from the cycle
recurrence ``Z_k = (1/k) sum_{l=1..k} Z_1(l beta) Z_{k-l}``.  With a zero-energy
ground mode the condensate occupation has
``P(N_0 = n) = (Z_{N-n} - Z_{N-n-1}) / Z_N``; the difference equals the
partition function of ``N - n`` atoms confined to the excited modes, which
obeys the same recurrence with ``Z_1 - 1`` and is computed directly to avoid
cancellation.  Everything is carried as logarithms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gamma, gammaincc, logsumexp, zeta

from .modes import DEFAULT_CUTOFF_FACTOR, ModeSet, build_mode_set

__all__ = [
    "CutoffWarning",
    "EnumerationGuardError",
    "ExactCurve",
    "ExactStats",
    "IdealGasTable",
    "Shell",
    "canonical_partition_functions",
    "critical_temperature_estimate",
    "enumerate_exact",
    "enumerate_states",
    "fock_state_count",
    "fock_states",
    "ground_occupation_distribution",
    "ideal_fluctuation_curve",
    "ideal_peak",
    "occupation_moments",
    "single_particle_z",
]

DEFAULT_MAX_STATES = 50_000_000


class CutoffWarning(UserWarning):
    """The Boltzmann weight beyond the mode cutoff is larger than requested."""


class EnumerationGuardError(ValueError):
    def __init__(self, n_states, limit):
        super().__init__(f"{n_states} Fock states exceed the enumeration guard of {limit}")
        self.n_states = n_states
        self.limit = limit


def _levels(m: ModeSet) -> tuple[np.ndarray, np.ndarray]:
    """Distinct nonzero energies and their degeneracies."""
    e = np.round(np.asarray(m.energies[1:]), 12)
    return np.unique(e, return_counts=True)


def _tail_fraction(beta: float, m: ModeSet) -> float:
    """Continuum estimate of sum_{e > e_cut} exp(-beta e) relative to the kept sum."""
    d = m.dim
    vol = math.pi ** (d / 2) / gamma(d / 2 + 1) * math.prod(m.aspect)
    a = d / 2
    tail = vol * a * beta ** (-a) * gamma(a) * gammaincc(a, beta * m.e_cut)
    return tail / single_particle_z(beta, m, tail_tol=None)


def single_particle_z(beta: float, m: ModeSet, tail_tol: float | None = 1e-12) -> float:
    """``sum_j exp(-beta e_j)`` over the mode set.

    Issues a :class:`CutoffWarning` when the estimated weight beyond the cutoff
    exceeds ``tail_tol`` (relative); ``tail_tol=None`` skips the check.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    z = float(np.exp(-beta * np.asarray(m.energies)).sum())
    if tail_tol is not None:
        frac = _tail_fraction(beta, m)
        if frac > tail_tol:
            warnings.warn(
                f"mode cutoff e_cut={m.e_cut} leaves a relative tail of {frac:.2e} at beta={beta}",
                CutoffWarning,
                stacklevel=2,
            )
    return z


def _log_z1_multiples(beta: float, m: ModeSet, n: int) -> np.ndarray:
    """``log(Z_1(l beta) - 1)`` for l = 1..n, i.e. over excited modes only."""
    energies, deg = _levels(m)
    if energies.size == 0:
        return np.full(n, -np.inf)
    l = np.arange(1, n + 1, dtype=float)[:, None]
    return logsumexp(np.log(deg)[None, :] - l * beta * energies[None, :], axis=1)


def _cycle_recurrence(log_z1: np.ndarray) -> np.ndarray:
    """``log Z_k`` for k = 0..n from ``log Z_1(l beta)``, l = 1..n."""
    n = log_z1.size
    log_z = np.empty(n + 1)
    log_z[0] = 0.0
    for k in range(1, n + 1):
        # sum_{l=1..k} Z_1(l beta) Z_{k-l}
        log_z[k] = logsumexp(log_z1[:k] + log_z[k - 1::-1][:k]) - math.log(k)
    return log_z


@dataclass(frozen=True)
class IdealGasTable:
    """Log partition functions of ``0..N`` ideal bosons at one temperature.

    ``log_z1[l - 1] = log Z_1(l beta)``; ``log_z[k] = log Z_k``;
    ``log_z_excited[k]`` is ``log`` of the partition function with all ``k``
    atoms outside the zero mode.
    """

    beta: float
    log_z1: np.ndarray
    log_z: np.ndarray
    log_z_excited: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.log_z.size - 1

    @property
    def z_single(self) -> np.ndarray:
        return np.exp(self.log_z1)

    @property
    def z_canonical(self) -> np.ndarray:
        return np.exp(self.log_z)


def canonical_partition_functions(n_atoms: int, beta: float, m: ModeSet,
                                  tail_tol: float | None = None) -> IdealGasTable:
    if n_atoms < 1:
        raise ValueError("n_atoms must be at least 1")
    if tail_tol is not None:
        single_particle_z(beta, m, tail_tol=tail_tol)
    log_exc = _log_z1_multiples(beta, m, n_atoms)
    log_z1 = np.logaddexp(0.0, log_exc)
    return IdealGasTable(
        beta=float(beta),
        log_z1=log_z1,
        log_z=_cycle_recurrence(log_z1),
        log_z_excited=_cycle_recurrence(log_exc),
    )


def ground_occupation_distribution(table: IdealGasTable) -> np.ndarray:
    """``P(N_0 = n)`` for ``n = 0..N``."""
    n = table.n_atoms
    log_p = table.log_z_excited[n::-1] - table.log_z[n]
    p = np.exp(log_p)
    return p / p.sum()


def occupation_moments(p) -> tuple[float, float]:
    """Mean and standard deviation of a distribution over ``0..len(p)-1``."""
    p = np.asarray(p, dtype=float)
    n = np.arange(p.size)
    mean = float(p @ n)
    var = float(p @ (n - mean) ** 2)
    return mean, math.sqrt(max(var, 0.0))


@dataclass(frozen=True)
class ExactCurve:
    n_atoms: int
    temperatures: np.ndarray
    mean_n0: np.ndarray
    std_n0: np.ndarray


def _mode_set_for(t, dim, aspect, cutoff_factor, m):
    if m is not None:
        return m
    return build_mode_set(dim, aspect, cutoff_factor * t)


def ideal_fluctuation_curve(n_atoms: int, t_grid, m: ModeSet | None = None, *, dim: int = 3,
                            aspect=None, cutoff_factor: float = DEFAULT_CUTOFF_FACTOR,
                            tail_tol: float | None = None) -> ExactCurve:
    """Exact mean and standard deviation of N_0 across temperatures.

    With ``m=None`` each temperature gets its own mode set with cutoff
    ``cutoff_factor * T``, as the sampler does.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise ValueError("temperatures must be positive")
    means, stds = [], []
    for t in t_grid:
        ms = _mode_set_for(t, dim, aspect, cutoff_factor, m)
        table = canonical_partition_functions(n_atoms, 1.0 / t, ms, tail_tol=tail_tol)
        mean, std = occupation_moments(ground_occupation_distribution(table))
        means.append(mean)
        stds.append(std)
    return ExactCurve(n_atoms, t_grid, np.asarray(means), np.asarray(stds))


def critical_temperature_estimate(n_atoms: int, dim: int = 3, aspect=None) -> float:
    """Rough temperature scale of condensation, used to place sweep grids.

    In 3D this is the thermodynamic-limit critical temperature of the box; in
    lower dimensions the temperature where the thermal wavelength matches the
    interparticle spacing.
    """
    vol = math.prod(aspect) if aspect is not None else 1.0
    density = n_atoms / vol
    if dim == 3:
        return (density / zeta(1.5)) ** (2.0 / 3.0) / math.pi
    return density ** (2.0 / dim) / math.pi


def ideal_peak(n_atoms: int, dim: int = 3, aspect=None, cutoff_factor: float = DEFAULT_CUTOFF_FACTOR,
               m: ModeSet | None = None, xtol: float = 1e-7) -> tuple[float, float]:
    """Temperature and height of the maximum of the exact ideal-gas ``std(N_0)``."""

    def neg_std(t):
        return -ideal_fluctuation_curve(n_atoms, [t], m, dim=dim, aspect=aspect,
                                        cutoff_factor=cutoff_factor).std_n0[0]

    scale = critical_temperature_estimate(n_atoms, dim, aspect)
    grid = scale * np.geomspace(0.05, 5.0, 41)
    values = [neg_std(t) for t in grid]
    i = int(np.argmin(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(neg_std, bounds=(lo, hi), method="bounded",
                          options={"xatol": xtol * scale})
    return float(res.x), float(-res.fun)


def fock_state_count(n_atoms: int, n_modes: int) -> int:
    return math.comb(n_atoms + n_modes - 1, n_atoms)


@lru_cache(maxsize=256)
def _compositions(n: int, m: int) -> np.ndarray:
    if m == 1:
        return np.array([[n]], dtype=np.int64)
    blocks = []
    for k in range(n, -1, -1):
        rest = _compositions(n - k, m - 1)
        blocks.append(np.column_stack((np.full(rest.shape[0], k, dtype=np.int64), rest)))
    out = np.concatenate(blocks)
    out.setflags(write=False)
    return out


def fock_states(n_atoms: int, n_modes: int, max_states: int = DEFAULT_MAX_STATES) -> np.ndarray:
    """All occupation vectors of ``n_atoms`` bosons on ``n_modes`` modes, one per row."""
    count = fock_state_count(n_atoms, n_modes)
    if count > max_states:
        raise EnumerationGuardError(count, max_states)
    return _compositions(n_atoms, n_modes).copy()


def _energies(occ: np.ndarray, m: ModeSet, coupling: float) -> np.ndarray:
    n = occ[0].sum() if occ.shape[0] else 0
    kin = occ @ np.asarray(m.energies)
    sum_sq = np.einsum("ij,ij->i", occ, occ)
    return kin + 0.5 * coupling * (2 * n * (n - 1) - sum_sq)


def enumerate_states(n_atoms: int, m: ModeSet, coupling: float, beta: float,
                     e_cap: float | None = None, max_states: int = DEFAULT_MAX_STATES):
    """Occupations, energies and normalized Boltzmann probabilities of every Fock state."""
    occ = fock_states(n_atoms, m.n_modes, max_states)
    energy = _energies(occ, m, coupling)
    if e_cap is not None:
        keep = energy <= e_cap
        occ, energy = occ[keep], energy[keep]
    w = np.exp(-beta * (energy - energy.min()))
    return occ, energy, w / w.sum()


@dataclass(frozen=True)
class Shell:
    """All Fock states sharing one energy; ``probability`` is the canonical weight of the shell."""

    energy: float
    n_states: int
    probability: float
    mean_n0: float
    std_n0: float


@dataclass(frozen=True)
class ExactStats:
    n_atoms: int
    beta: float
    coupling: float
    n_states: int
    mean_n0: float
    std_n0: float
    log_z: float
    shells: tuple

    @property
    def modal_shell(self) -> Shell:
        return max(self.shells, key=lambda s: s.probability)

    def shell_at(self, energy: float, tol: float = 1e-9) -> Shell:
        for s in self.shells:
            if abs(s.energy - energy) <= tol * max(1.0, abs(energy)):
                return s
        raise KeyError(energy)


def _group_shells(energy, n0, tol):
    """Per-shell (energy, count, sum n0, sum n0^2) for states sorted into energy shells."""
    order = np.argsort(energy, kind="stable")
    e, x = energy[order], n0[order].astype(float)
    breaks = np.flatnonzero(np.diff(e) > tol * np.maximum(1.0, np.abs(e[1:]))) + 1
    starts = np.concatenate(([0], breaks))
    counts = np.diff(np.concatenate((starts, [e.size])))
    return (e[starts], counts.astype(float), np.add.reduceat(x, starts), np.add.reduceat(x * x, starts))


def enumerate_exact(n_atoms: int, m: ModeSet, coupling: float, beta: float,
                    max_states: int = DEFAULT_MAX_STATES, tol: float = 1e-12) -> ExactStats:
    """Exact canonical and per-energy-shell statistics of N_0 by brute force.

    States are processed in blocks of fixed zero-mode occupation and the
    per-block shells merged in a fixed order, so results do not depend on how
    the work is split.
    """
    count = fock_state_count(n_atoms, m.n_modes)
    if count > max_states:
        raise EnumerationGuardError(count, max_states)
    if m.n_modes == 1:
        rest_of = lambda r: np.zeros((1, 0), dtype=np.int64)  # noqa: E731
    else:
        rest_of = lambda r: _compositions(r, m.n_modes - 1)  # noqa: E731
    parts = []
    z = m.zero_index
    for n0 in range(n_atoms, -1, -1):
        rest = rest_of(n_atoms - n0)
        occ = np.insert(rest, z, n0, axis=1)
        parts.append(_group_shells(_energies(occ, m, coupling), occ[:, z], tol))
    e = np.concatenate([p[0] for p in parts])
    c = np.concatenate([p[1] for p in parts])
    s1 = np.concatenate([p[2] for p in parts])
    s2 = np.concatenate([p[3] for p in parts])
    order = np.argsort(e, kind="stable")
    e, c, s1, s2 = e[order], c[order], s1[order], s2[order]
    breaks = np.flatnonzero(np.diff(e) > tol * np.maximum(1.0, np.abs(e[1:]))) + 1
    starts = np.concatenate(([0], breaks))
    e_sh = e[starts]
    c_sh = np.add.reduceat(c, starts)
    s1_sh = np.add.reduceat(s1, starts)
    s2_sh = np.add.reduceat(s2, starts)

    e0 = e_sh[0]
    log_w = np.log(c_sh) - beta * (e_sh - e0)
    log_z = float(logsumexp(log_w))
    prob = np.exp(log_w - log_z)
    mean_sh = s1_sh / c_sh
    var_sh = np.maximum(s2_sh / c_sh - mean_sh**2, 0.0)
    mean = float(prob @ mean_sh)
    second = float(prob @ (s2_sh / c_sh))
    std = math.sqrt(max(second - mean**2, 0.0))
    shells = tuple(
        Shell(float(e_sh[i]), int(c_sh[i]), float(prob[i]), float(mean_sh[i]), math.sqrt(var_sh[i]))
        for i in range(e_sh.size)
    )
    return ExactStats(n_atoms, float(beta), float(coupling), count, mean, std,
                      log_z - beta * e0, shells)
