"""Metropolis chain over N-boson Fock states.

A step picks the source mode as the mode of a uniformly random atom and the
destination with probability proportional to ``n_dst + 1``; the latter is a
single draw over ``N + M`` slots, where a slot below ``N`` names an atom (the
stimulated term) and the rest name modes (the spontaneous term).  Together
this proposes ``src -> dst`` with probability ``n_src (n_dst + 1) / (N (N + M))``.
The reverse move has the same weight, so acceptance reduces to the Boltzmann
ratio ``min(1, exp(-beta (E_candidate - E_current)))``.

Random numbers are drawn in fixed-size blocks from a PCG64 generator:
``CHUNK`` source atoms, then ``CHUNK`` destination slots, then ``CHUNK``
uniforms.  The block layout is part of the reproducibility contract.
"""

from __future__ import annotations

import io
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numba
import numpy as np

from .fock import FockState, apply_move, move_delta_energy, read_snapshot, write_snapshot
from .modes import ModeSet

__all__ = [
    "CHUNK",
    "Chain",
    "ChainConfig",
    "SampleSeries",
    "acceptance_probability",
    "default_burn_in",
    "metropolis_step",
    "plan_chain",
    "propose_move",
    "run_chain",
]

CHUNK = 1 << 16


@dataclass(frozen=True)
class ChainConfig:
    """Parameters of one Metropolis run.

    ``beta`` is ``1 / T`` in the dimensionless temperature unit and
    ``coupling`` the dimensionless contact coupling.  A record is taken at
    step ``s`` (counting from 1) when ``s > burn_in`` and
    ``(s - burn_in) % thin == 0``.
    """

    n_atoms: int
    beta: float
    coupling: float = 0.0
    steps: int = 1_000_000
    burn_in: int = 0
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be at least 1")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.coupling < 0:
            raise ValueError(f"coupling must be non-negative, got {self.coupling}")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.burn_in >= self.steps:
            raise ValueError(f"burn_in={self.burn_in} leaves nothing to record out of steps={self.steps}")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")

    @property
    def temperature(self) -> float:
        return 1.0 / self.beta

    @property
    def n_records(self) -> int:
        return (self.steps - self.burn_in) // self.thin

    def physics_key(self) -> tuple:
        return (self.n_atoms, float(self.beta), float(self.coupling))

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SampleSeries:
    """Recorded ``(step, N_0, E)`` triples of one or more chains.

    ``replica`` labels each record with the chain it came from; merged series
    keep the records of each replica contiguous.
    """

    steps: np.ndarray
    n0: np.ndarray
    energy: np.ndarray
    config: ChainConfig
    modes_key: tuple = ()
    replica: np.ndarray | None = None
    occupations: np.ndarray | None = field(default=None, repr=False)
    acceptance_rate: float = float("nan")

    def __post_init__(self):
        if self.replica is None:
            self.replica = np.zeros(self.n0.shape[0], dtype=np.int64)

    def __len__(self) -> int:
        return self.n0.shape[0]

    @property
    def n_replicas(self) -> int:
        return int(np.unique(self.replica).size) if len(self) else 0

    def subset(self, mask) -> "SampleSeries":
        occ = None if self.occupations is None else self.occupations[mask]
        return replace(
            self,
            steps=self.steps[mask],
            n0=self.n0[mask],
            energy=self.energy[mask],
            replica=self.replica[mask],
            occupations=occ,
        )

    def replica_segments(self):
        """Yield ``(label, slice)`` for each contiguous replica block."""
        if not len(self):
            return
        edges = np.flatnonzero(np.diff(self.replica)) + 1
        starts = np.concatenate(([0], edges))
        stops = np.concatenate((edges, [len(self)]))
        for a, b in zip(starts, stops):
            yield int(self.replica[a]), slice(int(a), int(b))


def default_burn_in(n_atoms: int, dim: int) -> int:
    return max(10 * n_atoms, 100 * n_atoms * dim)


def acceptance_probability(delta_e: float, beta: float) -> float:
    """``min(1, exp(-beta * delta_e))`` for ``delta_e = E_candidate - E_current``."""
    if delta_e <= 0:
        return 1.0
    return math.exp(-beta * delta_e)


def _atom_mode(occupations: np.ndarray, k: int) -> int:
    # Mode holding atom k when atoms are labelled in mode order.
    return int(np.searchsorted(np.cumsum(occupations), k, side="right"))


def propose_move(s: FockState, rng: np.random.Generator) -> tuple[int, int]:
    """Draw ``(src, dst)`` mode positions with weight ``n_src (n_dst + 1)``."""
    n, m = s.n_total, s.modes.n_modes
    if n < 1:
        raise ValueError("cannot propose a move in an empty state")
    src = _atom_mode(s.occupations, int(rng.integers(0, n)))
    slot = int(rng.integers(0, n + m))
    dst = _atom_mode(s.occupations, slot) if slot < n else slot - n
    return src, dst


def metropolis_step(s: FockState, cfg: ChainConfig, rng: np.random.Generator) -> tuple[FockState, bool]:
    """One proposal plus accept/reject; ``s`` is updated in place on acceptance."""
    src, dst = propose_move(s, rng)
    r = rng.random()
    if src == dst:
        return s, True
    delta = move_delta_energy(s, src, dst, cfg.coupling)
    if r < acceptance_probability(delta, cfg.beta):
        apply_move(s, src, dst)
        return s, True
    return s, False


@numba.njit(cache=True)
def _advance(occ, atom_mode, energies, zero, g, beta, n_atoms,
             src_atoms, dst_slots, uniforms, step0, burn_in, thin,
             e_kin, sum_sq, out_step, out_n0, out_energy, out_occ, k):
    accepted = 0
    e_int0 = 0.5 * g * 2.0 * n_atoms * (n_atoms - 1)
    record_occ = out_occ.shape[0] > 0
    for i in range(src_atoms.shape[0]):
        a = src_atoms[i]
        src = atom_mode[a]
        slot = dst_slots[i]
        if slot < n_atoms:
            dst = atom_mode[slot]
        else:
            dst = slot - n_atoms
        if src == dst:
            accepted += 1
        else:
            dn = occ[dst] - occ[src] + 1
            de = energies[dst] - energies[src] - g * dn
            if de <= 0.0 or uniforms[i] < math.exp(-beta * de):
                sum_sq += 2 * dn
                e_kin += energies[dst] - energies[src]
                occ[src] -= 1
                occ[dst] += 1
                atom_mode[a] = dst
                accepted += 1
        step = step0 + i + 1
        if step > burn_in and (step - burn_in) % thin == 0:
            out_step[k] = step
            out_n0[k] = occ[zero]
            out_energy[k] = e_kin + e_int0 - 0.5 * g * sum_sq
            if record_occ:
                out_occ[k, :] = occ
            k += 1
    return e_kin, sum_sq, accepted, k


class Chain:
    """Resumable Metropolis chain.

    Parameters
    ----------
    cfg : ChainConfig
    modes : ModeSet
    init : FockState, optional
        Starting state; all atoms in the zero mode by default.
    record_occupations : bool
        Also store the full occupation vector at every record (small systems).
    """

    def __init__(self, cfg: ChainConfig, modes: ModeSet, init: FockState | None = None,
                 record_occupations: bool = False):
        if modes.n_modes < 2:
            raise ValueError("the mode set needs at least two modes")
        state = FockState.ground(cfg.n_atoms, modes) if init is None else init.copy()
        if state.n_total != cfg.n_atoms:
            raise ValueError(f"initial state has {state.n_total} atoms, config says {cfg.n_atoms}")
        if state.modes is not modes and state.modes.key() != modes.key():
            raise ValueError("initial state belongs to a different mode set")
        self.cfg = cfg
        self.modes = modes
        self.state = FockState(state.occupations, modes)
        self.atom_mode = np.repeat(np.arange(modes.n_modes, dtype=np.int64), self.state.occupations)
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self.step = 0
        self.accepted = 0
        n_rec = cfg.n_records
        self._steps = np.empty(n_rec, dtype=np.int64)
        self._n0 = np.empty(n_rec, dtype=np.int64)
        self._energy = np.empty(n_rec, dtype=np.float64)
        shape = (n_rec, modes.n_modes) if record_occupations else (0, modes.n_modes)
        self._occ = np.empty(shape, dtype=np.int64)
        self._k = 0

    @property
    def done(self) -> bool:
        return self.step >= self.cfg.steps

    def advance(self, n_steps: int | None = None) -> "Chain":
        """Run up to ``n_steps`` more steps (rounded up to whole blocks)."""
        cfg, st = self.cfg, self.state
        target = cfg.steps if n_steps is None else min(cfg.steps, self.step + n_steps)
        n, m = cfg.n_atoms, self.modes.n_modes
        energies = np.asarray(self.modes.energies)
        while self.step < target:
            c = min(CHUNK, cfg.steps - self.step)
            src = self.rng.integers(0, n, size=c, dtype=np.int32)
            slots = self.rng.integers(0, n + m, size=c, dtype=np.int32)
            u = self.rng.random(c)
            e_kin, sum_sq, acc, k = _advance(
                st.occupations, self.atom_mode, energies, self.modes.zero_index,
                float(cfg.coupling), float(cfg.beta), n, src, slots, u,
                self.step, cfg.burn_in, cfg.thin, st.e_kin, st.sum_sq,
                self._steps, self._n0, self._energy, self._occ, self._k,
            )
            st.e_kin, st.sum_sq = float(e_kin), int(sum_sq)
            self.accepted += int(acc)
            self._k = int(k)
            self.step += c
        return self

    def run(self) -> SampleSeries:
        return self.advance().series()

    def series(self) -> SampleSeries:
        k = self._k
        occ = self._occ[:k].copy() if self._occ.shape[0] else None
        rate = self.accepted / self.step if self.step else float("nan")
        return SampleSeries(
            steps=self._steps[:k].copy(),
            n0=self._n0[:k].copy(),
            energy=self._energy[:k].copy(),
            config=self.cfg,
            modes_key=self.modes.key(),
            occupations=occ,
            acceptance_rate=rate,
        )

    def save_checkpoint(self, path) -> None:
        """Write config hash, step counter, RNG state, state snapshot and records."""
        buf = io.StringIO()
        write_snapshot(self.state, buf)
        payload = {
            "config": asdict(self.cfg),
            "config_hash": self.cfg.config_hash(),
            "step": self.step,
            "accepted": self.accepted,
            "rng_state": self.rng.bit_generator.state,
            "snapshot": buf.getvalue(),
            "atom_mode": self.atom_mode.tolist(),
            "records": {
                "steps": self._steps[: self._k].tolist(),
                "n0": self._n0[: self._k].tolist(),
                "energy": [float.hex(float(x)) for x in self._energy[: self._k]],
            },
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load_checkpoint(cls, path, modes: ModeSet) -> "Chain":
        with open(path) as fh:
            payload = json.load(fh)
        cfg = ChainConfig(**payload["config"])
        if cfg.config_hash() != payload["config_hash"]:
            raise ValueError("checkpoint config hash does not match its config")
        state = read_snapshot(io.StringIO(payload["snapshot"]), modes)
        chain = cls(cfg, modes, init=state)
        chain.atom_mode = np.asarray(payload["atom_mode"], dtype=np.int64)
        if not np.array_equal(np.bincount(chain.atom_mode, minlength=modes.n_modes), state.occupations):
            raise ValueError("checkpoint atom list disagrees with its snapshot")
        chain.rng.bit_generator.state = payload["rng_state"]
        chain.step = int(payload["step"])
        chain.accepted = int(payload["accepted"])
        rec = payload["records"]
        k = len(rec["n0"])
        chain._steps[:k] = rec["steps"]
        chain._n0[:k] = rec["n0"]
        chain._energy[:k] = [float.fromhex(x) for x in rec["energy"]]
        chain._k = k
        return chain


def run_chain(cfg: ChainConfig, m: ModeSet, init: FockState | None = None,
              record_occupations: bool = False) -> SampleSeries:
    """Run a full chain and return its records."""
    return Chain(cfg, m, init=init, record_occupations=record_occupations).run()


def plan_chain(n_atoms: int, temperature: float, coupling: float, modes: ModeSet, seed: int = 0,
               target_independent: float = 2e4, pilot_records: int = 4000,
               burn_in: int | None = None, thin: int | None = None,
               max_steps: int = 10**11) -> ChainConfig:
    """Size a chain so roughly ``target_independent`` uncorrelated N_0 samples are recorded.

    A pilot chain measures the integrated autocorrelation time of N_0 in units
    of recorded samples.
    """
    from .ensembles import integrated_autocorr_time

    burn_in = default_burn_in(n_atoms, modes.dim) if burn_in is None else burn_in
    thin = n_atoms if thin is None else thin
    pilot = ChainConfig(n_atoms, 1.0 / temperature, coupling,
                        steps=burn_in + thin * pilot_records, burn_in=burn_in, thin=thin, seed=seed)
    series = run_chain(pilot, modes)
    tau = integrated_autocorr_time(series.n0)
    n_rec = int(math.ceil(target_independent * max(tau, 1.0)))
    steps = min(max_steps, burn_in + thin * n_rec)
    return replace(pilot, steps=steps)
