"""Time-discretized particle-system drivers.

Three algorithms over a shared Euler-Maruyama core:

* sequential runs (`spoc_run`): particle n is simulated against the frozen
  measures of particles 1..n-1 and then folded in with rate alpha_n -- adding
  particles never touches existing ones, so milestone snapshots from one long
  run are bit-identical to shorter runs;
* batch runs (`batch_spoc_run`): whole batches simulated against the previous
  frozen measure and folded in with the batch empirical average;
* classical mean-field runs (`classical_poc_run`): all N particles advance
  simultaneously against the current empirical measure.

Noise comes from one counter-based stream per (seed, replication), consumed in
global particle order (see rng.py); replications are simulated in lockstep as a
vector axis and may be split across worker processes without changing any bit
of the output.
"""

from __future__ import annotations

import json
import struct
import time
from collections import namedtuple
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BlowUpError, ConfigError, DimensionMismatchError
from .measures import SummaryStats, WeightedEmpirical
from .models import (
    INTERACTION_FULL,
    INTERACTION_MOMENT,
    NOISE_ADDITIVE_PLUS_FREE,
    ModelSpec,
)
from .rng import BlockStream, block_width, replication_stream
from .schedules import UpdateSchedule

BLOWUP_LIMIT = 1e8
GRID_TOL = 1e-9
# seed offset separating reference/oracle streams from test-run streams
REFERENCE_SEED_XOR = 0x5EED0F5E7
ALGO_SPOC = "spoc"
ALGO_BATCH = "batch_spoc"
ALGO_CLASSICAL = "classical_poc"

# measure view handed to moment-interaction evaluators (fields broadcast over x)
MomentView = namedtuple("MomentView", ["mean", "raw_second_moment"])

# measure view handed to full-measure evaluators
AtomView = namedtuple("AtomView", ["atoms", "weights"])

_PATHS_MAGIC = b"SPOCPATH"


@dataclass(frozen=True)
class InitialCondition:
    """Initial law mu_0: a deterministic point or an isotropic Gaussian."""

    kind: str
    value: tuple[float, ...] | None = None
    mean: tuple[float, ...] | None = None
    std: float = 1.0

    def __post_init__(self):
        if self.kind not in ("point", "gaussian"):
            raise ConfigError(f"unknown initial kind {self.kind!r}", key="initial.kind")
        if self.kind == "point" and self.value is None:
            raise ConfigError("point initial requires a value", key="initial.value")
        if self.kind == "gaussian" and self.std < 0.0:
            raise ConfigError("gaussian initial requires std >= 0", key="initial.std")

    @classmethod
    def point(cls, x) -> "InitialCondition":
        return cls(kind="point", value=tuple(np.atleast_1d(np.asarray(x, dtype=float))))

    @classmethod
    def gaussian(cls, mean=0.0, std=1.0) -> "InitialCondition":
        return cls(
            kind="gaussian",
            mean=tuple(np.atleast_1d(np.asarray(mean, dtype=float))),
            std=float(std),
        )

    @property
    def needs_noise(self) -> bool:
        return self.kind == "gaussian"

    def mean_vector(self, dim: int) -> np.ndarray:
        base = self.value if self.kind == "point" else self.mean
        m = np.asarray(base if base is not None else 0.0, dtype=float)
        return np.broadcast_to(np.atleast_1d(m), (dim,)).astype(float)

    def second_moment(self, dim: int) -> float:
        m = self.mean_vector(dim)
        extra = 0.0 if self.kind == "point" else dim * self.std**2
        return float(m @ m) + extra

    def from_block(self, z: np.ndarray, dim: int) -> np.ndarray:
        """Map a (..., draws) block of standard normals to initial positions;
        point initials consume no draws (zero-width block)."""
        if self.kind == "point":
            return np.broadcast_to(self.mean_vector(dim), z.shape[:-1] + (dim,)).copy()
        return self.mean_vector(dim) + self.std * z

    def to_dict(self) -> dict:
        if self.kind == "point":
            return {"kind": "point", "value": list(self.value)}
        return {"kind": "gaussian", "mean": list(self.mean or (0.0,)), "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialCondition":
        if d.get("kind") == "point":
            return cls.point(d["value"])
        if d.get("kind") == "gaussian":
            return cls.gaussian(d.get("mean", 0.0), d.get("std", 1.0))
        raise ConfigError(f"unknown initial kind {d.get('kind')!r}", key="initial.kind")


@dataclass(frozen=True)
class SimConfig:
    """Full description of a particle run.

    checkpoints are grid times to snapshot (default: terminal time only);
    milestones are particle counts at which the running measure is recorded.
    """

    model: ModelSpec
    schedule: UpdateSchedule
    initial: InitialCondition
    T: float
    M: int
    N: int
    seed: int
    batch_sizes: tuple[int, ...] | None = None
    replications: int = 1
    checkpoints: tuple[float, ...] | None = None
    milestones: tuple[int, ...] | None = None
    measure_backend: str | None = None
    store_paths: bool = False
    self_inclusive: bool = False

    def __post_init__(self):
        if self.T <= 0.0 or self.M < 1:
            raise ConfigError("need T > 0 and M >= 1", key="T")
        if self.N < 1:
            raise ConfigError("need N >= 1", key="N")
        if self.replications < 1:
            raise ConfigError("need replications >= 1", key="replications")
        if self.batch_sizes is not None:
            sizes = tuple(int(b) for b in self.batch_sizes)
            if any(b < 1 for b in sizes):
                raise ConfigError("batch sizes must be positive", key="batch_sizes")
            if sum(sizes) != self.N:
                raise ConfigError("batch_sizes must sum to N", key="batch_sizes")
            object.__setattr__(self, "batch_sizes", sizes)
        backend = self.measure_backend
        if backend is None:
            backend = (
                "summary_only"
                if self.model.interaction_form == INTERACTION_MOMENT and not self.store_paths
                else "full_atoms"
            )
            object.__setattr__(self, "measure_backend", backend)
        if self.measure_backend not in ("full_atoms", "summary_only"):
            raise ConfigError(
                f"unknown measure_backend {self.measure_backend!r}", key="measure_backend"
            )
        if (
            self.model.interaction_form == INTERACTION_FULL
            and self.measure_backend == "summary_only"
        ):
            raise ConfigError(
                "full-measure interaction needs the full_atoms backend", key="measure_backend"
            )
        if self.self_inclusive and self.model.interaction_form == INTERACTION_FULL:
            raise ConfigError(
                "self_inclusive is implemented for moment-interaction models only",
                key="self_inclusive",
            )
        # resolve checkpoint times against the grid
        cps = self.checkpoints if self.checkpoints is not None else (self.T,)
        idx = []
        for c in cps:
            j = int(round(c / self.dt))
            if not (0 <= j <= self.M) or abs(j * self.dt - c) > GRID_TOL * max(1.0, self.T):
                raise ConfigError(f"checkpoint {c} is not a grid time", key="checkpoints")
            idx.append(j)
        if len(set(idx)) != len(idx):
            raise ConfigError("duplicate checkpoints", key="checkpoints")
        object.__setattr__(self, "checkpoints", tuple(float(j * self.dt) for j in idx))
        object.__setattr__(self, "_checkpoint_idx", tuple(idx))
        ms = self.milestones if self.milestones is not None else (self.N,)
        ms = tuple(int(n) for n in ms)
        if any(n < 1 or n > self.N for n in ms) or sorted(set(ms)) != list(ms):
            raise ConfigError(
                "milestones must be strictly increasing particle counts <= N", key="milestones"
            )
        object.__setattr__(self, "milestones", ms)
        # schedule must cover N particles
        self.schedule.alphas(self.N)

    @property
    def dt(self) -> float:
        return self.T / self.M

    def times(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt

    @property
    def checkpoint_indices(self) -> tuple[int, ...]:
        return self._checkpoint_idx

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "schedule": self.schedule.to_dict(),
            "initial": self.initial.to_dict(),
            "T": self.T,
            "M": self.M,
            "N": self.N,
            "seed": self.seed,
            "batch_sizes": list(self.batch_sizes) if self.batch_sizes else None,
            "replications": self.replications,
            "checkpoints": list(self.checkpoints),
            "milestones": list(self.milestones),
            "measure_backend": self.measure_backend,
            "store_paths": self.store_paths,
            "self_inclusive": self.self_inclusive,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(
            model=ModelSpec.from_dict(d["model"]),
            schedule=UpdateSchedule.from_dict(d["schedule"]),
            initial=InitialCondition.from_dict(d["initial"]),
            T=float(d["T"]),
            M=int(d["M"]),
            N=int(d["N"]),
            seed=int(d["seed"]),
            batch_sizes=tuple(d["batch_sizes"]) if d.get("batch_sizes") else None,
            replications=int(d.get("replications", 1)),
            checkpoints=tuple(d["checkpoints"]) if d.get("checkpoints") else None,
            milestones=tuple(d["milestones"]) if d.get("milestones") else None,
            measure_backend=d.get("measure_backend"),
            store_paths=bool(d.get("store_paths", False)),
            self_inclusive=bool(d.get("self_inclusive", False)),
        )


@dataclass
class RunResult:
    """Per-replication milestone trajectories and snapshots of one run.

    mean_traj has shape (R, len(milestones), len(checkpoints), dim) and
    second_traj (R, len(milestones), len(checkpoints)); snapshots maps
    (replication, milestone_n, grid_index) to a measure snapshot; paths, when
    stored, is (R, N, M+1, dim).
    """

    config: SimConfig
    algorithm: str
    versions: dict
    milestones: tuple[int, ...]
    checkpoint_times: tuple[float, ...]
    mean_traj: np.ndarray
    second_traj: np.ndarray
    snapshots: dict
    paths: np.ndarray | None
    wall_time_s: float
    n_steps: int
    notes: tuple[str, ...] = ()

    # in-memory extras attached by the drivers; not persisted
    _gap_kn = None
    _gap_last = None
    _mean_grid = None
    _second_grid = None

    def milestone_index(self, n: int) -> int:
        return self.milestones.index(n)

    def checkpoint_index(self, t: float) -> int:
        for i, c in enumerate(self.checkpoint_times):
            if abs(c - t) <= GRID_TOL * max(1.0, self.config.T):
                return i
        raise KeyError(f"no checkpoint at t={t}")

    def save(self, out_dir) -> None:
        save_run(self, out_dir)


def _versions() -> dict:
    import scipy

    return {"spoc": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _recursive_update(state: np.ndarray, x, alpha: float) -> None:
    """state <- state + alpha*(x - state), in place; alpha = 1 assigns exactly.

    Every driver funnels measure updates through here so that degenerate cases
    (batch size 1, milestone reruns) are bit-identical.
    """
    if alpha == 1.0:
        state[...] = x
    else:
        state += alpha * (x - state)


def _apply_diffusion(sig, dw: np.ndarray) -> np.ndarray:
    """Apply a diffusion output to noise increments dw of shape (..., dim).

    A trailing (dim, dim) square (constant matrix or one per sample) is applied
    as a matrix; anything else is a scalar field sigma * identity and must
    broadcast against the leading axes of dw.
    """
    sig = np.asarray(sig)
    dim = dw.shape[-1]
    if sig.ndim == 0:
        return sig * dw
    if sig.shape[-2:] == (dim, dim) and sig.ndim in (2, dw.ndim + 1):
        return np.einsum("...ij,...j->...i", sig, dw)
    if sig.ndim == dw.ndim - 1:
        return sig[..., None] * dw
    if sig.ndim == dw.ndim:
        return sig * dw
    raise DimensionMismatchError(f"diffusion output shape {sig.shape} does not fit increments")


def _check_finite_path(x_path: np.ndarray, particle: int, rep_ids) -> None:
    """x_path: (M+1, R, dim).  Locates the first bad (step, replication) for context."""
    ok = np.isfinite(x_path).all(axis=2) & (np.abs(x_path).max(axis=2) <= BLOWUP_LIMIT)
    if ok.all():
        return
    bad = np.argwhere(~ok)
    m, r = int(bad[0, 0]), int(bad[0, 1])
    raise BlowUpError(
        f"particle {particle} left the stable region at step {m} "
        f"(replication {rep_ids[r]}): |x| > {BLOWUP_LIMIT:g} or non-finite",
        particle=particle,
        step=m,
        replication=rep_ids[r],
    )


def _milestone_log_weights(alphas: np.ndarray) -> np.ndarray:
    """lw_i with atom weights in mu^n proportional to exp(lw_i) for i <= n.

    w_i^(n) = alpha_i * prod_{j=i+1}^n (1-alpha_j) = exp(ln alpha_i - L_i) * e^{L_n},
    where L_i = sum_{j<=i, j>=2} ln(1-alpha_j); the common e^{L_n} drops out on
    normalization.  Requires alpha_i < 1 for i >= 2.
    """
    log_alpha = np.log(alphas)
    L = np.concatenate([[0.0], np.cumsum(np.log1p(-alphas[1:]))])
    return log_alpha - L


def _weights_at(n: int, alphas: np.ndarray, lw: np.ndarray | None) -> np.ndarray:
    if lw is not None:
        w = lw[:n]
        return np.exp(w - w.max())
    # unit-tail schedules: direct suffix products (atoms before a reset get 0)
    sfx = np.ones(n)
    for i in range(n - 2, -1, -1):
        sfx[i] = sfx[i + 1] * (1.0 - alphas[i + 1])
    return alphas[:n] * sfx


def _chunk_reps(replications: int, workers: int):
    ids = list(range(replications))
    if workers <= 1 or replications == 1:
        return [ids]
    chunks = np.array_split(ids, min(workers, replications))
    return [[int(r) for r in c] for c in chunks if len(c)]


def _merge_chunks(parts: list[dict], rep_order: list[list[int]]) -> dict:
    merged = {k: None for k in parts[0]}
    flat_ids = [r for chunk in rep_order for r in chunk]
    order = np.argsort(flat_ids)  # chunks are contiguous, this restores 0..R-1
    for key in ("mean_traj", "second_traj", "gap_kn", "gap_last", "paths",
                "mean_grid", "second_grid"):
        if parts[0].get(key) is not None:
            merged[key] = np.concatenate([p[key] for p in parts], axis=0)[order]
        else:
            merged[key] = None
    merged["snapshots"] = {}
    for p in parts:
        merged["snapshots"].update(p["snapshots"])
    merged["n_steps"] = sum(p["n_steps"] for p in parts)
    merged["notes"] = tuple(dict.fromkeys(sum((list(p["notes"]) for p in parts), [])))
    return merged


# -- core drivers ------------------------------------------------------------


def _sequential_chunk(config: SimConfig, rep_ids: list[int], algorithm: str,
                      ref_moments=None) -> dict:
    """Simulate one replication chunk of a sequential (or batch) run.

    Replications evolve in lockstep along a leading vector axis; all
    per-replication arithmetic is elementwise, so chunking is bit-neutral.
    When ref_moments is given (coupled runs) a synchronously-coupled particle
    driven by the reference moment curves consumes the same increments.
    """
    model, sched, init = config.model, config.schedule, config.initial
    dim, M, N, dt = model.dim, config.M, config.N, config.dt
    Rc = len(rep_ids)
    times = config.times()
    sqdt = np.sqrt(dt)
    alphas = sched.alphas(N)
    cp_idx = np.asarray(config.checkpoint_indices, dtype=int)
    n_cp = cp_idx.size
    milestones = config.milestones
    milestone_set = {n: l for l, n in enumerate(milestones)}
    full_atoms = config.measure_backend == "full_atoms"
    moment_only = model.interaction_form == INTERACTION_MOMENT
    dual = model.noise_form == NOISE_ADDITIVE_PLUS_FREE
    coupled = ref_moments is not None

    if algorithm == ALGO_BATCH:
        batches = config.batch_sizes
    else:
        batches = (1,) * N
    starts = np.concatenate([[0], np.cumsum(batches)])
    if algorithm == ALGO_BATCH:
        bad = [n for n in milestones if n not in set(starts.tolist())]
        if bad:
            raise ConfigError(
                f"milestones {bad} do not align with batch boundaries", key="milestones"
            )

    width = block_width(dim, M, init.needs_noise, dual)
    streams = [BlockStream(replication_stream(config.seed, r), width) for r in rep_ids]

    mean = np.zeros((M + 1, Rc, dim))
    second = np.zeros((M + 1, Rc))
    atoms_cp = np.zeros((Rc, N, n_cp, dim)) if full_atoms else None
    atoms_grid = None
    if not moment_only:
        atoms_grid = np.zeros((Rc, N, M + 1, dim))
    paths = np.zeros((Rc, N, M + 1, dim)) if config.store_paths else None
    lw = None if sched.has_unit_tail(N) else _milestone_log_weights(alphas)

    mean_traj = np.zeros((Rc, len(milestones), n_cp, dim))
    second_traj = np.zeros((Rc, len(milestones), n_cp))
    snapshots = {}
    gap_kn = np.zeros((Rc, len(milestones))) if coupled else None
    gap_last = np.zeros((Rc, len(milestones))) if coupled else None
    kn_gap_state = np.zeros(Rc) if coupled else None
    if coupled:
        ref_mean, ref_second = ref_moments  # arrays (M+1, dim), (M+1,)
        trap_w = np.full(M + 1, dt)
        trap_w[0] = trap_w[-1] = 0.5 * dt

    y_path = np.empty((M + 1, Rc, dim)) if coupled else None
    n_steps = 0
    x0_off = dim if init.needs_noise else 0

    for k, size in enumerate(batches):
        n_batch = k + 1  # batch ordinal == alpha index
        alpha = alphas[k]
        blocks = np.stack([s.take(size) for s in streams])  # (Rc, size, width)
        z0 = blocks[:, :, :x0_off] if init.needs_noise else blocks[:, :, :0]
        x0 = init.from_block(z0, dim)  # (Rc, size, dim)
        frozen = n_batch == 1  # first particle/batch stays at its initial value
        if frozen:
            bpath = np.broadcast_to(x0.mean(axis=1)[None], (M + 1, Rc, dim)).copy()
            xs_full = np.broadcast_to(x0[None], (M + 1, Rc, size, dim))
        else:
            dw = blocks[:, :, x0_off : x0_off + M * dim].reshape(Rc, size, M, dim) * sqdt
            db = None
            if dual:
                db = blocks[:, :, x0_off + M * dim :].reshape(Rc, size, M, dim) * sqdt
            xs_full = np.empty((M + 1, Rc, size, dim))
            x = x0
            xs_full[0] = x
            if not moment_only:
                # frozen per-particle weights of mu^{n-1}: batch-level weights
                # spread uniformly inside each batch; constant over the path
                n_prev = starts[k]
                wb = _weights_at(k, alphas, lw)
                wv = np.repeat(wb / np.asarray(batches[:k], dtype=float), batches[:k])
                wv = wv / wv.sum()
            # overflow on a diverging path is caught by the finite check below
            saved_err = np.seterr(over="ignore", invalid="ignore")
            try:
                for m in range(1, M + 1):
                    t_prev = times[m - 1]
                    if moment_only:
                        vm, vs = mean[m - 1][:, None, :], second[m - 1][:, None]
                        if config.self_inclusive:
                            bm = x.mean(axis=1)
                            bs = np.mean(np.sum(x**2, axis=-1), axis=1)
                            vm = vm + alpha * (bm[:, None, :] - vm)
                            vs = vs + alpha * (bs[:, None] - vs)
                        view = MomentView(vm, vs)
                        b = model.drift(t_prev, x, view)
                        s = model.diffusion(t_prev, x, view)
                        x = x + np.asarray(b) * dt + _apply_diffusion(s, dw[:, :, m - 1])
                        if dual:
                            x = x + model.additive_amplitude * db[:, :, m - 1]
                    else:
                        # full-measure interaction: frozen atom list per replication
                        xn = np.empty_like(x)
                        for ri in range(Rc):
                            view = AtomView(atoms_grid[ri, :n_prev, m - 1, :], wv)
                            b = model.drift(t_prev, x[ri], view)
                            s = model.diffusion(t_prev, x[ri], view)
                            xn[ri] = (
                                x[ri] + np.asarray(b) * dt
                                + _apply_diffusion(s, dw[ri, :, m - 1])
                            )
                            if dual:
                                xn[ri] = xn[ri] + model.additive_amplitude * db[ri, :, m - 1]
                        x = xn
                    xs_full[m] = x
            finally:
                np.seterr(**saved_err)
            n_steps += M * size * Rc
            _check_finite_path(
                xs_full.reshape(M + 1, Rc, size * dim), starts[k] + 1, rep_ids
            )
            bpath = xs_full.mean(axis=2)  # batch empirical average per grid time

        if coupled:
            if frozen:
                y_path[...] = bpath
            else:
                y = x0[:, 0, :].copy()  # coupled runs use batch size 1
                y_path[0] = y
                for m in range(1, M + 1):
                    view = MomentView(ref_mean[m - 1], ref_second[m - 1])
                    b = model.drift(times[m - 1], y, view)
                    s = model.diffusion(times[m - 1], y, view)
                    y = y + np.asarray(b) * dt + _apply_diffusion(s, dw[:, 0, m - 1])
                    if dual:
                        y = y + model.additive_amplitude * db[:, 0, m - 1]
                    y_path[m] = y
            diff = bpath - y_path
            gap = np.einsum("m,mr->r", trap_w, np.sum(diff**2, axis=2)) / config.T
            _recursive_update(kn_gap_state, gap, alpha)

        _recursive_update(mean, bpath, alpha)
        _recursive_update(second, np.sum(bpath**2, axis=2), alpha)

        end = starts[k + 1]
        if full_atoms:
            atoms_cp[:, starts[k] : end] = xs_full[cp_idx].transpose(1, 2, 0, 3)
        if atoms_grid is not None:
            atoms_grid[:, starts[k] : end] = xs_full.transpose(1, 2, 0, 3)
        if paths is not None:
            paths[:, starts[k] : end] = xs_full.transpose(1, 2, 0, 3)

        if end in milestone_set:
            l = milestone_set[end]
            mean_traj[:, l] = mean[cp_idx].transpose(1, 0, 2)
            second_traj[:, l] = second[cp_idx].transpose(1, 0)
            if coupled:
                gap_kn[:, l] = kn_gap_state
                gap_last[:, l] = gap
            if full_atoms:
                # batch-level weights spread uniformly over each batch's atoms
                wb = _weights_at(n_batch, alphas, lw)
                w = np.repeat(wb / np.asarray(batches[: n_batch], dtype=float),
                              batches[:n_batch])
                for ri, rep in enumerate(rep_ids):
                    for ci, mi in enumerate(cp_idx):
                        snapshots[(rep, end, int(mi))] = WeightedEmpirical(
                            atoms_cp[ri, :end, ci, :].copy(), w.copy()
                        )
            else:
                for ri, rep in enumerate(rep_ids):
                    for ci, mi in enumerate(cp_idx):
                        snapshots[(rep, end, int(mi))] = SummaryStats(
                            mean=mean[mi, ri].copy(),
                            raw_second_moment=float(second[mi, ri]),
                        )

    return {
        "mean_traj": mean_traj,
        "second_traj": second_traj,
        "snapshots": snapshots,
        "paths": paths,
        "gap_kn": gap_kn,
        "gap_last": gap_last,
        "n_steps": n_steps,
        "notes": (),
    }


def _classical_chunk(config: SimConfig, rep_ids: list[int], algorithm: str,
                     ref_moments=None) -> dict:
    """All-particles-simultaneous mean-field run for one replication chunk.

    Noise is consumed step-major (x0 for all particles, then one increment per
    particle per step) -- classical runs have no anytime property to preserve,
    and this keeps memory at one step's increments instead of the whole table.
    """
    model, init = config.model, config.initial
    dim, M, N, dt = model.dim, config.M, config.N, config.dt
    Rc = len(rep_ids)
    times = config.times()
    sqdt = np.sqrt(dt)
    cp_idx = np.asarray(config.checkpoint_indices, dtype=int)
    moment_only = model.interaction_form == INTERACTION_MOMENT
    dual = model.noise_form == NOISE_ADDITIVE_PLUS_FREE
    full_atoms = config.measure_backend == "full_atoms"

    gens = [replication_stream(config.seed, r) for r in rep_ids]
    if init.needs_noise:
        z0 = np.stack([g.standard_normal((N, dim)) for g in gens])
    else:
        z0 = np.empty((Rc, N, 0))
    x = init.from_block(z0, dim)  # (Rc, N, dim)

    keep_cp = np.zeros((len(cp_idx), Rc, N, dim))
    mean_t = np.zeros((M + 1, Rc, dim))
    second_t = np.zeros((M + 1, Rc))

    def empirical(xs):
        return xs.mean(axis=1), np.mean(np.sum(xs**2, axis=-1), axis=1)

    mean_t[0], second_t[0] = empirical(x)
    for ci, mi in enumerate(cp_idx):
        if mi == 0:
            keep_cp[ci] = x
    for m in range(1, M + 1):
        em, es = mean_t[m - 1], second_t[m - 1]
        dw = np.stack([g.standard_normal((N, dim)) for g in gens]) * sqdt
        db = np.stack([g.standard_normal((N, dim)) for g in gens]) * sqdt if dual else None
        if moment_only:
            view = MomentView(em[:, None, :], es[:, None])
            b = model.drift(times[m - 1], x, view)
            s = model.diffusion(times[m - 1], x, view)
            x = x + np.asarray(b) * dt + _apply_diffusion(s, dw)
            if dual:
                x = x + model.additive_amplitude * db
        else:
            xn = np.empty_like(x)
            w = np.full(N, 1.0 / N)
            for ri in range(Rc):
                view = AtomView(x[ri], w)
                b = model.drift(times[m - 1], x[ri], view)
                s = model.diffusion(times[m - 1], x[ri], view)
                xn[ri] = x[ri] + np.asarray(b) * dt + _apply_diffusion(s, dw[ri])
                if dual:
                    xn[ri] += model.additive_amplitude * db[ri]
            x = xn
        if not np.all(np.isfinite(x)) or np.abs(x).max() > BLOWUP_LIMIT:
            flat = np.abs(x).reshape(Rc, -1)
            bad = np.argwhere(~np.isfinite(flat) | (flat > BLOWUP_LIMIT))
            ri, pi = int(bad[0, 0]), int(bad[0, 1]) // dim
            raise BlowUpError(
                f"particle {pi + 1} left the stable region at step {m} "
                f"(replication {rep_ids[ri]})",
                particle=pi + 1,
                step=m,
                replication=rep_ids[ri],
            )
        mean_t[m], second_t[m] = empirical(x)
        for ci, mi in enumerate(cp_idx):
            if mi == m:
                keep_cp[ci] = x

    mean_traj = mean_t[cp_idx].transpose(1, 0, 2)[:, None, :, :]
    second_traj = second_t[cp_idx].transpose(1, 0)[:, None, :]
    snapshots = {}
    w = np.full(N, 1.0 / N)
    for ri, rep in enumerate(rep_ids):
        for ci, mi in enumerate(cp_idx):
            if full_atoms:
                snapshots[(rep, N, int(mi))] = WeightedEmpirical(keep_cp[ci, ri].copy(), w.copy())
            else:
                snapshots[(rep, N, int(mi))] = SummaryStats(
                    mean=mean_t[mi, ri].copy(), raw_second_moment=float(second_t[mi, ri])
                )
    return {
        "mean_traj": mean_traj,
        "second_traj": second_traj,
        "snapshots": snapshots,
        "paths": None,
        "gap_kn": None,
        "gap_last": None,
        # full-grid empirical moments, used by surrogate reference solutions
        "mean_grid": mean_t.transpose(1, 0, 2),
        "second_grid": second_t.transpose(1, 0),
        "n_steps": N * M * Rc,
        "notes": (),
    }


def _run_chunk(config: SimConfig, rep_ids: list[int], algorithm: str, ref_moments=None) -> dict:
    if algorithm == ALGO_CLASSICAL:
        return _classical_chunk(config, rep_ids, algorithm, ref_moments)
    return _sequential_chunk(config, rep_ids, algorithm, ref_moments)


def _execute(config: SimConfig, algorithm: str, workers: int = 1, ref_moments=None,
             notes: tuple[str, ...] = ()) -> RunResult:
    t0 = time.perf_counter()
    chunks = _chunk_reps(config.replications, workers)
    if len(chunks) == 1:
        parts = [_run_chunk(config, chunks[0], algorithm, ref_moments)]
    else:
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            futures = [
                pool.submit(_run_chunk, config, chunk, algorithm, ref_moments)
                for chunk in chunks
            ]
            parts = [f.result() for f in futures]
    merged = _merge_chunks(parts, chunks)
    milestones = config.milestones if algorithm != ALGO_CLASSICAL else (config.N,)
    result = RunResult(
        config=config,
        algorithm=algorithm,
        versions=_versions(),
        milestones=milestones,
        checkpoint_times=config.checkpoints,
        mean_traj=merged["mean_traj"],
        second_traj=merged["second_traj"],
        snapshots=merged["snapshots"],
        paths=merged["paths"],
        wall_time_s=time.perf_counter() - t0,
        n_steps=merged["n_steps"],
        notes=notes + merged["notes"],
    )
    result._gap_kn = merged.get("gap_kn")
    result._gap_last = merged.get("gap_last")
    result._mean_grid = merged.get("mean_grid")
    result._second_grid = merged.get("second_grid")
    return result


def spoc_run(config: SimConfig, workers: int = 1) -> RunResult:
    """Sequential run: particle 1 is frozen at its initial value; particle n >= 2
    is Euler-driven against the frozen grid measures of particles 1..n-1 and
    folded in with rate alpha_n at every grid time."""
    if config.batch_sizes is not None:
        raise ConfigError("spoc_run takes no batch_sizes; use batch_spoc_run", key="batch_sizes")
    return _execute(config, ALGO_SPOC, workers)


def batch_spoc_run(config: SimConfig, workers: int = 1) -> RunResult:
    """Batch run: batch k (size N_k) is simulated against the frozen measure of
    batches 1..k-1, then folded in with the batch empirical average at rate
    alpha_k.  All-ones batches reproduce spoc_run bit for bit.

    Drift and diffusion both evaluate the previous frozen measure, keeping the
    batch step consistent with the particle-by-particle recursion (recorded in
    the manifest notes).
    """
    if config.batch_sizes is None:
        raise ConfigError("batch_spoc_run requires batch_sizes", key="batch_sizes")
    return _execute(
        config,
        ALGO_BATCH,
        workers,
        notes=("batch drift and diffusion both evaluate the previous frozen measure",),
    )


def classical_poc_run(config: SimConfig, workers: int = 1) -> RunResult:
    """Classical mean-field run: all N particles advance simultaneously against
    the current empirical measure (the one-shot baseline; changing N means
    recomputing the whole system)."""
    cfg = config if config.batch_sizes is None else replace(config, batch_sizes=None)
    return _execute(cfg, ALGO_CLASSICAL, workers)


# -- reference solutions ------------------------------------------------------


@dataclass
class ReferenceSolution:
    """Oracle for the limiting law: closed moment curves (when the model has a
    moment ODE) plus decoupled sample paths, or a flagged classical surrogate."""

    kind: str
    times: np.ndarray
    mean: np.ndarray
    second: np.ndarray
    fine_times: np.ndarray | None
    fine_mean: np.ndarray | None
    fine_second: np.ndarray | None
    samples: dict
    paths: np.ndarray | None
    n_ref: int
    clamp_count: int = 0


def _rk4_moments(model: ModelSpec, mean0: np.ndarray, second0: float, T: float, n_steps: int):
    """Classic RK4 on the closed moment system; clamps transient second < 0 at 0."""
    h = T / n_steps
    means = np.empty((n_steps + 1, mean0.size))
    seconds = np.empty(n_steps + 1)
    means[0], seconds[0] = mean0, second0
    clamps = 0
    m, s = mean0.astype(float), float(second0)
    ode = model.moment_ode
    for i in range(n_steps):
        t = i * h
        k1m, k1s = ode(t, m, s)
        k2m, k2s = ode(t + h / 2, m + h / 2 * k1m, s + h / 2 * k1s)
        k3m, k3s = ode(t + h / 2, m + h / 2 * k2m, s + h / 2 * k2s)
        k4m, k4s = ode(t + h, m + h * k3m, s + h * k3s)
        m = m + h / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
        s = s + h / 6 * (k1s + 2 * k2s + 2 * k3s + k4s)
        if s < 0.0:
            s = 0.0
            clamps += 1
        means[i + 1], seconds[i + 1] = m, s
    return means, seconds, clamps


def reference_run(
    model: ModelSpec,
    config: SimConfig,
    n_ref: int | None = None,
    seed: int | None = None,
    store_paths: bool = False,
    workers: int = 1,
) -> ReferenceSolution:
    """Oracle run for the limiting McKean-Vlasov law.

    Models with a closed moment system: RK4 at step dt/10 for the moment
    curves, then n_ref decoupled Euler paths fed by those curves (samples per
    checkpoint).  Other models: a classical surrogate at n_ref >= 10*N,
    flagged as such.  The stream seed is offset from config.seed so oracles
    stay seed-disjoint from test runs.
    """
    seed = (config.seed ^ REFERENCE_SEED_XOR) if seed is None else seed
    times = config.times()
    if model.moment_ode is not None:
        n_ref = config.N if n_ref is None else n_ref
        substeps = 10
        fine_mean, fine_second, clamps = _rk4_moments(
            model,
            config.initial.mean_vector(model.dim),
            config.initial.second_moment(model.dim),
            config.T,
            config.M * substeps,
        )
        fine_times = np.arange(config.M * substeps + 1) * (config.dt / substeps)
        coarse = slice(None, None, substeps)
        ref_mean, ref_second = fine_mean[coarse], fine_second[coarse]
        sample_cfg = replace(
            config,
            N=n_ref,
            seed=seed,
            replications=1,
            milestones=None,
            batch_sizes=None,
            store_paths=store_paths,
            measure_backend="full_atoms",
        )
        decoupled = _decoupled_samples(model, sample_cfg, ref_mean, ref_second)
        return ReferenceSolution(
            kind="moment_closure",
            times=times,
            mean=ref_mean,
            second=ref_second,
            fine_times=fine_times,
            fine_mean=fine_mean,
            fine_second=fine_second,
            samples=decoupled["samples"],
            paths=decoupled["paths"],
            n_ref=n_ref,
            clamp_count=clamps,
        )
    n_ref = 10 * config.N if n_ref is None else n_ref
    surrogate_cfg = replace(
        config,
        N=n_ref,
        seed=seed,
        replications=1,
        milestones=None,
        batch_sizes=None,
        store_paths=store_paths,
        measure_backend="full_atoms",
    )
    run = classical_poc_run(surrogate_cfg, workers=workers)
    samples = {
        mi: run.snapshots[(0, n_ref, mi)] for mi in config.checkpoint_indices
    }
    return ReferenceSolution(
        kind="surrogate_classical",
        times=times,
        mean=run._mean_grid[0],  # full-grid moments, indexable by grid position
        second=run._second_grid[0],
        fine_times=None,
        fine_mean=None,
        fine_second=None,
        samples=samples,
        paths=run.paths[0] if run.paths is not None else None,
        n_ref=n_ref,
    )


def _decoupled_samples(model, config: SimConfig, ref_mean, ref_second) -> dict:
    """n_ref independent Euler paths whose coefficients read the reference
    moment curves (the decoupled stand-in for i.i.d. copies of the limit law)."""
    dim, M, N, dt = model.dim, config.M, config.N, config.dt
    times = config.times()
    sqdt = np.sqrt(dt)
    dual = model.noise_form == NOISE_ADDITIVE_PLUS_FREE
    width = block_width(dim, M, config.initial.needs_noise, dual)
    x0_off = dim if config.initial.needs_noise else 0
    blocks = BlockStream(replication_stream(config.seed, 0), width).take(N)
    z0 = blocks[:, :x0_off] if config.initial.needs_noise else blocks[:, :0]
    x = config.initial.from_block(z0, dim)
    dw = blocks[:, x0_off : x0_off + M * dim].reshape(N, M, dim) * sqdt
    db = blocks[:, x0_off + M * dim :].reshape(N, M, dim) * sqdt if dual else None
    paths = np.zeros((N, M + 1, dim)) if config.store_paths else None
    if paths is not None:
        paths[:, 0] = x
    keep = {}
    if 0 in config.checkpoint_indices:
        keep[0] = x.copy()
    for m in range(1, M + 1):
        view = MomentView(ref_mean[m - 1], ref_second[m - 1])
        b = model.drift(times[m - 1], x, view)
        s = model.diffusion(times[m - 1], x, view)
        x = x + np.asarray(b) * dt + _apply_diffusion(s, dw[:, m - 1])
        if dual:
            x = x + model.additive_amplitude * db[:, m - 1]
        if paths is not None:
            paths[:, m] = x
        if m in config.checkpoint_indices:
            keep[m] = x.copy()
    w = np.full(N, 1.0 / N)
    samples = {mi: WeightedEmpirical(pts, w.copy()) for mi, pts in keep.items()}
    return {"samples": samples, "paths": paths}


@dataclass
class CoupledRunResult:
    """Sequential run plus the synchronous-coupling gap diagnostics.

    gap_kn[r, l] is the schedule-weighted running average K_n of the
    time-averaged squared gap (1/T) int |X^i - Y^i|^2 dt at milestone l;
    gap_at_milestone[r, l] is the gap of the milestone particle itself.
    """

    run: RunResult
    gap_kn: np.ndarray
    gap_at_milestone: np.ndarray


def coupled_spoc_run(config: SimConfig, workers: int = 1) -> CoupledRunResult:
    """Sequential run with a synchronously-coupled companion per particle.

    The companion Y^n consumes the identical Brownian increments but its
    coefficients read the reference moment curves (closed moment ODE); by
    construction Y^1 = X^1 (both frozen), so the gap at n = 1 is exactly zero.
    """
    if config.model.moment_ode is None:
        raise ConfigError(
            "coupled runs need a model with a closed moment system", key="model"
        )
    if config.batch_sizes is not None:
        raise ConfigError("coupled runs are particle-by-particle", key="batch_sizes")
    fine_mean, fine_second, _ = _rk4_moments(
        config.model,
        config.initial.mean_vector(config.model.dim),
        config.initial.second_moment(config.model.dim),
        config.T,
        config.M * 10,
    )
    ref = (fine_mean[::10], fine_second[::10])
    result = _execute(config, ALGO_SPOC, workers, ref_moments=ref)
    return CoupledRunResult(
        run=result, gap_kn=result._gap_kn, gap_at_milestone=result._gap_last
    )


# -- persistence --------------------------------------------------------------


def save_run(result: RunResult, out_dir) -> None:
    """Persist a run: manifest.json, snapshots/*.csv (or summary.csv), paths.bin."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema": "spoc-run-v1",
        "algorithm": result.algorithm,
        "config": result.config.to_dict(),
        "versions": result.versions,
        "milestones": list(result.milestones),
        "checkpoint_times": list(result.checkpoint_times),
        "replications": result.config.replications,
        "wall_time_s": result.wall_time_s,
        "n_steps": result.n_steps,
        "notes": list(result.notes),
        "complete": False,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))

    header = ["replication", "milestone_n", "time"]
    dim = result.config.model.dim
    header += [f"mean_{i}" for i in range(dim)] + ["raw_second_moment"]
    lines = [",".join(header)]
    for r in range(result.config.replications):
        for l, n in enumerate(result.milestones):
            for c, t in enumerate(result.checkpoint_times):
                row = [str(r), str(n), repr(float(t))]
                row += [repr(float(v)) for v in result.mean_traj[r, l, c]]
                row += [repr(float(result.second_traj[r, l, c]))]
                lines.append(",".join(row))
    (out / "summary.csv").write_text("\n".join(lines) + "\n")

    snap_dir = out / "snapshots"
    has_atom_snapshots = any(
        isinstance(v, WeightedEmpirical) for v in result.snapshots.values()
    )
    if has_atom_snapshots:
        snap_dir.mkdir(exist_ok=True)
        for (rep, n, mi), snap in sorted(result.snapshots.items()):
            if isinstance(snap, WeightedEmpirical):
                snap.to_csv(snap_dir / f"rep{rep}_n{n}_m{mi}.csv")

    if result.paths is not None:
        with open(out / "paths.bin", "wb") as fh:
            fh.write(_PATHS_MAGIC)
            fh.write(struct.pack("<I4Q", 1, *result.paths.shape))
            fh.write(np.ascontiguousarray(result.paths, dtype=float).tobytes())

    manifest["complete"] = True
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_paths(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[: len(_PATHS_MAGIC)] != _PATHS_MAGIC:
        raise ValueError("not a path-array file")
    off = len(_PATHS_MAGIC)
    version, r, n, m1, d = struct.unpack_from("<I4Q", raw, off)
    if version != 1:
        raise ValueError(f"unsupported paths version {version}")
    off += struct.calcsize("<I4Q")
    return np.frombuffer(raw, dtype=float, offset=off).reshape(r, n, m1, d).copy()


def load_run(out_dir) -> RunResult:
    """Reload a persisted run (builtin models only; summary precision is repr-exact)."""
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    config = SimConfig.from_dict(manifest["config"])
    milestones = tuple(manifest["milestones"])
    cps = tuple(manifest["checkpoint_times"])
    R, L, C = manifest["replications"], len(milestones), len(cps)
    dim = config.model.dim
    mean_traj = np.zeros((R, L, C, dim))
    second_traj = np.zeros((R, L, C))
    rows = (out / "summary.csv").read_text().strip().split("\n")[1:]
    cp_pos = {repr(float(t)): i for i, t in enumerate(cps)}
    ml_pos = {n: i for i, n in enumerate(milestones)}
    for row in rows:
        parts = row.split(",")
        r, n = int(parts[0]), int(parts[1])
        c = cp_pos[repr(float(parts[2]))]
        l = ml_pos[n]
        mean_traj[r, l, c] = [float(v) for v in parts[3 : 3 + dim]]
        second_traj[r, l, c] = float(parts[3 + dim])
    snapshots = {}
    snap_dir = out / "snapshots"
    if snap_dir.exists():
        for f in snap_dir.glob("rep*_n*_m*.csv"):
            stem = f.stem
            rep = int(stem.split("_")[0][3:])
            n = int(stem.split("_")[1][1:])
            mi = int(stem.split("_")[2][1:])
            snapshots[(rep, n, mi)] = WeightedEmpirical.from_csv(f)
    paths = load_paths(out / "paths.bin") if (out / "paths.bin").exists() else None
    return RunResult(
        config=config,
        algorithm=manifest["algorithm"],
        versions=manifest["versions"],
        milestones=milestones,
        checkpoint_times=cps,
        mean_traj=mean_traj,
        second_traj=second_traj,
        snapshots=snapshots,
        paths=paths,
        wall_time_s=manifest["wall_time_s"],
        n_steps=manifest["n_steps"],
        notes=tuple(manifest.get("notes", ())),
    )
