"""Exact sampler of the interlacement set restricted to a finite window.

A sample at level u consists of N ~ Poisson(u * cap(W)) labelled trajectories.
Each starts on the interior boundary of W with the normalized equilibrium
measure as entrance law and walks as an unconditioned simple random walk; the
other half of the doubly infinite trajectory is conditioned never to return to
W and therefore contributes nothing inside W, so it is never simulated. Labels
are i.i.d. uniform on [0, u_max], which couples all levels u <= u_max: thinning
keeps exactly the trajectories with label below u.

Excursions outside W are integrated out exactly: from an exit site z the walk
returns to W with probability h(z) and re-enters with the first-entrance
distribution, both precomputed by `WindowHarmonics`. This is the conditioned
(h-transform) excursion law with the excursion path marginalized away; the
occupancy law of W is exact. A step-by-step conditioned walk is kept in
`_excursion_by_stepping` as a cross-check for small windows. Truncated mode
instead kills walks leaving a Euclidean ball, which biases vacancy upward by
the missed returns; the bias bound is reported, not hidden.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .lattice import Site, SiteSet, Window
from .potential import WindowHarmonics, equilibrium_exact
from .rng import (PhiloxStream, categorical_from_cdf, make_state, next_double,
                  poisson, randbelow)
from .walk import GreenTable


class SamplerError(RuntimeError):
    pass


DEFAULT_MAX_STEPS = 10_000_000


def thread_count(requested=None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("INTERLACE_THREADS")
    if env:
        return max(1, int(env))
    return 1


@dataclass
class Trajectory:
    label: float
    start: Site
    sites: list            # sites visited inside W, in order, excursion gaps elided
    excursions: int        # number of resolved returns to W
    ended: str             # 'escaped' or 'killed'


@dataclass
class InterlacementSample:
    """Occupancy of a window by trajectories with labels below `u`.

    minlabel holds, per window site (flat C-order index), the smallest label
    among trajectories that visited it (+inf if none); occupancy at any level
    u' <= u is the set {minlabel <= u'}, which makes thinning exact and
    monotone by construction.
    """

    u: float
    window: Window
    mode: str
    truncate_radius: float | None
    seed: int
    stream: int
    minlabel: np.ndarray
    trajectories: list | None
    exact_labels: bool = True   # False for snapshots loaded without trajectories

    @property
    def n_trajectories(self) -> int | None:
        return None if self.trajectories is None else len(self.trajectories)

    def _level(self, u=None) -> float:
        lvl = self.u if u is None else float(u)
        if lvl > self.u + 1e-15:
            raise ValueError(f"level {lvl} above sampled maximum {self.u}")
        if not self.exact_labels and lvl < self.u:
            raise ValueError(
                "sample was loaded without trajectories; only its own level is exact")
        return lvl

    def occupancy(self, u=None) -> np.ndarray:
        return self.minlabel <= self._level(u)

    def vacant(self, u=None) -> np.ndarray:
        return ~self.occupancy(u)

    def occupancy_field(self, u=None) -> np.ndarray:
        return self.occupancy(u).reshape(self.window.extents)

    def vacant_field(self, u=None) -> np.ndarray:
        return self.vacant(u).reshape(self.window.extents)

    def thin(self, u: float) -> "InterlacementSample":
        """Keep trajectories with label <= u; exact monotone coupling."""
        lvl = self._level(u)
        kept = None
        if self.trajectories is not None:
            kept = [t for t in self.trajectories if t.label <= lvl]
        return replace(self, u=lvl, trajectories=kept)


def _walk_trajectory_exact(st, harmonics: WindowHarmonics, label: float,
                           max_steps: int, record: bool):
    """Python reference engine; draw-for-draw identical to the numba kernel."""
    window = harmonics.window
    d = window.d
    b = categorical_from_cdf(st, harmonics.equilibrium_cdf())
    site = tuple(harmonics.boundary_sites.sites[b])
    start = site
    sites = [site] if record else None
    visited = [window.index(site)]
    excursions = 0
    steps = 0
    while True:
        steps += 1
        if steps > max_steps:
            raise SamplerError(f"trajectory exceeded max_steps={max_steps}")
        k = randbelow(st, 2 * d)
        axis, sign = k >> 1, 1 - 2 * (k & 1)
        site = site[:axis] + (site[axis] + sign,) + site[axis + 1:]
        if window.contains(site):
            visited.append(window.index(site))
            if record:
                sites.append(site)
            continue
        h, cdf = harmonics.entrance_row(site)
        v = next_double(st)
        if v >= h:
            return start, sites, visited, excursions, "escaped"
        lo, hi = 0, len(cdf) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[mid] <= v:
                lo = mid + 1
            else:
                hi = mid
        excursions += 1
        site = tuple(harmonics.boundary_sites.sites[lo])
        visited.append(window.index(site))
        if record:
            sites.append(site)


def _walk_trajectory_truncate(st, window: Window, start_sites, radius2: float,
                              max_steps: int, record: bool):
    d = window.d
    b = categorical_from_cdf(st, start_sites[1])
    site = tuple(start_sites[0].sites[b])
    start = site
    sites = [site] if record else None
    visited = [window.index(site)]
    steps = 0
    while True:
        steps += 1
        if steps > max_steps:
            raise SamplerError(f"trajectory exceeded max_steps={max_steps}")
        k = randbelow(st, 2 * d)
        axis, sign = k >> 1, 1 - 2 * (k & 1)
        site = site[:axis] + (site[axis] + sign,) + site[axis + 1:]
        if window.contains(site):
            visited.append(window.index(site))
            if record:
                sites.append(site)
        elif sum(c * c for c in site) > radius2:
            return start, sites, visited, 0, "killed"


def sample(u_max: float, window: Window, green: GreenTable | None = None,
           harmonics: WindowHarmonics | None = None, mode: str = "exact",
           truncate_radius: float | None = None, rng=0, stream: int = 0,
           record_trajectories: bool = True,
           max_steps: int = DEFAULT_MAX_STEPS) -> InterlacementSample:
    """Draw one interlacement sample on `window` at level u_max.

    rng is a seed int (with `stream` selecting the replica stream) or a
    PhiloxStream. mode='exact' reproduces the window law exactly;
    mode='truncate' requires truncate_radius > the window's Euclidean radius.
    """
    if u_max < 0:
        raise ValueError("u_max must be nonnegative")
    if isinstance(rng, PhiloxStream):
        st, seed, stream = rng.state, rng.seed, rng.stream
    else:
        seed = int(rng)
        st = make_state(np.uint64(seed), np.uint64(stream))
    if harmonics is None:
        if green is None:
            raise ValueError("need a GreenTable or WindowHarmonics")
        harmonics = WindowHarmonics(window, green)
    if mode == "truncate":
        if truncate_radius is None or truncate_radius <= window.radius2():
            raise ValueError("truncate mode requires truncate_radius > window radius")
    elif mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")

    mean = u_max * harmonics.capacity
    n_traj = poisson(st, mean)
    minlabel = np.full(window.size, np.inf)
    trajectories = [] if record_trajectories else None
    for _ in range(n_traj):
        label = u_max * next_double(st)
        if mode == "exact":
            start, sites, visited, exc, ended = _walk_trajectory_exact(
                st, harmonics, label, max_steps, record_trajectories)
        else:
            start, sites, visited, exc, ended = _walk_trajectory_truncate(
                st, window, (harmonics.boundary_sites, harmonics.equilibrium_cdf()),
                float(truncate_radius) ** 2, max_steps, record_trajectories)
        idx = np.array(visited, dtype=np.int64)
        np.minimum.at(minlabel, idx, label)
        if record_trajectories:
            trajectories.append(Trajectory(label, start, sites, exc, ended))
    return InterlacementSample(u_max, window, mode, truncate_radius, seed,
                               stream, minlabel, trajectories)


# ---------------------------------------------------------------------------
# bulk replica engine (minlabel fields only)

class BulkSampler:
    """Dense-precompute engine for many replicas on one window.

    Builds the full entrance law once (row by row, so the numbers are
    bit-identical to the cached-row reference engine) and then simulates
    replicas in compiled batches; replica k always consumes stream k.
    """

    def __init__(self, harmonics: WindowHarmonics, mode: str = "exact",
                 truncate_radius: float | None = None):
        self.harmonics = harmonics
        self.window = harmonics.window
        self.mode = mode
        self.truncate_radius = truncate_radius
        w = self.window
        d = w.d
        self._lo = np.array(w.lo, dtype=np.int64)
        ext = np.array(w.extents, dtype=np.int64)
        self._extents = ext
        strides = np.ones(d, dtype=np.int64)
        for i in range(d - 2, -1, -1):
            strides[i] = strides[i + 1] * ext[i + 1]
        self._strides = strides
        barr = harmonics.boundary_sites.array()
        self._bnd_coords = barr
        self._bnd_flat = ((barr - self._lo) * strides).sum(axis=1)
        self._eq_cdf = harmonics.equilibrium_cdf()
        if mode == "exact":
            pad_lo = self._lo - 1
            pad_ext = ext + 2
            pad_strides = np.ones(d, dtype=np.int64)
            for i in range(d - 2, -1, -1):
                pad_strides[i] = pad_strides[i + 1] * pad_ext[i + 1]
            self._pad_lo = pad_lo
            self._pad_strides = pad_strides
            oarr = harmonics.outer_sites.array()
            out_row_of = np.full(int(np.prod(pad_ext)), -1, dtype=np.int64)
            rows = ((oarr - pad_lo) * pad_strides).sum(axis=1)
            out_row_of[rows] = np.arange(len(oarr))
            self._out_row_of = out_row_of
            h = np.empty(len(oarr))
            cdf = np.empty((len(oarr), len(barr)))
            for i, z in enumerate(harmonics.outer_sites):
                h[i], cdf[i] = harmonics.entrance_row(z)
            self._ent_h = h
            self._ent_cdf = cdf
        elif mode == "truncate":
            if truncate_radius is None or truncate_radius <= w.radius2():
                raise ValueError("truncate mode requires truncate_radius > window radius")
        else:
            raise ValueError(f"unknown mode {mode!r}")

    def minlabels(self, u_max: float, seed: int, first_replica: int,
                  n_replicas: int, max_steps: int = DEFAULT_MAX_STEPS) -> np.ndarray:
        """(n_replicas, window.size) matrix of per-site minimum labels."""
        mean = u_max * self.harmonics.capacity
        out = np.full((n_replicas, self.window.size), np.inf)
        if self.mode == "exact":
            status = kernels.sample_replicas_exact(
                np.uint64(seed), np.uint64(first_replica), n_replicas,
                float(u_max), float(mean),
                self._lo, self._extents, self._strides,
                self._pad_lo, self._pad_strides, self._out_row_of,
                self._bnd_flat, self._bnd_coords, self._eq_cdf,
                self._ent_h, self._ent_cdf, max_steps, out)
        else:
            status = kernels.sample_replicas_truncate(
                np.uint64(seed), np.uint64(first_replica), n_replicas,
                float(u_max), float(mean),
                self._lo, self._extents, self._strides,
                self._bnd_flat, self._bnd_coords, self._eq_cdf,
                float(self.truncate_radius) ** 2, max_steps, out)
        if status.any():
            bad = int(np.flatnonzero(status)[0])
            raise SamplerError(
                f"replica {first_replica + bad} exceeded max_steps={max_steps}")
        return out

    def run(self, u_max: float, seed: int, replicas: int,
            reduce_fn: Callable[[int, np.ndarray], None],
            batch: int = 512, threads=None,
            max_steps: int = DEFAULT_MAX_STEPS) -> None:
        """Stream replica batches through reduce_fn(first_replica, minlabels).

        Batches may be computed on a thread pool (the kernels release the GIL)
        but reduce_fn is always invoked sequentially in replica order, so any
        reduction is reproducible regardless of thread count.
        """
        nthreads = thread_count(threads)
        starts = list(range(0, replicas, batch))
        sizes = [min(batch, replicas - s) for s in starts]
        if nthreads == 1:
            for s, n in zip(starts, sizes):
                reduce_fn(s, self.minlabels(u_max, seed, s, n, max_steps))
            return
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            futures = [pool.submit(self.minlabels, u_max, seed, s, n, max_steps)
                       for s, n in zip(starts, sizes)]
            for s, fut in zip(starts, futures):
                reduce_fn(s, fut.result())


@dataclass
class VacancyCheck:
    """Empirical vacancy of K against the exponential-capacity law."""

    K: list
    u: float
    replicas: int
    empirical: float
    target: float
    stderr: float

    @property
    def z_score(self) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.empirical == self.target else math.inf
        return (self.empirical - self.target) / self.stderr


def vacancy_probability_check(K: Iterable[Site], u: float, replicas: int,
                              window: Window, green: GreenTable,
                              harmonics: WindowHarmonics | None = None,
                              seed: int = 0, threads=None) -> VacancyCheck:
    """Compare empirical P[K stays vacant at level u] with exp(-u cap(K))."""
    Kset = K if isinstance(K, SiteSet) else SiteSet(K)
    for s in Kset:
        if not window.contains(s):
            raise ValueError(f"K site {s} outside window")
    if harmonics is None:
        harmonics = WindowHarmonics(window, green)
    cap_k = equilibrium_exact(Kset, green).total
    target = math.exp(-u * cap_k)
    kidx = np.array([window.index(s) for s in Kset], dtype=np.int64)
    hits = 0

    def reduce_fn(_first, ml):
        nonlocal hits
        hits += int((ml[:, kidx] > u).all(axis=1).sum())

    BulkSampler(harmonics).run(u, seed, replicas, reduce_fn, threads=threads)
    p = hits / replicas
    stderr = math.sqrt(max(p * (1 - p), 1e-300) / replicas)
    return VacancyCheck(Kset.sites, u, replicas, p, target, stderr)


def truncation_bias_bound(harmonics: WindowHarmonics, radius: float,
                          samples: int = 256, seed: int = 1) -> float:
    """max over killing-shell sites of the return probability to the window.

    Evaluated on the full shell when it is small, otherwise on axis points
    plus a deterministic pseudo-random sample of shell sites.
    """
    d = harmonics.window.d
    r = float(radius)
    shell = []
    if (2 * r + 1) ** d <= 200_000:
        lo = -int(math.ceil(r))
        import itertools
        for s in itertools.product(range(lo, -lo + 1), repeat=d):
            n2 = sum(c * c for c in s)
            if (r - 1.0) ** 2 < n2 <= r * r:
                shell.append(s)
    else:
        stream = PhiloxStream(seed, 0)
        for axis in range(d):
            for sign in (1, -1):
                shell.append(tuple(sign * int(r) if i == axis else 0 for i in range(d)))
        while len(shell) < samples:
            v = np.array([stream.uniform() - 0.5 for _ in range(d)])
            v /= np.linalg.norm(v)
            shell.append(tuple(int(round(c)) for c in v * (r - 0.5)))
    return max(harmonics.h(z) for z in shell if not harmonics.window.contains(z))


def _excursion_by_stepping(harmonics: WindowHarmonics, z: Site, rng,
                           max_steps: int = 100_000):
    """Step the conditioned excursion from z explicitly (validation only).

    One escape decision is taken at the excursion start; conditioned on
    returning, the walk follows the one-step law reweighted by h until it
    re-enters the window. Returns the re-entry site or None for escape.
    Excursion lengths are heavy-tailed, hence the step budget and the use of
    the integrated entrance law in production.
    """
    from .lattice import neighbors as _neighbors

    stream = rng if isinstance(rng, PhiloxStream) else PhiloxStream(rng)
    if stream.uniform() >= harmonics.h(z):
        return None
    site = tuple(z)
    window = harmonics.window
    h = harmonics.h
    for _ in range(max_steps):
        nbrs = _neighbors(site)
        hv = [h(w) for w in nbrs]
        u = stream.uniform() * sum(hv)
        acc = 0.0
        site = nbrs[-1]
        for w, hw in zip(nbrs, hv):
            acc += hw
            if u < acc:
                site = w
                break
        if window.contains(site):
            return site
    raise SamplerError(f"conditioned excursion exceeded {max_steps} steps")
