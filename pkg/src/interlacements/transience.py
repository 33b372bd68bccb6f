"""Electrical-network transience diagnostics.

A graph is transient iff some unit measure on infinite simple paths from a
root has finite vertex energy sum_x mu[x in path]^2; this module computes that
energy for finite path ensembles, checks that lifting an ensemble through the
hypercube witnesses inflates the energy by at most 2^d * 7^2, and measures
effective resistances between a cluster site and growing boundary shells
(unit conductance per nearest-neighbor edge, conjugate-gradient solve).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg as sparse_cg

from .goodness import GoodnessField
from .lattice import Site, linf, neighbors
from .rerouting import lift_with_stats
from .vacancy import components


class EnergyError(ValueError):
    pass


class ResistanceSolveError(RuntimeError):
    pass


@dataclass
class PathMeasure:
    """Finitely many simple nearest-neighbor paths, normally from a common root.

    The common-root requirement matches the path families of the transience
    criterion; pass require_common_root=False for artificial ensembles (the
    energy functional itself does not care).
    """

    paths: list                 # each a tuple/list of sites
    weights: np.ndarray
    require_common_root: bool = True

    def __post_init__(self):
        self.paths = [tuple(tuple(s) for s in p) for p in self.paths]
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.paths) != len(self.weights):
            raise EnergyError("paths and weights length mismatch")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise EnergyError(f"weights sum to {self.weights.sum()}, not 1")
        if (self.weights < 0).any():
            raise EnergyError("negative weights")
        if self.require_common_root:
            roots = {p[0] for p in self.paths}
            if len(roots) > 1:
                raise EnergyError(f"paths have multiple roots: {sorted(roots)}")
        for p in self.paths:
            if len(set(p)) != len(p):
                raise EnergyError("paths must be simple")

    @property
    def root(self) -> Site:
        return self.paths[0][0]

    @staticmethod
    def uniform(paths) -> "PathMeasure":
        n = len(paths)
        return PathMeasure(list(paths), np.full(n, 1.0 / n))


@dataclass
class EnergyReport:
    site_mass: dict             # site -> mu[site in path]
    energy: float               # sum of squared masses
    site_count: int


def energy(pm: PathMeasure) -> EnergyReport:
    """Vertex energy of a path measure: sum_x (sum of weights of paths through x)^2."""
    mass: dict = {}
    for p, w in zip(pm.paths, pm.weights):
        for s in p:
            mass[s] = mass.get(s, 0.0) + w
    e = float(sum(m * m for m in mass.values()))
    return EnergyReport(mass, e, len(mass))


@dataclass
class PushforwardReport:
    original: EnergyReport
    lifted: EnergyReport
    bound_factor: float         # 2^d * 49
    max_segment: int
    segment_bound: int

    @property
    def ratio(self) -> float:
        return self.lifted.energy / self.original.energy

    @property
    def ok(self) -> bool:
        return self.lifted.energy <= self.bound_factor * self.original.energy * (1 + 1e-9)


def pushforward_energy_check(pm: PathMeasure, gf: GoodnessField) -> PushforwardReport:
    """Energy of the lifted ensemble against the 2^d * 7^2 inflation bound.

    Paths with identical lifts pool their weights (the pushforward measure).
    """
    lifted: dict = {}
    max_seg = 1
    bound = 7 * 2 ** gf.d
    for p, w in zip(pm.paths, pm.weights):
        img, stats = lift_with_stats(p, gf)
        max_seg = max(max_seg, stats.max_segment)
        key = tuple(img)
        lifted[key] = lifted.get(key, 0.0) + w
    lifted_pm = PathMeasure(list(lifted.keys()), np.array(list(lifted.values())))
    rep = PushforwardReport(energy(pm), energy(lifted_pm), float(2 ** gf.d * 49),
                            max_seg, bound)
    return rep


@dataclass
class ResistanceCurve:
    radii: list
    values: list                # effective resistances, math.inf when cut off

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.values)

    def increments(self) -> list:
        return [b - a for a, b in zip(self.values, self.values[1:])]


def effective_resistance(cluster: Iterable[Site], center: Site,
                         radii: Sequence[int], rtol: float = 1e-10) -> ResistanceCurve:
    """R_eff between `center` and the shell |x - center|_inf = n inside a cluster.

    Unit conductance per nearest-neighbor edge with both ends in the cluster.
    Solves the Dirichlet problem (potential 1 at the center, 0 on the shell)
    by Jacobi-preconditioned conjugate gradient to relative residual `rtol`;
    R_eff = 1 / (current out of the center). A center cut off from the shell
    reports math.inf explicitly.
    """
    cset = set(tuple(s) for s in cluster)
    center = tuple(center)
    if center not in cset:
        raise ValueError("center must belong to the cluster")
    if any(n < 1 for n in radii):
        raise ValueError("radii must be >= 1")
    values = []
    for n in sorted(radii):
        domain = [s for s in cset if linf(tuple(a - b for a, b in zip(s, center))) <= n]
        shell = {s for s in domain
                 if linf(tuple(a - b for a, b in zip(s, center))) == n}
        if not shell:
            values.append(math.inf)
            continue
        # restrict to the component of the center: no current flows elsewhere,
        # and shell sites are grounded when the walk starts at a shell site
        dset = set(domain)
        seen = {center}
        stack = [center]
        while stack:
            cur = stack.pop()
            if cur in shell:
                continue  # grounded: current does not pass through the shell
            for w in neighbors(cur):
                if w in dset and w not in seen:
                    seen.add(w)
                    stack.append(w)
        shell &= seen
        if not shell:
            values.append(math.inf)
            continue
        unknown = [s for s in sorted(seen) if s != center and s not in shell]
        index = {s: i for i, s in enumerate(unknown)}
        rows, cols, vals = [], [], []
        rhs = np.zeros(len(unknown))
        diag = np.zeros(len(unknown))
        for s in unknown:
            i = index[s]
            for w in neighbors(s):
                if w not in seen:
                    continue
                diag[i] += 1.0
                if w in index:
                    rows.append(i)
                    cols.append(index[w])
                    vals.append(-1.0)
                elif w == center:
                    rhs[i] += 1.0
        if unknown:
            lap = sparse.csr_matrix((vals, (rows, cols)),
                                    shape=(len(unknown), len(unknown)))
            lap += sparse.diags(diag)
            precond = sparse.diags(1.0 / diag)
            sol, info = sparse_cg(lap, rhs, rtol=rtol, atol=0.0,
                                  maxiter=50 * len(unknown), M=precond)
            if info != 0:
                raise ResistanceSolveError(f"CG failed at radius {n} (info={info})")
            resid = np.linalg.norm(lap @ sol - rhs)
            if resid > rtol * max(np.linalg.norm(rhs), 1e-300):
                raise ResistanceSolveError(
                    f"CG residual {resid:.2e} above tolerance at radius {n}")
            potential = dict(zip(unknown, sol))
        else:
            potential = {}
        current = 0.0
        for w in neighbors(center):
            if w in seen:
                vw = 0.0 if w in shell else potential.get(w, 0.0)
                current += 1.0 - vw
        values.append(math.inf if current <= 0 else 1.0 / current)
    return ResistanceCurve(sorted(radii), values)


@dataclass
class STReport:
    """Bookkeeping of the rerouting spread sets S and their overlaps.

    S(x) is {x} for a good site and the sites adjacent (star) to x's bad
    cluster otherwise; T(y) collects the x whose S(x) contains y. All sets are
    computed inside the classified window, so callers should keep the region
    of interest away from its edges.
    """

    sum_T_at_center: int
    mean_sum_T: float
    overlap_by_band: dict       # |z|_inf band -> (overlap count, sites in band)

    def overlap_tail(self) -> list:
        return [(band, (hits / total if total else 0.0))
                for band, (hits, total) in sorted(self.overlap_by_band.items())]


def st_bookkeeping(gf: GoodnessField, x: Site = (0, 0, 0)) -> STReport:
    bad = gf.bad_mask()
    lab = components(bad, adjacency="star")
    struct = ndimage.generate_binary_structure(3, 3)
    n_clusters = lab.n_components
    cluster_S = []
    for k in range(1, n_clusters + 1):
        mask = lab.labels == k
        halo = ndimage.binary_dilation(mask, structure=struct) & ~mask
        cluster_S.append(halo)
    good = ~bad
    t_size = good.astype(np.int64)
    for k, halo in enumerate(cluster_S):
        t_size[halo] += int(lab.sizes[k])

    # sum over S(x) of |T| per site, then its mean across the window
    sum_t = np.zeros(gf.good.shape, dtype=np.int64)
    sum_t[good] = t_size[good]
    for k, halo in enumerate(cluster_S):
        s_total = int(t_size[halo].sum())
        sum_t[lab.labels == k + 1] = s_total

    lo = gf.core.lo
    xi = tuple(c - a for c, a in zip(x, lo))
    s0_mask = np.zeros(gf.good.shape, dtype=bool)
    if gf.is_good(x):
        s0_mask[xi] = True
    else:
        s0_mask = cluster_S[int(lab.labels[xi]) - 1]

    overlap = {}
    for z in gf.core.sites():
        zi = tuple(c - a for c, a in zip(z, lo))
        if gf.is_good(z):
            hit = bool(s0_mask[zi])
        else:
            halo = cluster_S[int(lab.labels[zi]) - 1]
            hit = bool((halo & s0_mask).any())
        band = linf(tuple(a - b for a, b in zip(z, x)))
        h, t = overlap.get(band, (0, 0))
        overlap[band] = (h + int(hit), t + 1)
    return STReport(int(sum_t[xi]), float(sum_t.mean()), overlap)
