"""Equilibrium measures, capacities, and hitting probabilities on Z^d.

For a finite set K the equilibrium weight of a site x in K is its probability
of never returning to K, so it vanishes off the interior boundary of K and
sums to the capacity cap(K). Weights are recovered exactly from the Green
function through the last-exit identity
    sum_{y in K} g(x - y) e_K(y) = 1   for every x in K,
a dense symmetric positive-definite system supported on the interior boundary.
The same factorization yields the entrance law of a walk outside K,
    P_z[hits K, first at y] = (g(z - .) G_K^{-1})_y,
which `WindowHarmonics` packages for the exact interlacement sampler: escape
probabilities and re-entry distributions for every site adjacent to a window.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .lattice import BoundaryKind, Site, SiteSet, Window, ball, boundary, neighbors, sub
from .walk import GreenCoverageError, GreenTable, build_green_table, green_value


class EquilibriumError(RuntimeError):
    """Equilibrium solve failed its residual or positivity verification."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


# weights more negative than this indicate a genuine solver failure; anything
# in (-NEGATIVE_TOL, 0) is numerical noise and clamped to zero.
NEGATIVE_TOL = 1e-10
RESIDUAL_TOL = 1e-8


@dataclass
class EquilibriumMeasure:
    """Nonnegative weights e_K on the interior boundary of K; total = cap(K)."""

    support: SiteSet            # K itself
    carrier: SiteSet            # interior boundary of K, where weights live
    weights: np.ndarray         # aligned with carrier iteration order
    total: float                # cap(K)

    def weight(self, x: Site) -> float:
        x = tuple(x)
        if x in self.carrier:
            return float(self.weights[self.carrier.index(x)])
        if x in self.support:
            return 0.0
        raise KeyError(f"{x} not in K")

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.weights)

    def as_dict(self) -> dict:
        return {s: float(w) for s, w in zip(self.carrier, self.weights) if w > 0}


def _green_matrix(sites: np.ndarray, green: GreenTable, block: int = 512) -> np.ndarray:
    """Dense symmetric matrix g(x_i - x_j) built in row blocks."""
    n = len(sites)
    mat = np.empty((n, n), dtype=np.float64)
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        diffs = sites[i0:i1, None, :] - sites[None, :, :]
        mat[i0:i1] = green.values_for(diffs.reshape(-1, sites.shape[1])).reshape(i1 - i0, n)
    return mat


def _solve_equilibrium(bnd: np.ndarray, green: GreenTable):
    gmat = _green_matrix(bnd, green)
    try:
        cho = linalg.cho_factor(gmat)
    except linalg.LinAlgError as exc:
        raise EquilibriumError(f"Green matrix not positive definite: {exc}") from exc
    w = linalg.cho_solve(cho, np.ones(len(bnd)))
    if w.min() < -NEGATIVE_TOL:
        raise EquilibriumError(
            f"equilibrium weight {w.min():.3e} below -{NEGATIVE_TOL:.0e}; solver failure")
    return cho, np.clip(w, 0.0, None)


def equilibrium_exact(K: Iterable[Site], green: GreenTable) -> EquilibriumMeasure:
    """Exact equilibrium measure and capacity of a finite set K.

    Solves the last-exit system on the interior boundary of K and verifies
    sum_y g(x-y) e(y) = 1 to RESIDUAL_TOL at every site of K (interior sites
    included); a violation raises EquilibriumError carrying the residual.
    """
    Kset = K if isinstance(K, SiteSet) else SiteSet(K)
    if len(Kset) == 0:
        raise ValueError("K must be nonempty")
    bnd = boundary(Kset, BoundaryKind.INTERIOR)
    barr = bnd.array()
    _, w = _solve_equilibrium(barr, green)
    karr = Kset.array()
    diffs = karr[:, None, :] - barr[None, :, :]
    hk = green.values_for(diffs.reshape(-1, karr.shape[1])).reshape(len(karr), len(barr)) @ w
    resid = float(np.abs(hk - 1.0).max())
    if resid > RESIDUAL_TOL:
        raise EquilibriumError(
            f"equilibrium residual {resid:.3e} exceeds {RESIDUAL_TOL:.0e} on K",
            residual=resid)
    return EquilibriumMeasure(Kset, bnd, w, float(w.sum()))


def hit_probability(z: Site, K: Iterable[Site], e: EquilibriumMeasure,
                    green: GreenTable) -> float:
    """P_z[walk ever enters K] = sum_y g(z-y) e_K(y); exactly 1 on K itself."""
    Kset = e.support if K is None else (K if isinstance(K, SiteSet) else SiteSet(K))
    z = tuple(z)
    if z in Kset:
        return 1.0
    diffs = np.array(z, dtype=np.int64)[None, :] - e.carrier.array()
    h = float(green.values_for(diffs) @ e.weights)
    if not -1e-8 <= h <= 1.0 + 1e-8:
        raise EquilibriumError(f"hitting probability {h} outside [0, 1] at {z}")
    return min(max(h, 0.0), 1.0)


@dataclass
class CapacityScaling:
    entries: list                 # (L, cap(B_2(0, L)))
    fitted_exponent: float        # slope of log cap vs log L
    band_constants: tuple         # (min, max) of sqrt(d) * cap^(1/(d-2)) / L

    def caps(self):
        return [c for _, c in self.entries]


def capacity_ball_scaling(d: int, radii: Sequence[int],
                          green: GreenTable | None = None) -> CapacityScaling:
    """Capacities of Euclidean balls and the fitted growth exponent of cap vs L.

    The dimension-free band constants are reported, not asserted: they are the
    per-radius values c with cap = (c L / sqrt(d))^(d-2).
    """
    radii = sorted(radii)
    if green is None:
        green = build_green_table(d, 2 * max(radii))
    entries = []
    for L in radii:
        K = ball((0,) * d, L, norm="2")
        entries.append((L, equilibrium_exact(K, green).total))
    logs = np.log([[L, c] for L, c in entries])
    slope = float(np.polyfit(logs[:, 0], logs[:, 1], 1)[0])
    consts = [math.sqrt(d) * c ** (1.0 / (d - 2)) / L for L, c in entries]
    return CapacityScaling(entries, slope, (min(consts), max(consts)))


class WindowHarmonics:
    """Escape/re-entry law of a walk around a finite window W.

    Precomputes, from one Cholesky factorization of the Green matrix on the
    interior boundary of W:
      * the equilibrium measure and capacity of W (trajectory entrance law),
      * for any z adjacent to W, the probability h(z) of ever returning to W
        and the exact distribution of the re-entry site,
    which is everything an exact sampler of trajectory traces in W needs. Rows
    are cached with an LRU bound since each one costs a triangular solve.
    """

    def __init__(self, window: Window, green: GreenTable, row_cache: int = 8192):
        # worst-case difference between a site adjacent to W and a site of W
        worst = tuple(b - a + 1 for a, b in zip(window.lo, window.hi))
        if green.d != window.d or max(worst) > green.radius:
            raise GreenCoverageError(worst, green.radius)
        self.window = window
        self.green = green
        all_sites = SiteSet(window.sites())
        self.boundary_sites = boundary(all_sites, BoundaryKind.INTERIOR)
        self.outer_sites = boundary(all_sites, BoundaryKind.OUTER)
        self._barr = self.boundary_sites.array()
        self._cho, self._eq_weights = _solve_equilibrium(self._barr, green)
        self.capacity = float(self._eq_weights.sum())
        self.equilibrium = EquilibriumMeasure(
            all_sites, self.boundary_sites, self._eq_weights, self.capacity)
        self._eq_cdf = np.cumsum(self._eq_weights)
        self._rows: OrderedDict = OrderedDict()
        self._row_cache = row_cache
        self._h_cache: dict = {}

    def boundary_site_indices(self) -> np.ndarray:
        """Window flat indices of the interior-boundary sites, in carrier order."""
        return np.array([self.window.index(s) for s in self.boundary_sites],
                        dtype=np.int64)

    def equilibrium_cdf(self) -> np.ndarray:
        return self._eq_cdf

    def h(self, z: Site) -> float:
        """Probability that a walk from z ever enters the window.

        Falls back to on-demand quadrature (cached per symmetry class) when z
        is outside the table's coverage, so conditioned-walk diagnostics can
        follow excursions arbitrarily far.
        """
        z = tuple(z)
        if self.window.contains(z):
            return 1.0
        hz = self._h_cache.get(z)
        if hz is None:
            diffs = np.array(z, dtype=np.int64)[None, :] - self._barr
            try:
                gz = self.green.values_for(diffs)
            except GreenCoverageError:
                gz = np.array([green_value(tuple(row), self.green.tol) for row in diffs])
            hz = float(np.clip(gz @ self._eq_weights, 0.0, 1.0))
            if len(self._h_cache) > 500_000:
                self._h_cache.clear()
            self._h_cache[z] = hz
        return hz

    def entrance_row(self, z: Site):
        """(return probability h(z), re-entry cdf over boundary sites) for z outside W."""
        z = tuple(z)
        row = self._rows.get(z)
        if row is None:
            diffs = np.array(z, dtype=np.int64)[None, :] - self._barr
            gz = self.green.values_for(diffs)
            f = linalg.cho_solve(self._cho, gz)
            np.clip(f, 0.0, None, out=f)
            row = (float(f.sum()), np.cumsum(f))
            self._rows[z] = row
            if len(self._rows) > self._row_cache:
                self._rows.popitem(last=False)
        else:
            self._rows.move_to_end(z)
        return row

    def entrance_matrix(self):
        """Dense re-entry law for every site of the outer boundary.

        Returns (outer_array, h_values, cdf_matrix): row i is the cumulative
        re-entry distribution from outer site i, whose total is h(outer_i).
        Intended for windows small enough that n_outer * n_boundary is cheap.
        """
        oarr = self.outer_sites.array()
        diffs = oarr[:, None, :] - self._barr[None, :, :]
        gz = self.green.values_for(diffs.reshape(-1, oarr.shape[1])).reshape(
            len(oarr), len(self._barr))
        rows = linalg.cho_solve(self._cho, gz.T).T
        np.clip(rows, 0.0, None, out=rows)
        h = rows.sum(axis=1)
        return oarr, h, np.cumsum(rows, axis=1)

    def step_row(self, z: Site):
        """One-step law of the walk from z conditioned to return to the window.

        Returns (neighbor list, probabilities) with p(w) proportional to h(w);
        rows sum to one by harmonicity of h off W. Reference implementation for
        validating the integrated entrance law on small windows.
        """
        nbrs = neighbors(z)
        hv = np.array([1.0 if self.window.contains(w) else self.h(w) for w in nbrs])
        hz = self.h(z)
        if hz <= 0.0:
            raise EquilibriumError(f"h(z) = 0 at {z}; conditioned step undefined")
        return nbrs, hv / (2 * len(z) * hz)
