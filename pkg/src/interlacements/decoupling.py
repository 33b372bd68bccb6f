"""Numeric machinery of the multi-scale decoupling recursion.

Geometric scales L_n = l0^n L0 carry a doubling inequality: the probability of
a cascading crossing event at scale L_n is bounded by
    (C1 l0^(2 lambda))^(2^n) * (p0 + eps(u))^(2^n),
where p0 is a seed probability at scale L0, the comparison level is lowered by
the sprinkling factor f(l0) = prod_k (1 + 32 e^2 c1^d (k+1)^(-3/2) l0^(-(d-3)/2)),
and eps(u) = 2 e^(-x) / (1 - e^(-x)) with x = u L0^(d-2) l0. Everything is
evaluated in log space; the free constants (c0, c1, C1, and the Z^3 boundary
count c) are inputs with documented defaults since only their existence is
known, and the hypothesis flags l0 >= 10^6 sqrt(d) c0, L0 >= sqrt(d) are
recorded rather than enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy import special


@dataclass
class ScaleParams:
    """Scale and sprinkling parameters; derived quantities are methods."""

    d: int
    l0: float
    L0: float
    lam: float = 3.0
    C1: float = 10.0
    c0: float = 2.0
    c1: float = 2.0
    c_boundary: float = 6.0      # Z^3 box-boundary count constant in the planner check

    def __post_init__(self):
        if self.l0 <= 1:
            raise ValueError("l0 must exceed 1")
        if self.L0 < 1:
            raise ValueError("L0 must be >= 1")

    def L(self, n: int) -> float:
        return self.l0 ** n * self.L0

    @property
    def l0_hypothesis_ok(self) -> bool:
        return self.l0 >= 1e6 * math.sqrt(self.d) * self.c0

    @property
    def L0_hypothesis_ok(self) -> bool:
        return self.L0 >= math.sqrt(self.d)


@dataclass
class SprinkleResult:
    value: float
    log_value: float
    tail_bound: float            # certified bound on the truncated log tail
    cutoff: int

    def __float__(self):
        return self.value


def sprinkle_factor(p: ScaleParams, rel_tol: float = 1e-12,
                    cutoff: int | None = None) -> SprinkleResult:
    """f(l0) = prod_{k>=0} (1 + A (k+1)^(-3/2)), A = 32 e^2 c1^d l0^(-(d-3)/2).

    Convergent only for d > 3. Evaluated as a log sum over k < cutoff plus an
    exact zeta expansion of the tail: sum_{k>=K} log1p(a_k) =
    sum_j (-1)^(j+1) A^j zeta(3j/2, K+1) / j, valid once a_K < 1. The reported
    tail_bound dominates the truncation error of that expansion.
    """
    if p.d <= 3:
        raise ValueError("sprinkling product diverges for d <= 3")
    A = 32.0 * math.e ** 2 * p.c1 ** p.d * p.l0 ** (-(p.d - 3) / 2.0)
    if cutoff is None:
        # ensure the zeta expansion converges decently: a_K <= 1/2
        cutoff = max(64, int(math.ceil((2.0 * A) ** (2.0 / 3.0))) + 1)
    log_f = 0.0
    for k in range(cutoff):
        log_f += math.log1p(A * (k + 1) ** -1.5)
    # alternating zeta tail of sum_{k >= cutoff} log1p(a_k)
    a_next = A * (cutoff + 1) ** -1.5
    tail = 0.0
    term_bound = math.inf
    j = 1
    while True:
        term = ((-1) ** (j + 1) / j) * A ** j * float(special.zeta(1.5 * j, cutoff + 1))
        tail += term
        term_bound = abs(term)
        if term_bound < rel_tol * max(abs(log_f + tail), 1e-30) / 10 or j > 200:
            break
        j += 1
    if a_next >= 1.0:
        raise RuntimeError("tail expansion cutoff too small (a_K >= 1)")
    # remaining terms alternate with geometrically decaying magnitude
    tail_bound = term_bound / max(1.0 - a_next, 0.5)
    log_f += tail
    return SprinkleResult(math.exp(log_f), log_f, tail_bound, cutoff)


def lowered_level(u: float, p: ScaleParams) -> float:
    """The sprinkled-down comparison level u / f(l0)."""
    return u / sprinkle_factor(p).value


def epsilon_u(u: float, L0: float, l0: float, d: int) -> float:
    """eps(u) = 2 e^(-x) / (1 - e^(-x)) with x = u L0^(d-2) l0; decreasing in u."""
    x = u * L0 ** (d - 2) * l0
    if not x > 0:
        raise ValueError(f"u L0^(d-2) l0 = {x} must be positive")
    if x > 700.0:
        return 2.0 * math.exp(-x)   # expm1 overflows; the denominator is 1 here
    return 2.0 / math.expm1(x)


@dataclass
class DecouplingReport:
    """One evaluation of the doubling right-hand side at depth n."""

    n: int
    log_base: float              # log of C1 l0^(2 lam) (p0 + eps)
    log_rhs: float               # 2^n * log_base
    eps: float
    u_lowered: float
    dominated_by_exp: bool       # rhs(n) <= e^(-2^n) for all n iff base <= 1/e
    planner_seed_ok: bool        # c C1 l0^6 d^-6 <= 1/(2e)
    planner_eps_ok: bool         # C1 l0^6 eps <= 1/(2e)

    @property
    def rhs(self) -> float:
        try:
            return math.exp(self.log_rhs)
        except OverflowError:
            return math.inf


def decoupling_rhs(p: ScaleParams, p0: float, n: int, u: float) -> DecouplingReport:
    """(C1 l0^(2 lam))^(2^n) (p0 + eps(u/f(l0)))^(2^n), evaluated in log space.

    Also evaluates the two planner inequalities (with lam = 3, so l0^(2 lam)
    = l0^6) that make the right-hand side fall below e^(-2^n) at every depth.
    """
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("seed probability p0 must lie in [0, 1]")
    if n < 0:
        raise ValueError("n must be nonnegative")
    u_low = lowered_level(u, p)
    eps = epsilon_u(u_low, p.L0, p.l0, p.d)
    if p0 + eps > 0.0:
        log_base = (math.log(p.C1) + 2.0 * p.lam * math.log(p.l0)
                    + math.log(p0 + eps))
    else:
        log_base = -math.inf    # eps underflowed and p0 = 0: the bound is 0
    log_rhs = math.ldexp(log_base, n)     # exact doubling: 2^n * log_base
    half_e = 1.0 / (2.0 * math.e)
    return DecouplingReport(
        n=n,
        log_base=log_base,
        log_rhs=log_rhs,
        eps=eps,
        u_lowered=u_low,
        dominated_by_exp=log_base <= -1.0,
        planner_seed_ok=p.c_boundary * p.C1 * p.l0 ** 6 * p.d ** -6 <= half_e,
        planner_eps_ok=p.C1 * p.l0 ** 6 * eps <= half_e,
    )
