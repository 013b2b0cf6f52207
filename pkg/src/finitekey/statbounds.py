"""Exact tail statistics for counting experiments.

Binomial and Hypergeometric pmfs evaluated in log space (stable up to
~10^12 trials), the Ahrens parameter permutation under which a sqrt(2)-scaled
Binomial pointwise dominates the Hypergeometric, Clopper-Pearson confidence
intervals obtained by bracketed bisection on the regularized cumulative, and
a selector that keeps the loosest of the plain and permuted-Binomial bounds.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from scipy.special import betainc, gammaln

SQRT2 = math.sqrt(2.0)

_BISECT_MAX_ITER = 200


@dataclass(frozen=True)
class BinomialParams:
    """Binomial distribution: `trials` draws with success probability `success_prob`."""

    trials: int
    success_prob: float

    def __post_init__(self):
        if self.trials < 0:
            raise ValueError(f"trials must be >= 0, got {self.trials}")
        if not 0.0 <= self.success_prob <= 1.0:
            raise ValueError(f"success_prob must be in [0, 1], got {self.success_prob}")


@dataclass(frozen=True)
class HypergeomParams:
    """Hypergeometric distribution: `draws` without replacement from a
    `population` containing `successes` marked elements."""

    population: int
    draws: int
    successes: int

    def __post_init__(self):
        if not 0 <= self.draws <= self.population:
            raise ValueError(f"need 0 <= draws <= population, got {self}")
        if not 0 <= self.successes <= self.population:
            raise ValueError(f"need 0 <= successes <= population, got {self}")

    def support(self) -> range:
        lo = max(0, self.draws - self.population + self.successes)
        hi = min(self.draws, self.successes)
        return range(lo, hi + 1)


@dataclass(frozen=True)
class AhrensImage:
    """Permuted parameters (and the induced affine outcome map) of a
    Hypergeometric distribution.

    The outcome map sends an original outcome k to
    ``offset + sign * k`` and is a bijection from the original support onto
    the permuted one, so the permuted pmf evaluated at the image equals the
    original pmf exactly.
    """

    permuted_draws: int
    permuted_successes: int
    offset: int
    sign: int
    outcome_map: str  # one of "k", "K-k", "n-k", "composed"

    def map_outcome(self, k: int) -> int:
        return self.offset + self.sign * k


@dataclass(frozen=True)
class ConfidenceBound:
    """Two-sided exact confidence bound on a success probability."""

    lower: float
    upper: float
    epsilon_each_side: float
    distribution_used: str  # "binomial" | "permuted_binomial"

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"lower {self.lower} exceeds upper {self.upper}")


@dataclass(frozen=True)
class WorstCaseBound:
    """Loosest-per-side combination of the plain and permuted-Binomial
    Clopper-Pearson candidates."""

    lower: float
    upper: float
    epsilon_each_side: float
    lower_source: str
    upper_source: str


def _binom_logpmf(n: int, p: float, k: int) -> float:
    """log BI(n, p, k); -inf outside [0, n]. No argument validation."""
    if k < 0 or k > n:
        return -math.inf
    if p <= 0.0:
        return 0.0 if k == 0 else -math.inf
    if p >= 1.0:
        return 0.0 if k == n else -math.inf
    return (
        gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(n - k + 1)
        + k * math.log(p)
        + (n - k) * math.log1p(-p)
    )


def binomial_pmf(params: BinomialParams, k: int) -> float:
    """Probability of exactly k successes in a Binomial experiment.

    Evaluated through log-gamma so that trial counts up to ~10^12 neither
    overflow nor lose the leading digits.
    """
    if k < 0 or k > params.trials:
        raise ValueError(f"k={k} outside support [0, {params.trials}]")
    return math.exp(_binom_logpmf(params.trials, params.success_prob, k))


def _hypergeom_logpmf(N: int, n: int, K: int, k: int) -> float:
    if k < max(0, n - N + K) or k > min(n, K):
        return -math.inf
    return (
        gammaln(K + 1)
        - gammaln(k + 1)
        - gammaln(K - k + 1)
        + gammaln(N - K + 1)
        - gammaln(n - k + 1)
        - gammaln(N - K - n + k + 1)
        - gammaln(N + 1)
        + gammaln(n + 1)
        + gammaln(N - n + 1)
    )


def hypergeom_pmf(params: HypergeomParams, k: int) -> float:
    """Probability of exactly k successes when drawing without replacement.

    Returns 0 outside the support.
    """
    return math.exp(
        _hypergeom_logpmf(params.population, params.draws, params.successes, k)
    )


def hypergeom_logpmf(params: HypergeomParams, k: int) -> float:
    """Log of :func:`hypergeom_pmf` (-inf outside the support)."""
    return _hypergeom_logpmf(params.population, params.draws, params.successes, k)


def ahrens_map(params: HypergeomParams) -> AhrensImage:
    """Permute Hypergeometric parameters per the Ahrens selection rules.

    The permuted draw count is ``min(n, K, N-n, N-K)``; the permuted success
    count follows from which of the four quantities attained the minimum. The
    outcome map is found by composing the three elementary Hypergeometric
    symmetries (swap draws/successes, complement draws, complement successes)
    until the permuted parameter pair is reached, so the identity
    ``HG(N, n, K, k) == HG(N, n~, K~, k~)`` holds exactly.
    """
    N, n, K = params.population, params.draws, params.successes
    n_perm = min(n, K, N - n, N - K)
    if n_perm == n or n_perm == N - n:
        k_perm = min(K, N - K)
    else:
        k_perm = min(n, N - n)

    # BFS over the symmetry group, tracking the affine map k -> offset+sign*k.
    start = (n, K, 0, 1)
    seen = {start}
    queue = deque([start])
    found = None
    while queue:
        draws, succ, off, sgn = queue.popleft()
        if draws == n_perm and succ == k_perm:
            found = (off, sgn)
            break
        nexts = (
            (succ, draws, off, sgn),                    # swap draws/successes
            (N - draws, succ, succ - off, -sgn),        # complement draws
            (draws, N - succ, draws - off, -sgn),       # complement successes
        )
        for state in nexts:
            if state not in seen:
                seen.add(state)
                queue.append(state)
    if found is None:  # group always reaches the target; guard anyway
        raise RuntimeError(f"Ahrens permutation unreachable for {params}")
    offset, sign = found

    if (offset, sign) == (0, 1):
        label = "k"
    elif (offset, sign) == (K, -1):
        label = "K-k"
    elif (offset, sign) == (n, -1):
        label = "n-k"
    else:
        label = "composed"
    return AhrensImage(n_perm, k_perm, offset, sign, label)


def ahrens_upper_bound(params: HypergeomParams, k: int) -> float:
    """sqrt(2) * BI(n~, K~/N, k~), a pointwise upper bound on the
    Hypergeometric pmf at k."""
    img = ahrens_map(params)
    N = params.population
    p_perm = img.permuted_successes / N if N > 0 else 0.0
    k_perm = img.map_outcome(k)
    return SQRT2 * math.exp(_binom_logpmf(img.permuted_draws, p_perm, k_perm))


def binomial_cdf(n: int, p: float, k: int) -> float:
    """P(X <= k) for X ~ BI(n, p), via the regularized incomplete beta."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0
    return float(betainc(n - k, k + 1, 1.0 - p))


def binomial_sf(n: int, p: float, k: int) -> float:
    """P(X >= k) for X ~ BI(n, p)."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    return float(betainc(k, n - k + 1, p))


def _bisect(f, lo: float, hi: float, target: float, increasing: bool) -> float:
    """Bracketed bisection for f(p) = target on [lo, hi].

    Runs until the floating-point bracket is exhausted (midpoint equals an
    endpoint) or the iteration cap is reached, which drives the residual to
    the derivative times one ulp.
    """
    for _ in range(_BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        val = f(mid)
        if (val < target) == increasing:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cp_interval(n: int, k: int, epsilon: float) -> ConfidenceBound:
    """Exact Clopper-Pearson interval: the lower bound solves
    P(X >= k) = epsilon and the upper solves P(X <= k) = epsilon in the
    success probability of BI(n, .).

    Each side holds with confidence 1 - epsilon, so the two-sided interval
    holds with confidence >= 1 - 2*epsilon.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError(f"epsilon must be in (0, 0.5), got {epsilon}")
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")

    if k == 0:
        lower = 0.0
    else:
        # P(X >= k) increases from 0 to 1 as p goes 0 -> 1
        lower = _bisect(lambda p: binomial_sf(n, p, k), 0.0, 1.0, epsilon, True)
    if k == n:
        upper = 1.0
    else:
        # P(X <= k) decreases from 1 to 0 as p goes 0 -> 1
        upper = _bisect(lambda p: binomial_cdf(n, p, k), 0.0, 1.0, epsilon, False)
    return ConfidenceBound(lower, upper, epsilon, "binomial")


def worst_case_bounds(
    N_total: int, n: int, k: int, epsilon: float
) -> WorstCaseBound:
    """Loosest Clopper-Pearson bounds over the two sampling models.

    Candidate (a) treats the k successes in n trials as Binomial sampling and
    solves the CP equations at `epsilon` per side. Candidate (b) treats them
    as a without-replacement draw from N_total elements of which
    round(N_total*k/n) are successes, maps that Hypergeometric to its
    permuted Binomial, and solves the CP equations at epsilon/sqrt(2); the
    resulting bounds on the permuted success fraction are mapped back to the
    original rate through the affine outcome correspondence (which reverses
    orientation when the outcome map does). The returned pair keeps the
    smaller lower and the larger upper bound, ties going to the plain
    Binomial.
    """
    if n > N_total:
        raise ValueError(f"draws n={n} exceed population N_total={N_total}")
    plain = cp_interval(n, k, epsilon)

    if n == 0:
        hg_lower, hg_upper = 0.0, 1.0
    else:
        successes = round(N_total * k / n)
        # keep the observed k inside the empirical Hypergeometric support
        successes = min(max(successes, k), N_total - (n - k))
        img = ahrens_map(HypergeomParams(N_total, n, successes))
        if img.permuted_draws == 0:
            # degenerate draw (exhaustive sample or empty rate): point interval
            hg_lower = hg_upper = k / n
        else:
            k_perm = min(max(img.map_outcome(k), 0), img.permuted_draws)
            perm = cp_interval(img.permuted_draws, k_perm, epsilon / SQRT2)

            def back(q: float) -> float:
                r = (q * img.permuted_draws - img.offset) / (img.sign * n)
                return min(max(r, 0.0), 1.0)

            a, b = back(perm.lower), back(perm.upper)
            hg_lower, hg_upper = min(a, b), max(a, b)

    if plain.lower <= hg_lower:
        lower, lower_source = plain.lower, "binomial"
    else:
        lower, lower_source = hg_lower, "permuted_binomial"
    if plain.upper >= hg_upper:
        upper, upper_source = plain.upper, "binomial"
    else:
        upper, upper_source = hg_upper, "permuted_binomial"
    return WorstCaseBound(lower, upper, epsilon, lower_source, upper_source)
