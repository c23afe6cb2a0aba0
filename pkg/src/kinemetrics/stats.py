"""Group comparison: participant aggregation, one-way ANOVA and Tukey-Kramer.

Repeated trials are collapsed to one mean per participant before the
fixed-effects ANOVA, so each participant contributes one observation.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc, gammaln, ndtr

from .errors import DegenerateVariance, TooFewGroups, TooFewObservations

GROUP_ORDER = ("Student", "Junior", "Senior", "Expert")
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class GroupSample:
    group: str
    participant: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class AnovaTable:
    ss_between: float
    ss_within: float
    ss_total: float
    df_between: int
    df_within: int
    ms_between: float
    ms_within: float
    F: float
    p: float
    groups: tuple[str, ...]
    means: tuple[float, ...]
    sizes: tuple[int, ...]


@dataclass(frozen=True)
class TukeyComparison:
    group_a: str
    group_b: str
    mean_diff: float
    ci_low: float
    ci_high: float
    q_stat: float
    p_adj: float

    @property
    def pair(self) -> tuple[str, str]:
        return self.group_a, self.group_b


def aggregate_participants(samples: Iterable[GroupSample]) -> list[GroupSample]:
    """One mean value per participant, in first-seen order."""
    pooled: OrderedDict[tuple[str, str], list[float]] = OrderedDict()
    for s in samples:
        pooled.setdefault((s.group, s.participant), []).extend(s.values)
    out = []
    for (group, participant), vals in pooled.items():
        if not vals:
            continue
        out.append(GroupSample(group, participant, (math.fsum(vals) / len(vals),)))
    return out


def _ordered_groups(groups) -> "OrderedDict[str, np.ndarray]":
    if isinstance(groups, Mapping):
        items = [(str(k), list(v)) for k, v in groups.items()]
    else:
        pooled: OrderedDict[str, list[float]] = OrderedDict()
        for s in groups:
            pooled.setdefault(s.group, []).extend(s.values)
        items = list(pooled.items())
    rank = {g: i for i, g in enumerate(GROUP_ORDER)}
    items.sort(key=lambda kv: rank.get(kv[0], len(rank)))
    return OrderedDict((k, np.asarray(v, dtype=float)) for k, v in items if len(v))


def one_way_anova(groups: Mapping[str, Sequence[float]] | Sequence[GroupSample]) -> AnovaTable:
    g = _ordered_groups(groups)
    if len(g) < 2:
        raise TooFewGroups(f"ANOVA needs at least 2 groups, got {len(g)}")
    small = [k for k, v in g.items() if len(v) < 2]
    if small:
        raise TooFewObservations(f"groups with fewer than 2 observations: {small}")

    values = np.concatenate(list(g.values()))
    n = len(values)
    k = len(g)
    grand = math.fsum(values) / n
    means = [math.fsum(v) / len(v) for v in g.values()]
    ss_between = math.fsum(len(v) * (m - grand) ** 2 for v, m in zip(g.values(), means))
    ss_within = math.fsum(math.fsum((v - m) ** 2) for v, m in zip(g.values(), means))
    ss_total = math.fsum((values - grand) ** 2)
    df_b, df_w = k - 1, n - k
    ms_b, ms_w = ss_between / df_b, ss_within / df_w

    if ms_w == 0:
        if ss_between == 0:
            F, p = 0.0, 1.0
        else:
            table = AnovaTable(
                ss_between, ss_within, ss_total, df_b, df_w, ms_b, ms_w, math.inf, 0.0,
                tuple(g), tuple(means), tuple(len(v) for v in g.values()),
            )
            raise DegenerateVariance("zero within-group variance with differing group means", table)
    else:
        F = ms_b / ms_w
        p = f_sf(F, df_b, df_w)
    return AnovaTable(
        ss_between, ss_within, ss_total, df_b, df_w, ms_b, ms_w, F, p,
        tuple(g), tuple(means), tuple(len(v) for v in g.values()),
    )


def f_sf(F: float, d1: float, d2: float) -> float:
    """Upper tail of the F distribution through the regularised incomplete beta."""
    if F <= 0:
        return 1.0
    return float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * F)))


# ---------------------------------------------------------------------------
# studentized range distribution

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
# composite rule for the inner normal integral: unit panels over [-8.5, 8.5]
_Z_X, _Z_W = np.polynomial.legendre.leggauss(16)
_Z_EDGES = np.arange(-8.5, 8.5 + 1e-9, 1.0)
_Z_NODES = (0.5 * (_Z_EDGES[:-1, None] + _Z_EDGES[1:, None]) + 0.5 * _Z_X[None, :]).ravel()
_Z_WEIGHTS = np.tile(0.5 * _Z_W, len(_Z_EDGES) - 1)
_PHI = np.exp(-0.5 * _Z_NODES**2) / math.sqrt(2.0 * math.pi)
_CDF_Z = ndtr(_Z_NODES)


def range_cdf(w, k: int) -> np.ndarray:
    """P(range of k standard normals <= w) = k ∫ φ(z)[Φ(z) − Φ(z − w)]^(k−1) dz."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    diff = _CDF_Z[None, :] - ndtr(_Z_NODES[None, :] - w[:, None])
    vals = k * (_PHI * np.clip(diff, 0.0, 1.0) ** (k - 1)) @ _Z_WEIGHTS
    return np.where(w <= 0, 0.0, np.clip(vals, 0.0, 1.0))


def _log_scale_density(s: np.ndarray, df: float) -> np.ndarray:
    """Log density of sqrt(chi2_df / df)."""
    with np.errstate(divide="ignore"):
        return (
            (df / 2.0) * math.log(df)
            - gammaln(df / 2.0)
            - (df / 2.0 - 1.0) * math.log(2.0)
            + (df - 1.0) * np.log(s)
            - df * s * s / 2.0
        )


def _gl_panel(f, a: float, b: float) -> float:
    x = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
    return 0.5 * (b - a) * float(np.dot(_GL_W, f(x)))


def _adaptive(f, a: float, b: float, tol: float, whole: float | None = None, depth: int = 0) -> float:
    """Adaptive bisection of fixed 20-point Gauss-Legendre panels."""
    if whole is None:
        whole = _gl_panel(f, a, b)
    m = 0.5 * (a + b)
    left, right = _gl_panel(f, a, m), _gl_panel(f, m, b)
    if abs(left + right - whole) <= tol or depth >= 40:
        return left + right
    return _adaptive(f, a, m, tol / 2, left, depth + 1) + _adaptive(f, m, b, tol / 2, right, depth + 1)


def studentized_range_cdf(q: float, k: int, df: float, tol: float = 1e-10) -> float:
    """P(Q <= q) for the studentized range of k means with df error degrees of freedom."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if df <= 0:
        raise ValueError("df must be positive")
    if q <= 0:
        return 0.0
    if math.isinf(df):
        return float(range_cdf(q, k)[0])

    def integrand(s):
        return np.exp(_log_scale_density(s, df)) * range_cdf(q * s, k)

    sd = min(1.0, 1.0 / math.sqrt(2.0 * df))
    mode = math.sqrt(max(df - 1.0, 0.0) / df)
    lo = max(0.0, mode - 15.0 * sd)
    hi = mode + 15.0 * sd
    cuts = sorted({lo, hi, *(c for c in (mode - 3 * sd, mode, mode + 3 * sd) if lo < c < hi)})
    total = math.fsum(_adaptive(integrand, a, b, tol) for a, b in zip(cuts[:-1], cuts[1:]))
    return min(max(total, 0.0), 1.0)


@lru_cache(maxsize=256)
def studentized_range_ppf(p: float, k: int, df: float) -> float:
    """Critical value q with P(Q <= q) = p."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    hi = 10.0
    while studentized_range_cdf(hi, k, df) < p:
        hi *= 2.0
    return brentq(lambda q: studentized_range_cdf(q, k, df) - p, 1e-9, hi, xtol=1e-12, rtol=1e-14)


def tukey_hsd(
    groups: Mapping[str, Sequence[float]] | Sequence[GroupSample],
    anova: AnovaTable | None = None,
    alpha: float = DEFAULT_ALPHA,
) -> list[TukeyComparison]:
    """All pairwise Tukey-Kramer contrasts; ``mean_diff`` is mean(a) − mean(b)."""
    if anova is None:
        anova = one_way_anova(groups)
    if anova.ms_within == 0:
        if anova.ss_between != 0:
            raise DegenerateVariance("zero within-group variance", anova)
    k = len(anova.groups)
    q_crit = studentized_range_ppf(1.0 - alpha, k, anova.df_within)
    out = []
    for i, j in combinations(range(k), 2):
        diff = anova.means[i] - anova.means[j]
        se = math.sqrt(anova.ms_within / 2.0 * (1.0 / anova.sizes[i] + 1.0 / anova.sizes[j]))
        if se == 0:
            q, p = 0.0, 1.0
        else:
            q = abs(diff) / se
            p = 1.0 - studentized_range_cdf(q, k, anova.df_within)
        p = min(max(p, 0.0), 1.0)
        out.append(
            TukeyComparison(anova.groups[i], anova.groups[j], diff, diff - q_crit * se, diff + q_crit * se, q, p)
        )
    return out
