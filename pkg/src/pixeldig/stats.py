"""Longitudinal adoption statistics across website cohorts.

Adoption is counted per (cohort, year, feature) over the sites that have at
least one configuration script that year; a site adopts a feature in a year
when at least one of its pixels exhibits it at any point during that year
(feature vectors are OR-merged per site-year before counting). Confidence
intervals use a Student-t margin of error on the proportion; cross-cohort
comparisons use a pooled two-proportion z-test and an arcsine effect size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from scipy.special import betaincinv


class DegenerateTest(Exception):
    """Pooled proportion is 0 or 1; the z statistic is undefined."""


@dataclass(frozen=True)
class SiteYearFeatures:
    """OR-merged feature flags for one site in one year (sites appear only
    for years where a configuration script exists)."""

    domain: str
    cohort: str
    year: int
    features: dict[str, bool] = field(default_factory=dict)


@dataclass
class CohortYearStat:
    cohort: str
    year: int
    feature: str
    n: int
    adopters: int
    p: float
    margin: Optional[float]  # percentage points; None when n < 2
    z: Optional[float] = None
    p_value: Optional[float] = None
    cohens_h: Optional[float] = None
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "cohort": self.cohort,
            "year": self.year,
            "feature": self.feature,
            "n": self.n,
            "adopters": self.adopters,
            "p": self.p,
            "margin": self.margin,
            "z": self.z,
            "p_value": self.p_value,
            "cohens_h": self.cohens_h,
            "flags": list(self.flags),
        }


def student_t_quantile(p: float, df: int) -> float:
    """Student-t quantile via the regularized incomplete beta inverse."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if df < 1:
        raise ValueError("df must be >= 1")
    if p == 0.5:
        return 0.0
    tail = 2.0 * min(p, 1.0 - p)
    z = float(betaincinv(0.5 * df, 0.5, tail))
    t = math.sqrt(df * (1.0 - z) / z)
    return t if p > 0.5 else -t


def margin_of_error(p: float, n: int) -> float:
    """95% t-based margin for a proportion, in percentage points:
    t(0.975, n-1) * sqrt(p(1-p)/n) * 100."""
    if n < 2:
        raise ValueError("margin needs n >= 2")
    return student_t_quantile(0.975, n - 1) * math.sqrt(p * (1.0 - p) / n) * 100.0


def two_proportion_z(p1: float, n1: int, p2: float, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z-test; returns (z, two-sided p-value)."""
    if n1 < 1 or n2 < 1:
        raise ValueError("sample sizes must be >= 1")
    pooled = (p1 * n1 + p2 * n2) / (n1 + n2)
    if pooled <= 0.0 or pooled >= 1.0:
        raise DegenerateTest(f"pooled proportion {pooled} leaves no variance")
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    z = (p1 - p2) / se
    p_value = math.erfc(abs(z) / math.sqrt(2.0))
    return z, p_value


def cohens_h(p1: float, p2: float) -> float:
    """Absolute arcsine-transformed difference between two proportions."""
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        raise ValueError("proportions must be within [0, 1]")
    return abs(2.0 * math.asin(math.sqrt(p1)) - 2.0 * math.asin(math.sqrt(p2)))


def adoption_stats(rows: Iterable[SiteYearFeatures],
                   features: Optional[Iterable[str]] = None) -> list[CohortYearStat]:
    """Per (cohort, year, feature) adoption with margins and cross-cohort
    tests. The denominator for a (cohort, year) cell is the number of sites
    with any configuration data that year (one row per site-year)."""
    rows = list(rows)
    if features is None:
        seen: list[str] = []
        for row in rows:
            for name in row.features:
                if name not in seen:
                    seen.append(name)
        features = seen
    feature_list = list(features)

    cells: dict[tuple[str, int], list[SiteYearFeatures]] = {}
    for row in rows:
        cells.setdefault((row.cohort, row.year), []).append(row)

    stats: dict[tuple[str, int, str], CohortYearStat] = {}
    for (cohort, year), members in cells.items():
        n = len(members)
        for feature in feature_list:
            adopters = sum(1 for m in members if m.features.get(feature, False))
            p = adopters / n if n else 0.0
            flags = []
            margin: Optional[float] = None
            if n >= 2:
                margin = margin_of_error(p, n)
            else:
                flags.append("InsufficientSample")
            stats[(cohort, year, feature)] = CohortYearStat(
                cohort=cohort, year=year, feature=feature,
                n=n, adopters=adopters, p=p, margin=margin, flags=flags)

    cohorts = sorted({c for c, _, _ in stats})
    if len(cohorts) == 2:
        a, b = cohorts
        for (cohort, year, feature), stat in stats.items():
            other = stats.get((b if cohort == a else a, year, feature))
            if other is None:
                continue
            try:
                z, p_value = two_proportion_z(stat.p, stat.n, other.p, other.n)
                stat.z, stat.p_value = z, p_value
            except DegenerateTest:
                stat.flags.append("DegenerateTest")
            stat.cohens_h = cohens_h(stat.p, other.p)

    ordered = sorted(stats.values(), key=lambda s: (s.feature, s.year, s.cohort))
    return ordered


def stable_cohort(rows: Iterable[SiteYearFeatures], min_years: int) -> list[SiteYearFeatures]:
    """Keep only sites whose configuration data spans at least `min_years`
    distinct years."""
    if min_years < 1:
        raise ValueError("min_years must be >= 1")
    rows = list(rows)
    years_per_site: dict[str, set[int]] = {}
    for row in rows:
        years_per_site.setdefault(row.domain, set()).add(row.year)
    keep = {d for d, years in years_per_site.items() if len(years) >= min_years}
    return [row for row in rows if row.domain in keep]


@dataclass
class OverlapCurve:
    """Coverage of sites by the top-k most common keys, k = 1..K."""

    ranked_keys: list[str]
    total_sites: int
    points: list[tuple[int, float, float]]  # (k, k/K, fraction of sites covered)

    def keys_for_coverage(self, fraction: float) -> Optional[int]:
        """Smallest k whose top-k keys cover >= `fraction` of sites."""
        for k, _, coverage in self.points:
            if coverage >= fraction:
                return k
        return None

    def to_json(self) -> dict:
        return {
            "ranked_keys": list(self.ranked_keys),
            "total_sites": self.total_sites,
            "points": [list(pt) for pt in self.points],
        }


def key_overlap_cdf(per_site_keys: dict[str, set[str]]) -> OverlapCurve:
    """Rank keys by how many sites contain them (ties lexicographic) and
    accumulate the fraction of sites holding at least one of the top-k."""
    site_count: dict[str, int] = {}
    for keys in per_site_keys.values():
        for key in keys:
            site_count[key] = site_count.get(key, 0) + 1
    ranked = sorted(site_count, key=lambda k: (-site_count[k], k))
    total = len(per_site_keys)

    points: list[tuple[int, float, float]] = []
    covered: set[str] = set()
    top: set[str] = set()
    for i, key in enumerate(ranked, start=1):
        top.add(key)
        for site, keys in per_site_keys.items():
            if site not in covered and key in keys:
                covered.add(site)
        points.append((i, i / len(ranked), len(covered) / total if total else 0.0))
    return OverlapCurve(ranked_keys=ranked, total_sites=total, points=points)
