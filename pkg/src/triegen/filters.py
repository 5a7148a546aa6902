"""Confidence filter over generated queries: mean and minimum probability gates.

Two scores per query, computed from the per-token probabilities recorded
at decode time: the global score is their arithmetic mean (whole-query
confidence), the local score their minimum (weakest single token). A query
survives when both scores strictly exceed their thresholds; the local gate
is applied to the global gate's survivors, never on its own.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

from .decode import ScoredQuery


@dataclass(frozen=True)
class FilterConfig:
    theta_g: float = 0.2
    theta_l: float = 0.05
    # The stop probability is not part of the per-token scores by default;
    # the mean divides by the query's token count.
    include_eos: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta_g <= 1.0:
            raise ValueError("theta_g must be in [0, 1]")
        if not 0.0 <= self.theta_l <= 1.0:
            raise ValueError("theta_l must be in [0, 1]")


@dataclass(frozen=True)
class FilterReport:
    query: ScoredQuery
    f_g: float
    f_l: float
    passed_global: bool
    passed_local: bool

    @property
    def verdict(self) -> str:
        if self.passed_local:
            return "pass"
        return "fail_local" if self.passed_global else "fail_global"


def _effective_probs(query: ScoredQuery, include_eos: bool) -> tuple[float, ...]:
    probs = query.token_probs
    if include_eos and query.eos_prob is not None:
        probs = probs + (query.eos_prob,)
    if not probs:
        raise ValueError("query has no token probabilities")
    return probs


def global_score(query: ScoredQuery, include_eos: bool = False) -> float:
    """Arithmetic mean of the recorded token probabilities."""
    probs = _effective_probs(query, include_eos)
    return sum(probs) / len(probs)


def local_score(query: ScoredQuery, include_eos: bool = False) -> float:
    """Minimum recorded token probability."""
    return min(_effective_probs(query, include_eos))


def apply_filter(
    queries: Sequence[ScoredQuery],
    cfg: FilterConfig | None = None,
) -> tuple[list[ScoredQuery], list[FilterReport]]:
    """Two-stage gate with strict thresholds; input order is preserved.

    Every input gets a report; survivors are those with mean probability
    above ``theta_g`` and minimum probability above ``theta_l``.
    """
    if cfg is None:
        cfg = FilterConfig()
    survivors: list[ScoredQuery] = []
    reports: list[FilterReport] = []
    for query in queries:
        f_g = global_score(query, cfg.include_eos)
        f_l = local_score(query, cfg.include_eos)
        passed_global = f_g > cfg.theta_g
        passed_local = passed_global and f_l > cfg.theta_l
        reports.append(FilterReport(query, f_g, f_l, passed_global, passed_local))
        if passed_local:
            survivors.append(query)
    return survivors, reports
