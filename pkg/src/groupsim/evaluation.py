"""HR@K and NDCG@K for single-positive (leave-one-out) evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

DEFAULT_KS = (5, 10)


def _rank(ranked: Sequence[str], positive: str) -> int:
    try:
        return list(ranked).index(positive) + 1
    except ValueError:
        raise ValueError(f"positive item {positive} missing from ranking") from None


def hit_rate_at_k(ranked: Sequence[str], positive: str, k: int) -> int:
    return int(_rank(ranked, positive) <= k)


def ndcg_at_k(ranked: Sequence[str], positive: str, k: int) -> float:
    r = _rank(ranked, positive)
    return 1.0 / math.log2(r + 1) if r <= k else 0.0


@dataclass
class MetricReport:
    label: str
    per_k: dict[int, dict[str, float]]
    n_groups: int
    n_errors: int = 0
    fingerprint: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "n_groups": self.n_groups,
            "n_errors": self.n_errors,
            "fingerprint": self.fingerprint,
            "metrics": {str(k): v for k, v in sorted(self.per_k.items())},
            **self.extra,
        }


def evaluate(
    rankings: Mapping[str, Sequence[str]],
    positives: Mapping[str, str],
    ks: Iterable[int] = DEFAULT_KS,
    label: str = "",
    n_errors: int = 0,
    fingerprint: str | None = None,
) -> MetricReport:
    """Average metrics over groups in ``rankings`` (group -> ranked candidates)."""
    ks = sorted(set(ks))
    missing = [g for g in rankings if g not in positives]
    if missing:
        raise KeyError(f"no test case for groups {missing[:5]}")
    if not rankings:
        raise ValueError("no evaluable groups")
    sums = {k: [0.0, 0.0] for k in ks}
    # sorted so float sums do not depend on group order
    for g in sorted(rankings):
        ranked, pos = rankings[g], positives[g]
        for k in ks:
            sums[k][0] += hit_rate_at_k(ranked, pos, k)
            sums[k][1] += ndcg_at_k(ranked, pos, k)
    n = len(rankings)
    per_k = {k: {"hr": s[0] / n, "ndcg": s[1] / n} for k, s in sums.items()}
    return MetricReport(label, per_k, n, n_errors, fingerprint)


def render_table(reports: Sequence[MetricReport], precision: int = 4) -> str:
    """Metric rows by report columns, e.g. HR@5 / HR@10 / NDCG@5 / NDCG@10."""
    ks = sorted({k for r in reports for k in r.per_k})
    rows = [(f"HR@{k}", "hr", k) for k in ks] + [(f"NDCG@{k}", "ndcg", k) for k in ks]
    headers = ["Metric"] + [r.label or f"run{n}" for n, r in enumerate(reports, start=1)]
    body = []
    for name, key, k in rows:
        cells = [name]
        for r in reports:
            value = r.per_k.get(k, {}).get(key)
            cells.append("-" if value is None else f"{value:.{precision}f}")
        body.append(cells)
    body.append(["#groups"] + [str(r.n_groups) for r in reports])
    widths = [max(len(row[c]) for row in [headers] + body) for c in range(len(headers))]

    def fmt(row: list[str]) -> str:
        return " | ".join(cell.ljust(w) if c == 0 else cell.rjust(w) for c, (cell, w) in enumerate(zip(row, widths)))

    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(headers), rule] + [fmt(row) for row in body]) + "\n"


def evaluate_results(results, split, ks: Iterable[int] = DEFAULT_KS, label: str = "", n_errors: int = 0,
                     fingerprint: str | None = None) -> MetricReport:
    """``evaluate`` over GroupRecommendation objects and an EvaluationSplit."""
    positives = {c.group: c.positive for c in split.test_cases}
    rankings = {r.group_id: r.ranked_items for r in results}
    return evaluate(rankings, positives, ks, label, n_errors, fingerprint)
