"""Evaluation statistics: pass@k family, rater agreement, log-prob pooling.

pass@k and its all-k-succeed counterpart are computed exactly from the
hypergeometric draw-without-replacement form; the biased (c/n)^k plug-in is
available behind a flag for comparison, never as the default.
"""

from __future__ import annotations

from collections import Counter
from typing import Callable, Iterable, Sequence

from .traces import Trace


def _check_counts(n: int, c: int, k: int) -> None:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 <= c <= n:
        raise ValueError(f"c must be in [0, n]; got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, n]; got k={k}, n={n}")


def pass_at_k(n: int, c: int, k: int) -> float:
    """P(at least one success among k trials drawn from n with c successes)."""
    _check_counts(n, c, k)
    if n - c < k:
        return 1.0
    miss = 1.0
    for i in range(k):
        miss *= (n - c - i) / (n - i)
    return 1.0 - miss


def pass_hat_k(n: int, c: int, k: int, *, plugin: bool = False) -> float:
    """P(all k trials drawn from n succeed); ``plugin`` uses (c/n)^k instead."""
    _check_counts(n, c, k)
    if plugin:
        return (c / n) ** k
    if c < k:
        return 0.0
    prob = 1.0
    for i in range(k):
        prob *= (c - i) / (n - i)
    return prob


# --- rater agreement --------------------------------------------------------


def _paired(a: Sequence, b: Sequence) -> int:
    if len(a) != len(b):
        raise ValueError(f"rating lists differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("rating lists are empty")
    return len(a)


def percent_agreement(a: Sequence, b: Sequence) -> float:
    """Fraction of items the two raters labeled identically."""
    n = _paired(a, b)
    return sum(1 for x, y in zip(a, b) if x == y) / n


def cohen_kappa(a: Sequence, b: Sequence) -> float:
    """Chance-corrected agreement for binary labels.

    Expected agreement uses each rater's own marginals. When chance
    agreement is total (both raters constant and identical) the statistic is
    undefined and NaN is returned.
    """
    n = _paired(a, b)
    classes = sorted(set(a) | set(b), key=repr)
    if len(classes) > 2:
        raise ValueError(f"kappa is defined for binary labels; saw {classes}")
    observed = percent_agreement(a, b)
    count_a, count_b = Counter(a), Counter(b)
    expected = sum(
        (count_a.get(cls, 0) / n) * (count_b.get(cls, 0) / n) for cls in classes
    )
    if expected == 1.0:
        return float("nan")
    return (observed - expected) / (1.0 - expected)


def pabak(a: Sequence, b: Sequence) -> float:
    """Prevalence- and bias-adjusted kappa: 2 * observed agreement - 1."""
    return 2.0 * percent_agreement(a, b) - 1.0


# --- token log-prob pooling -------------------------------------------------


def mean_logprob(
    traces: Iterable[Trace],
    group_key: str | Callable[[Trace], object] = "model",
) -> dict:
    """Mean top-1 token log-prob over assistant messages, pooled per group.

    Tokens whose log-prob is exactly 0.0 AND which are flagged special are
    scaffold artifacts and excluded. Groups contributing no tokens are left
    out of the result entirely rather than reported as 0 or NaN.
    """
    return {key: mean for key, (mean, _) in logprob_summary(traces, group_key).items()}


def logprob_summary(
    traces: Iterable[Trace],
    group_key: str | Callable[[Trace], object] = "model",
) -> dict:
    """Like mean_logprob but each group maps to (mean, retained token count)."""
    if callable(group_key):
        key_of = group_key
    else:
        key_of = lambda trace: getattr(trace, group_key)  # noqa: E731
    sums: dict = {}
    counts: dict = {}
    for trace in traces:
        key = key_of(trace)
        for message in trace.messages:
            if message.role != "assistant":
                continue
            for token in message.token_logprobs:
                if token.logprob == 0.0 and token.is_special:
                    continue
                sums[key] = sums.get(key, 0.0) + token.logprob
                counts[key] = counts.get(key, 0) + 1
    return {key: (sums[key] / counts[key], counts[key]) for key in sums}
