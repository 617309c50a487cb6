"""Random well-formed span trees for trace-accounting tests."""

import random

from craci.observability import SpanKind, TraceSpan


def random_tree(rng: random.Random, trace_id: str, max_depth: int = 4):
    """Return (spans in parent-first order, expected processing, expected communication)."""
    spans = []
    ids = iter(range(10**6))
    totals = {SpanKind.PROCESSING: 0, SpanKind.COMMUNICATION: 0}

    def grow(parent_id, start, end, depth):
        span_id = f"s{next(ids)}"
        kind = rng.choice(list(SpanKind))
        spans.append(TraceSpan(trace_id, span_id, parent_id, kind, start, end))
        n = 0 if depth >= max_depth or end - start < 2 else rng.randint(0, 3)
        if n == 0:
            totals[kind] += end - start
            return
        cuts = sorted(rng.sample(range(start, end + 1), min(2 * n, end - start + 1)))
        pairs = [(cuts[i], cuts[i + 1]) for i in range(0, len(cuts) - 1, 2)]
        if not pairs:
            totals[kind] += end - start
            return
        for a, b in pairs:
            grow(span_id, a, b, depth + 1)

    start = rng.randint(0, 1000)
    grow(None, start, start + rng.randint(0, 200), 0)
    return spans, totals[SpanKind.PROCESSING], totals[SpanKind.COMMUNICATION]
