"""Independent brute-force implementations used as test oracles.

Plain Python, explicit sorts, no shared code with the package internals.
"""


def brute_force_case(scores, truth, ks):
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    true_set = {i for i in range(n) if truth[i]}
    out = {}
    first = next(rank for rank, i in enumerate(order, start=1) if i in true_set)
    out["MRR"] = 1.0 / first
    for k in ks:
        top = order[:k]
        hits_in_top = [i for i in top if i in true_set]
        out[f"HR@{k}"] = 1.0 if hits_in_top else 0.0
        out[f"PR@{k}"] = len(hits_in_top) / min(k, len(true_set))
        precisions = []
        seen = 0
        for rank, i in enumerate(top, start=1):
            if i in true_set:
                seen += 1
                precisions.append(seen / rank)
        out[f"MAP@{k}"] = sum(precisions) / len(precisions) if precisions else 0.0
    return out


def brute_force_metrics(cases, ks=(1, 3, 5)):
    usable = [c for c in cases if any(c.truth)]
    keys = ["MRR"] + [f"{m}@{k}" for k in ks for m in ("HR", "PR", "MAP")]
    totals = {k: 0.0 for k in keys}
    for c in usable:
        for key, v in brute_force_case(list(c.scores), list(c.truth), ks).items():
            totals[key] += v
    return {k: 100.0 * totals[k] / len(usable) for k in keys}
