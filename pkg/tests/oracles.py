"""Independent reference implementations used by multiple test modules."""

import itertools


def brute_force_recommend(values, location_ids, acceptable, z):
    """Enumerate every ordering of the output length and pick the best.

    A prefix is a valid recommendation iff its values are non-increasing
    and no acceptable location outside it beats its minimum; among valid
    prefixes take the value-lexicographically greatest, breaking exact
    ties toward the smaller id sequence (the deterministic mode's rule).
    """
    val = {int(l): float(v) for l, v in zip(location_ids, values)}
    members = sorted(int(l) for l in acceptable)
    zp = min(z, len(members))
    best = None
    for prefix in itertools.permutations(members, zp):
        vals = tuple(val[l] for l in prefix)
        if any(vals[i] < vals[i + 1] for i in range(len(vals) - 1)):
            continue
        rest = [val[l] for l in members if l not in prefix]
        if rest and vals and max(rest) > min(vals):
            continue
        key = (vals, tuple(-l for l in prefix))
        if best is None or key > best[0]:
            best = (key, prefix, vals)
    return best[1], best[2]


def brute_force_landing_rank(values, location_ids, actual):
    """Competition rank by direct strict-greater counting."""
    val = {int(l): float(v) for l, v in zip(location_ids, values)}
    return 1 + sum(1 for l in location_ids if val[int(l)] > val[int(actual)])
