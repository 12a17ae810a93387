"""Pure-Python twin of the compiled ring kernel."""
from bisect import bisect_left


def successor_indices(points, keys):
    n = len(points)
    if n == 0:
        raise ValueError("empty ring")
    out = []
    for key in keys:
        i = bisect_left(points, key)
        out.append(0 if i == n else i)
    return out


def group_histogram(point_groups, indices, k):
    counts = [0] * k
    for i in indices:
        counts[point_groups[i]] += 1
    return counts
