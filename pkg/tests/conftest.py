"""Shared oracles and helpers for the test suite.

The transport oracle enumerates every integer coupling of the scaled
problem (each row ships n2 units, each column receives n1 units) by
dynamic programming over remaining column demands.  The transportation
constraint matrix is totally unimodular, so with integer marginals every
vertex of the coupling polytope is integral; minimising over all integer
couplings therefore recovers the exact LP optimum.
"""

from itertools import permutations

import numpy as np
import pytest


def ot_enumeration_value(cost):
    """Exact optimum by exhaustive enumeration (n1, n2 <= 5)."""
    cost = np.asarray(cost, dtype=np.float64)
    n1, n2 = cost.shape
    assert n1 <= 5 and n2 <= 5, "enumeration oracle is for tiny instances"
    states = {(n1,) * n2: 0.0}
    for i in range(n1):
        row = cost[i]
        nxt = {}

        def distribute(j, left, caps, acc):
            if j == n2 - 1:
                if left <= caps[j]:
                    new_caps = caps[:j] + (caps[j] - left,)
                    val = acc + left * row[j]
                    prev = nxt.get(new_caps)
                    if prev is None or val < prev:
                        nxt[new_caps] = val
                return
            tail_room = sum(caps[j + 1:])
            lo = max(0, left - tail_room)
            hi = min(left, caps[j])
            for units in range(lo, hi + 1):
                distribute(j + 1, left - units,
                           caps[:j] + (caps[j] - units,) + caps[j + 1:],
                           acc + units * row[j])

        for caps, base in states.items():
            distribute(0, n2, caps, base)
        states = nxt
    return states[(0,) * n2] / (n1 * n2)


def matching_value(cost):
    """Min-weight perfect matching / n for equal-size uniform marginals."""
    n = cost.shape[0]
    assert cost.shape == (n, n) and n <= 6
    best = np.inf
    for perm in permutations(range(n)):
        best = min(best, sum(cost[i, p] for i, p in enumerate(perm)))
    return best / n


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
