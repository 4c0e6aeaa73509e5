#!/usr/bin/env python3
"""Arbitrary-precision reference values for the posterior variance and the
generalization-bound rate term. Output is pasted into
crates/core/tests/data/bound_oracle.txt and checked to 12 significant digits.
"""
from mpmath import mp, mpf, log

mp.dps = 50


def posterior_variance(S, m, d, D, B, L):
    S, m, d, D, B = map(mpf, (S, m, d, D, B))
    bd = B * D
    brace = (d + 1 + 1 / (bd - 1)) ** 2 + 1 / (bd**2 - 1) + 2 / (bd - 1) ** 2
    return S / (16 * m * d**2) / log(3 * D) * (2 * bd) ** (-2 * L) / brace


def epsilon_bound(S, L, D, B, d, m):
    S, L, D, B, d, m = map(mpf, (S, L, D, B, d, m))
    return (
        S * L / m * log(2 * B * D)
        + 3 * S / m * log(L * D)
        + S * B**2 / (2 * m)
        + 2 * S / m * log(4 * d * max(m / S, 1))
    )


VARIANCE_GRID = [
    (100, 1000, 784, 128, 2, 2),
    (1, 1, 1, 2, 2, 1),
    (20, 50, 4, 10, 2, 1),
    (20, 1000, 4, 10, 2, 2),
    (64, 300, 8, 8, 3, 1),
    (500, 10000, 16, 32, 2, 3),
    (1000, 123456, 50, 64, 2, 8),
    (40140, 3000, 784, 64, 2, 1),
    (7, 11, 3, 5, 2.5, 2),
    (12345, 678910, 100, 200, 4, 2),
    (3, 2, 2, 2, 2, 4),
    (256, 256, 256, 256, 2, 1),
    (10, 100000000, 10, 10, 2, 1),
    (99999, 1, 30, 40, 5, 1),
    (2048, 4096, 64, 128, 2, 2),
    (33, 77, 5, 9, 2, 5),
    (1, 1000000, 1, 1000, 2, 1),
    (800, 2400, 28, 28, 3.5, 2),
    (150, 45, 12, 24, 2, 6),
    (65536, 1048576, 512, 512, 2, 3),
]

BOUND_GRID = [
    (20, 2, 10, 2, 4, 1000),
    (1, 1, 1, 2, 1, 1),
    (100, 2, 128, 2, 784, 1000),
    (100, 2, 128, 2, 784, 100),
    (40140, 1, 64, 2, 784, 30000),
    (20, 2, 10, 2, 4, 54),
    (20, 2, 10, 2, 4, 55),
    (500, 3, 32, 2, 16, 10000),
    (1000, 8, 64, 2, 50, 123456),
    (7, 2, 5, 2.5, 3, 11),
    (12345, 2, 200, 4, 100, 678910),
    (3, 4, 2, 2, 2, 2),
    (256, 1, 256, 2, 256, 256),
    (10, 1, 10, 2, 10, 100000000),
    (99999, 1, 40, 5, 30, 1),
    (2048, 2, 128, 2, 64, 4096),
    (33, 5, 9, 2, 5, 77),
    (1, 1, 1000, 2, 1, 1000000),
    (800, 2, 28, 3.5, 28, 2400),
    (65536, 3, 512, 2, 512, 1048576),
]

if __name__ == "__main__":
    for args in VARIANCE_GRID:
        print("posterior_variance", *args, mp.nstr(posterior_variance(*args), 25))
    for args in BOUND_GRID:
        print("epsilon_bound", *args, mp.nstr(epsilon_bound(*args), 25))
