"""
Reference implementations that share no code with the package. They are
slow on purpose: plain Python integers, bit lists and exhaustive search.
"""

from __future__ import annotations

import hashlib
import itertools
from functools import lru_cache

POLY_BITS = [1, 1, 0, 1, 1, 0, 0, 0, 1]  # x^8 + x^4 + x^3 + x + 1, low degree first


def _bits(a: int) -> list[int]:
    return [(a >> i) & 1 for i in range(8)]


def _from_bits(bits: list[int]) -> int:
    return sum(b << i for i, b in enumerate(bits))


def mul_by_addition(a: int, b: int) -> int:
    """Schoolbook product of bit polynomials, coefficients added mod 2, then long division."""
    prod = [0] * 15
    for i, ai in enumerate(_bits(a)):
        for j, bj in enumerate(_bits(b)):
            prod[i + j] = (prod[i + j] + ai * bj) % 2
    for deg in range(14, 7, -1):
        if prod[deg]:
            for k, pk in enumerate(POLY_BITS):
                prod[deg - 8 + k] = (prod[deg - 8 + k] + pk) % 2
    return _from_bits(prod[:8])


@lru_cache(maxsize=1)
def mul_table() -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(mul_by_addition(a, b) for b in range(256)) for a in range(256))


@lru_cache(maxsize=1)
def inv_table() -> dict[int, int]:
    table = mul_table()
    return {a: next(b for b in range(1, 256) if table[a][b] == 1) for a in range(1, 256)}


def evaluate(coeffs: list[int], x: int) -> int:
    table = mul_table()
    acc, power = 0, 1
    for c in coeffs:
        acc ^= table[c][power]
        power = table[power][x]
    return acc


def fit(points: list[tuple[int, int]]) -> list[int]:
    """Coefficients of the unique degree < len(points) polynomial through ``points`` (Gauss elimination)."""
    table, inv = mul_table(), inv_table()
    n = len(points)
    rows = []
    for x, y in points:
        row, p = [], 1
        for _ in range(n):
            row.append(p)
            p = table[p][x]
        rows.append(row + [y])
    for col in range(n):
        piv = next(r for r in range(col, n) if rows[r][col])
        rows[col], rows[piv] = rows[piv], rows[col]
        f = inv[rows[col][col]]
        rows[col] = [table[f][v] for v in rows[col]]
        for r in range(n):
            if r != col and rows[r][col]:
                g = rows[r][col]
                rows[r] = [v ^ table[g][w] for v, w in zip(rows[r], rows[col])]
    return [rows[i][n] for i in range(n)]


def robust_fit(points: list[tuple[int, int]], degree: int, max_errors: int) -> list[int] | None:
    """
    Exhaustive search over every (degree+1)-subset for a polynomial that
    disagrees with at most ``max_errors`` points. None when there is none.
    """
    for subset in itertools.combinations(points, degree + 1):
        coeffs = fit(list(subset))
        bad = sum(evaluate(coeffs, x) != y for x, y in points)
        if bad <= max_errors:
            return coeffs
    return None


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
