"""
Arithmetic over GF(2^8) with the AES reduction polynomial x^8 + x^4 + x^3 + x + 1.

Scalars are plain ints in 0..255. Polynomials are sequences of coefficients,
lowest degree first. The batched helpers operate on numpy uint8 arrays and are
what the PIR layer uses for whole-block work; the scalar functions are thin
wrappers over the same tables.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

REDUCTION_POLY = 0x11B
GENERATOR = 0x03
ORDER = 256


class FieldError(ValueError):
    """Domain error: zero inverse, duplicate x-coordinates, bad input shape."""


class DecodeError(Exception):
    """Error-correcting decode could not find a consistent low-degree polynomial."""


def _xtime(x: int) -> int:
    x <<= 1
    if x & 0x100:
        x ^= REDUCTION_POLY
    return x


def _clmul_reduce(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        a = _xtime(a)
        b >>= 1
    return r


def _build_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x = _clmul_reduce(x, GENERATOR)
    exp[255:510] = exp[:255]
    mul = np.zeros((256, 256), dtype=np.uint8)
    nz = np.arange(1, 256)
    mul[1:, 1:] = exp[(log[nz][:, None] + log[nz][None, :])]
    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[(255 - log[nz]) % 255]
    return exp, log, mul, inv


EXP, LOG, MUL_TABLE, INV_TABLE = _build_tables()
for _t in (EXP, LOG, MUL_TABLE, INV_TABLE):
    _t.setflags(write=False)


def fadd(a: int, b: int) -> int:
    return a ^ b


def fmul(a: int, b: int) -> int:
    return int(MUL_TABLE[a, b])


def finv(a: int) -> int:
    if a == 0:
        raise FieldError("zero has no multiplicative inverse")
    return int(INV_TABLE[a])


def fdiv(a: int, b: int) -> int:
    return fmul(a, finv(b))


def fpow(a: int, n: int) -> int:
    if n == 0:
        return 1
    if a == 0:
        return 0
    return int(EXP[(int(LOG[a]) * n) % 255])


# ---- polynomials ----

def poly_degree(p: Sequence[int]) -> int:
    for i in range(len(p) - 1, -1, -1):
        if p[i]:
            return i
    return -1


def poly_eval(p: Sequence[int], x: int) -> int:
    acc = 0
    for c in reversed(p):
        acc = int(MUL_TABLE[acc, x]) ^ c
    return acc


def poly_mul(p: Sequence[int], q: Sequence[int]) -> list[int]:
    if not p or not q:
        return []
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a:
            for j, b in enumerate(q):
                out[i + j] ^= int(MUL_TABLE[a, b])
    return out


def poly_divmod(num: Sequence[int], den: Sequence[int]) -> tuple[list[int], list[int]]:
    dd = poly_degree(den)
    if dd < 0:
        raise FieldError("division by the zero polynomial")
    rem = list(num)
    nd = poly_degree(rem)
    if nd < dd:
        return [0], rem
    lead_inv = finv(den[dd])
    quot = [0] * (nd - dd + 1)
    for k in range(nd - dd, -1, -1):
        coef = fmul(rem[k + dd], lead_inv)
        quot[k] = coef
        if coef:
            for j in range(dd + 1):
                rem[k + j] ^= fmul(coef, den[j])
    return quot, rem


def _check_distinct(xs: Sequence[int]) -> None:
    if len(set(xs)) != len(xs):
        raise FieldError("interpolation points must have distinct x-coordinates")


def lagrange_coefficients(xs: Sequence[int], x0: int) -> list[int]:
    """Weights w_i with f(x0) = sum w_i * f(xs[i]) for any f of degree < len(xs)."""
    _check_distinct(xs)
    weights = []
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if j != i:
                num = fmul(num, x0 ^ xj)
                den = fmul(den, xi ^ xj)
        weights.append(fmul(num, finv(den)))
    return weights


def lagrange_interpolate(points: Sequence[tuple[int, int]], x0: int) -> int:
    if not points:
        raise FieldError("need at least one point")
    xs = [x for x, _ in points]
    acc = 0
    for w, (_, y) in zip(lagrange_coefficients(xs, x0), points):
        acc ^= fmul(w, y)
    return acc


def interpolate_batch(xs: Sequence[int], ys: np.ndarray, x0: int) -> np.ndarray:
    """Lagrange-interpolate every column of ``ys`` (shape k x n) at ``x0``."""
    ys = np.asarray(ys, dtype=np.uint8)
    if ys.ndim != 2 or ys.shape[0] != len(xs):
        raise FieldError("ys must have one row per x-coordinate")
    out = np.zeros(ys.shape[1], dtype=np.uint8)
    for w, row in zip(lagrange_coefficients(xs, x0), ys):
        out ^= MUL_TABLE[w][row]
    return out


def eval_batch(coeffs: np.ndarray, x: int) -> np.ndarray:
    """Horner-evaluate many polynomials at one point; ``coeffs`` is (n, deg+1)."""
    coeffs = np.asarray(coeffs, dtype=np.uint8)
    acc = np.zeros(coeffs.shape[0], dtype=np.uint8)
    row = MUL_TABLE[x]
    for j in range(coeffs.shape[1] - 1, -1, -1):
        acc = row[acc] ^ coeffs[:, j]
    return acc


# ---- Berlekamp-Welch ----

def unique_decoding_radius(k: int, t: int) -> int:
    return max((k - t - 1) // 2, 0)


def _solve_batch(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Jordan elimination on a batch of systems a[n] @ x = b[n] over GF(2^8).

    a: (n, m, u), b: (n, m). Free variables are set to zero. Returns the
    solutions (n, u) and a bool mask of systems that were consistent.
    """
    a = a.copy()
    b = b.copy()
    n, m, u = a.shape
    idx = np.arange(n)
    row = np.zeros(n, dtype=np.int64)  # next pivot row per system
    pivot_col_of_row = np.full((n, m), -1, dtype=np.int64)
    for col in range(u):
        # candidate pivot: first nonzero entry at or below the current row
        rows = np.arange(m)[None, :]
        cand = (a[:, :, col] != 0) & (rows >= row[:, None])
        has = cand.any(axis=1) & (row < m)
        if not has.any():
            continue
        piv = np.argmax(cand, axis=1)
        sel = idx[has]
        pr, cr = piv[has], row[has]
        # swap pivot row into place
        tmp = a[sel, pr].copy()
        a[sel, pr] = a[sel, cr]
        a[sel, cr] = tmp
        tmpb = b[sel, pr].copy()
        b[sel, pr] = b[sel, cr]
        b[sel, cr] = tmpb
        # normalize
        inv = INV_TABLE[a[sel, cr, col]]
        a[sel, cr] = MUL_TABLE[inv[:, None], a[sel, cr]]
        b[sel, cr] = MUL_TABLE[inv, b[sel, cr]]
        # eliminate the column from every other row
        factors = a[sel, :, col].copy()
        factors[np.arange(len(sel)), cr] = 0
        a[sel] ^= MUL_TABLE[factors[:, :, None], a[sel, cr][:, None, :]]
        b[sel] ^= MUL_TABLE[factors, b[sel, cr][:, None]]
        pivot_col_of_row[sel, cr] = col
        row[sel] += 1
    zero_rows = ~a.any(axis=2)
    consistent = ~(zero_rows & (b != 0)).any(axis=1)
    x = np.zeros((n, u), dtype=np.uint8)
    for r in range(m):
        pc = pivot_col_of_row[:, r]
        ok = pc >= 0
        x[idx[ok], pc[ok]] = b[idx[ok], r]
    return x, consistent


def _vandermonde(xs: Sequence[int], ncols: int) -> np.ndarray:
    v = np.zeros((len(xs), ncols), dtype=np.uint8)
    for i, x in enumerate(xs):
        acc = 1
        for j in range(ncols):
            v[i, j] = acc
            acc = fmul(acc, x)
    return v


def berlekamp_welch_batch(
    xs: Sequence[int], ys: np.ndarray, t: int, max_errors: int | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Decode every column of ``ys`` (k x n) to a polynomial of degree <= t.

    Returns (coeffs, error_mask, ok): coeffs is (n, t+1); error_mask is (k, n)
    marking points that disagree with the decoded polynomial; ok flags columns
    that decoded within ``max_errors`` (default: the unique-decoding radius).
    """
    _check_distinct(xs)
    ys = np.asarray(ys, dtype=np.uint8)
    k = len(xs)
    if ys.ndim != 2 or ys.shape[0] != k:
        raise FieldError("ys must have one row per x-coordinate")
    if k <= t:
        raise FieldError(f"need more than t={t} points, got {k}")
    e = unique_decoding_radius(k, t) if max_errors is None else max_errors
    if 2 * e + t + 1 > k:
        raise FieldError(f"cannot correct {e} errors with {k} points at degree {t}")
    n = ys.shape[1]
    nq = e + t + 1
    vq = _vandermonde(xs, nq)
    ve = _vandermonde(xs, e + 1)
    # Q(x_i) + y_i * (e_0 + ... + e_{e-1} x_i^{e-1}) = y_i * x_i^e
    yT = ys.T  # (n, k)
    a = np.empty((n, k, nq + e), dtype=np.uint8)
    a[:, :, :nq] = vq[None, :, :]
    if e:
        a[:, :, nq:] = MUL_TABLE[yT[:, :, None], ve[None, :, :e]]
    b = MUL_TABLE[yT, ve[None, :, e]]
    sol, ok = _solve_batch(a, b)
    q = sol[:, :nq]
    # E is monic of degree e; divide Q by E column-wise (synthetic division)
    loc = np.concatenate([sol[:, nq:], np.ones((n, 1), dtype=np.uint8)], axis=1)
    rem = q.copy()
    quot = np.zeros((n, t + 1), dtype=np.uint8)
    for d in range(nq - 1, e - 1, -1):
        coef = rem[:, d]
        quot[:, d - e] = coef
        rem[:, d - e:d + 1] ^= MUL_TABLE[coef[:, None], loc]
    ok &= ~rem.any(axis=1)
    decoded = np.stack([eval_batch(quot, x) for x in xs])  # (k, n)
    err = decoded != ys
    ok &= err.sum(axis=0) <= e
    return quot, err, ok


def berlekamp_welch_decode(points: Sequence[tuple[int, int]], t: int, x0: int) -> int:
    """Recover f(x0) for a degree-t f despite up to floor((k-t-1)/2) bad points."""
    xs = [x for x, _ in points]
    ys = np.array([[y] for _, y in points], dtype=np.uint8)
    coeffs, _, ok = berlekamp_welch_batch(xs, ys, t)
    if not ok[0]:
        raise DecodeError("too many corrupted points for unique decoding")
    return poly_eval([int(c) for c in coeffs[0]], x0)


# ---- serialization ----

def encode_vector(values: Sequence[int] | np.ndarray) -> bytes:
    data = bytes(np.asarray(values, dtype=np.uint8))
    return len(data).to_bytes(4, "big") + data


def decode_vector(buf: bytes) -> np.ndarray:
    if len(buf) < 4:
        raise FieldError("truncated vector header")
    n = int.from_bytes(buf[:4], "big")
    if len(buf) != 4 + n:
        raise FieldError(f"vector length mismatch: header {n}, body {len(buf) - 4}")
    return np.frombuffer(buf, dtype=np.uint8, offset=4).copy()
