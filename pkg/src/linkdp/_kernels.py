"""Inner loops that dominate runtime.

Each kernel has a numba variant and a plain variant with the same signature;
the module-level names bind to one of them according to ``LINKDP_DISABLE_JIT``
(see :mod:`linkdp._jit`). Both variants stay importable under ``*_numba`` /
``*_py`` so tests and the benchmark can compare them directly.
"""

from __future__ import annotations

import math

import numpy as np

from . import _jit
from ._jit import njit, select

JW_BOOST_THRESHOLD = 0.7
JW_PREFIX_SCALE = 0.1
JW_PREFIX_CAP = 4


# --------------------------------------------------------------------------
# Jaro-Winkler
# --------------------------------------------------------------------------


def _jaro_winkler_str(s1: str, s2: str) -> float:
    if s1 == s2:
        return 1.0
    l1, l2 = len(s1), len(s2)
    if l1 == 0 or l2 == 0:
        return 0.0
    # canonical argument order keeps the score symmetric
    if l1 > l2 or (l1 == l2 and s1 > s2):
        s1, s2, l1, l2 = s2, s1, l2, l1
    window = max(max(l1, l2) // 2 - 1, 0)
    flags1 = [False] * l1
    flags2 = [False] * l2
    common = 0
    for i in range(l1):
        c = s1[i]
        lo = max(0, i - window)
        hi = min(i + window, l2 - 1)
        for j in range(lo, hi + 1):
            if not flags2[j] and s2[j] == c:
                flags1[i] = True
                flags2[j] = True
                common += 1
                break
    if common == 0:
        return 0.0
    k = 0
    half_trans = 0
    for i in range(l1):
        if flags1[i]:
            while not flags2[k]:
                k += 1
            if s1[i] != s2[k]:
                half_trans += 1
            k += 1
    trans = half_trans / 2.0
    jaro = (common / l1 + common / l2 + (common - trans) / common) / 3.0
    if jaro > JW_BOOST_THRESHOLD:
        cap = min(JW_PREFIX_CAP, l1, l2)
        prefix = 0
        while prefix < cap and s1[prefix] == s2[prefix]:
            prefix += 1
        jaro += prefix * JW_PREFIX_SCALE * (1.0 - jaro)
    return jaro


def _jw_codes_py(a, la, b, lb, flags_a, flags_b):
    """Jaro-Winkler on padded codepoint rows; plain Python."""
    if la == lb:
        same = True
        for i in range(la):
            if a[i] != b[i]:
                same = False
                break
        if same:
            return 1.0
    if la == 0 or lb == 0:
        return 0.0
    swap = la > lb
    if la == lb:
        for i in range(la):
            if a[i] != b[i]:
                swap = a[i] > b[i]
                break
    if swap:
        a, b = b, a
        la, lb = lb, la
    window = max(max(la, lb) // 2 - 1, 0)
    for i in range(la):
        flags_a[i] = False
    for j in range(lb):
        flags_b[j] = False
    common = 0
    for i in range(la):
        c = a[i]
        lo = max(0, i - window)
        hi = min(i + window, lb - 1)
        for j in range(lo, hi + 1):
            if not flags_b[j] and b[j] == c:
                flags_a[i] = True
                flags_b[j] = True
                common += 1
                break
    if common == 0:
        return 0.0
    k = 0
    half_trans = 0
    for i in range(la):
        if flags_a[i]:
            while not flags_b[k]:
                k += 1
            if a[i] != b[k]:
                half_trans += 1
            k += 1
    trans = half_trans / 2.0
    jaro = (common / la + common / lb + (common - trans) / common) / 3.0
    if jaro > JW_BOOST_THRESHOLD:
        cap = min(JW_PREFIX_CAP, la, lb)
        prefix = 0
        while prefix < cap and a[prefix] == b[prefix]:
            prefix += 1
        jaro += prefix * JW_PREFIX_SCALE * (1.0 - jaro)
    return jaro


_jw_codes_numba = njit(_jw_codes_py)


def _jw_matrix_numba_impl(codes_a, lens_a, codes_b, lens_b, out):
    na = codes_a.shape[0]
    nb = codes_b.shape[0]
    flags_a = np.zeros(codes_a.shape[1] + 1, dtype=np.bool_)
    flags_b = np.zeros(codes_b.shape[1] + 1, dtype=np.bool_)
    for i in range(na):
        for j in range(nb):
            out[i, j] += _jw_codes_numba(
                codes_a[i], lens_a[i], codes_b[j], lens_b[j], flags_a, flags_b
            )
    return out


jw_matrix_numba = njit(_jw_matrix_numba_impl)


def jw_matrix_py(strings_a, strings_b, out):
    for i, sa in enumerate(strings_a):
        row = out[i]
        for j, sb in enumerate(strings_b):
            row[j] += _jaro_winkler_str(sa, sb)
    return out


def encode_strings(strings) -> tuple[np.ndarray, np.ndarray]:
    """Pack strings into a zero-padded (count, maxlen) uint32 codepoint array."""
    lens = np.fromiter((len(s) for s in strings), dtype=np.int64, count=len(strings))
    width = int(lens.max()) if len(lens) else 0
    codes = np.zeros((len(strings), max(width, 1)), dtype=np.uint32)
    for i, s in enumerate(strings):
        if s:
            codes[i, : len(s)] = np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)
    return codes, lens


def accumulate_jw(strings_a, strings_b, out: np.ndarray) -> np.ndarray:
    """Add the Jaro-Winkler score of every (a, b) pair into ``out`` in place."""
    if _jit.USE_NUMBA:
        ca, la = encode_strings(strings_a)
        cb, lb = encode_strings(strings_b)
        return jw_matrix_numba(ca, la, cb, lb, out)
    return jw_matrix_py(strings_a, strings_b, out)


# --------------------------------------------------------------------------
# greedy one-to-one acceptance
# --------------------------------------------------------------------------


def _greedy_accept_py(rows, cols, n_rows, n_cols):
    match = np.full(n_rows, -1, dtype=np.int64)
    taken = np.zeros(n_cols, dtype=np.bool_)
    for k in range(rows.shape[0]):
        i = rows[k]
        j = cols[k]
        if match[i] < 0 and not taken[j]:
            match[i] = j
            taken[j] = True
    return match


greedy_accept_numba = njit(_greedy_accept_py)


# --------------------------------------------------------------------------
# noisy projected gradient descent on precomputed sufficient statistics
# --------------------------------------------------------------------------


def _ngd_descend_numba_impl(gram, moment, beta0, step, radius, noise):
    d = beta0.shape[0]
    beta = beta0.copy()
    new = np.empty(d)
    for t in range(noise.shape[0]):
        sq = 0.0
        for k in range(d):
            g = -moment[k]
            for l in range(d):
                g += gram[k, l] * beta[l]
            v = beta[k] - step * g + noise[t, k]
            new[k] = v
            sq += v * v
        norm = math.sqrt(sq)
        scale = radius / norm if norm > radius else 1.0
        for k in range(d):
            beta[k] = new[k] * scale
    return beta


ngd_descend_numba = njit(_ngd_descend_numba_impl)


def ngd_descend_py(gram, moment, beta0, step, radius, noise):
    beta = np.array(beta0, dtype=float, copy=True)
    for t in range(noise.shape[0]):
        beta = beta - step * (gram @ beta - moment) + noise[t]
        norm = math.sqrt(float(beta @ beta))
        if norm > radius:
            beta = beta * (radius / norm)
    return beta


# --------------------------------------------------------------------------
# block-structured (exchangeable) matrix products
# --------------------------------------------------------------------------


def _block_apply_numba_impl(V, starts, sizes, diag, off):
    out = np.empty_like(V)
    k = V.shape[1]
    total = np.empty(k)
    for b in range(starts.shape[0]):
        s = starts[b]
        m = sizes[b]
        for c in range(k):
            acc = 0.0
            for i in range(s, s + m):
                acc += V[i, c]
            total[c] = acc
        a = diag[b]
        o = off[b]
        for i in range(s, s + m):
            for c in range(k):
                out[i, c] = a * V[i, c] + o * (total[c] - V[i, c])
    return out


block_apply_numba = njit(_block_apply_numba_impl)


def block_apply_py(V, starts, sizes, diag, off):
    totals = np.add.reduceat(V, starts, axis=0)
    totals = np.repeat(totals, sizes, axis=0)
    a = np.repeat(diag, sizes)[:, None]
    o = np.repeat(off, sizes)[:, None]
    return a * V + o * (totals - V)


greedy_accept = select(greedy_accept_numba, _greedy_accept_py)
ngd_descend = select(ngd_descend_numba, ngd_descend_py)
block_apply = select(block_apply_numba, block_apply_py)
jaro_winkler_str = _jaro_winkler_str
