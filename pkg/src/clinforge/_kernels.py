"""LCS dynamic-programming kernels.

Two interchangeable backends compute the same integer tables:

* ``numba`` -- explicit double loop compiled with ``@njit``;
* ``numpy`` -- one vectorised row update per reference token.

The numba path is used when numba imports and ``CLINFORGE_DISABLE_JIT`` is
unset or ``0``. Both are always importable by name so they can be
cross-checked and benchmarked against each other.
"""
from __future__ import annotations

import os

import numpy as np

_FLAG = "CLINFORGE_DISABLE_JIT"


def lcs_table_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full ``(len(a)+1, len(b)+1)`` LCS table.

    Row update: ``t[i, j] = max(t[i-1, j], t[i, j-1], t[i-1, j-1] + [a_i == b_j])``.
    Rows are non-decreasing in ``j``, so the left dependency collapses into a
    running maximum over ``max(t[i-1, j], t[i-1, j-1] + match)``.
    """
    m, n = len(a), len(b)
    t = np.zeros((m + 1, n + 1), dtype=np.int32)
    for i in range(m):
        prev = t[i]
        cand = np.maximum(prev[1:], prev[:-1] + (b == a[i]))
        np.maximum.accumulate(cand, out=t[i + 1, 1:])
    return t


def lcs_length_numpy(a: np.ndarray, b: np.ndarray) -> int:
    if len(a) < len(b):
        a, b = b, a
    n = len(b)
    if n == 0:
        return 0
    row = np.zeros(n + 1, dtype=np.int32)
    for x in a:
        cand = np.maximum(row[1:], row[:-1] + (b == x))
        np.maximum.accumulate(cand, out=row[1:])
    return int(row[n])


def _lcs_table_py(a, b):
    m, n = len(a), len(b)
    t = np.zeros((m + 1, n + 1), dtype=np.int32)
    for i in range(m):
        ai = a[i]
        for j in range(n):
            if ai == b[j]:
                t[i + 1, j + 1] = t[i, j] + 1
            elif t[i, j + 1] >= t[i + 1, j]:
                t[i + 1, j + 1] = t[i, j + 1]
            else:
                t[i + 1, j + 1] = t[i + 1, j]
    return t


def _lcs_length_py(a, b):
    n = len(b)
    prev = np.zeros(n + 1, dtype=np.int32)
    cur = np.zeros(n + 1, dtype=np.int32)
    for i in range(len(a)):
        ai = a[i]
        for j in range(n):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            elif prev[j + 1] >= cur[j]:
                cur[j + 1] = prev[j + 1]
            else:
                cur[j + 1] = cur[j]
        prev, cur = cur, prev
    return prev[n]


try:
    from numba import njit

    HAS_NUMBA = True
    _lcs_table_jit = njit(cache=True, nogil=True)(_lcs_table_py)
    _lcs_length_jit = njit(cache=True, nogil=True)(_lcs_length_py)
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False
    _lcs_table_jit = _lcs_length_jit = None


def lcs_table_numba(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    return _lcs_table_jit(a, b)


def lcs_length_numba(a: np.ndarray, b: np.ndarray) -> int:
    if not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    return int(_lcs_length_jit(a, b))


def jit_enabled() -> bool:
    return HAS_NUMBA and os.environ.get(_FLAG, "0") in ("", "0")


def backend() -> str:
    return "numba" if jit_enabled() else "numpy"


def lcs_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return lcs_table_numba(a, b) if jit_enabled() else lcs_table_numpy(a, b)


def lcs_length(a: np.ndarray, b: np.ndarray) -> int:
    return lcs_length_numba(a, b) if jit_enabled() else lcs_length_numpy(a, b)


def backtrack(t: np.ndarray, a, b) -> list[int]:
    """Indices into ``a`` of one LCS, recovered from table ``t``.

    On a mismatch the walk moves left when ``t[i, j-1] > t[i-1, j]`` and up
    otherwise, so ties prefer dropping a token of ``a``.
    """
    i, j = len(a), len(b)
    out: list[int] = []
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1]:
            out.append(i - 1)
            i -= 1
            j -= 1
        elif t[i, j - 1] > t[i - 1, j]:
            j -= 1
        else:
            i -= 1
    out.reverse()
    return out
