"""Claim similarity used for near-duplicate fact detection.

The measure is the arithmetic mean of two views of the same pair:

* character-level longest-common-subsequence ratio, ``2 * lcs / (len(a)
  + len(b))``, which is robust to rewording inside a sentence;
* Jaccard overlap of the lowercase whitespace token sets, which is
  robust to reordering.

LCS is the hot loop: bank insertion compares every incoming claim
against stored claims, so the quadratic DP runs thousands of times per
meeting.  The default kernel is numba-compiled; a vectorized numpy
fallback (anti-diagonal sweep) is selected when numba is unavailable or
when ``FACTMEET_SIMILARITY_BACKEND=numpy`` is set.  Both kernels
compute the exact same integer, only at different speeds.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env-forced fallback
    HAS_NUMBA = False

__all__ = [
    "BACKEND_ENV_VAR",
    "HAS_NUMBA",
    "active_backend",
    "claim_similarity",
    "lcs_length",
    "lcs_length_numpy",
    "lcs_ratio",
    "token_jaccard",
]

BACKEND_ENV_VAR = "FACTMEET_SIMILARITY_BACKEND"


def _codepoints(text: str) -> np.ndarray:
    # utf-32-le lays out one int32 per character, so this is a zero-copy
    # decode of codepoints.
    return np.frombuffer(text.encode("utf-32-le"), dtype=np.int32)


if HAS_NUMBA:

    @njit(cache=True)
    def _lcs_kernel_numba(a: np.ndarray, b: np.ndarray) -> int:  # pragma: no cover - jitted
        m = a.shape[0]
        n = b.shape[0]
        prev = np.zeros(n + 1, dtype=np.int32)
        cur = np.zeros(n + 1, dtype=np.int32)
        for i in range(m):
            ai = a[i]
            for j in range(n):
                if ai == b[j]:
                    cur[j + 1] = prev[j] + 1
                else:
                    up = prev[j + 1]
                    left = cur[j]
                    cur[j + 1] = up if up >= left else left
            tmp = prev
            prev = cur
            cur = tmp
        return int(prev[n])

    def lcs_length_numba(a: str, b: str) -> int:
        if not a or not b:
            return 0
        return int(_lcs_kernel_numba(_codepoints(a), _codepoints(b)))

else:  # pragma: no cover
    lcs_length_numba = None  # type: ignore[assignment]


def lcs_length_numpy(a: str, b: str) -> int:
    """LCS length via a vectorized anti-diagonal dynamic program.

    Cell (i, j) lives on diagonal d = i + j; every cell of a diagonal
    depends only on the two previous diagonals, so each diagonal is one
    vectorized step.
    """
    ca, cb = _codepoints(a), _codepoints(b)
    m, n = ca.shape[0], cb.shape[0]
    if m == 0 or n == 0:
        return 0
    prev2 = np.zeros(m + 1, dtype=np.int32)
    prev1 = np.zeros(m + 1, dtype=np.int32)
    cur = np.zeros(m + 1, dtype=np.int32)
    for d in range(2, m + n + 1):
        lo = max(1, d - n)
        hi = min(m, d - 1)
        i = np.arange(lo, hi + 1)
        eq = ca[i - 1] == cb[d - i - 1]
        skip = np.maximum(prev1[i - 1], prev1[i])
        cur[:] = 0
        cur[lo : hi + 1] = np.where(eq, prev2[i - 1] + 1, skip)
        prev2, prev1, cur = prev1, cur, prev2
    return int(prev1[m])


def _resolve_backend() -> str:
    requested = os.environ.get(BACKEND_ENV_VAR, "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not HAS_NUMBA:
            raise RuntimeError(f"{BACKEND_ENV_VAR}=numba requested but numba is not importable")
        return "numba"
    if requested:
        raise RuntimeError(f"unknown {BACKEND_ENV_VAR} value {requested!r}; expected numba or numpy")
    return "numba" if HAS_NUMBA else "numpy"


_BACKEND = _resolve_backend()


def active_backend() -> str:
    """Name of the LCS kernel in use: ``numba`` or ``numpy``."""
    return _BACKEND


def lcs_length(a: str, b: str) -> int:
    if _BACKEND == "numba":
        return lcs_length_numba(a, b)
    return lcs_length_numpy(a, b)


def lcs_ratio(a: str, b: str) -> float:
    """Normalized character LCS: 1.0 for identical strings, 0.0 for disjoint."""
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return 2.0 * lcs_length(a, b) / (len(a) + len(b))


def token_jaccard(a: str, b: str) -> float:
    """Jaccard overlap of lowercase whitespace-token sets."""
    ta, tb = set(a.lower().split()), set(b.lower().split())
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def claim_similarity(a: str, b: str) -> float:
    """Mean of LCS ratio and token Jaccard, in [0, 1]. Symmetric."""
    if a == b:
        return 1.0
    return (lcs_ratio(a, b) + token_jaccard(a, b)) / 2.0
