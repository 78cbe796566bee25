"""Reduced words, balls and spheres in the free group F_d.

Generators are indexed by ``1..2d`` with ``g_{i+d} = g_i^{-1}``.  A word is a
tuple of generator indices whose leftmost entry is the last generator applied,
so ``(i_m, ..., i_1)`` stands for ``g_{i_m} ... g_{i_1}``.  The empty tuple is
the unit.

Balls are indexed length-major and then lexicographically, which makes the
indexing prefix-stable: the first ``|B_{L'}|`` indices of ``ball(d, L)`` are
exactly ``ball(d, L')``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_BALL_CAP = 20_000_000


def star(i: int, d: int) -> int:
    """Index of the inverse generator."""
    if not 1 <= i <= 2 * d:
        raise ValueError(f"generator index {i} outside 1..{2 * d}")
    return i + d if i <= d else i - d


def is_reduced(letters: Sequence[int], d: int) -> bool:
    for t in range(len(letters) - 1):
        if letters[t] == star(letters[t + 1], d):
            return False
    return all(1 <= x <= 2 * d for x in letters)


def reduce_letters(letters: Iterable[int], d: int) -> tuple:
    """Free reduction of an arbitrary letter sequence (stack based)."""
    out: list[int] = []
    for x in letters:
        if not 1 <= x <= 2 * d:
            raise ValueError(f"generator index {x} outside 1..{2 * d}")
        if out and out[-1] == star(x, d):
            out.pop()
        else:
            out.append(x)
    return tuple(out)


def inverse_letters(letters: Sequence[int], d: int) -> tuple:
    return tuple(star(x, d) for x in reversed(letters))


@dataclass(frozen=True)
class ReducedWord:
    """Element of F_d stored as a reduced letter tuple."""

    letters: tuple
    d: int

    def __post_init__(self):
        object.__setattr__(self, "letters", tuple(int(x) for x in self.letters))
        if self.d < 1:
            raise ValueError("rank d must be >= 1")
        if not is_reduced(self.letters, self.d):
            raise ValueError(f"word {self.letters} is not reduced over F_{self.d}")

    @classmethod
    def identity(cls, d: int) -> "ReducedWord":
        return cls((), d)

    @classmethod
    def from_letters(cls, letters: Iterable[int], d: int) -> "ReducedWord":
        """Reduce an arbitrary letter sequence."""
        return cls(reduce_letters(letters, d), d)

    def __len__(self) -> int:
        return len(self.letters)

    def __mul__(self, other: "ReducedWord") -> "ReducedWord":
        return concat_reduce(self, other)

    def inverse(self) -> "ReducedWord":
        return ReducedWord(inverse_letters(self.letters, self.d), self.d)

    @property
    def is_identity(self) -> bool:
        return not self.letters


def concat_reduce(w1: ReducedWord, w2: ReducedWord) -> ReducedWord:
    """Reduced form of the product ``w1 * w2``."""
    if w1.d != w2.d:
        raise ValueError(f"rank mismatch: F_{w1.d} vs F_{w2.d}")
    d = w1.d
    a = list(w1.letters)
    b = w2.letters
    j = 0
    while a and j < len(b) and a[-1] == star(b[j], d):
        a.pop()
        j += 1
    return ReducedWord(tuple(a) + tuple(b[j:]), d)


def sphere_size(d: int, m: int) -> int:
    return 1 if m == 0 else 2 * d * (2 * d - 1) ** (m - 1)


def ball_size(d: int, L: int) -> int:
    return sum(sphere_size(d, m) for m in range(L + 1))


def sphere(d: int, m: int, cap: int | None = DEFAULT_BALL_CAP) -> list[tuple]:
    """All reduced words of length ``m`` in lexicographic order."""
    if d < 1 or m < 0:
        raise ValueError("need d >= 1 and m >= 0")
    if cap is not None and sphere_size(d, m) > cap:
        raise MemoryError(f"|S_{m}| = {sphere_size(d, m)} exceeds cap {cap}")
    words = [()]
    for _ in range(m):
        nxt = []
        for a in range(1, 2 * d + 1):
            sa = star(a, d)
            for t in words:
                if not t or t[0] != sa:
                    nxt.append((a,) + t)
        words = nxt
    return words


class BallIndex:
    """Indexing of the ball B_L of F_d.

    Attributes
    ----------
    d, L : int
        Rank and radius.
    size : int
        ``|B_L|``.
    offsets : ndarray
        ``offsets[m]`` is the index of the first word of length ``m``;
        ``offsets[L + 1] == size``.
    first : ndarray
        Leftmost letter of each word (0 for the unit).
    parent : ndarray
        Index of the word with its leftmost letter removed (-1 for the unit).
    left : ndarray
        ``left[k, i]`` is the index of ``g_i * w_k`` or -1 when it leaves the
        ball.  Column 0 is the identity map.
    """

    def __init__(self, d: int, L: int, cap: int | None = DEFAULT_BALL_CAP):
        if d < 1 or L < 0:
            raise ValueError("need d >= 1 and L >= 0")
        size = ball_size(d, L)
        if cap is not None and size > cap:
            raise MemoryError(f"|B_{L}| = {size} exceeds capacity cap {cap}")
        self.d = d
        self.L = L
        self.size = size
        D = 2 * d
        starr = np.array([0] + [star(i, d) for i in range(1, D + 1)], dtype=np.int64)
        self.star_table = starr

        first = np.zeros(size, dtype=np.int64)
        parent = np.full(size, -1, dtype=np.int64)
        length = np.zeros(size, dtype=np.int64)
        offsets = np.zeros(L + 2, dtype=np.int64)
        offsets[1] = 1
        pos = 1
        for m in range(1, L + 1):
            lo, hi = offsets[m - 1], offsets[m]
            prev_first = first[lo:hi]
            for a in range(1, D + 1):
                if m == 1:
                    tails = np.array([0], dtype=np.int64)
                else:
                    tails = lo + np.nonzero(prev_first != starr[a])[0]
                cnt = tails.size
                first[pos:pos + cnt] = a
                parent[pos:pos + cnt] = tails
                length[pos:pos + cnt] = m
                pos += cnt
            offsets[m + 1] = pos
        assert pos == size
        self.first = first
        self.parent = parent
        self.length = length
        self.offsets = offsets

        left = np.full((size, D + 1), -1, dtype=np.int64)
        left[:, 0] = np.arange(size)
        idx = np.arange(1, size)
        # g_a * tail = word, and g_{a*} * word = tail
        left[parent[idx], first[idx]] = idx
        left[idx, starr[first[idx]]] = parent[idx]
        self.left = left

    def __len__(self) -> int:
        return self.size

    def sphere_slice(self, m: int) -> slice:
        return slice(int(self.offsets[m]), int(self.offsets[m + 1]))

    def index(self, word: Sequence[int]) -> int:
        """Index of a reduced word, walking letters from the right."""
        if len(word) > self.L:
            raise KeyError(f"word of length {len(word)} outside B_{self.L}")
        idx = 0
        for x in reversed(word):
            idx = int(self.left[idx, x])
            if idx < 0:
                raise KeyError(f"{tuple(word)} is not a reduced word in B_{self.L}")
        if self.length[idx] != len(word):
            raise KeyError(f"{tuple(word)} is not reduced")
        return idx

    def word(self, idx: int) -> tuple:
        out = []
        while idx > 0:
            out.append(int(self.first[idx]))
            idx = int(self.parent[idx])
        return tuple(out)

    def words(self, m: int | None = None) -> list[tuple]:
        rng = range(self.size) if m is None else range(*self.sphere_slice(m).indices(self.size))
        return [self.word(k) for k in rng]

    def letters_array(self) -> np.ndarray:
        """``(size, L)`` array of letters, left-aligned and zero padded."""
        out = np.zeros((self.size, max(self.L, 1)), dtype=np.int64)
        for m in range(1, self.L + 1):
            sl = self.sphere_slice(m)
            out[sl, 0] = self.first[sl]
            out[sl, 1:m] = out[self.parent[sl], 0:m - 1]
        return out


def ball(d: int, L: int, cap: int | None = DEFAULT_BALL_CAP) -> BallIndex:
    """Indexed ball of radius ``L``."""
    return BallIndex(d, L, cap)


def multiply_words(g: Sequence[int], h: Sequence[int], d: int) -> tuple:
    """Reduced product of two reduced tuples."""
    a = list(g)
    j = 0
    while a and j < len(h) and a[-1] == star(h[j], d):
        a.pop()
        j += 1
    return tuple(a) + tuple(h[j:])
