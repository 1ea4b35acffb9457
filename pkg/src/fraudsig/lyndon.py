"""Lyndon words over an integer alphabet.

A Lyndon word is a non-empty word that is strictly smaller, in lexicographic
order, than every one of its proper rotations.  The Lyndon words of length
<= M over a D-letter alphabet index a linear basis of the free Lie algebra
truncated at degree M, which is the coordinate system used for log-signature
vectors: the coefficients of the tensor logarithm at Lyndon-word positions
determine all remaining coefficients through a unitriangular change of basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["lyndon_words", "witt_count", "lyndon_dim", "LyndonBasis"]


def _mobius(n: int) -> int:
    """Moebius function by trial factorisation (small arguments only)."""
    if n < 1:
        raise ValueError(f"Moebius function undefined for {n}")
    result = 1
    p = 2
    while p * p <= n:
        if n % p == 0:
            n //= p
            if n % p == 0:
                return 0
            result = -result
        p += 1
    if n > 1:
        result = -result
    return result


def witt_count(alphabet_size: int, length: int) -> int:
    """Number of Lyndon words of exactly `length` letters: the Witt formula

        (1/k) * sum_{e | k} mu(e) * D**(k/e)
    """
    if alphabet_size < 1 or length < 1:
        raise ValueError("alphabet_size and length must be positive")
    total = 0
    for e in range(1, length + 1):
        if length % e == 0:
            total += _mobius(e) * alphabet_size ** (length // e)
    assert total % length == 0
    return total // length


def lyndon_dim(alphabet_size: int, degree: int) -> int:
    """Total number of Lyndon words of length <= degree."""
    return sum(witt_count(alphabet_size, k) for k in range(1, degree + 1))


def _duval_generate(alphabet_size: int, max_len: int):
    """Yield all Lyndon words of length <= max_len (Duval's algorithm).

    Words come out in lexicographic order of the words themselves; callers
    wanting a by-length ordering must sort.
    """
    w = [-1]
    while w:
        w[-1] += 1
        yield tuple(w)
        m = len(w)
        while len(w) < max_len:
            w.append(w[-m])
        while w and w[-1] == alphabet_size - 1:
            w.pop()


def lyndon_words(alphabet_size: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """All Lyndon words of length <= degree, lengths ascending and
    lexicographic within each length."""
    if alphabet_size < 1:
        raise ValueError(f"alphabet_size must be >= 1, got {alphabet_size}")
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    words = list(_duval_generate(alphabet_size, degree))
    words.sort(key=lambda w: (len(w), w))
    return tuple(words)


@dataclass(frozen=True)
class LyndonBasis:
    """Lyndon-word coordinate layout for log-signature vectors.

    Attributes:
        alphabet_size: number of path channels D.
        degree: truncation degree M.
        words: all Lyndon words of length <= M, lengths ascending then
            lexicographic; the i-th output coordinate is the tensor-log
            coefficient of ``words[i]``.
    """

    alphabet_size: int
    degree: int
    words: tuple[tuple[int, ...], ...] = field(repr=False)

    @classmethod
    def build(cls, alphabet_size: int, degree: int) -> "LyndonBasis":
        return cls(alphabet_size, degree, lyndon_words(alphabet_size, degree))

    @property
    def dim(self) -> int:
        return len(self.words)

    def counts_by_length(self) -> tuple[int, ...]:
        counts = [0] * self.degree
        for w in self.words:
            counts[len(w) - 1] += 1
        return tuple(counts)

    def flat_indices(self, length: int) -> np.ndarray:
        """Row indices of the length-`length` words inside the flattened
        level-`length` coefficient block (word -> base-D integer)."""
        idx = []
        for w in self.words:
            if len(w) == length:
                k = 0
                for letter in w:
                    k = k * self.alphabet_size + letter
                idx.append(k)
        return np.asarray(idx, dtype=np.intp)

    def output_slice(self, length: int) -> slice:
        """Positions of the length-`length` coordinates in the output vector."""
        counts = self.counts_by_length()
        start = sum(counts[: length - 1])
        return slice(start, start + counts[length - 1])

    def letter_class_counts(self, classes: dict[str, tuple[int, ...]]) -> dict[str, np.ndarray]:
        """Per-word counts of letters falling in each named channel class.

        Used to rescale coordinates exactly when a channel of the underlying
        path is multiplied by a constant: scaling channel c by s multiplies
        the coefficient of a word by s**(number of occurrences of c).
        """
        out = {}
        for name, channels in classes.items():
            chan = set(channels)
            out[name] = np.asarray(
                [sum(1 for letter in w if letter in chan) for w in self.words],
                dtype=np.float64,
            )
        return out
