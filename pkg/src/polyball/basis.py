"""Free-semigroup words, multi-degrees, and basis indexing for graded tensor products.

Conventions used throughout the package:

* a factor is addressed by its 0-based position ``i`` in the shape,
* letters of the free semigroup on ``n_i`` generators are the integers
  ``1..n_i`` (the empty tuple is the identity word),
* a multi-degree is a plain ``tuple[int, ...]`` of length ``k``,
* words of a fixed length are ordered lexicographically by letter value,
  and tensor words of a fixed multi-degree lexicographically by factor.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

Word = tuple[int, ...]
MultiDegree = tuple[int, ...]


@dataclass(frozen=True)
class Shape:
    """Generator counts of the factors, with optional per-factor truncation caps."""

    n: tuple[int, ...]
    caps: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        if self.caps is not None:
            object.__setattr__(self, "caps", tuple(int(v) for v in self.caps))
        if self.k < 1:
            raise ValueError("a shape needs at least one factor")
        if any(ni < 1 for ni in self.n):
            raise ValueError(f"generator counts must be >= 1, got {self.n}")
        if self.caps is not None:
            if len(self.caps) != self.k:
                raise ValueError("caps must carry one entry per factor")
            if any(d < 0 for d in self.caps):
                raise ValueError(f"caps must be >= 0, got {self.caps}")

    @property
    def k(self) -> int:
        return len(self.n)

    def with_caps(self, caps) -> "Shape":
        return Shape(self.n, tuple(int(c) for c in caps))

    def require_caps(self) -> tuple[int, ...]:
        if self.caps is None:
            raise ValueError("this operation needs a shape with truncation caps")
        return self.caps


@dataclass(frozen=True)
class TensorWord:
    """One word per factor; the multi-degree is the tuple of word lengths."""

    words: tuple[Word, ...]

    @property
    def multidegree(self) -> MultiDegree:
        return tuple(len(w) for w in self.words)


def enumerate_words(n_i: int, q: int) -> list[Word]:
    """All ``n_i**q`` words of length ``q``, lexicographically ordered; ``q=0`` gives the identity."""
    if n_i < 1 or q < 0:
        raise ValueError(f"need n_i >= 1 and q >= 0, got n_i={n_i}, q={q}")
    return list(itertools.product(range(1, n_i + 1), repeat=q))


def word_rank(n_i: int, word: Word) -> int:
    """Lexicographic rank of ``word`` among all words of its length."""
    r = 0
    for letter in word:
        if not 1 <= letter <= n_i:
            raise ValueError(f"letter {letter} out of range 1..{n_i}")
        r = r * n_i + (letter - 1)
    return r


def word_unrank(n_i: int, q: int, rank: int) -> Word:
    """Inverse of :func:`word_rank` at length ``q``."""
    if not 0 <= rank < n_i**q:
        raise ValueError(f"rank {rank} out of range for n_i={n_i}, q={q}")
    letters = []
    for _ in range(q):
        rank, digit = divmod(rank, n_i)
        letters.append(digit + 1)
    return tuple(reversed(letters))


def grade_dim(shape: Shape, q: MultiDegree) -> int:
    """Dimension ``prod n_i**q_i`` of the grade-``q`` slice (coefficient space excluded)."""
    if len(q) != shape.k:
        raise ValueError(f"multi-degree {q} does not match k={shape.k}")
    if any(qi < 0 for qi in q):
        raise ValueError(f"multi-degree must be nonnegative, got {q}")
    d = 1
    for ni, qi in zip(shape.n, q):
        d *= ni**qi
    return d


def simplex_layer_count(m: int, k: int) -> int:
    """Number of q in Z_+^k with q_1 + ... + q_k = m, i.e. C(m+k-1, k-1)."""
    if m < 0 or k < 1:
        raise ValueError(f"need m >= 0 and k >= 1, got m={m}, k={k}")
    return math.comb(m + k - 1, k - 1)


def simplex_cumulative_count(m: int, k: int) -> int:
    """Number of q in Z_+^k with q_1 + ... + q_k <= m, i.e. C(m+k, k)."""
    if m < 0 or k < 1:
        raise ValueError(f"need m >= 0 and k >= 1, got m={m}, k={k}")
    return math.comb(m + k, k)


def simplex_count(m: int, k: int) -> tuple[int, int]:
    """(layer, cumulative) lattice-point counts of the degree-``m`` simplex slice."""
    return simplex_layer_count(m, k), simplex_cumulative_count(m, k)


def tensor_index(shape: Shape, tw: TensorWord) -> int:
    """Mixed-radix index of a tensor word within its grade; factor 0 is most significant."""
    if len(tw.words) != shape.k:
        raise ValueError(f"tensor word has {len(tw.words)} factors, shape has {shape.k}")
    if shape.caps is not None:
        for qi, cap in zip(tw.multidegree, shape.caps):
            if qi > cap:
                raise ValueError(f"tensor word degree {tw.multidegree} exceeds caps {shape.caps}")
    idx = 0
    for i, w in enumerate(tw.words):
        idx = idx * shape.n[i] ** len(w) + word_rank(shape.n[i], w)
    return idx


def tensor_unindex(shape: Shape, q: MultiDegree, index: int) -> TensorWord:
    """Inverse of :func:`tensor_index` on the grade-``q`` slice."""
    if not 0 <= index < grade_dim(shape, q):
        raise ValueError(f"index {index} out of range for grade {q}")
    ranks = []
    for i in reversed(range(shape.k)):
        size = shape.n[i] ** q[i]
        index, r = divmod(index, size)
        ranks.append(r)
    ranks.reverse()
    return TensorWord(tuple(word_unrank(shape.n[i], q[i], r) for i, r in enumerate(ranks)))


def enumerate_tensor_words(shape: Shape, q: MultiDegree) -> list[TensorWord]:
    """All tensor words of multi-degree ``q`` in :func:`tensor_index` order."""
    factor_words = [enumerate_words(shape.n[i], q[i]) for i in range(shape.k)]
    return [TensorWord(ws) for ws in itertools.product(*factor_words)]


def leq(q: MultiDegree, p: MultiDegree) -> bool:
    """Componentwise partial order on multi-degrees."""
    return all(a <= b for a, b in zip(q, p))


def iter_grades(caps: tuple[int, ...]):
    """All multi-degrees q <= caps, in lexicographic order."""
    return itertools.product(*(range(c + 1) for c in caps))


def iter_layer(m: int, k: int):
    """All q in Z_+^k with q_1 + ... + q_k = m, in lexicographic order."""
    if k == 1:
        yield (m,)
        return
    for q1 in range(m + 1):
        for rest in iter_layer(m - q1, k - 1):
            yield (q1,) + rest
