"""Truncated Fock tensor products and block-graded operators.

A truncation stores one grade per multi-degree ``q <= caps``; the coefficient
space is folded into every grade, so a grade's ambient dimension is
``word_dim(q) * coeff_dim``.  Operators are kept block-sparse by grade pair
with dense blocks.  Grade-shifting operators (creation operators and their
symmetric compressions) are described by an index map plus a weight vector
per grade, so large kernels can be shifted without materializing the 0/1
matrices.

Truncation semantics: a shift out of the caps maps to zero.  Every operator
carries a per-factor interior margin counting the transfer-map applications
it contains; identities are asserted only on grades ``q_i <= D_i - margin_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .basis import Shape, grade_dim, iter_grades, leq


@dataclass(frozen=True)
class FockTruncation:
    """Truncated tensor product of full Fock spaces with a folded coefficient space."""

    shape: Shape
    coeff_dim: int = 1

    model = "full"

    def __post_init__(self):
        self.shape.require_caps()
        if self.coeff_dim < 0:
            raise ValueError("coefficient dimension must be >= 0")

    @cached_property
    def grades(self) -> tuple[tuple[int, ...], ...]:
        return tuple(iter_grades(self.shape.caps))

    @cached_property
    def _offsets(self) -> dict[tuple[int, ...], int]:
        out, pos = {}, 0
        for q in self.grades:
            out[q] = pos
            pos += self.dim(q)
        return out

    @property
    def total_dim(self) -> int:
        last = self.grades[-1]
        return self._offsets[last] + self.dim(last)

    def word_dim(self, q: tuple[int, ...]) -> int:
        return grade_dim(self.shape, q)

    def dim(self, q: tuple[int, ...]) -> int:
        return self.word_dim(q) * self.coeff_dim

    def offset(self, q: tuple[int, ...]) -> int:
        return self._offsets[q]

    def has_grade(self, q: tuple[int, ...]) -> bool:
        return all(0 <= qi <= c for qi, c in zip(q, self.shape.caps))

    def shift_data(self, i: int, j: int, q: tuple[int, ...]):
        """Word-level action of the factor-``i`` letter-``j`` creation operator on grade ``q``.

        Returns ``(targets, weights)``: source word ``s`` of grade ``q`` maps to
        ``weights[s]`` times target word ``targets[s]`` of grade ``q + e_i``.
        """
        dims = tuple(self.shape.n[l] ** q[l] for l in range(self.shape.k))
        ranks = np.unravel_index(np.arange(self.word_dim(q)), dims)
        new_dims = tuple(d * self.shape.n[l] if l == i else d for l, d in enumerate(dims))
        new_ranks = list(ranks)
        new_ranks[i] = (j - 1) * dims[i] + ranks[i]
        targets = np.ravel_multi_index(tuple(new_ranks), new_dims)
        return targets, np.ones(self.word_dim(q))


def _expand_indices(idx: np.ndarray, cd: int) -> np.ndarray:
    return (idx[:, None] * cd + np.arange(cd)[None, :]).reshape(-1)


def _expand_weights(w: np.ndarray, cd: int) -> np.ndarray:
    return np.repeat(w, cd)


def bump(q: tuple[int, ...], i: int, by: int = 1) -> tuple[int, ...]:
    return tuple(v + (by if l == i else 0) for l, v in enumerate(q))


@dataclass
class GradedOperator:
    """Block-sparse operator on a truncation; ``blocks[(src, dst)]`` maps grade src to dst."""

    trunc: FockTruncation
    blocks: dict[tuple[tuple[int, ...], tuple[int, ...]], np.ndarray] = field(default_factory=dict)
    margin: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.margin is None:
            self.margin = (0,) * self.trunc.shape.k
        for (src, dst), b in self.blocks.items():
            if b.shape != (self.trunc.dim(dst), self.trunc.dim(src)):
                raise ValueError(f"block {(src, dst)} has shape {b.shape}")

    @classmethod
    def identity(cls, ft: FockTruncation) -> "GradedOperator":
        return cls(ft, {(q, q): np.eye(ft.dim(q), dtype=complex) for q in ft.grades})

    @classmethod
    def zero(cls, ft: FockTruncation) -> "GradedOperator":
        return cls(ft, {})

    @classmethod
    def diagonal(cls, ft: FockTruncation, weight) -> "GradedOperator":
        """Diagonal operator with scalar ``weight(q)`` on each grade; zero weights dropped."""
        blocks = {}
        for q in ft.grades:
            w = weight(q)
            if w:
                blocks[(q, q)] = float(w) * np.eye(ft.dim(q), dtype=complex)
        return cls(ft, blocks)

    def block(self, src, dst) -> np.ndarray:
        b = self.blocks.get((src, dst))
        if b is None:
            return np.zeros((self.trunc.dim(dst), self.trunc.dim(src)), dtype=complex)
        return b

    def _merged_margin(self, other, add=False) -> tuple[int, ...]:
        if add:
            return tuple(a + b for a, b in zip(self.margin, other.margin))
        return tuple(max(a, b) for a, b in zip(self.margin, other.margin))

    def __add__(self, other: "GradedOperator") -> "GradedOperator":
        blocks = dict(self.blocks)
        for key, b in other.blocks.items():
            blocks[key] = blocks[key] + b if key in blocks else b.copy()
        return GradedOperator(self.trunc, blocks, self._merged_margin(other))

    def __sub__(self, other: "GradedOperator") -> "GradedOperator":
        return self + (-1.0) * other

    def __rmul__(self, c) -> "GradedOperator":
        return GradedOperator(self.trunc, {k: c * b for k, b in self.blocks.items()}, self.margin)

    def __matmul__(self, other: "GradedOperator") -> "GradedOperator":
        blocks: dict = {}
        for (src, mid), b in other.blocks.items():
            for dst in self.trunc.grades:
                a = self.blocks.get((mid, dst))
                if a is None:
                    continue
                key = (src, dst)
                prod = a @ b
                blocks[key] = blocks[key] + prod if key in blocks else prod
        return GradedOperator(self.trunc, blocks, self._merged_margin(other, add=True))

    def adjoint(self) -> "GradedOperator":
        return GradedOperator(
            self.trunc,
            {(dst, src): b.conj().T for (src, dst), b in self.blocks.items()},
            self.margin,
        )

    def trace(self) -> complex:
        return sum(np.trace(b) for (src, dst), b in self.blocks.items() if src == dst)

    def grade_trace(self, q: tuple[int, ...]) -> complex:
        b = self.blocks.get((q, q))
        return complex(np.trace(b)) if b is not None else 0.0

    def interior_grades(self, extra: int = 0):
        caps = self.trunc.shape.caps
        return [
            q
            for q in self.trunc.grades
            if all(qi <= c - m - extra for qi, c, m in zip(q, caps, self.margin))
        ]

    def to_dense(self, grades=None) -> np.ndarray:
        ft = self.trunc
        if grades is None:
            grades = list(ft.grades)
        offs, pos = {}, 0
        for q in grades:
            offs[q] = pos
            pos += ft.dim(q)
        out = np.zeros((pos, pos), dtype=complex)
        gset = set(grades)
        for (src, dst), b in self.blocks.items():
            if src in gset and dst in gset:
                out[offs[dst] : offs[dst] + ft.dim(dst), offs[src] : offs[src] + ft.dim(src)] = b
        return out

    def min_eig_interior(self, extra: int = 0) -> float:
        """Smallest eigenvalue of the Hermitian part restricted to interior grades."""
        dense = self.to_dense(self.interior_grades(extra))
        if dense.size == 0:
            return 0.0
        return float(np.linalg.eigvalsh((dense + dense.conj().T) / 2)[0])

    def norm_interior(self, extra: int = 0) -> float:
        dense = self.to_dense(self.interior_grades(extra))
        return float(np.linalg.norm(dense, 2)) if dense.size else 0.0


def creation_op(ft: FockTruncation, i: int, j: int) -> GradedOperator:
    """Creation operator of factor ``i``, letter ``j``, tensored with the coefficient identity."""
    if not 1 <= j <= ft.shape.n[i]:
        raise ValueError(f"letter {j} out of range for factor {i}")
    cd = ft.coeff_dim
    blocks = {}
    for q in ft.grades:
        up = bump(q, i)
        if not ft.has_grade(up):
            continue
        tgt, w = ft.shift_data(i, j, q)
        b = np.zeros((ft.dim(up), ft.dim(q)), dtype=complex)
        rows = _expand_indices(tgt, cd)
        cols = np.arange(ft.dim(q))
        b[rows, cols] = _expand_weights(w, cd)
        blocks[(q, up)] = b
    return GradedOperator(ft, blocks)


def graded_projection(ft: FockTruncation, q: tuple[int, ...]) -> GradedOperator:
    """Orthogonal projection onto the grade-``q`` slice."""
    if not ft.has_grade(q):
        raise ValueError(f"grade {q} beyond caps {ft.shape.caps}")
    return GradedOperator(ft, {(q, q): np.eye(ft.dim(q), dtype=complex)})


def cumulative_projection(ft: FockTruncation, q: tuple[int, ...]) -> GradedOperator:
    """Projection onto the union of grades ``s <= q`` componentwise."""
    if not ft.has_grade(q):
        raise ValueError(f"grade {q} beyond caps {ft.shape.caps}")
    return GradedOperator.diagonal(ft, lambda s: 1.0 if leq(s, q) else 0.0)


def total_degree_projection(ft: FockTruncation, m: int) -> GradedOperator:
    """Projection onto grades of total degree at most ``m``."""
    return GradedOperator.diagonal(ft, lambda s: 1.0 if sum(s) <= m else 0.0)


def vacuum_projection(ft: FockTruncation, i: int | None = None) -> GradedOperator:
    """Projection onto the vacuum slice of factor ``i`` (all factors when ``i`` is None)."""
    if i is None:
        return GradedOperator.diagonal(ft, lambda s: 1.0 if all(v == 0 for v in s) else 0.0)
    return GradedOperator.diagonal(ft, lambda s: 1.0 if s[i] == 0 else 0.0)


def n_weight(ft: FockTruncation, q: tuple[int, ...]) -> GradedOperator:
    """Diagonal weight ``1 / word_dim(s)`` on every grade ``s <= q``."""
    if not ft.has_grade(q):
        raise ValueError(f"grade {q} beyond caps {ft.shape.caps}")
    return GradedOperator.diagonal(ft, lambda s: 1.0 / ft.word_dim(s) if leq(s, q) else 0.0)


def apply_cp_shift(y: GradedOperator, i: int) -> GradedOperator:
    """Transfer map of the universal shift of factor ``i`` applied blockwise.

    Block support moves up by one grade in factor ``i``; blocks that would
    cross the caps are dropped, so the interior margin grows by one there.
    """
    ft = y.trunc
    cd = ft.coeff_dim
    n_i = ft.shape.n[i]
    blocks: dict = {}
    for (src, dst), b in y.blocks.items():
        up_s, up_d = bump(src, i), bump(dst, i)
        if not (ft.has_grade(up_s) and ft.has_grade(up_d)):
            continue
        out = blocks.get((up_s, up_d))
        if out is None:
            out = np.zeros((ft.dim(up_d), ft.dim(up_s)), dtype=complex)
            blocks[(up_s, up_d)] = out
        for j in range(1, n_i + 1):
            tgt_c, w_c = ft.shift_data(i, j, src)
            tgt_r, w_r = ft.shift_data(i, j, dst)
            rows = _expand_indices(tgt_r, cd)
            cols = _expand_indices(tgt_c, cd)
            scaled = (_expand_weights(w_r, cd)[:, None] * b) * _expand_weights(w_c, cd)[None, :]
            out[np.ix_(rows, cols)] += scaled
    margin = tuple(m + (1 if l == i else 0) for l, m in enumerate(y.margin))
    return GradedOperator(ft, blocks, margin)


def defect_shift(y: GradedOperator, factors=None) -> GradedOperator:
    """``(id - Phi_1) o ... o (id - Phi_k)`` of the universal shifts, applied to ``y``."""
    out = y
    rng = range(y.trunc.shape.k) if factors is None else factors
    for i in rng:
        out = out - apply_cp_shift(out, i)
    return out


def cp_shift_power(y: GradedOperator, i: int, q: int) -> GradedOperator:
    for _ in range(q):
        y = apply_cp_shift(y, i)
    return y


def cp_shift_multi(y: GradedOperator, q: tuple[int, ...]) -> GradedOperator:
    for i, qi in enumerate(q):
        y = cp_shift_power(y, i, qi)
    return y
