"""Commutative polyball machinery on truncated symmetric Fock tensor products.

The model space replaces words by monomials: the grade-``q`` slice of factor
``i`` has dimension ``C(q + n_i - 1, n_i - 1)`` and carries the weighted
monomial inner product ``||z^a||^2 = a!/|a|!``.  The compressed shifts act as
multiplication by the coordinate functions, with entries
``sqrt((a_j + 1)/(q + 1))`` in the orthonormal monomial basis; a literal
symmetrization of the word-model shifts reproduces them, which the tests
cross-check at small caps.

Block-graded operators, kernels, subspaces, and estimators are shared with
the word model through the truncation protocol; only normalizations change
(grade traces are binomial instead of ``n^q``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np

from .basis import Shape, iter_grades
from .berezin import (
    BerezinKernel,
    IndexCheck,
    InnerMultiplier,
    PsdVerdict,
    berezin_kernel,
    has_characteristic_function,
    index_check_from_blocks,
    validate_multiplier_blocks,
)
from .cp import OperatorTuple, cp_apply_power, defect_data, require_membership
from .curvature import (
    IMAG_TOL,
    CurvEstimate,
    NumericalInstabilityError,
    _cesaro_means,
    _check_monotone,
)
from .fock import GradedOperator, creation_op
from .subspaces import BeurlingVerdict, GradedSubspace, MultiplicityEstimate, beurling_check, multiplicity_estimate

COMMUTATION_TOL = 1e-10


def sym_grade_dim(n_i: int, q: int) -> int:
    """Dimension ``C(q + n_i - 1, n_i - 1)`` of the degree-``q`` monomial slice."""
    if n_i < 1 or q < 0:
        raise ValueError(f"need n_i >= 1 and q >= 0, got n_i={n_i}, q={q}")
    return math.comb(q + n_i - 1, n_i - 1)


@lru_cache(maxsize=None)
def monomials(n: int, q: int) -> tuple[tuple[int, ...], ...]:
    """Exponent tuples of total degree ``q`` in ``n`` variables, lexicographic."""
    if n == 1:
        return ((q,),)
    out = []
    for a in range(q + 1):
        for rest in monomials(n - 1, q - a):
            out.append((a,) + rest)
    return tuple(out)


def monomial_weight(alpha: tuple[int, ...]) -> Fraction:
    """Squared monomial norm ``alpha! / |alpha|!``, exact."""
    num = 1
    for a in alpha:
        num *= math.factorial(a)
    return Fraction(num, math.factorial(sum(alpha)))


@dataclass(frozen=True)
class SymFockTruncation:
    """Truncated tensor product of symmetric Fock spaces; same protocol as the word model."""

    shape: Shape
    coeff_dim: int = 1

    model = "symmetric"

    def __post_init__(self):
        self.shape.require_caps()
        if self.coeff_dim < 0:
            raise ValueError("coefficient dimension must be >= 0")

    @cached_property
    def grades(self) -> tuple[tuple[int, ...], ...]:
        return tuple(iter_grades(self.shape.caps))

    @cached_property
    def _offsets(self):
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
        d = 1
        for ni, qi in zip(self.shape.n, q):
            d *= sym_grade_dim(ni, qi)
        return d

    def dim(self, q: tuple[int, ...]) -> int:
        return self.word_dim(q) * self.coeff_dim

    def offset(self, q: tuple[int, ...]) -> int:
        return self._offsets[q]

    def has_grade(self, q: tuple[int, ...]) -> bool:
        return all(0 <= qi <= c for qi, c in zip(q, self.shape.caps))

    def shift_data(self, i: int, j: int, q: tuple[int, ...]):
        """Multiplication by coordinate ``j`` of factor ``i`` on the grade-``q`` monomials."""
        per_factor = [monomials(self.shape.n[l], q[l]) for l in range(self.shape.k)]
        dims = tuple(len(m) for m in per_factor)
        up = monomials(self.shape.n[i], q[i] + 1)
        up_index = {m: r for r, m in enumerate(up)}
        fac_tgt = np.empty(dims[i], dtype=int)
        fac_w = np.empty(dims[i])
        for r, alpha in enumerate(per_factor[i]):
            bumped = tuple(a + (1 if l == j - 1 else 0) for l, a in enumerate(alpha))
            fac_tgt[r] = up_index[bumped]
            fac_w[r] = math.sqrt((alpha[j - 1] + 1) / (q[i] + 1))
        ranks = np.unravel_index(np.arange(self.word_dim(q)), dims)
        new_dims = tuple(len(up) if l == i else d for l, d in enumerate(dims))
        new_ranks = list(ranks)
        new_ranks[i] = fac_tgt[ranks[i]]
        targets = np.ravel_multi_index(tuple(new_ranks), new_dims)
        return targets, fac_w[ranks[i]]


def b_operator(sf: SymFockTruncation, i: int, j: int) -> GradedOperator:
    """Compressed shift of factor ``i``, coordinate ``j``, as a block-graded operator."""
    return creation_op(sf, i, j)


def embedding_matrix(n: int, q: int) -> np.ndarray:
    """Isometry from the degree-``q`` monomial slice into the degree-``q`` word slice.

    Column ``alpha`` is the normalized sum of the word vectors with content
    ``alpha``.
    """
    mons = monomials(n, q)
    index = {m: c for c, m in enumerate(mons)}
    v = np.zeros((n**q, len(mons)), dtype=complex)
    counts = np.zeros(len(mons))
    for widx, word in enumerate(itertools.product(range(1, n + 1), repeat=q)):
        content = tuple(word.count(letter) for letter in range(1, n + 1))
        counts[index[content]] += 1
    for widx, word in enumerate(itertools.product(range(1, n + 1), repeat=q)):
        content = tuple(word.count(letter) for letter in range(1, n + 1))
        c = index[content]
        v[widx, c] = 1.0 / math.sqrt(counts[c])
    return v


def max_intra_commutator(t: OperatorTuple) -> float:
    worst = 0.0
    for mats in t.factors:
        for a, b in itertools.combinations(mats, 2):
            worst = max(worst, float(np.linalg.norm(a @ b - b @ a, 2)))
    return worst


def require_commutative(t: OperatorTuple) -> None:
    """A commutative-polyball element has commuting entries within each factor too."""
    resid = max_intra_commutator(t)
    scale = max(
        (float(np.linalg.norm(a, 2) * np.linalg.norm(b, 2)) for mats in t.factors for a in mats for b in mats),
        default=1.0,
    )
    if resid > COMMUTATION_TOL * max(scale, 1.0):
        raise ValueError(f"entries within a factor do not commute (residual {resid:.3e})")


def curv_c_estimate(t: OperatorTuple, q_max: int, check_char_function: bool = True) -> CurvEstimate:
    """Commutative curvature: grade traces normalized by binomial grade dimensions.

    The third route stored in ``defect_product_seq`` is the factorial-weighted
    form ``n_1! ... n_k! trace[(id - Phi^{q+1})...(I)] / (q^{n_1} ... q^{n_k})``.
    Existence is a theorem only under the characteristic-function hypothesis,
    so the verdict of the constrained kernel test is attached as a caveat when
    it fails.
    """
    require_commutative(t)
    require_membership(t)
    k = t.k
    dd = defect_data(t)
    values: dict[tuple[int, ...], float] = {}

    def walk(i, y, prefix):
        if i == k:
            tr = complex(np.trace(y))
            if abs(tr.imag) > IMAG_TOL * max(abs(tr.real), 1.0):
                raise NumericalInstabilityError(f"grade trace has imaginary part {tr.imag:.3e}")
            denom = 1
            for ni, qi in zip(t.shape.n, prefix):
                denom *= sym_grade_dim(ni, qi)
            values[prefix] = tr.real / denom
            return
        cur = y
        for qi in range(q_max + 1):
            walk(i + 1, cur, prefix + (qi,))
            if qi < q_max:
                cur = _phi(t, i, cur)

    walk(0, dd.defect, ())
    monotone_ok = _check_monotone(values, k)
    corner = [values[(qq,) * k] for qq in range(q_max + 1)]
    cesaro = _cesaro_means(values, k, q_max)
    factorial_form = [float("nan")]
    fact = math.prod(math.factorial(ni) for ni in t.shape.n)
    eye = np.eye(t.dimH, dtype=complex)
    for qq in range(1, q_max + 1):
        y = eye
        for i in range(k):
            y = y - cp_apply_power(t, i, y, qq + 1)
        denom = math.prod(float(qq) ** ni for ni in t.shape.n)
        factorial_form.append(fact * float(np.trace(y).real) / denom)
    routes = [corner[-1], cesaro[-1]]
    if q_max >= 1:
        routes.append(factorial_form[-1])
    spread = max(routes) - min(routes)
    caveats: tuple[str, ...] = ()
    if check_char_function and any(ni >= 2 for ni in t.shape.n):
        caps = (min(q_max, 3) + 1,) * k
        verdict = constrained_char_function(t, caps)
        if not verdict.positive:
            caveats = ("characteristic function test failed; existence of the limit is unproved",)
    return CurvEstimate(
        n=t.shape.n,
        grade_values=values,
        corner_seq=corner,
        cesaro_seq=cesaro,
        defect_product_seq=factorial_form,
        estimate=corner[-1],
        error_proxy=corner[-2] - corner[-1] if q_max >= 1 else float("nan"),
        monotone_ok=monotone_ok,
        formula_spread=spread,
        caveats=caveats,
    )


def _phi(t, i, y):
    out = np.zeros_like(y)
    for a in t.factors[i]:
        out += a @ y @ a.conj().T
    return out


def constrained_berezin(t: OperatorTuple, caps: tuple[int, ...]) -> BerezinKernel:
    """Kernel of a commutative tuple compressed grade-wise to the symmetric components."""
    require_commutative(t)
    kb = berezin_kernel(t, caps)
    sf = SymFockTruncation(t.shape.with_caps(caps), coeff_dim=kb.truncation.coeff_dim)
    blocks = {}
    for q in sf.grades:
        v = np.array([[1.0]], dtype=complex)
        for i in range(t.k):
            v = np.kron(v, embedding_matrix(t.shape.n[i], q[i]))
        full = kb.blocks[q]
        wd = kb.truncation.word_dim(q)
        r = kb.truncation.coeff_dim
        folded = full.reshape(wd, r, t.dimH) if r else full.reshape(wd, 0, t.dimH)
        blocks[q] = np.einsum("wm,wrh->mrh", v.conj(), folded).reshape(
            sf.word_dim(q) * r, t.dimH
        )
    return BerezinKernel(t, sf, blocks, kb.defect, kb.tail_bound)


def constrained_char_function(t: OperatorTuple, caps: tuple[int, ...]) -> PsdVerdict:
    """PSD test of ``Delta_{B (x) I}(I - K K^*)`` on interior grades."""
    kb = constrained_berezin(t, caps)
    return has_characteristic_function(kb)


def materialize_sym_multiplier(theta: InnerMultiplier, caps: tuple[int, ...]) -> dict:
    """Blocks of a symmetric-model multiplier from its monomial symbol coefficients.

    ``coeffs[d][b]`` is the coefficient of the degree-``d`` monomial of index
    ``b``; matrix entries carry the norm ratios ``||z^{a+b}|| / ||z^a||``.
    """
    if theta.model != "symmetric":
        raise ValueError("expected a symmetric-model multiplier")
    shape = Shape(theta.shape.n, caps)
    ds, dt = theta.dim_source, theta.dim_target
    src = SymFockTruncation(shape, coeff_dim=ds)
    blocks: dict = {}
    for s in iter_grades(caps):
        for d, coeff in theta.coeffs.items():
            tgrade = tuple(si + di for si, di in zip(s, d))
            if any(g > c for g, c in zip(tgrade, caps)):
                continue
            src_mons = [monomials(shape.n[i], s[i]) for i in range(shape.k)]
            tgt_mons = [monomials(shape.n[i], tgrade[i]) for i in range(shape.k)]
            tgt_index = [{m: r for r, m in enumerate(ms)} for ms in tgt_mons]
            deg_mons = [monomials(shape.n[i], d[i]) for i in range(shape.k)]
            wd_s = src.word_dim(s)
            wd_t = math.prod(len(ms) for ms in tgt_mons)
            block = blocks.get((s, tgrade))
            if block is None:
                block = np.zeros((wd_t * dt, wd_s * ds), dtype=complex)
                blocks[(s, tgrade)] = block
            dims_s = tuple(len(ms) for ms in src_mons)
            dims_d = tuple(len(ms) for ms in deg_mons)
            dims_t = tuple(len(ms) for ms in tgt_mons)
            for b in range(coeff.shape[0]):
                beta_parts = np.unravel_index(b, dims_d)
                betas = [deg_mons[i][beta_parts[i]] for i in range(shape.k)]
                for a in range(wd_s):
                    alpha_parts = np.unravel_index(a, dims_s)
                    alphas = [src_mons[i][alpha_parts[i]] for i in range(shape.k)]
                    ratio = 1.0
                    tgt_rank = []
                    for i in range(shape.k):
                        gamma = tuple(x + y for x, y in zip(alphas[i], betas[i]))
                        ratio *= math.sqrt(
                            float(monomial_weight(gamma) / monomial_weight(alphas[i]))
                        )
                        tgt_rank.append(tgt_index[i][gamma])
                    g = np.ravel_multi_index(tuple(tgt_rank), dims_t)
                    block[g * dt : (g + 1) * dt, a * ds : (a + 1) * ds] += ratio * coeff[b]
    return blocks


def sym_monomial_multiplier(shape: Shape, exponents: tuple[tuple[int, ...], ...]) -> InnerMultiplier:
    """Multiplication by a single monomial ``prod_i z^{exponents[i]}``; symmetric model."""
    d = tuple(sum(e) for e in exponents)
    dims = [len(monomials(shape.n[i], d[i])) for i in range(shape.k)]
    num = math.prod(dims)
    coeff = np.zeros((num, 1, 1), dtype=complex)
    ranks = [monomials(shape.n[i], d[i]).index(tuple(exponents[i])) for i in range(shape.k)]
    coeff[int(np.ravel_multi_index(tuple(ranks), tuple(dims))), 0, 0] = 1.0
    return InnerMultiplier(Shape(shape.n), 1, 1, {d: coeff}, model="symmetric")


def validate_sym_multiplier(theta: InnerMultiplier, caps: tuple[int, ...]) -> float:
    shape = Shape(theta.shape.n, caps)
    src = SymFockTruncation(shape, coeff_dim=theta.dim_source)
    dst = SymFockTruncation(shape, coeff_dim=theta.dim_target)
    blocks = materialize_sym_multiplier(theta, caps)
    return validate_multiplier_blocks(theta, blocks, src, dst)


def index3_check(kb: BerezinKernel, theta: InnerMultiplier, q: tuple[int, ...] | None = None) -> IndexCheck:
    """Finite-depth index evaluation on the symmetric model."""
    if not isinstance(kb.truncation, SymFockTruncation):
        raise ValueError("expected a kernel on a symmetric truncation")
    caps = kb.truncation.shape.caps
    validate_sym_multiplier(theta, caps)
    blocks = materialize_sym_multiplier(theta, caps)
    return index_check_from_blocks(kb, theta, blocks, q)


def coordinate_multiple_subspace(sf: SymFockTruncation, factor: int, var: int) -> GradedSubspace:
    """Monomials divisible by one coordinate of one factor; graded and shift invariant."""
    if not 1 <= var <= sf.shape.n[factor]:
        raise ValueError(f"variable {var} out of range for factor {factor}")

    def index_set(q):
        per = [monomials(sf.shape.n[l], q[l]) for l in range(sf.shape.k)]
        dims = tuple(len(m) for m in per)
        keep = []
        for a in range(sf.word_dim(q)):
            parts = np.unravel_index(a, dims)
            if per[factor][parts[factor]][var - 1] >= 1:
                keep.extend(a * sf.coeff_dim + c for c in range(sf.coeff_dim))
        return np.asarray(keep, dtype=int)

    def count(q):
        if q[factor] == 0:
            return 0
        total = sf.coeff_dim
        for l in range(sf.shape.k):
            deg = q[l] - 1 if l == factor else q[l]
            total *= sym_grade_dim(sf.shape.n[l], deg)
        return total

    return GradedSubspace(
        sf,
        "coordinate_multiple",
        index_set_fn=index_set,
        limit=Fraction(sf.coeff_dim),
        count_fn=count,
        params={"factor": factor, "var": var},
    )


def sym_cumulative_trace(n_i: int, q: int) -> int:
    """Sum of the degree-slice traces up to ``q``: ``C(q + n_i, n_i)``, exact."""
    return math.comb(q + n_i, n_i)


def universal_factorial_form_value(n: tuple[int, ...], q: int) -> float:
    """Factorial-form sequence of the universal commutative tuple, from exact counts."""
    if q < 1:
        raise ValueError("the factorial form needs q >= 1")
    total = math.prod(sym_cumulative_trace(ni, q) for ni in n)
    fact = math.prod(math.factorial(ni) for ni in n)
    return fact * total / math.prod(float(q) ** ni for ni in n)


@dataclass
class SymMultiplicityReport:
    estimate: MultiplicityEstimate
    beurling: BeurlingVerdict
    caveats: tuple[str, ...]


def m_c_estimate(sub: GradedSubspace, q_max: int) -> SymMultiplicityReport:
    """Multiplicity on the symmetric model, gated by the Beurling verdict.

    For non-Beurling inputs the per-grade values are still reported, with an
    explicit caveat that no convergence theorem applies.
    """
    if not isinstance(sub.truncation, SymFockTruncation):
        raise ValueError("expected a subspace of a symmetric truncation")
    verdict = beurling_check(sub)
    est = multiplicity_estimate(sub, q_max)
    caveats = () if verdict.positive else (
        "not of Beurling type: existence of the multiplicity is unproved",
    )
    est.caveats = caveats
    return SymMultiplicityReport(est, verdict, caveats)
