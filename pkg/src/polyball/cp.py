"""Matrix tuples, their completely positive transfer maps, and defect calculus.

An operator tuple is a k-tuple of row tuples of square matrices on a common
finite-dimensional space, with cross-factor entries commuting.  The transfer
map of factor ``i`` is ``Y -> sum_j T_{i,j} Y T_{i,j}^*``; defect maps are
alternating compositions of ``id - Phi_i``.  Everything here is exact
finite-dimensional linear algebra; no Fock truncation is involved.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import Shape

COMMUTATION_TOL = 1e-10
PSD_TOL = 1e-10
PURITY_TOL = 1e-9
STALL_TOL = 1e-12
MAX_PURITY_ITER = 200
RANK_TOL = 1e-9

DENSE_CP_MAX_DIM = 16


class DefectNotPositiveError(ValueError):
    """The defect of a tuple fails positivity beyond tolerance."""

    def __init__(self, eigenvalue: float):
        super().__init__(f"defect has negative eigenvalue {eigenvalue:.3e} beyond tolerance")
        self.eigenvalue = eigenvalue


class MembershipError(ValueError):
    """A tuple is not a member of the regular polyball."""

    def __init__(self, p: tuple[int, ...], eigenvalue: float):
        super().__init__(
            f"defect map at p={p} has negative eigenvalue {eigenvalue:.3e}; not a polyball member"
        )
        self.p = p
        self.eigenvalue = eigenvalue


def herm(a: np.ndarray) -> np.ndarray:
    """Symmetrize before eigendecomposition to kill roundoff asymmetry."""
    return (a + a.conj().T) / 2


def min_eig(a: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(herm(a))[0]) if a.size else 0.0


@dataclass(frozen=True)
class OperatorTuple:
    """A k-tuple of row tuples of dimH x dimH complex matrices."""

    shape: Shape
    dimH: int
    factors: tuple[tuple[np.ndarray, ...], ...]

    def __post_init__(self):
        if len(self.factors) != self.shape.k:
            raise ValueError("factor count does not match shape")
        frozen = []
        for i, mats in enumerate(self.factors):
            if len(mats) != self.shape.n[i]:
                raise ValueError(f"factor {i} has {len(mats)} entries, expected {self.shape.n[i]}")
            row = []
            for m in mats:
                a = np.asarray(m, dtype=complex)
                if a.shape != (self.dimH, self.dimH):
                    raise ValueError(f"entry of factor {i} has shape {a.shape}, expected square dim {self.dimH}")
                a = a.copy()
                a.flags.writeable = False
                row.append(a)
            frozen.append(tuple(row))
        object.__setattr__(self, "factors", tuple(frozen))
        resid = max_cross_commutator(self)
        if resid > self._commutation_bound():
            raise ValueError(f"cross-factor entries do not commute (residual {resid:.3e})")

    def _commutation_bound(self) -> float:
        scale = max(
            (np.linalg.norm(a, 2) * np.linalg.norm(b, 2))
            for s, t in itertools.combinations(range(self.shape.k), 2)
            for a in self.factors[s]
            for b in self.factors[t]
        ) if self.shape.k > 1 else 0.0
        return COMMUTATION_TOL * max(scale, 1.0)

    @property
    def k(self) -> int:
        return self.shape.k

    def entry(self, i: int, j: int) -> np.ndarray:
        """Matrix of generator ``j`` (1-based letter) in factor ``i`` (0-based)."""
        return self.factors[i][j - 1]

    def word_product_adjoint(self, i: int, word: tuple[int, ...]) -> np.ndarray:
        """``T_{i,word}^* = T_{j_p}^* ... T_{j_1}^*`` for a letter word."""
        out = np.eye(self.dimH, dtype=complex)
        for letter in word:
            out = self.entry(i, letter).conj().T @ out
        return out


def max_cross_commutator(t: OperatorTuple) -> float:
    """Largest norm of a commutator between entries of distinct factors."""
    worst = 0.0
    for s, u in itertools.combinations(range(t.shape.k), 2):
        for a in t.factors[s]:
            for b in t.factors[u]:
                worst = max(worst, np.linalg.norm(a @ b - b @ a, 2))
    return worst


def cp_apply(t: OperatorTuple, i: int, y: np.ndarray) -> np.ndarray:
    """Transfer map of factor ``i``: ``sum_j T_{i,j} Y T_{i,j}^*``."""
    y = np.asarray(y, dtype=complex)
    if y.shape != (t.dimH, t.dimH):
        raise ValueError(f"argument has shape {y.shape}, expected ({t.dimH}, {t.dimH})")
    out = np.zeros_like(y)
    for a in t.factors[i]:
        out += a @ y @ a.conj().T
    return out


def cp_apply_power(t: OperatorTuple, i: int, y: np.ndarray, q: int) -> np.ndarray:
    for _ in range(q):
        y = cp_apply(t, i, y)
    return y


def cp_matrix(t: OperatorTuple, i: int) -> np.ndarray:
    """Dense dimH^2 x dimH^2 matrix of the factor-``i`` transfer map (test oracle path)."""
    if t.dimH > DENSE_CP_MAX_DIM:
        raise ValueError(f"dense transfer matrix limited to dimH <= {DENSE_CP_MAX_DIM}")
    out = np.zeros((t.dimH**2, t.dimH**2), dtype=complex)
    for a in t.factors[i]:
        out += np.kron(a, a.conj())
    return out


def defect_map(t: OperatorTuple, p: tuple[int, ...], y: np.ndarray) -> np.ndarray:
    """``(id - Phi_1)^{p_1} o ... o (id - Phi_k)^{p_k}`` applied to ``y``."""
    if len(p) != t.k or any(v < 0 for v in p):
        raise ValueError(f"exponent vector {p} invalid for k={t.k}")
    out = np.asarray(y, dtype=complex)
    if out.shape != (t.dimH, t.dimH):
        raise ValueError(f"argument has shape {out.shape}, expected ({t.dimH}, {t.dimH})")
    for i in range(t.k):
        for _ in range(p[i]):
            out = out - cp_apply(t, i, out)
    return out


def defect_map_expanded(t: OperatorTuple, p: tuple[int, ...], y: np.ndarray) -> np.ndarray:
    """Binomial expansion ``sum_{0<=s<=p} (-1)^{|s|} C(p,s) Phi^s(y)``; cross-check route."""
    out = np.zeros((t.dimH, t.dimH), dtype=complex)
    for s in itertools.product(*(range(v + 1) for v in p)):
        term = np.asarray(y, dtype=complex)
        for i in range(t.k):
            term = cp_apply_power(t, i, term, s[i])
        coeff = (-1) ** sum(s)
        for pi, si in zip(p, s):
            coeff *= math.comb(pi, si)
        out += coeff * term
    return out


@dataclass(frozen=True)
class PolyballVerdict:
    member: bool
    worst_p: tuple[int, ...]
    worst_eig: float
    eigenvalues: dict = field(repr=False)


def check_polyball(t: OperatorTuple) -> PolyballVerdict:
    """PSD test of every defect map value at exponents p in {0,1}^k."""
    resid = max_cross_commutator(t)
    if resid > t._commutation_bound():
        raise ValueError(f"cross-factor entries do not commute (residual {resid:.3e})")
    eye = np.eye(t.dimH, dtype=complex)
    eigs: dict[tuple[int, ...], float] = {}
    worst_p, worst_margin, worst_eig = (0,) * t.k, np.inf, 0.0
    member = True
    for p in itertools.product((0, 1), repeat=t.k):
        d = defect_map(t, p, eye)
        lo = min_eig(d)
        eigs[p] = lo
        bound = -PSD_TOL * max(np.linalg.norm(d, 2), 1.0)
        margin = lo - bound
        if lo < bound:
            member = False
        if margin < worst_margin:
            worst_p, worst_margin, worst_eig = p, margin, lo
    return PolyballVerdict(member, worst_p, worst_eig, eigs)


def require_membership(t: OperatorTuple) -> PolyballVerdict:
    v = check_polyball(t)
    if not v.member:
        raise MembershipError(v.worst_p, v.worst_eig)
    return v


@dataclass(frozen=True)
class PurityReport:
    verdicts: tuple[str, ...]
    iterations: tuple[int, ...]
    final_norms: tuple[float, ...]

    @property
    def overall(self) -> str:
        if all(v == "pure" for v in self.verdicts):
            return "pure"
        if any(v == "not_pure" for v in self.verdicts):
            return "not_pure"
        return "undetermined"


def check_pure(t: OperatorTuple, purity_tol: float = PURITY_TOL, max_iter: int = MAX_PURITY_ITER) -> PurityReport:
    """Iterate ``Y <- Phi_i(Y)`` from the identity; heuristic norm-decay purity test."""
    verdicts, iters, norms = [], [], []
    for i in range(t.k):
        y = np.eye(t.dimH, dtype=complex)
        verdict = "undetermined"
        norm = 1.0
        it = 0
        for it in range(1, max_iter + 1):
            y = cp_apply(t, i, y)
            new_norm = float(np.linalg.norm(y, 2))
            if new_norm < purity_tol:
                verdict = "pure"
                norm = new_norm
                break
            if abs(new_norm - norm) < STALL_TOL * max(norm, 1.0) and new_norm > 10 * purity_tol:
                verdict = "not_pure"
                norm = new_norm
                break
            norm = new_norm
        verdicts.append(verdict)
        iters.append(it)
        norms.append(norm)
    return PurityReport(tuple(verdicts), tuple(iters), tuple(norms))


@dataclass(frozen=True)
class DefectData:
    defect: np.ndarray
    sqrt: np.ndarray
    rank: int
    range_basis: np.ndarray  # dimH x rank, orthonormal columns


def defect_data(t: OperatorTuple) -> DefectData:
    """Hermitian eigendecomposition of the defect, with clipped spectrum and numerical rank."""
    d = herm(defect_map(t, (1,) * t.k, np.eye(t.dimH, dtype=complex)))
    vals, vecs = np.linalg.eigh(d)
    lo = float(vals[0])
    scale = max(float(vals[-1]), 0.0) if len(vals) else 0.0
    if lo < -PSD_TOL * max(np.linalg.norm(d, 2), 1.0):
        raise DefectNotPositiveError(lo)
    clipped = np.clip(vals, 0.0, None)
    sqrt = (vecs * np.sqrt(clipped)) @ vecs.conj().T
    keep = clipped > RANK_TOL * max(scale, 0.0) if scale > 0 else np.zeros_like(clipped, dtype=bool)
    rank = int(np.count_nonzero(keep))
    order = np.argsort(clipped)[::-1]
    cols = [vecs[:, j] for j in order if keep[j]]
    basis = np.stack(cols, axis=1) if cols else np.zeros((t.dimH, 0), dtype=complex)
    return DefectData(d, sqrt, rank, basis)


def direct_sum(t: OperatorTuple, u: OperatorTuple) -> OperatorTuple:
    """Block-diagonal tuple on the direct sum of the two spaces."""
    if t.shape.n != u.shape.n:
        raise ValueError(f"shape mismatch: {t.shape.n} vs {u.shape.n}")
    dim = t.dimH + u.dimH
    factors = []
    for i in range(t.k):
        row = []
        for a, b in zip(t.factors[i], u.factors[i]):
            m = np.zeros((dim, dim), dtype=complex)
            m[: t.dimH, : t.dimH] = a
            m[t.dimH :, t.dimH :] = b
            row.append(m)
        factors.append(tuple(row))
    return OperatorTuple(Shape(t.shape.n), dim, tuple(factors))


def ampliation(tuples: list[OperatorTuple]) -> OperatorTuple:
    """Tuple with entries ``I x ... x X_{r,s} x ... x I`` on the tensor product of the spaces.

    Each input must be a polyball member; the defect of the result factors as
    the tensor product of the factor defects, which is verified.
    """
    if not tuples:
        raise ValueError("need at least one tuple")
    for t in tuples:
        require_membership(t)
    if len(tuples) == 1:
        return tuples[0]
    dims = [t.dimH for t in tuples]
    total = int(np.prod(dims))
    n = tuple(ni for t in tuples for ni in t.shape.n)
    factors = []
    for b, t in enumerate(tuples):
        for i in range(t.k):
            row = []
            for a in t.factors[i]:
                pieces = [np.eye(d, dtype=complex) for d in dims]
                pieces[b] = a
                m = pieces[0]
                for piece in pieces[1:]:
                    m = np.kron(m, piece)
                row.append(m)
            factors.append(tuple(row))
    out = OperatorTuple(Shape(n), total, tuple(factors))
    expected = np.array([[1.0 + 0j]])
    for t in tuples:
        expected = np.kron(expected, defect_map(t, (1,) * t.k, np.eye(t.dimH, dtype=complex)))
    got = defect_map(out, (1,) * out.k, np.eye(total, dtype=complex))
    if np.linalg.norm(got - expected, 2) > PSD_TOL * max(np.linalg.norm(expected, 2), 1.0):
        raise ValueError("ampliation defect does not factor as the tensor product of factor defects")
    return out


def tuple_to_json(t: OperatorTuple) -> str:
    """Serialize to the wire format; floats round-trip bit-exactly."""
    return json.dumps(
        {
            "n": list(t.shape.n),
            "dimH": t.dimH,
            "factors": [[_matrix_to_pairs(a) for a in row] for row in t.factors],
        }
    )


def tuple_from_json(text: str) -> OperatorTuple:
    data = json.loads(text)
    n = tuple(int(v) for v in data["n"])
    dim = int(data["dimH"])
    factors = tuple(
        tuple(_matrix_from_pairs(m, dim) for m in row) for row in data["factors"]
    )
    return OperatorTuple(Shape(n), dim, factors)


def _matrix_to_pairs(a: np.ndarray) -> list[list[float]]:
    return [[float(v.real), float(v.imag)] for v in a.reshape(-1)]


def _matrix_from_pairs(pairs, dim: int) -> np.ndarray:
    if len(pairs) != dim * dim:
        raise ValueError(f"matrix payload has {len(pairs)} entries, expected {dim * dim}")
    flat = np.array([complex(re, im) for re, im in pairs], dtype=complex)
    return flat.reshape(dim, dim)
