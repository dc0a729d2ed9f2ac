"""Command-line front end: estimators, identity checks, and subspace constructions.

Output is deterministic: tables are sorted lexicographically by multi-degree,
floats are printed with 17 significant digits, and grade-parallel work is
merged in submission order, so identical inputs produce byte-identical
output at any thread count.

Exit codes: 0 success, 1 bad input, 2 polyball membership failure,
3 numerical instability.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .basis import iter_grades
from .berezin import (
    berezin_kernel,
    connection_identity,
    curvature_operator_trace,
    index_formula_check,
    multiplier_from_json,
    verify_intertwining,
)
from .cp import MembershipError, tuple_from_json
from .curvature import NumericalInstabilityError, bounds_report, curvature_estimate
from .subspaces import (
    beurling_check,
    construct_mt,
    construct_nadic,
    cur0_subspace,
    multiplicity_estimate,
    subspace_from_json,
    subspace_to_json,
    tensor_subspace,
    uncountable_family,
)
from .symmetric import constrained_berezin, curv_c_estimate, index3_check, m_c_estimate


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _render_json(value, indent: int = 0) -> str:
    """Deterministic JSON rendering with 17-significant-digit floats."""
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [
            f'{pad}  {json.dumps(str(k))}: {_render_json(v, indent + 1)}'
            for k, v in value.items()
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [f"{pad}  {_render_json(v, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, float):
        return fmt(value)
    return json.dumps(value)


def _write(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _parse_caps(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("POLYBALL_THREADS")
    return max(1, int(env)) if env else 1


def _grade_rows(values, k, cesaro, defect_product, qmax, value_key):
    rows = []
    for q in sorted(values):
        row = {f"q{i + 1}": q[i] for i in range(k)}
        row[value_key] = values[q]
        m = sum(q)
        row["cesaro"] = cesaro[m] if m < len(cesaro) else None
        if defect_product is not None and len(set(q)) == 1:
            row["defect_product"] = defect_product[q[0]]
        else:
            row["defect_product"] = None
        rows.append(row)
    return rows


def _rows_to_csv(rows) -> str:
    if not rows:
        return "\n"
    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for key in header:
            v = row[key]
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(fmt(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _emit(payload: dict, rows, args) -> None:
    if args.format == "csv":
        _write(_rows_to_csv(rows or []), args.out)
    else:
        if rows is not None:
            payload = payload | {"table": rows}
        _write(_render_json(payload) + "\n", args.out)


def cmd_curv(args) -> int:
    with open(args.input) as fh:
        t = tuple_from_json(fh.read())
    est = curvature_estimate(t, args.qmax)
    bounds = bounds_report(t, args.qmax)
    depth = min(args.qmax, 3)
    kb = berezin_kernel(t, (depth + 1,) * t.k)
    op_trace = curvature_operator_trace(kb, (depth,) * t.k)
    cross = {
        "depth": depth,
        "ratio": est.grade_values[(depth,) * t.k],
        "cesaro": est.cesaro_seq[depth],
        "defect_product": est.defect_product_seq[depth],
        "operator_trace": op_trace.value,
    }
    by_formula = {
        "ratio": est.estimate,
        "cesaro": est.cesaro_seq[-1],
        "defect-product": est.defect_product_seq[-1],
        "operator-trace": op_trace.value,
    }
    payload = {
        "command": "curv",
        "n": list(t.shape.n),
        "dimH": t.dimH,
        "qmax": args.qmax,
        "formula": args.formula,
        "estimate": by_formula[args.formula],
        "corner_estimate": est.estimate,
        "error_proxy": est.error_proxy,
        "formula_spread": est.formula_spread,
        "monotone_ok": est.monotone_ok,
        "bounds_chain": [0.0, bounds.estimate, bounds.defect_trace, float(bounds.rank)],
        "formula_cross_check": cross,
        "corner_seq": list(est.corner_seq),
        "cesaro_seq": list(est.cesaro_seq),
        "defect_product_seq": list(est.defect_product_seq),
    }
    rows = _grade_rows(est.grade_values, t.k, est.cesaro_seq, est.defect_product_seq,
                       args.qmax, "x_q")
    _emit(payload, rows, args)
    return 0


def cmd_curv_c(args) -> int:
    with open(args.input) as fh:
        t = tuple_from_json(fh.read())
    est = curv_c_estimate(t, args.qmax)
    payload = {
        "command": "curv-c",
        "n": list(t.shape.n),
        "dimH": t.dimH,
        "qmax": args.qmax,
        "estimate": est.estimate,
        "error_proxy": est.error_proxy,
        "formula_spread": est.formula_spread,
        "monotone_ok": est.monotone_ok,
        "caveats": list(est.caveats),
        "corner_seq": list(est.corner_seq),
        "cesaro_seq": list(est.cesaro_seq),
        "factorial_form_seq": [None] + [float(v) for v in est.defect_product_seq[1:]],
    }
    rows = _grade_rows(est.grade_values, t.k, est.cesaro_seq, None, args.qmax, "x_q")
    _emit(payload, rows, args)
    return 0


def cmd_mult(args) -> int:
    with open(args.input) as fh:
        sub = subspace_from_json(fh.read())
    qmax = min(args.qmax, min(sub.truncation.shape.caps))
    if sub.truncation.model == "symmetric":
        rep = m_c_estimate(sub, qmax)
        est = rep.estimate
        extra = {
            "model": "symmetric",
            "beurling_positive": rep.beurling.positive,
            "beurling_min_eigenvalue": rep.beurling.min_eigenvalue,
            "caveats": list(rep.caveats),
        }
    else:
        est = multiplicity_estimate(sub, qmax)
        extra = {"model": "full"}
    payload = {
        "command": "mult",
        "n": list(sub.truncation.shape.n),
        "dimE": sub.truncation.coeff_dim,
        "qmax": qmax,
        "estimate": est.estimate,
        "error_proxy": est.error_proxy,
        "exact_limit": None if est.exact_limit is None else float(est.exact_limit),
        "compression_curvature_estimate": est.curvature.estimate,
    } | extra
    rows = _grade_rows(est.grade_values, sub.truncation.shape.k, est.cesaro_seq, None,
                       qmax, "y_q")
    _emit(payload, rows, args)
    return 0


def cmd_construct(args) -> int:
    kind = args.kind
    if kind == "mt":
        exp = construct_nadic(args.n, args.t, args.terms)
        sub = construct_mt(exp, args.caps[0])
    elif kind == "cur0":
        sub = cur0_subspace(args.n, args.caps[0])
    elif kind == "uncountable":
        sub = uncountable_family(args.t, args.omega, args.caps, n_terms=args.terms)
    elif kind == "tensor":
        parts = []
        for path in args.input.split(","):
            with open(path) as fh:
                parts.append(subspace_from_json(fh.read()))
        sub = tensor_subspace(parts)
    else:
        raise ValueError(f"unknown construction {kind!r}")
    _write(subspace_to_json(sub) + "\n", args.out)
    return 0


def cmd_check(args) -> int:
    kind = args.kind
    if kind == "beurling":
        with open(args.input) as fh:
            sub = subspace_from_json(fh.read())
        v = beurling_check(sub)
        payload = {
            "command": "check",
            "kind": "beurling",
            "positive": v.positive,
            "min_eigenvalue": v.min_eigenvalue,
            "interior_grades": v.residual_grades,
        }
        _emit(payload, None, args)
        return 0
    with open(args.input) as fh:
        t = tuple_from_json(fh.read())
    caps = args.caps if args.caps else (args.qmax + 1,) * t.k
    tol = args.tol if args.tol is not None else 1e-10
    if kind == "connection":
        kb = berezin_kernel(t, caps)
        grades = sorted(iter_grades(tuple(min(args.qmax, c) for c in caps)))
        with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
            resids = list(pool.map(lambda q: connection_identity(kb, q)[2], grades))
        rows = [
            {f"q{i + 1}": q[i] for i in range(t.k)} | {"residual": r}
            for q, r in zip(grades, resids)
        ]
        payload = {
            "command": "check",
            "kind": "connection",
            "caps": list(caps),
            "max_residual": max(resids),
            "tail_bound": kb.tail_bound,
            "tol": tol,
            "within_tol": max(resids) <= tol,
        }
        _emit(payload, rows, args)
        return 0
    if kind == "intertwine":
        kb = berezin_kernel(t, caps)
        resid = verify_intertwining(kb)
        payload = {
            "command": "check",
            "kind": "intertwine",
            "caps": list(caps),
            "max_residual": resid,
            "tol": tol,
            "within_tol": resid <= tol,
        }
        _emit(payload, None, args)
        return 0
    if kind == "index":
        with open(args.theta) as fh:
            theta = multiplier_from_json(fh.read())
        if theta.model == "symmetric":
            kb = constrained_berezin(t, caps)
            chk = index3_check(kb, theta)
        else:
            kb = berezin_kernel(t, caps)
            chk = index_formula_check(kb, theta)
        payload = {
            "command": "check",
            "kind": "index",
            "model": theta.model,
            "lhs": chk.lhs,
            "rhs": chk.rhs,
            "residual": chk.residual,
            "completion_residual": chk.completion_residual,
            "rank": kb.defect.rank,
        }
        _emit(payload, None, args)
        return 0
    raise ValueError(f"unknown check {kind!r}")


def cmd_demo(args) -> int:
    lines = []
    r = 0.5
    t_json = json.dumps({"n": [1], "dimH": 1, "factors": [[[[r, 0.0]]]]})
    t = tuple_from_json(t_json)
    est = curvature_estimate(t, 6)
    lines.append(f"scalar tuple r={r}: curvature corner sequence")
    lines.append("  " + " ".join(fmt(v) for v in est.corner_seq))
    exp = construct_nadic(2, 0.5)
    sub = construct_mt(exp, 8)
    mult = multiplicity_estimate(sub, 8)
    lines.append("suffix subspace at t=0.5: per-grade occupation " + fmt(mult.estimate)
                 + ", exact limit " + fmt(float(mult.exact_limit)))
    v = beurling_check(sub)
    lines.append(f"its positivity test: {v.positive} (min eigenvalue {fmt(v.min_eigenvalue)})")
    fam = uncountable_family(0.3, 0.75, (8, 8))
    from .curvature import subspace_curvature

    curv = subspace_curvature(fam, 8)
    lines.append("two-factor family at t=0.3: compression curvature limit "
                 + fmt(float(curv.exact_limit)))
    _write("\n".join(lines) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyball",
        description="curvature and multiplicity invariants of operator tuples on regular polyballs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", required=True, help="input JSON path")
        p.add_argument("--caps", type=_parse_caps, default=None, help="per-factor caps a,b,...")
        p.add_argument("--qmax", type=int, default=6)
        p.add_argument("--tol", type=float, default=None, help="tolerance override (reserved)")
        p.add_argument("--formula", choices=["ratio", "cesaro", "defect-product", "operator-trace"],
                       default="ratio")
        p.add_argument("--format", choices=["json", "csv"], default="json")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None)

    p_curv = sub.add_parser("curv", help="curvature of an operator tuple")
    common(p_curv)
    p_curv.set_defaults(func=cmd_curv)

    p_curvc = sub.add_parser("curv-c", help="commutative curvature of an operator tuple")
    common(p_curvc)
    p_curvc.set_defaults(func=cmd_curv_c)

    p_mult = sub.add_parser("mult", help="multiplicity of an invariant subspace")
    common(p_mult)
    p_mult.set_defaults(func=cmd_mult)

    p_con = sub.add_parser("construct", help="write a subspace JSON")
    p_con.add_argument("kind", choices=["mt", "tensor", "cur0", "uncountable"])
    p_con.add_argument("--input", default=None, help="comma-separated part files (tensor)")
    p_con.add_argument("--n", type=int, default=2)
    p_con.add_argument("--t", type=float, default=0.5)
    p_con.add_argument("--omega", type=float, default=0.75)
    p_con.add_argument("--terms", type=int, default=20)
    p_con.add_argument("--caps", type=_parse_caps, default=(8,))
    p_con.add_argument("--format", choices=["json", "csv"], default="json")
    p_con.add_argument("--threads", type=int, default=None)
    p_con.add_argument("--out", default=None)
    p_con.set_defaults(func=cmd_construct)

    p_chk = sub.add_parser("check", help="identity and positivity checks")
    p_chk.add_argument("kind", choices=["beurling", "connection", "index", "intertwine"])
    common(p_chk)
    p_chk.add_argument("--theta", default=None, help="multiplier JSON (index check)")
    p_chk.set_defaults(func=cmd_check)

    p_demo = sub.add_parser("demo", help="small showcase run")
    p_demo.add_argument("--out", default=None)
    p_demo.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MembershipError as exc:
        payload = {"error": "membership", "reason": str(exc), "p": list(exc.p),
                   "eigenvalue": exc.eigenvalue}
        sys.stderr.write(_render_json(payload) + "\n")
        return 2
    except NumericalInstabilityError as exc:
        sys.stderr.write(_render_json({"error": "numerical-instability", "reason": str(exc)}) + "\n")
        return 3
    except json.JSONDecodeError as exc:
        payload = {"error": "parse", "reason": exc.msg, "line": exc.lineno, "column": exc.colno}
        sys.stderr.write(_render_json(payload) + "\n")
        return 1
    except (OSError, ValueError, KeyError) as exc:
        sys.stderr.write(_render_json({"error": "invalid-input", "reason": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
