"""Serialization of fit results: JSON document and aligned text table."""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .covariance import ParameterVector
from .estimate import FitResult
from .model import ModelSpec, parse_model


def _num(x):
    x = float(x)
    return None if not math.isfinite(x) else x


def stars(p: float) -> str:
    if not math.isfinite(p):
        return ""
    return "***" if p < 0.001 else "**" if p < 0.01 else "*" if p < 0.05 else ""


def fit_to_dict(result: FitResult) -> dict:
    rows = []
    for row in result.table():
        rows.append({k: (_num(v) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})
        rows[-1]["sig"] = stars(row["p"])
    # reference loadings: fixed, no standard error
    for b in result.spec.blocks:
        name = f"{b.latent}=~{b.reference}"
        rows.append({
            "name": name, "kind": "loading", "lhs": b.latent, "op": "=~", "rhs": b.reference,
            "estimate": 1.0, "se": None, "z": None, "p": None,
            "standardized": _num(result.standardized.get(name, float("nan"))),
            "fixed": True, "sig": "",
        })
    return {
        "model": result.spec.to_text(),
        "observed": list(result.spec.observed),
        "n": result.moments.n,
        "cases": [str(c) for c in result.moments.cases],
        "parameters": rows,
        "fit": {k: _num(v) for k, v in result.statistics.items()},
        "convergence": {
            "converged": result.converged,
            "iterations": result.iterations,
            "grad_max_norm": _num(result.grad_norm),
            "message": result.message,
        },
        "warnings": list(result.warnings),
    }


def write_fit(result: FitResult, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_to_dict(result), fh, indent=1, sort_keys=False)
        fh.write("\n")


def load_fit(path: str | os.PathLike) -> tuple[ModelSpec, ParameterVector, dict[str, float], dict]:
    """Read a fit document back into (spec, estimates, standardized, raw doc)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    spec = parse_model(doc["model"])
    free = {r["name"]: r["estimate"] for r in doc["parameters"] if not r.get("fixed")}
    est = ParameterVector.from_dict(spec, free)
    std = {r["name"]: r["standardized"] for r in doc["parameters"] if r["standardized"] is not None}
    return spec, est, std, doc


def format_table(result: FitResult) -> str:
    doc = fit_to_dict(result)
    head = f"{'parameter':<44}{'estimate':>11}{'se':>10}{'z':>9}{'p':>9}{'std':>9}"
    lines = [head, "-" * len(head)]

    def cell(v, w, fmt):
        return f"{'':>{w}}" if v is None else f"{v:>{w}{fmt}}"

    order = {"loading": 0, "path": 1, "phi": 2, "psi": 3, "theta": 4}
    rows = sorted(doc["parameters"], key=lambda r: order[r["kind"]])
    for r in rows:
        lines.append(
            f"{r['name']:<44}{cell(r['estimate'], 11, '.4f')}{cell(r['se'], 10, '.4f')}"
            f"{cell(r['z'], 9, '.2f')}{cell(r['p'], 9, '.3f')}{cell(r['standardized'], 9, '.3f')}"
            f" {r['sig']}"
        )
    fit = doc["fit"]
    conv = doc["convergence"]
    lines.append("")
    lines.append(
        f"N = {doc['n']}  chi2 = {fit['chi2']:.3f}  df = {int(fit['df'])}  "
        f"RMSEA = {fit['rmsea'] if fit['rmsea'] is not None else float('nan'):.4f}  CFI = {fit['cfi']:.4f}"
    )
    lines.append(
        f"converged = {conv['converged']}  iterations = {conv['iterations']}  "
        f"max|grad| = {conv['grad_max_norm']:.2e}"
    )
    for w in doc["warnings"]:
        lines.append(f"warning: {w}")
    lines.append("* p<.05  ** p<.01  *** p<.001")
    return "\n".join(lines) + "\n"
