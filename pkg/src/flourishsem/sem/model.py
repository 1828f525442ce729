"""Model specification: latent blocks, structural paths, parameter packing."""

from __future__ import annotations

import os
import re
from collections.abc import Iterable
from dataclasses import dataclass, field
from importlib import resources

import numpy as np


class SpecError(ValueError):
    """The model specification is malformed or violates simple structure."""


@dataclass(frozen=True)
class Block:
    """One measurement block: a latent and the indicators loading on it."""

    latent: str
    indicators: tuple[str, ...]
    reference: str


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # loading | path | phi | psi | theta
    lhs: str
    op: str
    rhs: str
    row: int
    col: int

    @property
    def is_variance(self) -> bool:
        return self.kind in ("psi", "theta") or (self.kind == "phi" and self.row == self.col)


@dataclass(frozen=True)
class ModelSpec:
    """Simple-structure latent variable model.

    Latents that receive a structural path are endogenous; the rest are
    exogenous. Exogenous latents have a free covariance matrix (``phi``),
    endogenous latents a diagonal residual covariance (``psi``), and every
    observed variable a residual variance (``theta``).

    The free-parameter vector is packed in this order:

    1. non-reference loadings, block by block in declaration order
    2. structural paths in declaration order
    3. exogenous (co)variances, lower triangle row by row
    4. endogenous residual variances
    5. observed residual variances, in observed order
    """

    blocks: tuple[Block, ...]
    paths: tuple[tuple[str, str], ...] = ()
    source: str = field(default="", compare=False)

    def __post_init__(self):
        seen: dict[str, str] = {}
        latents = [b.latent for b in self.blocks]
        if len(set(latents)) != len(latents):
            raise SpecError("latent declared twice")
        for b in self.blocks:
            if not b.indicators:
                raise SpecError(f"latent {b.latent!r} has no indicators")
            if b.reference not in b.indicators:
                raise SpecError(f"reference {b.reference!r} is not an indicator of {b.latent!r}")
            for ind in b.indicators:
                if ind in seen:
                    raise SpecError(
                        f"indicator {ind!r} loads on both {seen[ind]!r} and {b.latent!r} "
                        "(simple structure violated)"
                    )
                if ind in latents:
                    raise SpecError(f"{ind!r} is used as both latent and indicator")
                seen[ind] = b.latent
        outcomes = {o for o, _ in self.paths}
        if len(set(self.paths)) != len(self.paths):
            raise SpecError("duplicate structural path")
        for o, pr in self.paths:
            for name in (o, pr):
                if name not in latents:
                    raise SpecError(f"structural path references unknown latent {name!r}")
            if o == pr:
                raise SpecError(f"latent {o!r} regressed on itself")
            if pr in outcomes:
                raise SpecError(f"path {o} ~ {pr}: predictors must be exogenous latents")

    # -- structure ---------------------------------------------------------

    @property
    def latents(self) -> tuple[str, ...]:
        return tuple(b.latent for b in self.blocks)

    @property
    def observed(self) -> tuple[str, ...]:
        return tuple(i for b in self.blocks for i in b.indicators)

    @property
    def endogenous(self) -> tuple[str, ...]:
        outs = {o for o, _ in self.paths}
        return tuple(l for l in self.latents if l in outs)

    @property
    def exogenous(self) -> tuple[str, ...]:
        outs = {o for o, _ in self.paths}
        return tuple(l for l in self.latents if l not in outs)

    @property
    def n_observed(self) -> int:
        return len(self.observed)

    def block(self, latent: str) -> Block:
        for b in self.blocks:
            if b.latent == latent:
                return b
        raise KeyError(latent)

    def loading_shapes(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """Shapes of the exogenous and endogenous loading matrices."""
        px = sum(len(self.block(l).indicators) for l in self.exogenous)
        py = sum(len(self.block(l).indicators) for l in self.endogenous)
        return (px, len(self.exogenous)), (py, len(self.endogenous))

    # -- parameters --------------------------------------------------------

    @property
    def params(self) -> tuple[Param, ...]:
        cached = self.__dict__.get("_params")
        if cached is None:
            cached = self._build_params()
            object.__setattr__(self, "_params", cached)
        return cached

    def _build_params(self) -> tuple[Param, ...]:
        lat = {l: i for i, l in enumerate(self.latents)}
        obs = {o: i for i, o in enumerate(self.observed)}
        out = []
        for b in self.blocks:
            for ind in b.indicators:
                if ind != b.reference:
                    out.append(Param(f"{b.latent}=~{ind}", "loading", b.latent, "=~", ind,
                                     obs[ind], lat[b.latent]))
        for o, pr in self.paths:
            out.append(Param(f"{o}~{pr}", "path", o, "~", pr, lat[o], lat[pr]))
        exo = self.exogenous
        for i, a in enumerate(exo):
            for b_ in exo[: i + 1]:
                out.append(Param(f"{a}~~{b_}", "phi", a, "~~", b_, lat[a], lat[b_]))
        for e in self.endogenous:
            out.append(Param(f"{e}~~{e}", "psi", e, "~~", e, lat[e], lat[e]))
        for o in self.observed:
            out.append(Param(f"{o}~~{o}", "theta", o, "~~", o, obs[o], obs[o]))
        return tuple(out)

    @property
    def n_free(self) -> int:
        return len(self.params)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def degrees_of_freedom(self) -> int:
        p = self.n_observed
        return p * (p + 1) // 2 - self.n_free

    def kind_index(self, kind: str) -> np.ndarray:
        return np.array([i for i, p in enumerate(self.params) if p.kind == kind], dtype=int)

    def variance_mask(self) -> np.ndarray:
        return np.array([p.is_variance for p in self.params])

    def to_text(self) -> str:
        lines = []
        for b in self.blocks:
            toks = list(b.indicators)
            if b.reference != toks[0]:
                toks = [t if t == b.reference else f"{t}*free" for t in toks]
                toks[toks.index(b.reference)] = f"{b.reference} =1@{b.reference}"
            lines.append(f"{b.latent} =~ {' '.join(toks)}")
        for o, pr in self.paths:
            lines.append(f"{o} ~ {pr}")
        return "\n".join(lines) + "\n"

    def reordered(self, blocks: Iterable[str] | None = None,
                  indicators: dict[str, Iterable[str]] | None = None) -> ModelSpec:
        """Same model with blocks and/or indicators declared in another order."""
        order = list(blocks) if blocks is not None else list(self.latents)
        new = []
        for l in order:
            b = self.block(l)
            inds = tuple(indicators[l]) if indicators and l in indicators else b.indicators
            if sorted(inds) != sorted(b.indicators):
                raise SpecError(f"reordering of {l!r} must permute its indicators")
            new.append(Block(l, inds, b.reference))
        return ModelSpec(tuple(new), self.paths)


_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def parse_model(text: str, observed: Iterable[str] | None = None) -> ModelSpec:
    """Parse the line-oriented model syntax.

    ``latent =~ a b c`` declares a measurement block (repeatable; lines
    append). The first indicator is the reference unless it carries a
    ``*free`` suffix, in which case an ``=1@name`` token names the
    reference. ``latent ~ p`` (or ``latent ~ p + q``) declares paths.
    ``#`` starts a comment. When ``observed`` is given, indicator names
    must belong to it.
    """
    known = None if observed is None else set(observed)
    order: list[str] = []
    inds: dict[str, list[str]] = {}
    free: dict[str, set[str]] = {}
    refs: dict[str, str] = {}
    paths: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=~" in line:
            lhs, rhs = (s.strip() for s in line.split("=~", 1))
            if not _NAME.match(lhs):
                raise SpecError(f"line {lineno}: bad latent name {lhs!r}")
            if lhs not in inds:
                order.append(lhs)
                inds[lhs] = []
                free[lhs] = set()
            toks = rhs.replace("+", " ").split()
            k = 0
            while k < len(toks):
                tok = toks[k]
                if tok == "=1@" or tok.startswith("=1@"):
                    name = tok[3:] or (toks[k + 1] if k + 1 < len(toks) else "")
                    if not tok[3:]:
                        k += 1
                    if lhs in refs and refs[lhs] != name:
                        raise SpecError(f"line {lineno}: two reference markers for {lhs!r}")
                    refs[lhs] = name
                    k += 1
                    continue
                name = tok
                if tok.endswith("*free"):
                    name = tok[: -len("*free")]
                    free[lhs].add(name)
                if not _NAME.match(name):
                    raise SpecError(f"line {lineno}: bad indicator name {name!r}")
                if known is not None and name not in known:
                    raise SpecError(f"line {lineno}: unknown indicator {name!r}")
                if name in inds[lhs]:
                    raise SpecError(f"line {lineno}: {name!r} listed twice under {lhs!r}")
                inds[lhs].append(name)
                k += 1
        elif "~" in line and "~~" not in line:
            lhs, rhs = (s.strip() for s in line.split("~", 1))
            preds = rhs.replace("+", " ").split()
            if not _NAME.match(lhs) or not preds:
                raise SpecError(f"line {lineno}: malformed path {line!r}")
            paths.extend((lhs, p) for p in preds)
        else:
            raise SpecError(f"line {lineno}: cannot parse {line!r}")
    if not order:
        raise SpecError("model declares no latent variables")
    blocks = []
    for l in order:
        if not inds[l]:
            raise SpecError(f"latent {l!r} has no indicators")
        if l in refs:
            ref = refs[l]
            if ref not in inds[l]:
                raise SpecError(f"reference marker names {ref!r}, not an indicator of {l!r}")
        else:
            cands = [i for i in inds[l] if i not in free[l]]
            if not cands:
                raise SpecError(f"latent {l!r}: all indicators free and no =1@ marker")
            ref = cands[0]
        blocks.append(Block(l, tuple(inds[l]), ref))
    return ModelSpec(tuple(blocks), tuple(paths), source=text)


def load_model(path: str | os.PathLike | None = None, observed: Iterable[str] | None = None) -> ModelSpec:
    """Read a model file; ``None`` loads the bundled default model."""
    if path is None:
        text = resources.files("flourishsem.data").joinpath("default_model.sem").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_model(text, observed)
