"""Plant and sensor models with sinusoidal time-varying entries.

Matrix entries are written in a tiny expression language that is affine in
``{1, sin(w t), cos(w t)}``::

    expr := term (('+' | '-') term)*
    term := NUMBER | [NUMBER '*'] ('sin' | 'cos') '(' [NUMBER '*'] 't' ')'

A single leading sign is accepted on the first term so negative constants can
be written directly (``-1``, ``-0.5*cos(t)``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from typing import Iterable, Sequence

import numpy as np

from ._validation import as_matrix, as_vector, check_positive_definite

__all__ = [
    "ExprSyntaxError",
    "UnknownFunctionError",
    "Term",
    "ScalarExpr",
    "parse_expr",
    "format_expr",
    "TimeVaryingMatrix",
    "eval_matrix",
    "PlantModel",
    "SensorModel",
    "ModelBounds",
    "default_grid",
    "estimate_bounds",
]

_KINDS = ("const", "sin", "cos")


class ExprSyntaxError(ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, text: str, offset: int):
        self.text = text
        self.offset = offset
        super().__init__(f"{message} at byte {offset}: {text!r}")


class UnknownFunctionError(ExprSyntaxError):
    pass


@dataclass(frozen=True)
class Term:
    coef: float
    kind: str = "const"
    omega: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind == "const" and self.omega != 0.0:
            raise ValueError("constant terms carry no frequency")

    def basis(self, t):
        if self.kind == "const":
            return np.ones_like(np.asarray(t, dtype=float))
        fn = np.sin if self.kind == "sin" else np.cos
        return fn(self.omega * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class ScalarExpr:
    terms: tuple[Term, ...] = ()

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for term in self.terms:
            out = out + term.coef * term.basis(t)
        return out if out.ndim else float(out)

    def scaled(self, factor: float) -> "ScalarExpr":
        return ScalarExpr(tuple(Term(factor * tm.coef, tm.kind, tm.omega) for tm in self.terms))

    @property
    def is_constant(self) -> bool:
        return all(tm.kind == "const" for tm in self.terms)

    @property
    def frequencies(self) -> set[float]:
        return {tm.omega for tm in self.terms if tm.kind != "const" and tm.omega != 0.0}

    def __str__(self) -> str:
        return format_expr(self)

    @classmethod
    def constant(cls, value: float) -> "ScalarExpr":
        return cls((Term(float(value)),))


# -- parsing ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError("unexpected character", text, _byte_offset(text, pos + stripped))
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self, k: int = 0):
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def fail(self, message: str, tok=None, cls=ExprSyntaxError):
        tok = tok or self.peek()
        raise cls(message, self.text, _byte_offset(self.text, tok[2]))

    def expect(self, kind: str, value: str | None = None):
        tok = self.peek()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value if value is not None else kind
            self.fail(f"expected {want!r}")
        self.i += 1
        return tok

    def parse(self) -> ScalarExpr:
        sign = 1.0
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            sign = -1.0 if tok[1] == "-" else 1.0
            self.i += 1
        terms = [self.term(sign)]
        while True:
            tok = self.peek()
            if tok[0] == "end":
                break
            if tok[0] == "op" and tok[1] in "+-":
                self.i += 1
                terms.append(self.term(-1.0 if tok[1] == "-" else 1.0))
            else:
                self.fail("expected '+', '-' or end of input")
        return ScalarExpr(tuple(terms))

    def term(self, sign: float) -> Term:
        tok = self.peek()
        if tok[0] == "num":
            self.i += 1
            coef = float(tok[1])
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "*":
                self.i += 1
                kind, omega = self.call()
                return Term(sign * coef, kind, omega)
            return Term(sign * coef)
        if tok[0] == "name":
            kind, omega = self.call()
            return Term(sign * 1.0, kind, omega)
        self.fail("expected a number or 'sin'/'cos'")

    def call(self) -> tuple[str, float]:
        tok = self.peek()
        if tok[0] != "name":
            self.fail("expected 'sin' or 'cos'")
        if tok[1] not in ("sin", "cos"):
            if self.peek(1)[:2] == ("op", "("):
                self.fail(f"unknown function {tok[1]!r}", tok, UnknownFunctionError)
            self.fail(f"unexpected name {tok[1]!r}", tok)
        self.i += 1
        self.expect("op", "(")
        omega = 1.0
        if self.peek()[0] == "num":
            omega = float(self.peek()[1])
            self.i += 1
            self.expect("op", "*")
        self.expect("name", "t")
        self.expect("op", ")")
        return tok[1], omega


def parse_expr(text) -> ScalarExpr:
    """Parse an entry expression; plain numbers are accepted as constants."""
    if isinstance(text, ScalarExpr):
        return text
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return ScalarExpr.constant(float(text))
    if not isinstance(text, str):
        raise TypeError(f"expression must be a string, got {type(text).__name__}")
    if not text.strip():
        raise ExprSyntaxError("empty expression", text, 0)
    return _Parser(text).parse()


def format_expr(expr: ScalarExpr) -> str:
    """Canonical text form; ``parse_expr(format_expr(e)) == e``."""
    if not expr.terms:
        return "0"
    parts = []
    for k, tm in enumerate(expr.terms):
        neg = math.copysign(1.0, tm.coef) < 0
        mag = abs(tm.coef)
        if tm.kind == "const":
            body = repr(mag)
        else:
            arg = "t" if tm.omega == 1.0 else f"{tm.omega!r}*t"
            call = f"{tm.kind}({arg})"
            body = call if mag == 1.0 else f"{mag!r}*{call}"
        if k == 0:
            parts.append(("-" if neg else "") + body)
        else:
            parts.append((" - " if neg else " + ") + body)
    return "".join(parts)


# -- matrices --------------------------------------------------------------


@dataclass(frozen=True)
class TimeVaryingMatrix:
    """Matrix whose entries are :class:`ScalarExpr` functions of time."""

    rows: int
    cols: int
    entries: tuple[tuple[ScalarExpr, ...], ...]

    def __post_init__(self):
        if len(self.entries) != self.rows or any(len(r) != self.cols for r in self.entries):
            raise ValueError(f"entries grid does not match shape {self.rows}x{self.cols}")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> "TimeVaryingMatrix":
        if isinstance(rows, np.ndarray):
            rows = np.atleast_2d(rows).tolist()
        rows = [list(r) if isinstance(r, (list, tuple)) else [r] for r in rows]
        if not rows or not rows[0]:
            raise ValueError("matrix literal must be a non-empty list of rows")
        entries = tuple(tuple(parse_expr(x) for x in r) for r in rows)
        return cls(len(entries), len(entries[0]), entries)

    @classmethod
    def constant(cls, matrix) -> "TimeVaryingMatrix":
        return cls.from_rows(np.atleast_2d(np.asarray(matrix, dtype=float)).tolist())

    @cached_property
    def _compiled(self):
        basis: dict[tuple[str, float], np.ndarray] = {}
        const = np.zeros((self.rows, self.cols))
        for i, row in enumerate(self.entries):
            for j, ex in enumerate(row):
                for tm in ex.terms:
                    if tm.kind == "const":
                        const[i, j] += tm.coef
                    else:
                        coef = basis.setdefault((tm.kind, tm.omega), np.zeros((self.rows, self.cols)))
                        coef[i, j] += tm.coef
        return const, tuple(basis.items())

    @property
    def is_constant(self) -> bool:
        return all(ex.is_constant for row in self.entries for ex in row)

    @property
    def frequencies(self) -> set[float]:
        out: set[float] = set()
        for row in self.entries:
            for ex in row:
                out |= ex.frequencies
        return out

    def eval_many(self, times) -> np.ndarray:
        """Evaluate at every time in ``times``; returns shape ``(len(times), rows, cols)``."""
        times = np.asarray(times, dtype=float).reshape(-1)
        const, basis = self._compiled
        out = np.broadcast_to(const, (times.size, self.rows, self.cols)).copy()
        for (kind, omega), coef in basis:
            fn = np.sin if kind == "sin" else np.cos
            out += fn(omega * times)[:, None, None] * coef
        return out

    def __call__(self, t: float) -> np.ndarray:
        return self.eval_many([t])[0]

    def to_strings(self) -> list[list[str]]:
        return [[format_expr(ex) for ex in row] for row in self.entries]


def eval_matrix(m: TimeVaryingMatrix, t: float) -> np.ndarray:
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"time must be finite and non-negative, got {t}")
    return m(t)


def _sample_times(*mats: TimeVaryingMatrix, count: int = 64) -> np.ndarray:
    freqs = set().union(*(m.frequencies for m in mats))
    span = 2 * math.pi / min(freqs) if freqs else 1.0
    return np.linspace(0.0, span, count)


@dataclass(frozen=True)
class PlantModel:
    A: TimeVaryingMatrix
    W: TimeVaryingMatrix
    x0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        n = self.A.rows
        if self.A.cols != n or (self.W.rows, self.W.cols) != (n, n):
            raise ValueError("A and W must both be n x n")
        object.__setattr__(self, "x0", as_vector(self.x0, "x0", n))
        P0 = as_matrix(self.P0, "P0", (n, n))
        check_positive_definite(P0, "P0")
        object.__setattr__(self, "P0", P0)
        for t, Wt in zip(_sample_times(self.W), self.W.eval_many(_sample_times(self.W))):
            if np.max(np.abs(Wt - Wt.T)) > 1e-12 or np.linalg.eigvalsh(Wt)[0] < -1e-10:
                raise ValueError(f"W(t) is not symmetric PSD at t={t:.6g}")

    @property
    def n(self) -> int:
        return self.A.rows

    @property
    def is_time_invariant(self) -> bool:
        return self.A.is_constant and self.W.is_constant


@dataclass(frozen=True)
class SensorModel:
    C: TimeVaryingMatrix
    R: TimeVaryingMatrix

    def __post_init__(self):
        if (self.R.rows, self.R.cols) != (self.C.rows, self.C.rows):
            raise ValueError("R must be n_y x n_y where n_y is the row count of C")
        for t, Rt in zip(_sample_times(self.R), self.R.eval_many(_sample_times(self.R))):
            if np.max(np.abs(Rt - Rt.T)) > 1e-12 or np.linalg.eigvalsh(Rt)[0] <= 0:
                raise ValueError(f"R(t) is not symmetric positive definite at t={t:.6g}")

    @property
    def ny(self) -> int:
        return self.C.rows

    @property
    def is_time_invariant(self) -> bool:
        return self.C.is_constant and self.R.is_constant


@dataclass(frozen=True)
class ModelBounds:
    """Uniform bounds on the model matrices, all in spectral norm.

    ``r1`` is the infimum of ``||R(t)||``; ``r1_strict`` is the infimum of
    ``lambda_min(R(t))``, the quantity that actually bounds ``||R(t)^-1||``.
    """

    a: float
    c: float
    w1: float
    w2: float
    r1: float
    r2: float
    L: float
    r1_strict: float = field(default=float("nan"))

    def __post_init__(self):
        if self.a < 0 or self.c < 0 or self.L < 0 or self.w1 > self.w2 or self.r1 > self.r2:
            raise ValueError(f"inconsistent bounds: {self}")


def _joint_period(freqs: Iterable[float]) -> float | None:
    freqs = [f for f in freqs if f > 0]
    if not freqs:
        return None
    fracs = [Fraction(f).limit_denominator(10**6) for f in freqs]
    if any(abs(float(fr) - f) > 1e-12 * f for fr, f in zip(fracs, freqs)):
        return None

    def gcd(a: Fraction, b: Fraction) -> Fraction:
        return Fraction(math.gcd(a.numerator * b.denominator, b.numerator * a.denominator),
                        a.denominator * b.denominator)

    return 2 * math.pi / float(reduce(gcd, fracs))


def default_grid(*mats: TimeVaryingMatrix, samples: int = 10_001, max_period: float = 1e3) -> np.ndarray:
    """10,001 samples over one joint period, or over [0, 100] s for incommensurate mixes."""
    freqs = set().union(*(m.frequencies for m in mats))
    if not freqs:
        return np.zeros(1)
    period = _joint_period(freqs)
    if period is None or period > max_period:
        period = 100.0
    return np.linspace(0.0, period, samples)


def _stack_rows(blocks: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(blocks, axis=-2)


def _block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    T = blocks[0].shape[0]
    size = sum(b.shape[-1] for b in blocks)
    out = np.zeros((T, size, size))
    k = 0
    for b in blocks:
        m = b.shape[-1]
        out[:, k:k + m, k:k + m] = b
        k += m
    return out


def _spectral_norms(stack: np.ndarray) -> np.ndarray:
    return np.linalg.norm(stack, ord=2, axis=(-2, -1))


def estimate_bounds(plant: PlantModel, sensors: Sequence[SensorModel], grid=None,
                    fd_step: float = 1e-4) -> ModelBounds:
    """Grid-based extraction of the bound constants of the plant and sensors.

    ``grid`` is an explicit array of sample times; by default a dense grid over
    one joint period of every sinusoid in the model is used.
    """
    if not sensors:
        raise ValueError("at least one sensor is required")
    mats = [plant.A, plant.W] + [s.C for s in sensors] + [s.R for s in sensors]
    times = default_grid(*mats) if grid is None else np.asarray(grid, dtype=float).reshape(-1)
    N = len(sensors)

    A = plant.A.eval_many(times)
    W = plant.W.eval_many(times)
    C = _stack_rows([s.C.eval_many(times) for s in sensors])
    R_blocks = [s.R.eval_many(times) for s in sensors]
    R = _block_diag(R_blocks)
    eig_R = np.linalg.eigvalsh(R)
    if np.any(eig_R[:, 0] <= 0):
        bad = times[np.argmax(eig_R[:, 0] <= 0)]
        raise np.linalg.LinAlgError(f"R(t) is singular at t={bad:.6g}")

    norm_W = _spectral_norms(W)
    norm_R = _spectral_norms(R)

    def info(ts):
        out = []
        for s in sensors:
            Ci = s.C.eval_many(ts)
            Ri = s.R.eval_many(ts)
            out.append(N * np.swapaxes(Ci, -1, -2) @ np.linalg.solve(Ri, Ci))
        return out

    if all(s.is_time_invariant for s in sensors):
        L = 0.0
    else:
        fwd = info(times + fd_step)
        bwd = info(np.maximum(times - fd_step, 0.0))
        span = (times + fd_step) - np.maximum(times - fd_step, 0.0)
        L = max(float(np.max(_spectral_norms((f - b) / span[:, None, None]))) for f, b in zip(fwd, bwd))

    return ModelBounds(
        a=float(np.max(_spectral_norms(A))),
        c=float(np.max(_spectral_norms(C))),
        w1=float(np.min(norm_W)),
        w2=float(np.max(norm_W)),
        r1=float(np.min(norm_R)),
        r2=float(np.max(norm_R)),
        L=L,
        r1_strict=float(np.min(eig_R[:, 0])),
    )
