"""Closed-form scalar fields on R^3 with exact second-order jets.

Expressions are parsed into an immutable tree. Values are computed with plain
numpy; gradients and Hessians come from forward-mode propagation of a
truncated second-order Taylor jet through the same tree, so no symbolic
derivative trees are ever built.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := number | ident | ident '(' expr ')' | '(' expr ')'

``^`` binds tighter than unary minus (``-x^2 == -(x^2)``) and is right
associative.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = [
    "ExprError",
    "ParseError",
    "UnknownIdentifierError",
    "ArityError",
    "DomainError",
    "Jet",
    "ScalarField",
    "Expr",
    "Bump",
    "parse",
    "eval_jet",
    "to_string",
    "constant",
]

FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt", "tanh")
VARIABLES = ("x", "y", "z")


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ParseError):
    pass


class ArityError(ParseError):
    pass


class DomainError(ExprError, ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# second-order jets


class Jet:
    """Value, gradient and Hessian of a field at a batch of points.

    Shapes are ``(N,)``, ``(N, 3)`` and ``(N, 3, 3)``. Every operation keeps
    the Hessian exactly symmetric.
    """

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h):
        self.v = v
        self.g = g
        self.h = h

    @classmethod
    def const(cls, c, n: int) -> "Jet":
        return cls(np.full(n, float(c)), np.zeros((n, 3)), np.zeros((n, 3, 3)))

    @classmethod
    def variable(cls, points: np.ndarray, axis: int) -> "Jet":
        n = points.shape[0]
        g = np.zeros((n, 3))
        g[:, axis] = 1.0
        return cls(points[:, axis].astype(float), g, np.zeros((n, 3, 3)))

    def __neg__(self):
        return Jet(-self.v, -self.g, -self.h)

    def __add__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v + o.v, self.g + o.g, self.h + o.h)
        return Jet(self.v + o, self.g, self.h)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v - o.v, self.g - o.g, self.h - o.h)
        return Jet(self.v - o, self.g, self.h)

    def __rsub__(self, o):
        return Jet(o - self.v, -self.g, -self.h)

    def __mul__(self, o):
        if not isinstance(o, Jet):
            return Jet(self.v * o, self.g * o, self.h * o)
        cross = self.g[:, :, None] * o.g[:, None, :]
        h = (self.v[:, None, None] * o.h + o.v[:, None, None] * self.h
             + (cross + cross.transpose(0, 2, 1)))
        g = self.v[:, None] * o.g + o.v[:, None] * self.g
        return Jet(self.v * o.v, g, h)

    __rmul__ = __mul__

    def chain(self, f0, f1, f2) -> "Jet":
        """Compose with a scalar function given its value and two derivatives."""
        outer = self.g[:, :, None] * self.g[:, None, :]
        h = f1[:, None, None] * self.h + f2[:, None, None] * outer
        return Jet(f0, f1[:, None] * self.g, h)

    def reciprocal(self) -> "Jet":
        if np.any(self.v == 0.0):
            raise DomainError("division by zero")
        r = 1.0 / self.v
        return self.chain(r, -r * r, 2.0 * r * r * r)

    def __truediv__(self, o):
        if isinstance(o, Jet):
            return self * o.reciprocal()
        if o == 0:
            raise DomainError("division by zero")
        return self * (1.0 / o)

    def __rtruediv__(self, o):
        return self.reciprocal() * o

    def laplacian(self) -> np.ndarray:
        """Euclidean trace of the Hessian (analyst's sign, div grad)."""
        return np.trace(self.h, axis1=1, axis2=2)


def _ipow_values(a: np.ndarray, n: int) -> np.ndarray:
    if n < 0:
        if np.any(a == 0.0):
            raise DomainError("zero raised to a negative power")
        return 1.0 / _ipow_values(a, -n)
    out = np.ones_like(a)
    base = a.copy()
    while n:
        if n & 1:
            out = out * base
        base = base * base
        n >>= 1
    return out


def _ipow_jet(a: Jet, n: int) -> Jet:
    if n < 0:
        return _ipow_jet(a, -n).reciprocal()
    out = Jet.const(1.0, a.v.shape[0])
    base = a
    first = True
    while n:
        if n & 1:
            out = base if first else out * base
            first = False
        n >>= 1
        if n:
            base = base * base
    return out


# ---------------------------------------------------------------------------
# fields


class ScalarField:
    """Anything that can be evaluated (and differentiated twice) on R^3."""

    def value(self, points, params: Mapping[str, float] | None = None) -> np.ndarray:
        raise NotImplementedError

    def jet(self, points, params: Mapping[str, float] | None = None) -> Jet:
        raise NotImplementedError

    def __call__(self, points, params=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = self.value(pts, params)
        return out if np.ndim(points) > 1 else float(out[0])

    # composition helpers; results are Expr trees
    def __add__(self, other):
        return BinOp("+", self, _lift(other))

    def __radd__(self, other):
        return BinOp("+", _lift(other), self)

    def __sub__(self, other):
        return BinOp("-", self, _lift(other))

    def __rsub__(self, other):
        return BinOp("-", _lift(other), self)

    def __mul__(self, other):
        return BinOp("*", self, _lift(other))

    def __rmul__(self, other):
        return BinOp("*", _lift(other), self)

    def __neg__(self):
        return Neg(self)


def _lift(obj) -> ScalarField:
    if isinstance(obj, ScalarField):
        return obj
    return Num(float(obj))


def _points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[1] != 3:
        raise ValueError("points must have shape (N, 3)")
    return pts


class Expr(ScalarField):
    """Base class of parsed expression nodes (immutable)."""

    def free_params(self) -> set[str]:
        out: set[str] = set()
        for c in self.children():
            if isinstance(c, Expr):
                out |= c.free_params()
        return out

    def children(self):
        return ()

    def is_constant(self) -> bool:
        """True when the tree does not depend on x, y or z."""
        return all(isinstance(c, Expr) and c.is_constant() for c in self.children())

    def bind(self, **params) -> "Expr":
        """Return a copy with the named parameters replaced by constants."""
        return self._bind(params)

    def _bind(self, params):
        return self

    def value(self, points, params=None):
        pts = _points(points)
        with np.errstate(divide="raise", invalid="raise", over="raise"):
            try:
                return np.broadcast_to(self._val(pts, params or {}), (pts.shape[0],)).astype(float)
            except FloatingPointError as exc:
                raise DomainError(str(exc)) from None

    def jet(self, points, params=None) -> Jet:
        pts = _points(points)
        with np.errstate(divide="raise", invalid="raise", over="raise"):
            try:
                return self._jet(pts, params or {})
            except FloatingPointError as exc:
                raise DomainError(str(exc)) from None

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True, eq=False)
class Num(Expr):
    c: float

    def _val(self, pts, params):
        return np.full(pts.shape[0], self.c)

    def _jet(self, pts, params):
        return Jet.const(self.c, pts.shape[0])


@dataclass(frozen=True, eq=False)
class Var(Expr):
    name: str

    def is_constant(self):
        return False

    def _val(self, pts, params):
        return pts[:, VARIABLES.index(self.name)]

    def _jet(self, pts, params):
        return Jet.variable(pts, VARIABLES.index(self.name))


@dataclass(frozen=True, eq=False)
class Param(Expr):
    name: str

    def free_params(self):
        return {self.name}

    def _bind(self, params):
        if self.name in params:
            return Num(float(params[self.name]))
        return self

    def _lookup(self, params):
        try:
            return float(params[self.name])
        except KeyError:
            raise ExprError(f"parameter {self.name!r} is not bound") from None

    def _val(self, pts, params):
        return np.full(pts.shape[0], self._lookup(params))

    def _jet(self, pts, params):
        return Jet.const(self._lookup(params), pts.shape[0])


@dataclass(frozen=True, eq=False)
class Neg(Expr):
    a: ScalarField

    def children(self):
        return (self.a,)

    def _bind(self, params):
        return Neg(_bind_child(self.a, params))

    def _val(self, pts, params):
        return -_child_val(self.a, pts, params)

    def _jet(self, pts, params):
        return -_child_jet(self.a, pts, params)


@dataclass(frozen=True, eq=False)
class BinOp(Expr):
    op: str
    a: ScalarField
    b: ScalarField

    def children(self):
        return (self.a, self.b)

    def _bind(self, params):
        return BinOp(self.op, _bind_child(self.a, params), _bind_child(self.b, params))

    def _int_exponent(self, params):
        b = self.b
        if isinstance(b, Expr) and b.is_constant():
            c = float(_child_val(b, np.zeros((1, 3)), params)[0])
            if c.is_integer() and abs(c) < 2**31:
                return int(c), c
            return None, c
        return None, None

    def _val(self, pts, params):
        a = _child_val(self.a, pts, params)
        if self.op == "^":
            n, c = self._int_exponent(params)
            if n is not None:
                return _ipow_values(np.asarray(a, float), n)
            if np.any(a <= 0.0):
                raise DomainError("non-integer power of a non-positive base")
            if c is not None:
                return a ** c
            return np.exp(_child_val(self.b, pts, params) * np.log(a))
        b = _child_val(self.b, pts, params)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if np.any(b == 0.0):
            raise DomainError("division by zero")
        return a / b

    def _jet(self, pts, params):
        a = _child_jet(self.a, pts, params)
        if self.op == "^":
            n, c = self._int_exponent(params)
            if n is not None:
                return _ipow_jet(a, n)
            if np.any(a.v <= 0.0):
                raise DomainError("non-integer power of a non-positive base")
            if c is not None:
                p0 = a.v ** c
                return a.chain(p0, c * p0 / a.v, c * (c - 1.0) * p0 / (a.v * a.v))
            lg = a.chain(np.log(a.v), 1.0 / a.v, -1.0 / (a.v * a.v))
            e = _child_jet(self.b, pts, params) * lg
            ev = np.exp(e.v)
            return e.chain(ev, ev, ev)
        b = _child_jet(self.b, pts, params)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b


def _check_positive(a, name):
    if np.any(a <= 0.0):
        raise DomainError(f"{name} of a non-positive argument")


@dataclass(frozen=True, eq=False)
class Call(Expr):
    fn: str
    a: ScalarField

    def children(self):
        return (self.a,)

    def _bind(self, params):
        return Call(self.fn, _bind_child(self.a, params))

    def _val(self, pts, params):
        a = _child_val(self.a, pts, params)
        if self.fn in ("log", "sqrt"):
            _check_positive(a, self.fn)
        return {"exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos,
                "sqrt": np.sqrt, "tanh": np.tanh}[self.fn](a)

    def _jet(self, pts, params):
        a = _child_jet(self.a, pts, params)
        v = a.v
        fn = self.fn
        if fn == "exp":
            e = np.exp(v)
            return a.chain(e, e, e)
        if fn == "log":
            _check_positive(v, fn)
            return a.chain(np.log(v), 1.0 / v, -1.0 / (v * v))
        if fn == "sqrt":
            _check_positive(v, fn)
            s = np.sqrt(v)
            return a.chain(s, 0.5 / s, -0.25 / (s * v))
        if fn == "sin":
            s, c = np.sin(v), np.cos(v)
            return a.chain(s, c, -s)
        if fn == "cos":
            s, c = np.sin(v), np.cos(v)
            return a.chain(c, -s, -c)
        t = np.tanh(v)
        d = 1.0 - t * t
        return a.chain(t, d, -2.0 * t * d)


def _child_val(c, pts, params):
    if isinstance(c, Expr):
        return c._val(pts, params)
    return c.value(pts, params)


def _child_jet(c, pts, params):
    if isinstance(c, Expr):
        return c._jet(pts, params)
    return c.jet(pts, params)


def _bind_child(c, params):
    return c._bind(params) if isinstance(c, Expr) else c


def constant(c: float) -> Expr:
    return Num(float(c))


class Bump(ScalarField):
    """Compactly supported bump ``amplitude * (1 - |p-center|^2/radius^2)^4``.

    Exactly zero outside the ball of the given radius and C^3 across its
    boundary. Not expressible in the text grammar.
    """

    power = 4

    def __init__(self, center, radius: float, amplitude: float = 1.0):
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        if self.radius <= 0:
            raise ValueError("bump radius must be positive")

    def __repr__(self):
        c = ", ".join(f"{t:g}" for t in self.center)
        return f"Bump(center=({c}), radius={self.radius:g}, amplitude={self.amplitude:g})"

    def _q(self, pts):
        d = _points(pts) - self.center
        return d, np.einsum("ij,ij->i", d, d) / self.radius**2

    def value(self, points, params=None):
        _, q = self._q(points)
        s = np.clip(1.0 - q, 0.0, None)
        return self.amplitude * s**self.power

    def jet(self, points, params=None) -> Jet:
        d, q = self._q(points)
        n = d.shape[0]
        s = np.clip(1.0 - q, 0.0, None)
        k = self.power
        qj = Jet(q, 2.0 * d / self.radius**2,
                 np.broadcast_to(2.0 * np.eye(3) / self.radius**2, (n, 3, 3)).copy())
        f0 = self.amplitude * s**k
        f1 = -self.amplitude * k * s ** (k - 1)
        f2 = self.amplitude * k * (k - 1) * s ** (k - 2)
        return qj.chain(f0, f1, f2)


def eval_jet(e: ScalarField, p, params=None):
    """Value, gradient and Hessian of ``e`` at a single point."""
    j = e.jet(np.asarray(p, dtype=float)[None, :], params)
    return float(j.v[0]), j.g[0].copy(), j.h[0].copy()


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    pos = 0
    toks = []
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[start]!r}", _byte_offset(text, start))
        kind = m.lastgroup
        toks.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, params):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.params = set(params)

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg, tok, cls=ParseError):
        raise cls(msg, _byte_offset(self.text, tok[2]))

    def expect(self, value):
        t = self.take()
        if t[1] != value or t[0] != "op":
            self.fail(f"expected {value!r}, found {t[1] or 'end of input'!r}", t)

    def parse(self):
        e = self.expr()
        t = self.peek()
        if t[0] != "end":
            self.fail(f"unexpected {t[1]!r}", t)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        e = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            e = BinOp(op, e, self.factor())
        return e

    def factor(self):
        t = self.peek()
        if t[0] == "op" and t[1] == "-":
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def atom(self):
        t = self.take()
        kind, val, _ = t
        if kind == "num":
            return Num(float(val))
        if kind == "id":
            called = self.peek()[0] == "op" and self.peek()[1] == "("
            if val in FUNCTIONS:
                if not called:
                    self.fail(f"function {val!r} needs one argument", t, ArityError)
                self.take()
                arg = self.expr()
                if self.peek()[1] == ",":
                    self.fail(f"function {val!r} takes exactly one argument", self.peek(), ArityError)
                self.expect(")")
                return Call(val, arg)
            if called:
                if val in VARIABLES or val in self.params:
                    self.fail(f"{val!r} is not a function", t, ArityError)
                self.fail(f"unknown function {val!r}", t, UnknownIdentifierError)
            if val in VARIABLES:
                return Var(val)
            if val in self.params:
                return Param(val)
            self.fail(f"unknown identifier {val!r}", t, UnknownIdentifierError)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        self.fail(f"unexpected {val or 'end of input'!r}", t)


def parse(text: str, params=()) -> Expr:
    """Parse ``text`` into an expression tree.

    ``params`` lists the names allowed as free parameters; they must be bound
    (via ``bind`` or the ``params`` argument of evaluation) before use.
    """
    names = set(params)
    clash = names & (set(FUNCTIONS) | set(VARIABLES))
    if clash:
        raise ValueError(f"parameter names shadow built-ins: {sorted(clash)}")
    return _Parser(text, names).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_string(e: ScalarField) -> str:
    """Render an expression so that ``parse(to_string(e))`` evaluates identically."""
    return _fmt(e)[0]


def _fmt(e):
    if isinstance(e, Num):
        s = repr(float(e.c))
        if s in ("inf", "-inf", "nan"):
            raise ExprError("non-finite constant cannot be printed")
        if e.c < 0:
            return f"({s})", 5
        return s, 5
    if isinstance(e, (Var, Param)):
        return e.name, 5
    if isinstance(e, Call):
        return f"{e.fn}({_fmt(e.a)[0]})", 5
    if isinstance(e, Neg):
        s, p = _fmt(e.a)
        if p < _PREC["neg"]:
            s = f"({s})"
        return f"-{s}", _PREC["neg"]
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        ls, lp = _fmt(e.a)
        rs, rp = _fmt(e.b)
        if e.op == "^":
            # right associative; the exponent position accepts unary minus
            if lp <= p:
                ls = f"({ls})"
            if rp < _PREC["neg"]:
                rs = f"({rs})"
        else:
            if lp < p:
                ls = f"({ls})"
            if rp <= p:
                rs = f"({rs})"
        return f"{ls}{e.op}{rs}", p
    raise ExprError(f"{e!r} has no text form")
