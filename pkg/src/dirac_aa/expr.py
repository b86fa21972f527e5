"""Exact symbolic scalar fields on a coordinate chart.

Expressions are immutable trees built from rational/float constants, the
named constant ``pi``, chart coordinates, the four arithmetic operations,
integer powers and ``sin``/``cos``/``exp``.  The grammar is closed, so
differentiation is total.

Grammar::

    expr   := term (("+"|"-") term)*
    term   := factor (("*"|"/") factor)*
    factor := base ("^" ["-"] integer)?
    base   := number | ident | "pi" | "(" expr ")"
            | ("sin"|"cos"|"exp") "(" expr ")" | "-" factor
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

FUNCTIONS = ("sin", "cos", "exp")
RESERVED = frozenset(FUNCTIONS + ("pi",))


class ExpressionError(Exception):
    """Base class for expression errors."""


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnknownIdentifierError(ExpressionSyntaxError):
    pass


class ArityError(ExpressionSyntaxError):
    pass


class EvaluationError(ExpressionError):
    """Raised when an expression cannot be evaluated at a point."""


class UnknownCoordinateError(ExpressionError):
    pass


# ---------------------------------------------------------------------------
# Chart
# ---------------------------------------------------------------------------

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class Chart:
    """Coordinate chart: names, periodicity flags and a sampling box.

    Periodic coordinates are taken mod 1 and always have domain ``[0, 1)``.
    """

    coord_names: tuple[str, ...]
    periodic: tuple[bool, ...] = ()
    domain_box: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        names = tuple(self.coord_names)
        object.__setattr__(self, "coord_names", names)
        if not names:
            raise ValueError("chart needs at least one coordinate")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate coordinate names in {names}")
        for name in names:
            if not _IDENT.match(name) or name in RESERVED:
                raise ValueError(f"invalid coordinate name {name!r}")
        periodic = tuple(bool(p) for p in self.periodic) or (False,) * len(names)
        if len(periodic) != len(names):
            raise ValueError("periodic flags do not match chart dimension")
        box = tuple((float(lo), float(hi)) for lo, hi in self.domain_box)
        if not box:
            box = tuple((0.0, 1.0) if p else (-1.0, 1.0) for p in periodic)
        if len(box) != len(names):
            raise ValueError("domain box does not match chart dimension")
        box = tuple((0.0, 1.0) if p else b for p, b in zip(periodic, box))
        for lo, hi in box:
            if not lo < hi:
                raise ValueError(f"empty domain interval [{lo}, {hi}]")
        object.__setattr__(self, "periodic", periodic)
        object.__setattr__(self, "domain_box", box)

    @property
    def dim(self) -> int:
        return len(self.coord_names)

    def index(self, name: str) -> int:
        try:
            return self.coord_names.index(name)
        except ValueError:
            raise UnknownCoordinateError(f"unknown coordinate {name!r}") from None

    def reduce(self, point) -> np.ndarray:
        """Reduce periodic coordinates of ``point`` (or an array of points) mod 1."""
        pts = np.array(point, dtype=float)
        mask = np.array(self.periodic)
        if mask.any():
            pts[..., mask] = np.mod(pts[..., mask], 1.0)
        return pts

    def difference(self, a, b) -> np.ndarray:
        """``a - b`` with periodic components wrapped into ``[-1/2, 1/2)``."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        mask = np.array(self.periodic)
        if mask.any():
            d = d.copy()
            d[..., mask] = d[..., mask] - np.round(d[..., mask])
        return d

    def slice(self, fixed: Iterable[str]) -> "Chart":
        fixed = set(fixed)
        keep = [i for i, name in enumerate(self.coord_names) if name not in fixed]
        return Chart(
            tuple(self.coord_names[i] for i in keep),
            tuple(self.periodic[i] for i in keep),
            tuple(self.domain_box[i] for i in keep),
        )


# ---------------------------------------------------------------------------
# Expression nodes
# ---------------------------------------------------------------------------

Number = Fraction | float


class Expr:
    """Immutable expression node.  Structural equality and hashing."""

    __slots__ = ("_hash",)

    def _fields(self) -> tuple:
        raise NotImplementedError

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other):
            return NotImplemented if not isinstance(other, Expr) else False
        return hash(self) == hash(other) and self._fields() == other._fields()

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__,) + self._fields())
            object.__setattr__(self, "_hash", h)
            return h

    def __setattr__(self, key, value):
        raise AttributeError("expressions are immutable")

    def __repr__(self):
        return f"{type(self).__name__}({', '.join(map(repr, self._fields()))})"

    def __str__(self):
        return render(self)

    # arithmetic sugar for building expressions in code
    def __add__(self, other):
        return Add((self, as_expr(other)))

    def __radd__(self, other):
        return Add((as_expr(other), self))

    def __sub__(self, other):
        return Add((self, Neg(as_expr(other))))

    def __rsub__(self, other):
        return Add((as_expr(other), Neg(self)))

    def __mul__(self, other):
        return Mul((self, as_expr(other)))

    def __rmul__(self, other):
        return Mul((as_expr(other), self))

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("only integer powers are supported")
        return Pow(self, n)


def _init(node, **fields):
    for k, v in fields.items():
        object.__setattr__(node, k, v)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        if isinstance(value, bool):
            value = int(value)
        if isinstance(value, int):
            value = Fraction(value)
        elif isinstance(value, (float, np.floating)):
            value = float(value)
        elif not isinstance(value, Fraction):
            raise TypeError(f"bad constant {value!r}")
        _init(self, value=value)

    def _fields(self):
        return (type(self.value).__name__, self.value)

    def __repr__(self):
        return f"Const({self.value!r})"


class PiConst(Expr):
    __slots__ = ()

    def _fields(self):
        return ()


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name: str):
        _init(self, name=name)

    def _fields(self):
        return (self.name,)


class Add(Expr):
    __slots__ = ("args",)

    def __init__(self, args: Sequence[Expr]):
        _init(self, args=tuple(args))

    def _fields(self):
        return self.args


class Mul(Expr):
    __slots__ = ("args",)

    def __init__(self, args: Sequence[Expr]):
        _init(self, args=tuple(args))

    def _fields(self):
        return self.args


class Div(Expr):
    __slots__ = ("num", "den")

    def __init__(self, num: Expr, den: Expr):
        _init(self, num=num, den=den)

    def _fields(self):
        return (self.num, self.den)


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base: Expr, exp: int):
        _init(self, base=base, exp=int(exp))

    def _fields(self):
        return (self.base, self.exp)


class Neg(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        _init(self, arg=arg)

    def _fields(self):
        return (self.arg,)


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg: Expr):
        if name not in FUNCTIONS:
            raise ValueError(f"unknown function {name!r}")
        _init(self, name=name, arg=arg)

    def _fields(self):
        return (self.name, self.arg)


ZERO = Const(0)
ONE = Const(1)
PI = PiConst()


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(value)


def sin(e) -> Expr:
    return Func("sin", as_expr(e))


def cos(e) -> Expr:
    return Func("cos", as_expr(e))


def exp(e) -> Expr:
    return Func("exp", as_expr(e))


def coordinates(chart: Chart) -> tuple[Var, ...]:
    return tuple(Var(n) for n in chart.coord_names)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, src: str, chart: Chart):
        self.tokens = _tokenize(src)
        self.i = 0
        self.chart = chart

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind != "op":
            found = "end of input" if kind == "end" else repr(text)
            raise ExpressionSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            if text == ",":
                raise ArityError("unexpected ',' (functions take one argument)", pos)
            raise ExpressionSyntaxError(f"unexpected token {text!r}", pos)
        return e

    def expr(self) -> Expr:
        terms = [self.term()]
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            t = self.term()
            terms.append(t if op == "+" else Neg(t))
        return terms[0] if len(terms) == 1 else Add(terms)

    def term(self) -> Expr:
        node = self.factor()
        factors = [node]
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            f = self.factor()
            if op == "*":
                factors.append(f)
            else:
                left = factors[0] if len(factors) == 1 else Mul(factors)
                factors = [Div(left, f)]
        return factors[0] if len(factors) == 1 else Mul(factors)

    def factor(self) -> Expr:
        base = self.base()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            kind, text, pos = self.take()
            if kind != "num" or not text.isdigit():
                raise ExpressionSyntaxError("exponent must be an integer literal", pos)
            return Pow(base, sign * int(text))
        return base

    def base(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            if text.isdigit():
                return Const(Fraction(int(text)))
            return Const(float(text))
        if kind == "ident":
            if text == "pi":
                return PI
            if text in FUNCTIONS:
                k2, t2, p2 = self.peek()
                if t2 != "(":
                    raise ArityError(f"function {text!r} requires a parenthesised argument", p2)
                self.take()
                if self.peek()[1] == ")":
                    raise ArityError(f"function {text!r} takes exactly one argument", self.peek()[2])
                arg = self.expr()
                k3, t3, p3 = self.peek()
                if t3 == ",":
                    raise ArityError(f"function {text!r} takes exactly one argument", p3)
                self.expect(")")
                return Func(text, arg)
            if text not in self.chart.coord_names:
                raise UnknownIdentifierError(f"unknown identifier {text!r}", pos)
            return Var(text)
        if kind == "op" and text == "(":
            e = self.expr()
            k3, t3, p3 = self.peek()
            if t3 == ",":
                raise ArityError("unexpected ','", p3)
            self.expect(")")
            return e
        if kind == "op" and text == "-":
            return Neg(self.factor())
        if kind == "end":
            raise ExpressionSyntaxError("unexpected end of input", pos)
        raise ExpressionSyntaxError(f"unexpected token {text!r}", pos)


def parse(src: str, chart: Chart) -> Expr:
    """Parse ``src`` into an expression over ``chart``'s coordinates."""
    return _Parser(src, chart).parse()


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _render_const(value: Number) -> str:
    if isinstance(value, Fraction):
        if value.denominator == 1:
            s = str(value.numerator)
        else:
            s = f"{value.numerator}/{value.denominator}"
        return f"({s})" if value < 0 or value.denominator != 1 else s
    s = repr(float(value))
    if s in ("inf", "-inf", "nan"):
        raise ExpressionError(f"cannot render non-finite constant {s}")
    return f"({s})" if value < 0 or s.startswith("-") else s


def render(e: Expr) -> str:
    """Render to the textual grammar; ``parse(render(e))`` reproduces ``e``."""
    if isinstance(e, Const):
        return _render_const(e.value)
    if isinstance(e, PiConst):
        return "pi"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        parts = []
        for i, a in enumerate(e.args):
            if i > 0 and isinstance(a, Neg):
                inner = a.arg
                s = render(inner)
                if isinstance(inner, Add):
                    s = f"({s})"
                parts.append(f" - {s}")
                continue
            s = render(a)
            if isinstance(a, Add):
                s = f"({s})"
            parts.append(s if i == 0 else f" + {s}")
        return "".join(parts)
    if isinstance(e, Mul):
        parts = []
        for i, a in enumerate(e.args):
            s = render(a)
            if isinstance(a, (Add, Mul)) or (i > 0 and isinstance(a, Div)):
                s = f"({s})"
            parts.append(s)
        return " * ".join(parts)
    if isinstance(e, Div):
        num = render(e.num)
        if isinstance(e.num, Add):
            num = f"({num})"
        den = render(e.den)
        if isinstance(e.den, (Add, Mul, Div)):
            den = f"({den})"
        return f"{num} / {den}"
    if isinstance(e, Pow):
        b = render(e.base)
        if not isinstance(e.base, (Var, PiConst, Func)) and not (
            isinstance(e.base, Const) and isinstance(e.base.value, Fraction)
            and e.base.value.denominator == 1 and e.base.value >= 0
        ):
            b = f"({b})"
        return f"{b}^{e.exp}"
    if isinstance(e, Neg):
        s = render(e.arg)
        if isinstance(e.arg, (Add, Mul, Div)):
            s = f"({s})"
        return f"-{s}"
    if isinstance(e, Func):
        return f"{e.name}({render(e.arg)})"
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def free_names(e: Expr) -> set[str]:
    out: set[str] = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, (Add, Mul)):
            stack.extend(n.args)
        elif isinstance(n, Div):
            stack.extend((n.num, n.den))
        elif isinstance(n, (Pow, Neg, Func)):
            stack.append(n.base if isinstance(n, Pow) else n.arg)
    return out


def check_bound(e: Expr, chart: Chart) -> None:
    bad = free_names(e) - set(chart.coord_names)
    if bad:
        raise UnknownCoordinateError(f"coordinates {sorted(bad)} not in chart {chart.coord_names}")


_MATH = {"sin": math.sin, "cos": math.cos, "exp": math.exp}


def evaluate(e: Expr, chart: Chart, point: Sequence[float]) -> float:
    """IEEE-double evaluation at one point (periodic coordinates reduced mod 1)."""
    pt = chart.reduce(np.asarray(point, dtype=float).reshape(chart.dim))
    env = {name: float(v) for name, v in zip(chart.coord_names, pt)}

    def ev(n: Expr) -> float:
        if isinstance(n, Const):
            return float(n.value)
        if isinstance(n, PiConst):
            return math.pi
        if isinstance(n, Var):
            try:
                return env[n.name]
            except KeyError:
                raise UnknownCoordinateError(f"unknown coordinate {n.name!r}") from None
        if isinstance(n, Add):
            return math.fsum(ev(a) for a in n.args)
        if isinstance(n, Mul):
            v = 1.0
            for a in n.args:
                v *= ev(a)
            return v
        if isinstance(n, Div):
            num, den = ev(n.num), ev(n.den)
            if den == 0.0:
                raise EvaluationError(f"division by zero in {render(n)} at {tuple(pt)}")
            return num / den
        if isinstance(n, Pow):
            b = ev(n.base)
            if b == 0.0 and n.exp < 0:
                raise EvaluationError(f"division by zero in {render(n)} at {tuple(pt)}")
            return b ** n.exp
        if isinstance(n, Neg):
            return -ev(n.arg)
        if isinstance(n, Func):
            return _MATH[n.name](ev(n.arg))
        raise TypeError(f"not an expression: {n!r}")

    return ev(e)


def _source(e: Expr, index: dict[str, int]) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, PiConst):
        return repr(math.pi)
    if isinstance(e, Var):
        return f"x[{index[e.name]}]"
    if isinstance(e, Add):
        return "(" + " + ".join(_source(a, index) for a in e.args) + ")"
    if isinstance(e, Mul):
        return "(" + " * ".join(_source(a, index) for a in e.args) + ")"
    if isinstance(e, Div):
        return f"({_source(e.num, index)} / {_source(e.den, index)})"
    if isinstance(e, Pow):
        if e.exp < 0:
            return f"(1.0 / {_source(e.base, index)} ** {-e.exp})"
        return f"({_source(e.base, index)} ** {e.exp})"
    if isinstance(e, Neg):
        return f"(-{_source(e.arg, index)})"
    if isinstance(e, Func):
        return f"_np.{e.name}({_source(e.arg, index)})"
    raise TypeError(f"not an expression: {e!r}")


def lambdify(exprs: Sequence[Expr], chart: Chart) -> Callable[[np.ndarray], np.ndarray]:
    """Compile expressions into one vectorised numpy function.

    The returned function maps points of shape ``(..., n)`` to values of shape
    ``(..., len(exprs))``.  No mod-1 reduction is applied.
    """
    exprs = [as_expr(e) for e in exprs]
    for e in exprs:
        check_bound(e, chart)
    index = {name: i for i, name in enumerate(chart.coord_names)}
    body = ", ".join(_source(e, index) for e in exprs)
    code = f"def _f(x):\n    return ({body},)\n"
    ns: dict = {"_np": np}
    exec(compile(code, "<dirac_aa.lambdify>", "exec"), ns)
    raw = ns["_f"]
    count = len(exprs)

    def f(points):
        pts = np.asarray(points, dtype=float)
        x = np.moveaxis(pts, -1, 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = raw(x)
        shape = pts.shape[:-1]
        out = np.empty(shape + (count,))
        for i, v in enumerate(vals):
            out[..., i] = v
        return out

    return f


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------


def diff(e: Expr, coord: str, chart: Chart | None = None) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``coord`` (simplified)."""
    if chart is not None:
        chart.index(coord)
    return simplify(_diff(e, coord))


def _diff(e: Expr, x: str) -> Expr:
    if isinstance(e, (Const, PiConst)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == x else ZERO
    if isinstance(e, Add):
        return Add([_diff(a, x) for a in e.args])
    if isinstance(e, Mul):
        terms = []
        for i, a in enumerate(e.args):
            da = _diff(a, x)
            if da == ZERO:
                continue
            terms.append(Mul(e.args[:i] + (da,) + e.args[i + 1:]))
        return Add(terms) if terms else ZERO
    if isinstance(e, Div):
        dn, dd = _diff(e.num, x), _diff(e.den, x)
        return Div(Add([Mul((dn, e.den)), Neg(Mul((e.num, dd)))]), Pow(e.den, 2))
    if isinstance(e, Pow):
        db = _diff(e.base, x)
        if db == ZERO:
            return ZERO
        return Mul((Const(e.exp), Pow(e.base, e.exp - 1), db))
    if isinstance(e, Neg):
        return Neg(_diff(e.arg, x))
    if isinstance(e, Func):
        da = _diff(e.arg, x)
        if da == ZERO:
            return ZERO
        if e.name == "sin":
            return Mul((Func("cos", e.arg), da))
        if e.name == "cos":
            return Neg(Mul((Func("sin", e.arg), da)))
        return Mul((e, da))
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Simplification
# ---------------------------------------------------------------------------


def _sort_key(e: Expr) -> tuple:
    rank = 0 if isinstance(e, Const) else 1 if isinstance(e, PiConst) else 2
    return (rank, render_key(e))


def render_key(e: Expr) -> str:
    try:
        return render(e)
    except ExpressionError:
        return repr(e)


def _num(e: Expr) -> Number | None:
    return e.value if isinstance(e, Const) else None


def _split_coeff(term: Expr) -> tuple[Number, Expr | None]:
    if isinstance(term, Const):
        return term.value, None
    if isinstance(term, Mul) and isinstance(term.args[0], Const):
        rest = term.args[1:]
        return term.args[0].value, rest[0] if len(rest) == 1 else Mul(rest)
    return Fraction(1), term


def _make_mul(coeff: Number, rest: Expr | None) -> Expr:
    if rest is None:
        return Const(coeff)
    if coeff == 1:
        return rest
    factors = rest.args if isinstance(rest, Mul) else (rest,)
    return Mul((Const(coeff),) + tuple(factors))


def _simplify_add(args: Iterable[Expr]) -> Expr:
    flat: list[Expr] = []
    for a in args:
        if isinstance(a, Add):
            flat.extend(a.args)
        else:
            flat.append(a)
    const: Number = Fraction(0)
    merged: dict[Expr, Number] = {}
    for t in flat:
        c, rest = _split_coeff(t)
        if rest is None:
            const = const + c
        else:
            merged[rest] = merged.get(rest, Fraction(0)) + c
    terms = [_make_mul(c, r) for r, c in merged.items() if c != 0]
    terms.sort(key=_sort_key)
    if const != 0:
        terms.insert(0, Const(const))
    if not terms:
        return Const(const) if isinstance(const, float) else ZERO
    return terms[0] if len(terms) == 1 else Add(terms)


def _simplify_mul(args: Iterable[Expr]) -> Expr:
    flat: list[Expr] = []
    for a in args:
        if isinstance(a, Mul):
            flat.extend(a.args)
        else:
            flat.append(a)
    coeff: Number = Fraction(1)
    powers: dict[Expr, int] = {}
    for f in flat:
        if isinstance(f, Const):
            coeff = coeff * f.value
            continue
        base, e = (f.base, f.exp) if isinstance(f, Pow) else (f, 1)
        powers[base] = powers.get(base, 0) + e
    if coeff == 0:
        return ZERO
    factors = []
    for base, e in powers.items():
        if e == 0:
            continue
        factors.append(base if e == 1 else Pow(base, e))
    factors.sort(key=_sort_key)
    if not factors:
        return Const(coeff)
    if coeff != 1:
        factors.insert(0, Const(coeff))
    return factors[0] if len(factors) == 1 else Mul(factors)


def _simplify_pow(base: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return base
    v = _num(base)
    if v is not None:
        if v == 0 and n < 0:
            return Pow(base, n)
        if isinstance(v, Fraction):
            return Const(v ** n)
        return Const(float(v) ** n)
    if isinstance(base, Pow):
        return _simplify_pow(base.base, base.exp * n)
    if isinstance(base, Mul):
        return _simplify_mul([_simplify_pow(a, n) for a in base.args])
    return Pow(base, n)


def _simplify_func(name: str, arg: Expr) -> Expr:
    v = _num(arg)
    if v is not None:
        if v == 0:
            return ZERO if name == "sin" else ONE
        return Const(_MATH[name](float(v)))
    return Func(name, arg)


def simplify(e: Expr) -> Expr:
    """Terminating rewrite pass: constant folding, 0/1 absorption, like-term merging.

    Products and sums are flattened and their arguments sorted; no expansion
    is attempted, so the result is not a canonical form.
    """
    if isinstance(e, (Const, PiConst, Var)):
        return e
    if isinstance(e, Add):
        return _simplify_add([simplify(a) for a in e.args])
    if isinstance(e, Mul):
        return _simplify_mul([simplify(a) for a in e.args])
    if isinstance(e, Div):
        num = simplify(e.num)
        den = simplify(e.den)
        if num == ZERO:
            return ZERO
        return _simplify_mul([num, _simplify_pow(den, -1)])
    if isinstance(e, Pow):
        return _simplify_pow(simplify(e.base), e.exp)
    if isinstance(e, Neg):
        return _simplify_mul([Const(-1), simplify(e.arg)])
    if isinstance(e, Func):
        return _simplify_func(e.name, simplify(e.arg))
    raise TypeError(f"not an expression: {e!r}")


def substitute(e: Expr, values: dict[str, Number | Expr]) -> Expr:
    """Replace coordinates by constants or expressions."""
    if isinstance(e, Var):
        if e.name in values:
            return as_expr(values[e.name])
        return e
    if isinstance(e, (Const, PiConst)):
        return e
    if isinstance(e, Add):
        return Add([substitute(a, values) for a in e.args])
    if isinstance(e, Mul):
        return Mul([substitute(a, values) for a in e.args])
    if isinstance(e, Div):
        return Div(substitute(e.num, values), substitute(e.den, values))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, values), e.exp)
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, values))
    if isinstance(e, Func):
        return Func(e.name, substitute(e.arg, values))
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Zero tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZeroCheck:
    """Outcome of an identically-zero test.

    ``kind`` is ``"symbolic"`` when the simplifier reached the 0 constant,
    ``"numeric"`` when sampling bounded the value below the threshold, and
    ``None`` when the expression is not zero.
    """

    kind: str | None
    max_abs: float

    @property
    def is_zero(self) -> bool:
        return self.kind is not None


def is_zero(e: Expr, chart: Chart, samples: int = 128, threshold: float = 1e-10) -> ZeroCheck:
    s = simplify(e)
    if s == ZERO:
        return ZeroCheck("symbolic", 0.0)
    from .sampling import halton_points

    pts = halton_points(chart, samples)
    vals = lambdify([s], chart)(pts)[:, 0]
    if not np.all(np.isfinite(vals)):
        return ZeroCheck(None, math.inf)
    m = float(np.max(np.abs(vals)))
    return ZeroCheck("numeric" if m < threshold else None, m)


def ensure_nonzero_denominators(e: Expr, chart: Chart, samples: int = 128) -> None:
    """Raise if some division node has an identically-zero denominator."""
    stack = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, Div):
            if is_zero(n.den, chart, samples).is_zero:
                raise ExpressionError(f"identically-zero denominator in {render(n)}")
            stack.extend((n.num, n.den))
        elif isinstance(n, Pow):
            if n.exp < 0 and is_zero(n.base, chart, samples).is_zero:
                raise ExpressionError(f"identically-zero denominator in {render(n)}")
            stack.append(n.base)
        elif isinstance(n, (Add, Mul)):
            stack.extend(n.args)
        elif isinstance(n, (Neg, Func)):
            stack.append(n.arg)
