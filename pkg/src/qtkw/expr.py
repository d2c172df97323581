"""Symbolic scalar expressions in the ambient coordinates x1..x5 of R^5.

Nodes are hash-consed: structurally equal trees are the same Python object,
so an expression is really a DAG and differentiation, substitution and
evaluation are memoized per node.  Evaluation is vectorized over arrays of
points of shape ``(N, 5)``.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Expr",
    "SourceError",
    "EvaluationError",
    "const",
    "var",
    "R",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "power",
    "parse",
    "diff",
    "evaluate",
    "homogenize0",
    "compose",
    "to_text",
    "variables",
    "X",
]


class SourceError(ValueError):
    """Syntax error in expression text, located by byte offset."""

    def __init__(self, position: int, message: str):
        super().__init__(f"{message} (at offset {position})")
        self.position = position
        self.message = message


class EvaluationError(ArithmeticError):
    """Domain violation while evaluating an expression.

    ``index`` is the position of the first offending point in the evaluated
    batch (0 for a single point).
    """

    def __init__(self, message: str, index: int = 0):
        super().__init__(f"{message} at point #{index}")
        self.message = message
        self.index = index


_INTERN: dict[tuple, "Expr"] = {}

UNARY_OPS = ("neg", "exp", "log", "sqrt", "sin", "cos")
BINARY_OPS = ("add", "sub", "mul", "div")


class Expr:
    """Immutable expression node.  Build nodes with the module helpers or
    Python operators; never call the constructor directly."""

    __slots__ = ("kind", "args", "value", "__weakref__")

    kind: str
    args: tuple
    value: object

    def __new__(cls, kind: str, args: tuple = (), value=None):
        key = (kind, value, *(id(a) for a in args))
        node = _INTERN.get(key)
        if node is None:
            node = object.__new__(cls)
            node.kind = kind
            node.args = args
            node.value = value
            _INTERN[key] = node
        return node

    # operators --------------------------------------------------------

    def __add__(self, other):
        return _binary("add", self, _coerce(other))

    def __radd__(self, other):
        return _binary("add", _coerce(other), self)

    def __sub__(self, other):
        return _binary("sub", self, _coerce(other))

    def __rsub__(self, other):
        return _binary("sub", _coerce(other), self)

    def __mul__(self, other):
        return _binary("mul", self, _coerce(other))

    def __rmul__(self, other):
        return _binary("mul", _coerce(other), self)

    def __truediv__(self, other):
        return _binary("div", self, _coerce(other))

    def __rtruediv__(self, other):
        return _binary("div", _coerce(other), self)

    def __neg__(self):
        return _unary("neg", self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __repr__(self):
        return f"Expr({to_text(self)!r})"

    def __str__(self):
        return to_text(self)

    def __reduce__(self):
        return (parse, (to_text(self),))

    @property
    def is_const(self) -> bool:
        return self.kind == "const"

    def __call__(self, points):
        return evaluate(self, points)


def _coerce(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return const(float(value))
    raise TypeError(f"cannot use {type(value).__name__} in an expression")


def const(value: float) -> Expr:
    value = float(value)
    if value == 0.0:
        value = 0.0  # normalize -0.0
    return Expr("const", (), value)


def var(axis: int) -> Expr:
    if axis not in (1, 2, 3, 4, 5):
        raise ValueError(f"axis must be in 1..5, got {axis}")
    return Expr("var", (), axis)


R = Expr("radius")
ZERO = const(0.0)
ONE = const(1.0)
X = (None, var(1), var(2), var(3), var(4), var(5))


def _fold(op: str, a: float, b: float | None = None) -> Expr | None:
    try:
        with np.errstate(all="raise"):
            if op == "neg":
                return const(-a)
            if op == "exp":
                return const(math.exp(a))
            if op == "log":
                return const(math.log(a)) if a > 0 else None
            if op == "sqrt":
                return const(math.sqrt(a)) if a >= 0 else None
            if op == "sin":
                return const(math.sin(a))
            if op == "cos":
                return const(math.cos(a))
            if op == "add":
                return const(a + b)
            if op == "sub":
                return const(a - b)
            if op == "mul":
                return const(a * b)
            if op == "div":
                return const(a / b) if b != 0 else None
    except (OverflowError, ValueError):
        return None
    return None


def _unary(op: str, a: Expr) -> Expr:
    if a.kind == "const":
        folded = _fold(op, a.value)
        if folded is not None:
            return folded
    if op == "neg" and a.kind == "neg":
        return a.args[0]
    return Expr(op, (a,))


def _binary(op: str, a: Expr, b: Expr) -> Expr:
    if a.kind == "const" and b.kind == "const":
        folded = _fold(op, a.value, b.value)
        if folded is not None:
            return folded
    # neutral and absorbing elements only; no reordering or collection
    if op == "add":
        if a is ZERO:
            return b
        if b is ZERO:
            return a
    elif op == "sub":
        if b is ZERO:
            return a
        if a is ZERO:
            return _unary("neg", b)
    elif op == "mul":
        if a is ZERO or b is ZERO:
            return ZERO
        if a is ONE:
            return b
        if b is ONE:
            return a
    elif op == "div":
        if b is ONE:
            return a
        if a is ZERO and b.kind != "const":
            return ZERO
    return Expr(op, (a, b))


def power(base, exponent) -> Expr:
    """``base ** exponent`` for a rational exponent (int, Fraction or a float
    that is an exact small rational)."""
    base = _coerce(base)
    if isinstance(exponent, Fraction):
        q = exponent
    elif isinstance(exponent, (int, np.integer)):
        q = Fraction(int(exponent))
    elif isinstance(exponent, float) and float(Fraction(exponent).limit_denominator(64)) == exponent:
        q = Fraction(exponent).limit_denominator(64)
    elif isinstance(exponent, tuple) and len(exponent) == 2:
        q = Fraction(int(exponent[0]), int(exponent[1]))
    else:
        raise TypeError(f"exponent must be rational, got {exponent!r}")
    if q == 0:
        return ONE
    if q == 1:
        return base
    if base.kind == "const":
        b = base.value
        if q.denominator == 1 and not (b == 0 and q < 0):
            return const(b ** q.numerator)
        if b > 0:
            return const(b ** float(q))
    return Expr("pow", (base,), (q.numerator, q.denominator))


def exp(e) -> Expr:
    return _unary("exp", _coerce(e))


def log(e) -> Expr:
    return _unary("log", _coerce(e))


def sqrt(e) -> Expr:
    return _unary("sqrt", _coerce(e))


def sin(e) -> Expr:
    return _unary("sin", _coerce(e))


def cos(e) -> Expr:
    return _unary("cos", _coerce(e))


_FUNCS = {"exp": exp, "log": log, "sqrt": sqrt, "sin": sin, "cos": cos}


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            offset = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise SourceError(_byte_offset(src, offset), f"unexpected character {src[offset]!r}")
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), _byte_offset(src, start)))
        pos = m.end()
    tokens.append(("end", "", len(src.encode("utf-8"))))
    return tokens


def _byte_offset(src: str, char_index: int) -> int:
    return len(src[:char_index].encode("utf-8"))


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value:
            found = "end of input" if kind == "end" else repr(text)
            raise SourceError(pos, f"expected {value!r}, found {found}")

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            raise SourceError(0, "empty expression")
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            if text == ")":
                raise SourceError(pos, "unbalanced ')'")
            raise SourceError(pos, f"unexpected token {text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            e = e * rhs if op == "*" else e / rhs
        return e

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            return -self.unary()
        return self.factor()

    def factor(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return power(base, self.rational())
        return base

    def integer(self) -> int:
        sign = 1
        if self.peek()[1] == "-":
            self.take()
            sign = -1
        kind, text, pos = self.take()
        if kind != "num" or not text.isdigit():
            raise SourceError(pos, "expected an integer exponent")
        return sign * int(text)

    def rational(self) -> Fraction:
        if self.peek()[1] == "(":
            self.take()
            num = self.integer()
            den = 1
            if self.peek()[1] == "/":
                self.take()
                den = self.integer()
                if den == 0:
                    raise SourceError(self.tokens[self.i - 1][2], "zero denominator in exponent")
            self.expect(")")
            return Fraction(num, den)
        return Fraction(self.integer())

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return const(float(text))
        if kind == "name":
            if text == "pi":
                return const(math.pi)
            if text == "r":
                return R
            m = re.fullmatch(r"x([1-5])", text)
            if m:
                return var(int(m.group(1)))
            if text in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _FUNCS[text](arg)
            raise SourceError(pos, f"unknown identifier {text!r}")
        if text == "(":
            e = self.expr()
            kind2, text2, pos2 = self.peek()
            if text2 != ")":
                raise SourceError(pos2 if kind2 != "end" else pos, "unbalanced '('")
            self.take()
            return e
        if kind == "end":
            raise SourceError(pos, "unexpected end of input")
        raise SourceError(pos, f"unexpected token {text!r}")


def parse(src: str) -> Expr:
    """Parse expression text (grammar in the README) into an :class:`Expr`."""
    if isinstance(src, bytes):
        src = src.decode("utf-8")
    return _Parser(src).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def to_text(e: Expr) -> str:
    """Render as parseable text; ``parse(to_text(e)) is e`` for trees built by
    the parser."""
    memo: dict[int, tuple[str, int]] = {}

    def render(node: Expr) -> tuple[str, int]:
        hit = memo.get(id(node))
        if hit is not None:
            return hit
        k = node.kind
        if k == "const":
            v = node.value
            text = repr(v) if v >= 0 else f"-{repr(-v)}"
            out = (text, 5 if v >= 0 else 3)
        elif k == "var":
            out = (f"x{node.value}", 5)
        elif k == "radius":
            out = ("r", 5)
        elif k in ("exp", "log", "sqrt", "sin", "cos"):
            out = (f"{k}({render(node.args[0])[0]})", 5)
        elif k == "neg":
            s, p = render(node.args[0])
            out = (f"-{s}" if p >= 3 else f"-({s})", 3)
        elif k == "pow":
            s, p = render(node.args[0])
            num, den = node.value
            ex = str(num) if den == 1 and num >= 0 else f"({num}/{den})" if den != 1 else f"({num})"
            out = (f"{s if p >= 5 else '(' + s + ')'}^{ex}", 4)
        else:
            prec = _PREC[k]
            ls, lp = render(node.args[0])
            rs, rp = render(node.args[1])
            sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[k]
            left = ls if lp >= prec else f"({ls})"
            right = rs if rp > prec else f"({rs})"
            out = (f"{left} {sym} {right}", prec)
        memo[id(node)] = out
        return out

    return render(e)[0]


# ---------------------------------------------------------------------------
# traversal helpers


def _postorder(root: Expr) -> list[Expr]:
    order: list[Expr] = []
    seen: set[int] = set()
    stack: list[tuple[Expr, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for child in reversed(node.args):
            if id(child) not in seen:
                stack.append((child, False))
    return order


def variables(e: Expr) -> set[int]:
    """Axes referenced by ``e``; the radius symbol counts as all five."""
    axes: set[int] = set()
    for node in _postorder(e):
        if node.kind == "var":
            axes.add(node.value)
        elif node.kind == "radius":
            axes.update(range(1, 6))
    return axes


def size(e: Expr) -> int:
    """Number of distinct nodes in the DAG."""
    return len(_postorder(e))


# ---------------------------------------------------------------------------
# differentiation

_DIFF_CACHE: dict[tuple[int, int], Expr] = {}


def diff(e: Expr, axis: int) -> Expr:
    """Exact partial derivative with respect to ``x<axis>`` in flat R^5."""
    if axis not in (1, 2, 3, 4, 5):
        raise ValueError(f"axis must be in 1..5, got {axis}")
    for node in _postorder(e):
        key = (id(node), axis)
        if key in _DIFF_CACHE:
            continue
        _DIFF_CACHE[key] = _diff_node(node, axis)
    return _DIFF_CACHE[(id(e), axis)]


def _d(node: Expr, axis: int) -> Expr:
    return _DIFF_CACHE[(id(node), axis)]


def _diff_node(node: Expr, axis: int) -> Expr:
    k = node.kind
    if k == "const":
        return ZERO
    if k == "var":
        return ONE if node.value == axis else ZERO
    if k == "radius":
        return var(axis) / R
    if k == "pow":
        u = node.args[0]
        du = _d(u, axis)
        if du is ZERO:
            return ZERO
        num, den = node.value
        q = Fraction(num, den)
        return const(float(q)) * power(u, q - 1) * du
    if k in UNARY_OPS:
        u = node.args[0]
        du = _d(u, axis)
        if du is ZERO:
            return ZERO
        if k == "neg":
            return -du
        if k == "exp":
            return node * du
        if k == "log":
            return du / u
        if k == "sqrt":
            return du / (const(2.0) * node)
        if k == "sin":
            return cos(u) * du
        if k == "cos":
            return -(sin(u) * du)
    a, b = node.args
    da, db = _d(a, axis), _d(b, axis)
    if k == "add":
        return da + db
    if k == "sub":
        return da - db
    if k == "mul":
        return da * b + a * db
    if k == "div":
        if db is ZERO:
            return da / b
        return (da * b - a * db) / (b * b)
    raise AssertionError(k)


# ---------------------------------------------------------------------------
# substitution


def substitute(e: Expr, mapping: Callable[[Expr], Expr | None]) -> Expr:
    """Rebuild ``e`` bottom-up; ``mapping(node)`` may return a replacement
    for leaves (var, radius) or ``None`` to keep them."""
    memo: dict[int, Expr] = {}
    for node in _postorder(e):
        if not node.args:
            rep = mapping(node)
            memo[id(node)] = node if rep is None else rep
            continue
        args = [memo[id(a)] for a in node.args]
        if all(x is y for x, y in zip(args, node.args)):
            memo[id(node)] = node
        elif node.kind == "pow":
            memo[id(node)] = power(args[0], Fraction(*node.value))
        elif node.kind in UNARY_OPS:
            memo[id(node)] = _unary(node.kind, args[0])
        else:
            memo[id(node)] = _binary(node.kind, args[0], args[1])
    return memo[id(e)]


def compose(e: Expr, mapping: Sequence[Expr]) -> Expr:
    """Substitute ``x_i -> mapping[i-1]``; ``r`` becomes the norm of the map."""
    if len(mapping) != 5:
        raise ValueError("compose needs a 5-tuple of component expressions")
    comps = [_coerce(m) for m in mapping]
    radius = None

    def rep(node: Expr):
        nonlocal radius
        if node.kind == "var":
            return comps[node.value - 1]
        if node.kind == "radius":
            if radius is None:
                radius = sqrt(sum((c * c for c in comps[1:]), comps[0] * comps[0]))
            return radius
        return None

    return substitute(e, rep)


_HOMOG_CACHE: dict[int, Expr] = {}


def homogenize0(e: Expr) -> Expr:
    """Degree-0 extension ``x -> e(x/|x|)`` (so ``r`` becomes 1)."""
    hit = _HOMOG_CACHE.get(id(e))
    if hit is not None:
        return hit
    scaled = [var(i) / R for i in range(1, 6)]

    def rep(node: Expr):
        if node.kind == "var":
            return scaled[node.value - 1]
        if node.kind == "radius":
            return ONE
        return None

    out = substitute(e, rep)
    _HOMOG_CACHE[id(e)] = out
    return out


# ---------------------------------------------------------------------------
# evaluation

_CHUNK = 32768
_THREADS = 1


def set_threads(n: int) -> None:
    """Worker threads used for chunked evaluation (results do not depend on it)."""
    global _THREADS
    _THREADS = max(1, int(n))


def get_threads() -> int:
    return _THREADS


def _postorder_many(roots: Sequence[Expr]) -> list[Expr]:
    order: list[Expr] = []
    seen: set[int] = set()
    for root in roots:
        for node in _postorder(root):
            if id(node) not in seen:
                seen.add(id(node))
                order.append(node)
    return order


class _Tape:
    """Linearized DAG for one or more roots, with last-use bookkeeping so
    intermediate arrays are released as soon as possible."""

    def __init__(self, roots: Sequence[Expr]):
        order = _postorder_many(roots)
        index = {id(n): i for i, n in enumerate(order)}
        self.ops = [(n.kind, tuple(index[id(a)] for a in n.args), n.value) for n in order]
        self.outputs = [index[id(r)] for r in roots]
        keep = set(self.outputs)
        last_use = [-1] * len(order)
        for i, (_, args, _) in enumerate(self.ops):
            for a in args:
                last_use[a] = i
        self.free_after: list[list[int]] = [[] for _ in order]
        for j, i in enumerate(last_use):
            if i >= 0 and j not in keep:
                self.free_after[i].append(j)

    def run(self, pts: np.ndarray, offset: int) -> list[np.ndarray]:
        n = pts.shape[0]
        vals: list = [None] * len(self.ops)
        radius = None
        for i, (kind, args, value) in enumerate(self.ops):
            if kind == "const":
                out = value
            elif kind == "var":
                out = pts[:, value - 1]
            elif kind == "radius":
                if radius is None:
                    radius = np.sqrt(np.einsum("ij,ij->i", pts, pts))
                out = radius
            elif kind == "add":
                out = vals[args[0]] + vals[args[1]]
            elif kind == "sub":
                out = vals[args[0]] - vals[args[1]]
            elif kind == "mul":
                out = vals[args[0]] * vals[args[1]]
            elif kind == "div":
                den = vals[args[1]]
                bad = np.asarray(den == 0)
                if bad.any():
                    raise EvaluationError("division by zero", offset + _first(bad))
                out = vals[args[0]] / den
            elif kind == "neg":
                out = -vals[args[0]]
            elif kind == "exp":
                out = np.exp(vals[args[0]])
            elif kind == "log":
                a = vals[args[0]]
                bad = np.asarray(~(a > 0))
                if bad.any():
                    raise EvaluationError("log of non-positive value", offset + _first(bad))
                out = np.log(a)
            elif kind == "sqrt":
                a = vals[args[0]]
                bad = np.asarray(~(a >= 0))
                if bad.any():
                    raise EvaluationError("sqrt of negative value", offset + _first(bad))
                out = np.sqrt(a)
            elif kind == "sin":
                out = np.sin(vals[args[0]])
            elif kind == "cos":
                out = np.cos(vals[args[0]])
            elif kind == "pow":
                out = _eval_pow(vals[args[0]], value, offset)
            else:
                raise AssertionError(kind)
            vals[i] = out
            for j in self.free_after[i]:
                vals[j] = None
        results = []
        for k in self.outputs:
            res = np.broadcast_to(np.asarray(vals[k], dtype=float), (n,))
            finite = np.isfinite(res)
            if not finite.all():
                raise EvaluationError("non-finite value", offset + _first(~finite))
            results.append(res)
        return results


def _first(mask: np.ndarray) -> int:
    return int(np.argmax(mask)) if mask.ndim else 0


def _eval_pow(base, exponent: tuple[int, int], offset: int):
    num, den = exponent
    if den == 1:
        if num < 0:
            bad = np.asarray(base == 0)
            if bad.any():
                raise EvaluationError("zero to a negative power", offset + _first(bad))
            if num == -1:
                return 1.0 / base
        if num == 2:
            return base * base
        return base ** float(num)
    bad = np.asarray(base < 0 if num > 0 else base <= 0)
    if bad.any():
        raise EvaluationError("fractional power of a negative value", offset + _first(bad))
    if den == 2:
        root = np.sqrt(base)
        return root if num == 1 else root ** num
    return base ** (num / den)


_TAPES: dict[tuple[int, ...], _Tape] = {}


def _get_tape(roots: Sequence[Expr]) -> _Tape:
    key = tuple(id(r) for r in roots)
    tape = _TAPES.get(key)
    if tape is None:
        tape = _TAPES[key] = _Tape(roots)
    return tape


def _as_points(points) -> tuple[np.ndarray, bool]:
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 5:
        raise ValueError(f"points must have shape (5,) or (N, 5), got {np.shape(points)}")
    return pts, single


def evaluate_many(exprs: Sequence[Expr], points) -> np.ndarray:
    """Evaluate several expressions at once, sharing common subexpressions.

    Returns shape ``(len(exprs), N)`` (or ``(len(exprs),)`` for one point).
    """
    exprs = [_coerce(e) for e in exprs]
    pts, single = _as_points(points)
    tape = _get_tape(exprs)
    n = pts.shape[0]
    starts = range(0, n, _CHUNK)
    if _THREADS > 1 and n > _CHUNK:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(_THREADS) as pool:
            parts = list(pool.map(lambda s: tape.run(pts[s:s + _CHUNK], s), starts))
    else:
        parts = [tape.run(pts[s:s + _CHUNK], s) for s in starts]
    out = np.empty((len(exprs), n))
    for s, part in zip(starts, parts):
        for k, arr in enumerate(part):
            out[k, s:s + _CHUNK] = arr
    return out[:, 0] if single else out


def evaluate(e: Expr, points) -> np.ndarray | float:
    """Evaluate at one point (5-vector -> float) or a batch ``(N, 5)`` -> ``(N,)``.

    Domain violations raise :class:`EvaluationError` instead of returning NaN.
    """
    out = evaluate_many([e], points)
    return float(out[0]) if out.ndim == 1 else out[0]
