"""Small arithmetic expression language for rate functions.

Expressions are built from numeric literals, named identifiers, the
operators ``+ - * / ^`` and the functions ``exp, log, pow, min, max``.
Precedence is ``^`` (right associative) above unary minus above ``* /``
above ``+ -``.  The AST supports exact symbolic differentiation except
through ``min``/``max``, which are rejected as non-smooth.

Parsing, printing and evaluation are deterministic;
``parse(to_string(e))`` reproduces ``e`` node for node.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import ExprEvalError, ExprSyntaxError, NonSmoothError

__all__ = [
    "Expr",
    "Num",
    "Name",
    "Unary",
    "Binary",
    "Call",
    "parse",
    "evaluate",
    "diff",
    "to_string",
    "compile_expr",
    "free_names",
]

_FUNCTIONS = {"exp": 1, "log": 1, "pow": 2, "min": 2, "max": 2}


@dataclass(frozen=True)
class Expr:
    offset: int = field(default=0, compare=False, kw_only=True)


@dataclass(frozen=True)
class Num(Expr):
    value: float = 0.0


@dataclass(frozen=True)
class Name(Expr):
    ident: str = ""


@dataclass(frozen=True)
class Unary(Expr):
    op: str = "-"
    operand: Expr = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Binary(Expr):
    op: str = "+"
    left: Expr = None  # type: ignore[assignment]
    right: Expr = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Call(Expr):
    func: str = ""
    args: tuple[Expr, ...] = ()


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", offset=pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, names: set[str] | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.names = names

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.peek()
        if kind != "op" or val != value:
            raise ExprSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", offset=off)
        return self.advance()

    def parse(self) -> Expr:
        e = self.sum()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"trailing input {val!r}", offset=off)
        return e

    def sum(self) -> Expr:
        e = self.term()
        while True:
            kind, val, off = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                e = Binary(op=val, left=e, right=self.term(), offset=off)
            else:
                return e

    def term(self) -> Expr:
        e = self.factor()
        while True:
            kind, val, off = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                e = Binary(op=val, left=e, right=self.factor(), offset=off)
            else:
                return e

    def factor(self) -> Expr:
        kind, val, off = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Unary(op="-", operand=self.factor(), offset=off)
        if kind == "op" and val == "+":
            self.advance()
            return self.factor()
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        kind, val, off = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            # right associative; exponent may carry a unary sign
            return Binary(op="^", left=e, right=self.factor(), offset=off)
        return e

    def atom(self) -> Expr:
        kind, val, off = self.advance()
        if kind == "num":
            return Num(value=float(val), offset=off)
        if kind == "ident":
            nk, nv, _ = self.peek()
            if nk == "op" and nv == "(":
                if val not in _FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {val!r}", offset=off)
                self.advance()
                args = [self.sum()]
                while self.peek()[:2] == ("op", ","):
                    self.advance()
                    args.append(self.sum())
                self.expect(")")
                if len(args) != _FUNCTIONS[val]:
                    raise ExprSyntaxError(
                        f"{val} takes {_FUNCTIONS[val]} argument(s), got {len(args)}", offset=off
                    )
                return Call(func=val, args=tuple(args), offset=off)
            if self.names is not None and val not in self.names:
                raise ExprSyntaxError(f"unknown identifier {val!r}", offset=off)
            return Name(ident=val, offset=off)
        if kind == "op" and val == "(":
            e = self.sum()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"expected a value, found {val or 'end of input'!r}", offset=off)


def parse(text: str, names: set[str] | None = None) -> Expr:
    """Parse ``text`` into an AST.

    When ``names`` is given, identifiers outside it raise
    :class:`ExprSyntaxError` with the byte offset of the offender.
    """
    if not text.strip():
        raise ExprSyntaxError("empty expression", offset=0)
    return _Parser(text, names).parse()


def free_names(e: Expr) -> set[str]:
    """All identifiers referenced by ``e``."""
    if isinstance(e, Num):
        return set()
    if isinstance(e, Name):
        return {e.ident}
    if isinstance(e, Unary):
        return free_names(e.operand)
    if isinstance(e, Binary):
        return free_names(e.left) | free_names(e.right)
    if isinstance(e, Call):
        out: set[str] = set()
        for a in e.args:
            out |= free_names(a)
        return out
    raise TypeError(f"not an Expr: {e!r}")


def evaluate(e: Expr, bindings: dict[str, float]) -> float:
    """Evaluate ``e`` with IEEE double arithmetic.

    Division by zero and log of a nonpositive argument raise
    :class:`ExprEvalError` carrying the node offset.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Name):
        try:
            return float(bindings[e.ident])
        except KeyError:
            raise ExprEvalError(f"unbound identifier {e.ident!r}", offset=e.offset) from None
    if isinstance(e, Unary):
        return -evaluate(e.operand, bindings)
    if isinstance(e, Binary):
        a = evaluate(e.left, bindings)
        b = evaluate(e.right, bindings)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0.0:
                raise ExprEvalError("division by zero", offset=e.offset)
            return a / b
        if e.op == "^":
            try:
                return math.pow(a, b)
            except (OverflowError, ValueError, ZeroDivisionError) as exc:
                raise ExprEvalError(f"power failed: {exc}", offset=e.offset) from None
        raise ExprEvalError(f"unknown operator {e.op!r}", offset=e.offset)
    if isinstance(e, Call):
        vals = [evaluate(a, bindings) for a in e.args]
        if e.func == "exp":
            return math.exp(vals[0])
        if e.func == "log":
            if vals[0] <= 0.0:
                raise ExprEvalError(f"log of nonpositive value {vals[0]!r}", offset=e.offset)
            return math.log(vals[0])
        if e.func == "pow":
            try:
                return math.pow(vals[0], vals[1])
            except (OverflowError, ValueError, ZeroDivisionError) as exc:
                raise ExprEvalError(f"pow failed: {exc}", offset=e.offset) from None
        if e.func == "min":
            return min(vals)
        if e.func == "max":
            return max(vals)
        raise ExprEvalError(f"unknown function {e.func!r}", offset=e.offset)
    raise TypeError(f"not an Expr: {e!r}")


def _num(x: float) -> Expr:
    # canonical form: literals are nonnegative, sign lives in a Unary node,
    # so folded constants survive the print/parse round trip
    x = float(x)
    if x == 0.0:
        return Num(value=0.0)
    if x < 0.0:
        return Unary(op="-", operand=Num(value=-x))
    return Num(value=x)


def _is_num(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Num) and (value is None or e.value == value)


def _const_value(e: Expr) -> float | None:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Unary) and isinstance(e.operand, Num):
        return -e.operand.value
    return None


def _fold(e: Expr) -> Expr:
    """Constant folding and trivial identity cleanup (no general CAS)."""
    if isinstance(e, (Num, Name)):
        return e
    if isinstance(e, Unary):
        o = _fold(e.operand)
        v = _const_value(o)
        if v is not None:
            return _num(-v)
        return Unary(op="-", operand=o, offset=e.offset)
    if isinstance(e, Binary):
        a, b = _fold(e.left), _fold(e.right)
        va, vb = _const_value(a), _const_value(b)
        if va is not None and vb is not None and not (e.op == "/" and vb == 0.0):
            try:
                v = evaluate(Binary(op=e.op, left=_num(va), right=_num(vb)), {})
            except ExprEvalError:
                v = math.nan
            if math.isfinite(v):
                return _num(v)
        if e.op == "+":
            if _is_num(a, 0.0):
                return b
            if _is_num(b, 0.0):
                return a
        elif e.op == "-":
            if _is_num(b, 0.0):
                return a
        elif e.op == "*":
            if _is_num(a, 0.0) or _is_num(b, 0.0):
                return _num(0.0)
            if _is_num(a, 1.0):
                return b
            if _is_num(b, 1.0):
                return a
        elif e.op == "/":
            if _is_num(a, 0.0) and not _is_num(b, 0.0):
                return _num(0.0)
            if _is_num(b, 1.0):
                return a
        elif e.op == "^":
            if _is_num(b, 1.0):
                return a
            if _is_num(b, 0.0):
                return _num(1.0)
        return Binary(op=e.op, left=a, right=b, offset=e.offset)
    if isinstance(e, Call):
        args = tuple(_fold(a) for a in e.args)
        if all(_const_value(a) is not None for a in args):
            try:
                v = evaluate(Call(func=e.func, args=args), {})
                if math.isfinite(v):
                    return _num(v)
            except ExprEvalError:
                pass
        return Call(func=e.func, args=args, offset=e.offset)
    raise TypeError(f"not an Expr: {e!r}")


def diff(e: Expr, var: str) -> Expr:
    """Exact symbolic derivative of ``e`` with respect to ``var``.

    ``min``/``max`` raise :class:`NonSmoothError`: models that need a
    Jacobian must avoid them.
    """
    return _fold(_diff(e, var))


def _diff(e: Expr, var: str) -> Expr:
    if isinstance(e, Num):
        return _num(0.0)
    if isinstance(e, Name):
        return _num(1.0 if e.ident == var else 0.0)
    if isinstance(e, Unary):
        return Unary(op="-", operand=_diff(e.operand, var))
    if isinstance(e, Binary):
        u, v = e.left, e.right
        du, dv = _diff(u, var), _diff(v, var)
        if e.op in "+-":
            return Binary(op=e.op, left=du, right=dv)
        if e.op == "*":
            return Binary(
                op="+",
                left=Binary(op="*", left=du, right=v),
                right=Binary(op="*", left=u, right=dv),
            )
        if e.op == "/":
            num = Binary(
                op="-",
                left=Binary(op="*", left=du, right=v),
                right=Binary(op="*", left=u, right=dv),
            )
            return Binary(op="/", left=num, right=Binary(op="^", left=v, right=_num(2.0)))
        if e.op == "^":
            return _diff_power(u, v, du, dv)
        raise ExprSyntaxError(f"unknown operator {e.op!r}", offset=e.offset)
    if isinstance(e, Call):
        if e.func in ("min", "max"):
            raise NonSmoothError(f"{e.func} is not differentiable", offset=e.offset)
        if e.func == "exp":
            return Binary(op="*", left=e, right=_diff(e.args[0], var))
        if e.func == "log":
            return Binary(op="/", left=_diff(e.args[0], var), right=e.args[0])
        if e.func == "pow":
            u, v = e.args
            return _diff_power(u, v, _diff(u, var), _diff(v, var))
        raise ExprSyntaxError(f"unknown function {e.func!r}", offset=e.offset)
    raise TypeError(f"not an Expr: {e!r}")


def _diff_power(u: Expr, v: Expr, du: Expr, dv: Expr) -> Expr:
    folded_dv = _fold(dv)
    if _is_num(folded_dv, 0.0):
        # d(u^c) = c*u^(c-1)*du, valid for any sign of u
        cm1 = _fold(Binary(op="-", left=v, right=_num(1.0)))
        return Binary(
            op="*",
            left=Binary(op="*", left=v, right=Binary(op="^", left=u, right=cm1)),
            right=du,
        )
    # general case u^v = exp(v log u), requires u > 0 at evaluation points
    inner = Binary(
        op="+",
        left=Binary(op="*", left=dv, right=Call(func="log", args=(u,))),
        right=Binary(op="/", left=Binary(op="*", left=v, right=du), right=u),
    )
    return Binary(op="*", left=Binary(op="^", left=u, right=v), right=inner)


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_string(e: Expr) -> str:
    """Render ``e`` with minimal parentheses; parses back to the same AST."""
    return _render(e, 0)


def _render(e: Expr, parent_prec: int) -> str:
    if isinstance(e, Num):
        if e.value < 0:
            s = repr(e.value)
            return f"({s})" if parent_prec > 0 else s
        return repr(e.value)
    if isinstance(e, Name):
        return e.ident
    if isinstance(e, Unary):
        s = "-" + _render(e.operand, _PRECEDENCE["neg"])
        return f"({s})" if parent_prec > _PRECEDENCE["neg"] else s
    if isinstance(e, Binary):
        prec = _PRECEDENCE[e.op]
        if e.op == "^":
            # right associative; left operand needs parens at equal precedence
            s = _render(e.left, prec + 1) + " ^ " + _render(e.right, _PRECEDENCE["neg"])
        else:
            # left associative; right operand needs parens at equal precedence
            s = _render(e.left, prec) + f" {e.op} " + _render(e.right, prec + 1)
        return f"({s})" if parent_prec > prec or (parent_prec == prec) else s
    if isinstance(e, Call):
        return f"{e.func}(" + ", ".join(_render(a, 0) for a in e.args) + ")"
    raise TypeError(f"not an Expr: {e!r}")


def compile_expr(e: Expr, arg_names: list[str], params: dict[str, float] | None = None):
    """Compile ``e`` into a callable of positional numpy-compatible args.

    The closure uses numpy ufuncs, so array arguments broadcast; scalar
    evaluation agrees with :func:`evaluate` bit for bit for smooth inputs.
    """
    import numpy as np

    params = params or {}

    def build(node: Expr):
        if isinstance(node, Num):
            v = node.value
            return lambda args: v
        if isinstance(node, Name):
            if node.ident in params:
                v = float(params[node.ident])
                return lambda args: v
            try:
                idx = arg_names.index(node.ident)
            except ValueError:
                raise ExprEvalError(f"unbound identifier {node.ident!r}", offset=node.offset) from None
            return lambda args: args[idx]
        if isinstance(node, Unary):
            f = build(node.operand)
            return lambda args: -f(args)
        if isinstance(node, Binary):
            fa, fb = build(node.left), build(node.right)
            op = node.op
            if op == "+":
                return lambda args: fa(args) + fb(args)
            if op == "-":
                return lambda args: fa(args) - fb(args)
            if op == "*":
                return lambda args: fa(args) * fb(args)
            if op == "/":
                return lambda args: fa(args) / fb(args)
            if op == "^":
                return lambda args: fa(args) ** fb(args)
        if isinstance(node, Call):
            fs = [build(a) for a in node.args]
            fn = node.func
            if fn == "exp":
                return lambda args: np.exp(fs[0](args))
            if fn == "log":
                return lambda args: np.log(fs[0](args))
            if fn == "pow":
                return lambda args: fs[0](args) ** fs[1](args)
            if fn == "min":
                return lambda args: np.minimum(fs[0](args), fs[1](args))
            if fn == "max":
                return lambda args: np.maximum(fs[0](args), fs[1](args))
        raise TypeError(f"not an Expr: {node!r}")

    f = build(e)
    return lambda *args: f(args)


def contains_nonsmooth(e: Expr) -> bool:
    """True if ``e`` uses min/max anywhere (rejected in Jacobian contexts)."""
    if isinstance(e, Call):
        if e.func in ("min", "max"):
            return True
        return any(contains_nonsmooth(a) for a in e.args)
    if isinstance(e, Unary):
        return contains_nonsmooth(e.operand)
    if isinstance(e, Binary):
        return contains_nonsmooth(e.left) or contains_nonsmooth(e.right)
    return False
