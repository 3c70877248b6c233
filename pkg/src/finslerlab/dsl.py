"""Expression language for metric entries, norms, conformal factors.

Grammar (precedence low to high):

    expr   :=  term  (('+' | '-') term)*
    term   :=  unary (('*' | '/') unary)*
    unary  :=  '-' unary | power
    power  :=  atom ('^' unary)?          # right-associative
    atom   :=  NUMBER | IDENT | IDENT '(' args ')' | '(' expr ')'
    args   :=  expr (',' expr)*

Builtin functions: sin cos exp log sqrt abs (arity 1), norm/l1/l2/linf
(any arity; a single vector-symbol argument such as ``norm(x)`` or
``linf(v)`` expands to all components).  Other identifiers followed by
``(`` are calls to names resolved at evaluation time (user-defined norms).
The constant ``pi`` is predefined.

Evaluation is generic: bindings may be floats, numpy arrays (batch
evaluation) or :class:`~finslerlab.autodiff.Dual` values (derivatives).
Vector symbols (typically ``x`` and ``v``) are bound to tuples of
components and may appear only as direct call arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .autodiff import Dual, fabs, fcos, fexp, flog, fpow, fsin, fsqrt, mark_nonsmooth, primal
from .errors import DslParseError, NumericalError

# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Sym:
    name: str


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


UNARY_FUNCTIONS = {"sin", "cos", "exp", "log", "sqrt", "abs"}
VECTOR_FUNCTIONS = {"norm", "l1", "l2", "linf"}
CONSTANTS = {"pi": math.pi}


# ---------------------------------------------------------------------------
# Tokenizer

_OPS = set("+-*/^(),")


@dataclass(frozen=True)
class _Tok:
    kind: str  # num | ident | op | end
    text: str
    line: int
    col: int
    value: float = 0.0


def _tokenize(text, line_offset=0):
    toks = []
    line, col = 1 + line_offset, 1
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c.isspace():
            i += 1
            col += 1
            continue
        if c in _OPS:
            toks.append(_Tok("op", c, line, col))
            i += 1
            col += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lit = text[i:j]
            try:
                val = float(lit)
            except ValueError:
                raise DslParseError(f"bad number literal '{lit}'", line, col)
            toks.append(_Tok("num", lit, line, col, val))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(_Tok("ident", text[i:j], line, col))
            col += j - i
            i = j
            continue
        raise DslParseError(f"unexpected character {c!r}", line, col)
    toks.append(_Tok("end", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, toks):
        self.toks = toks
        self.pos = 0

    def peek(self):
        return self.toks[self.pos]

    def next(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, text):
        t = self.next()
        if t.kind != "op" or t.text != text:
            raise DslParseError(f"expected '{text}', found {t.text or 'end of input'!r}", t.line, t.col)
        return t

    def parse_expr(self):
        node = self.parse_term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.next().text
            node = Bin(op, node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.next().text
            node = Bin(op, node, self.parse_unary())
        return node

    def parse_unary(self):
        if self.peek().kind == "op" and self.peek().text == "-":
            self.next()
            return Neg(self.parse_unary())
        return self.parse_power()

    def parse_power(self):
        base = self.parse_atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.next()
            return Bin("^", base, self.parse_unary())
        return base

    def parse_atom(self):
        t = self.next()
        if t.kind == "num":
            return Num(t.value)
        if t.kind == "ident":
            if self.peek().kind == "op" and self.peek().text == "(":
                self.next()
                args = []
                if not (self.peek().kind == "op" and self.peek().text == ")"):
                    args.append(self.parse_expr())
                    while self.peek().kind == "op" and self.peek().text == ",":
                        self.next()
                        args.append(self.parse_expr())
                self.expect(")")
                return Call(t.text, tuple(args))
            return Sym(t.text)
        if t.kind == "op" and t.text == "(":
            node = self.parse_expr()
            self.expect(")")
            return node
        raise DslParseError(f"unexpected {t.text or 'end of input'!r}", t.line, t.col)


def parse(text, line_offset=0):
    """Parse an expression string into an AST."""
    p = _Parser(_tokenize(text, line_offset))
    node = p.parse_expr()
    t = p.peek()
    if t.kind != "end":
        raise DslParseError(f"trailing input {t.text!r}", t.line, t.col)
    return node


# ---------------------------------------------------------------------------
# Printer (canonical form; parse(print(parse(s))) == parse(s))

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node):
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def print_expr(node):
    """Render an AST to its canonical text form."""
    if isinstance(node, Num):
        v = node.value
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    if isinstance(node, Sym):
        return node.name
    if isinstance(node, Call):
        return f"{node.name}({', '.join(print_expr(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = print_expr(node.arg)
        if _prec(node.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Bin):
        lp, rp = _prec(node.left), _prec(node.right)
        mine = _PREC[node.op]
        left = print_expr(node.left)
        right = print_expr(node.right)
        # left operand needs parens when looser; for '^' (right-assoc) also when equal
        if lp < mine or (node.op == "^" and lp == mine):
            left = f"({left})"
        # right operand needs parens when looser, or equal for left-assoc - /
        if rp < mine or (node.op in ("-", "/") and rp == mine):
            right = f"({right})"
        if node.op == "^":
            return f"{left}^{right}"
        return f"{left} {node.op} {right}"
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# Validation

def symbols_of(node):
    """All Sym names appearing in the expression."""
    out = set()

    def walk(n):
        if isinstance(n, Sym):
            out.add(n.name)
        elif isinstance(n, Bin):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Neg):
            walk(n.arg)
        elif isinstance(n, Call):
            for a in n.args:
                walk(a)

    walk(node)
    return out


def calls_of(node):
    out = set()

    def walk(n):
        if isinstance(n, Call):
            out.add(n.name)
            for a in n.args:
                walk(a)
        elif isinstance(n, Bin):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Neg):
            walk(n.arg)

    walk(node)
    return out


def validate(node, scalar_symbols, vector_symbols=(), functions=()):
    """Check symbols, function names and arities; raise ValidationError.

    ``functions`` maps user function names to their expected arity (int) or
    None (unchecked).  Vector symbols may only appear as direct arguments of
    calls.
    """
    scalar_symbols = set(scalar_symbols) | set(CONSTANTS)
    vector_symbols = set(vector_symbols)
    functions = dict(functions) if not isinstance(functions, dict) else functions

    def walk(n, in_call_args=False):
        if isinstance(n, Num):
            return
        if isinstance(n, Sym):
            if n.name in scalar_symbols:
                return
            if n.name in vector_symbols:
                if in_call_args:
                    return
                raise DslParseError(
                    f"vector symbol '{n.name}' may only be used as a function argument"
                )
            raise DslParseError(f"unknown symbol '{n.name}'")
        if isinstance(n, Neg):
            walk(n.arg)
            return
        if isinstance(n, Bin):
            walk(n.left)
            walk(n.right)
            return
        if isinstance(n, Call):
            if n.name in UNARY_FUNCTIONS:
                if len(n.args) != 1:
                    raise DslParseError(f"{n.name}() takes 1 argument, got {len(n.args)}")
            elif n.name in VECTOR_FUNCTIONS:
                if len(n.args) < 1:
                    raise DslParseError(f"{n.name}() needs at least one argument")
            elif n.name in functions:
                arity = functions[n.name]
                if arity is not None and len(n.args) != arity and not (
                    len(n.args) == 1 and isinstance(n.args[0], Sym) and n.args[0].name in vector_symbols
                ):
                    raise DslParseError(f"{n.name}() takes {arity} arguments, got {len(n.args)}")
            else:
                raise DslParseError(f"unknown function '{n.name}'")
            for a in n.args:
                walk(a, in_call_args=True)
            return
        raise TypeError(f"not an AST node: {n!r}")

    walk(node)


# ---------------------------------------------------------------------------
# Evaluation

def _components(args, env):
    """Expand call arguments to scalar components (vector symbols expand)."""
    comps = []
    for a in args:
        if isinstance(a, Sym) and a.name in env and isinstance(env[a.name], tuple):
            comps.extend(env[a.name])
        else:
            comps.append(_eval(a, env, {}))
    return comps


def _norm2(comps):
    acc = None
    for c in comps:
        sq = c * c
        acc = sq if acc is None else acc + sq
    return fsqrt(acc)


def _l1(comps):
    acc = None
    for c in comps:
        a = fabs(c)
        acc = a if acc is None else acc + a
    return acc


def _linf(comps):
    mags = [fabs(c) for c in comps]
    if any(isinstance(m, np.ndarray) for m in mags):
        return reduce(np.maximum, mags)

    def pick(u, w):
        pu, pw = primal(u), primal(w)
        if pu == pw:
            mark_nonsmooth("linf tie")
            return u
        return u if pu > pw else w

    return reduce(pick, mags)


def _eval(node, env, funcs):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Sym):
        if node.name in env:
            val = env[node.name]
            if isinstance(val, tuple):
                raise NumericalError(f"vector symbol '{node.name}' used as a scalar")
            return val
        if node.name in CONSTANTS:
            return CONSTANTS[node.name]
        raise NumericalError(f"unbound symbol '{node.name}'")
    if isinstance(node, Neg):
        return -_eval(node.arg, env, funcs)
    if isinstance(node, Bin):
        left = _eval(node.left, env, funcs)
        right = _eval(node.right, env, funcs)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if node.op == "/":
            return left / right
        if node.op == "^":
            return fpow(left, right)
        raise TypeError(node.op)
    if isinstance(node, Call):
        if node.name in UNARY_FUNCTIONS:
            arg = _eval(node.args[0], env, funcs)
            return {
                "sin": fsin,
                "cos": fcos,
                "exp": fexp,
                "log": flog,
                "sqrt": fsqrt,
                "abs": fabs,
            }[node.name](arg)
        comps_env = env
        if node.name in VECTOR_FUNCTIONS:
            comps = _components_with_funcs(node.args, comps_env, funcs)
            if node.name in ("norm", "l2"):
                return _norm2(comps)
            if node.name == "l1":
                return _l1(comps)
            return _linf(comps)
        if node.name in funcs:
            comps = _components_with_funcs(node.args, comps_env, funcs)
            return funcs[node.name](comps)
        raise NumericalError(f"unknown function '{node.name}'")
    raise TypeError(f"not an AST node: {node!r}")


def _components_with_funcs(args, env, funcs):
    comps = []
    for a in args:
        if isinstance(a, Sym) and isinstance(env.get(a.name), tuple):
            comps.extend(env[a.name])
        else:
            comps.append(_eval(a, env, funcs))
    return comps


def evaluate(node, env, funcs=None):
    """Evaluate the AST under bindings.

    env maps scalar symbol names to values and vector symbol names to
    tuples of component values.  funcs maps user function names to
    callables taking a list of component values.
    """
    try:
        return _eval(node, env, funcs or {})
    except ZeroDivisionError as e:
        raise NumericalError(f"evaluation failed: {e}") from e
    except (FloatingPointError, OverflowError) as e:
        raise NumericalError(f"evaluation failed: {e}") from e


def eval_dual(node, bindings, seed, funcs=None):
    """Forward-mode directional derivative.

    bindings: name -> float.  seed: name -> seed component (defaults 0).
    Returns (value, directional derivative).
    """
    env = {k: Dual(float(v), float(seed.get(k, 0.0))) for k, v in bindings.items()}
    out = evaluate(node, env, funcs)
    if isinstance(out, Dual):
        return float(primal(out)), float(primal(out.b))
    return float(out), 0.0
