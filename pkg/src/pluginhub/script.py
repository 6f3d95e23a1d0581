"""Sandboxed expression dialect executed by worker plugins and the shim.

Grammar (whitespace insignificant, ``#`` comments run to end of line)::

    program := {fndef}
    fndef   := "fn" ident "(" [ident {"," ident}] ")" "=" expr
    expr    := term {("+"|"-") term}
    term    := factor {("*"|"/") factor}
    factor  := ["-"] power
    power   := atom ["^" factor]
    atom    := number | string | ident | ident "(" [expr {"," expr}] ")"
             | "(" expr ")"

Numeric binary operators coerce to float64 and follow IEEE-754 double
semantics, except that division by zero is a runtime error. ``^`` is
right-associative power. Builtins: exp, log, sqrt, abs, min, max, plus the
host-bridge functions ``call("plugin", "method", args...)``,
``emit_log(level, text)`` and ``emit_progress(fraction)``.

The interpreter is deliberately effect-free: no file, network, clock or
environment access. Every external effect flows through the bridge, and
each invocation is fuel-limited so untrusted plugin code cannot hang the
host. Evaluation runs on an explicit work stack, so unbounded recursion in
a script burns fuel instead of the host's call stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

from .errors import (
    ArityMismatch,
    BridgeError,
    DuplicateFunction,
    FuelExhausted,
    NoSuchFunction,
    ScriptRuntimeError,
    ScriptSyntaxError,
)

DEFAULT_FUEL = 1_000_000

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

_MAX_NESTING = 64


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: int | float
    line: int
    col: int


@dataclass(frozen=True)
class Str:
    value: str
    line: int
    col: int


@dataclass(frozen=True)
class Var:
    name: str
    line: int
    col: int


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"
    line: int
    col: int


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    line: int
    col: int


@dataclass(frozen=True)
class CallExpr:
    name: str
    args: tuple["Expr", ...]
    line: int
    col: int


Expr = Num | Str | Var | Unary | Binary | CallExpr


@dataclass(frozen=True)
class FunctionDef:
    name: str
    params: tuple[str, ...]
    body: Expr
    line: int
    col: int


@dataclass(frozen=True)
class Program:
    functions: tuple[FunctionDef, ...]

    def function(self, name: str) -> FunctionDef | None:
        for f in self.functions:
            if f.name == name:
                return f
        return None

    @property
    def exported(self) -> list[str]:
        return [f.name for f in self.functions]


# ---------------------------------------------------------------------------
# tokenizer


@dataclass(frozen=True)
class _Token:
    kind: str  # num, str, ident, sym, eof
    text: str
    value: object
    line: int
    col: int


_SYMBOLS = ("(", ")", ",", "=", "+", "-", "*", "/", "^")

_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t", "r": "\r"}


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            is_float = False
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                is_float = True
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    is_float = True
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lexeme = text[i:j]
            if is_float:
                value: object = float(lexeme)
            else:
                value = int(lexeme)
                if not INT64_MIN <= value <= INT64_MAX:
                    raise ScriptSyntaxError(
                        f"integer literal {lexeme} out of 64-bit range", start_line, start_col
                    )
            tokens.append(_Token("num", lexeme, value, start_line, start_col))
            col += j - i
            i = j
            continue
        if c == '"':
            j = i + 1
            out: list[str] = []
            while True:
                if j >= n or text[j] == "\n":
                    raise ScriptSyntaxError("unterminated string literal", start_line, start_col)
                ch = text[j]
                if ch == '"':
                    j += 1
                    break
                if ch == "\\":
                    if j + 1 >= n or text[j + 1] not in _ESCAPES:
                        raise ScriptSyntaxError("bad string escape", line, col + (j - i))
                    out.append(_ESCAPES[text[j + 1]])
                    j += 2
                    continue
                out.append(ch)
                j += 1
            tokens.append(_Token("str", text[i:j], "".join(out), start_line, start_col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            lexeme = text[i:j]
            tokens.append(_Token("ident", lexeme, lexeme, start_line, start_col))
            col += j - i
            i = j
            continue
        if c in _SYMBOLS:
            tokens.append(_Token("sym", c, c, start_line, start_col))
            i += 1
            col += 1
            continue
        raise ScriptSyntaxError(f"unexpected character {c!r}", line, col)
    tokens.append(_Token("eof", "", None, line, col))
    return tokens


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.cur
        self.pos += 1
        return tok

    def expect_sym(self, sym: str) -> _Token:
        tok = self.cur
        if tok.kind != "sym" or tok.text != sym:
            raise ScriptSyntaxError(
                f"unexpected {tok.text or 'end of input'!r}", tok.line, tok.col, expected=repr(sym)
            )
        return self.advance()

    def expect_ident(self, what: str) -> _Token:
        tok = self.cur
        if tok.kind != "ident":
            raise ScriptSyntaxError(
                f"unexpected {tok.text or 'end of input'!r}", tok.line, tok.col, expected=what
            )
        return self.advance()

    def parse_program(self) -> Program:
        functions: list[FunctionDef] = []
        names: set[str] = set()
        while self.cur.kind != "eof":
            tok = self.cur
            if tok.kind != "ident" or tok.text != "fn":
                raise ScriptSyntaxError(
                    f"unexpected {tok.text!r}", tok.line, tok.col, expected="'fn'"
                )
            self.advance()
            name_tok = self.expect_ident("function name")
            if name_tok.text in names:
                raise DuplicateFunction(name_tok.text)
            names.add(name_tok.text)
            self.expect_sym("(")
            params: list[str] = []
            if not (self.cur.kind == "sym" and self.cur.text == ")"):
                while True:
                    p = self.expect_ident("parameter name")
                    if p.text in params:
                        raise ScriptSyntaxError(
                            f"duplicate parameter {p.text!r}", p.line, p.col
                        )
                    params.append(p.text)
                    if self.cur.kind == "sym" and self.cur.text == ",":
                        self.advance()
                        continue
                    break
            self.expect_sym(")")
            self.expect_sym("=")
            body = self.parse_expr(0)
            functions.append(
                FunctionDef(name_tok.text, tuple(params), body, name_tok.line, name_tok.col)
            )
        return Program(tuple(functions))

    def parse_expr(self, depth: int) -> Expr:
        if depth > _MAX_NESTING:
            tok = self.cur
            raise ScriptSyntaxError("expression nests too deeply", tok.line, tok.col)
        node = self.parse_term(depth)
        while self.cur.kind == "sym" and self.cur.text in ("+", "-"):
            op = self.advance()
            right = self.parse_term(depth)
            node = Binary(op.text, node, right, op.line, op.col)
        return node

    def parse_term(self, depth: int) -> Expr:
        node = self.parse_factor(depth)
        while self.cur.kind == "sym" and self.cur.text in ("*", "/"):
            op = self.advance()
            right = self.parse_factor(depth)
            node = Binary(op.text, node, right, op.line, op.col)
        return node

    def parse_factor(self, depth: int) -> Expr:
        if self.cur.kind == "sym" and self.cur.text == "-":
            op = self.advance()
            operand = self.parse_power(depth + 1)
            return Unary("-", operand, op.line, op.col)
        return self.parse_power(depth)

    def parse_power(self, depth: int) -> Expr:
        node = self.parse_atom(depth)
        if self.cur.kind == "sym" and self.cur.text == "^":
            op = self.advance()
            right = self.parse_factor(depth + 1)  # right-associative
            node = Binary("^", node, right, op.line, op.col)
        return node

    def parse_atom(self, depth: int) -> Expr:
        tok = self.cur
        if tok.kind == "num":
            self.advance()
            return Num(tok.value, tok.line, tok.col)  # type: ignore[arg-type]
        if tok.kind == "str":
            self.advance()
            return Str(tok.value, tok.line, tok.col)  # type: ignore[arg-type]
        if tok.kind == "ident":
            self.advance()
            if self.cur.kind == "sym" and self.cur.text == "(":
                self.advance()
                args: list[Expr] = []
                if not (self.cur.kind == "sym" and self.cur.text == ")"):
                    while True:
                        args.append(self.parse_expr(depth + 1))
                        if self.cur.kind == "sym" and self.cur.text == ",":
                            self.advance()
                            continue
                        break
                self.expect_sym(")")
                return CallExpr(tok.text, tuple(args), tok.line, tok.col)
            return Var(tok.text, tok.line, tok.col)
        if tok.kind == "sym" and tok.text == "(":
            self.advance()
            node = self.parse_expr(depth + 1)
            self.expect_sym(")")
            return node
        raise ScriptSyntaxError(
            f"unexpected {tok.text or 'end of input'!r}", tok.line, tok.col, expected="expression"
        )


def parse_script(text: str) -> Program:
    """Parse script text into a Program; raises ScriptSyntaxError or
    DuplicateFunction on bad input."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return _Parser(_tokenize(text)).parse_program()


# ---------------------------------------------------------------------------
# evaluation


class HostBridge(Protocol):
    """Capability handed to an instance: cross-plugin calls plus log and
    progress emission. Everything else is sealed off."""

    async def call(self, target: str, method: str, args: list) -> object: ...

    async def emit_log(self, level: str, text: str) -> None: ...

    async def emit_progress(self, fraction: float) -> None: ...


class NullBridge:
    """Bridge that refuses cross-plugin calls; for pure programs."""

    async def call(self, target: str, method: str, args: list) -> object:
        raise BridgeError("no host bridge attached")

    async def emit_log(self, level: str, text: str) -> None:
        pass

    async def emit_progress(self, fraction: float) -> None:
        pass


def _loc(node: Expr) -> str:
    return f"line {node.line}, col {node.col}"


def _as_number(value: object, node: Expr) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScriptRuntimeError(
            f"expected a number, got {type(value).__name__} at {_loc(node)}"
        )
    return float(value)


_MATH_BUILTINS = {
    "exp": (1, lambda a: math.exp(a[0])),
    "log": (1, lambda a: math.log(a[0])),
    "sqrt": (1, lambda a: math.sqrt(a[0])),
    "abs": (1, lambda a: abs(a[0])),
    "min": (2, lambda a: min(a)),
    "max": (2, lambda a: max(a)),
}


@dataclass
class PluginInstance:
    """A live plugin: an immutable program bound to a bridge.

    The exported interface is exactly the program's function names in
    definition order. Instances hold no mutable state, so concurrent
    invocations never contend; an invocation suspended on a bridge call
    does not block others.
    """

    plugin_id: str
    program: Program
    bridge: HostBridge = field(default_factory=NullBridge)
    fuel_limit: int = DEFAULT_FUEL

    @property
    def methods(self) -> list[str]:
        return self.program.exported

    async def invoke(self, fname: str, args: list) -> object:
        fn = self.program.function(fname)
        if fn is None:
            raise NoSuchFunction(f"plugin {self.plugin_id!r} exports no function {fname!r}")
        if len(args) != len(fn.params):
            raise ArityMismatch(
                f"{fname} takes {len(fn.params)} argument(s), got {len(args)}"
            )
        env = dict(zip(fn.params, args))
        return await _evaluate(self.program, fn.body, env, self.bridge, self.fuel_limit)


def instantiate(
    program: Program,
    bridge: HostBridge | None = None,
    plugin_id: str = "",
    fuel_limit: int = DEFAULT_FUEL,
) -> PluginInstance:
    return PluginInstance(
        plugin_id=plugin_id,
        program=program,
        bridge=bridge if bridge is not None else NullBridge(),
        fuel_limit=fuel_limit,
    )


# Work-item tags for the explicit evaluation stack.
_EVAL, _APPLY_BIN, _APPLY_UN, _APPLY_CALL = 0, 1, 2, 3


async def _evaluate(
    program: Program, body: Expr, env: dict[str, object], bridge: HostBridge, fuel: int
) -> object:
    work: list[tuple] = [(_EVAL, body, env)]
    vals: list[object] = []
    while work:
        fuel -= 1
        if fuel < 0:
            raise FuelExhausted("evaluation exceeded the fuel limit")
        item = work.pop()
        tag = item[0]

        if tag == _EVAL:
            node, scope = item[1], item[2]
            if isinstance(node, Num) or isinstance(node, Str):
                vals.append(node.value)
            elif isinstance(node, Var):
                if node.name not in scope:
                    raise ScriptRuntimeError(f"unknown name {node.name!r} at {_loc(node)}")
                vals.append(scope[node.name])
            elif isinstance(node, Unary):
                work.append((_APPLY_UN, node))
                work.append((_EVAL, node.operand, scope))
            elif isinstance(node, Binary):
                work.append((_APPLY_BIN, node))
                work.append((_EVAL, node.right, scope))
                work.append((_EVAL, node.left, scope))
            else:  # CallExpr
                work.append((_APPLY_CALL, node))
                for arg in reversed(node.args):
                    work.append((_EVAL, arg, scope))

        elif tag == _APPLY_UN:
            node = item[1]
            v = vals.pop()
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ScriptRuntimeError(
                    f"cannot negate {type(v).__name__} at {_loc(node)}"
                )
            vals.append(-v)

        elif tag == _APPLY_BIN:
            node = item[1]
            rv = vals.pop()
            lv = vals.pop()
            left = _as_number(lv, node)
            right = _as_number(rv, node)
            op = node.op
            try:
                if op == "+":
                    vals.append(left + right)
                elif op == "-":
                    vals.append(left - right)
                elif op == "*":
                    vals.append(left * right)
                elif op == "/":
                    vals.append(left / right)
                else:
                    vals.append(math.pow(left, right))
            except ZeroDivisionError:
                raise ScriptRuntimeError(f"division by zero at {_loc(node)}") from None
            except (ValueError, OverflowError) as e:
                raise ScriptRuntimeError(f"{e} at {_loc(node)}") from None

        else:  # _APPLY_CALL
            node = item[1]
            argc = len(node.args)
            argv = vals[len(vals) - argc :] if argc else []
            if argc:
                del vals[len(vals) - argc :]

            fn = program.function(node.name)
            if fn is not None:
                if len(argv) != len(fn.params):
                    raise ScriptRuntimeError(
                        f"{node.name} takes {len(fn.params)} argument(s), got {len(argv)} "
                        f"at {_loc(node)}"
                    )
                work.append((_EVAL, fn.body, dict(zip(fn.params, argv))))
            elif node.name in _MATH_BUILTINS:
                arity, impl = _MATH_BUILTINS[node.name]
                if len(argv) != arity:
                    raise ScriptRuntimeError(
                        f"{node.name} takes {arity} argument(s), got {len(argv)} at {_loc(node)}"
                    )
                nums = [_as_number(a, node) for a in argv]
                try:
                    vals.append(impl(nums))
                except (ValueError, OverflowError) as e:
                    raise ScriptRuntimeError(f"{node.name}: {e} at {_loc(node)}") from None
            elif node.name == "call":
                if len(argv) < 2:
                    raise ScriptRuntimeError(
                        f"call needs a plugin and a method name at {_loc(node)}"
                    )
                target, method = argv[0], argv[1]
                if not isinstance(target, str) or not isinstance(method, str):
                    raise ScriptRuntimeError(
                        f"call target and method must be strings at {_loc(node)}"
                    )
                try:
                    result = await bridge.call(target, method, list(argv[2:]))
                except BridgeError:
                    raise
                except Exception as e:
                    raise BridgeError(f"{target}.{method}: {e}") from e
                vals.append(result)
            elif node.name == "emit_log":
                if len(argv) != 2 or not all(isinstance(a, str) for a in argv):
                    raise ScriptRuntimeError(
                        f"emit_log takes a level and a text string at {_loc(node)}"
                    )
                await bridge.emit_log(argv[0], argv[1])
                vals.append(None)
            elif node.name == "emit_progress":
                if len(argv) != 1:
                    raise ScriptRuntimeError(f"emit_progress takes one number at {_loc(node)}")
                fraction = _as_number(argv[0], node)
                # clamp into [0, 1] so the wire invariant always holds
                await bridge.emit_progress(min(1.0, max(0.0, fraction)))
                vals.append(None)
            else:
                raise ScriptRuntimeError(f"unknown function {node.name!r} at {_loc(node)}")

    return vals[-1] if vals else None
