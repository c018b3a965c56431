"""Expression language for formulaic alphas.

Covers the token alphabet, operator signatures, the expression tree, a
textual grammar (see ``docs/grammar.md``), reverse-polish token encoding and
the prefix validity machine that masks the generator's action space.
"""
from __future__ import annotations

import enum
import functools
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

FEATURES: tuple[str, ...] = ("open", "close", "high", "low", "volume", "vwap")
TIME_DELTAS: tuple[int, ...] = (5, 10, 20, 30, 40, 50, 60, 120, 252)
CONSTANTS: tuple[float, ...] = (
    -30.0, -10.0, -5.0, -2.0, -1.0, -0.5, -0.01, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0,
)
DEFAULT_MAX_LEN = 20


class Sort(enum.Enum):
    SERIES = "Series"
    SCALAR = "Scalar"
    DELTA = "TimeDelta"


class OpKind(enum.Enum):
    UNARY = "unary"            # (Series) -> Series
    BINARY = "binary"          # (Series|Scalar, Series|Scalar), >= 1 Series
    ROLLING = "rolling"        # (Series, TimeDelta)
    PAIR_ROLLING = "pair"      # (Series, Series, TimeDelta)
    COND = "cond"              # 4 x (Series|Scalar), >= 1 Series


@dataclass(frozen=True)
class OperatorSignature:
    name: str
    kind: OpKind

    @property
    def arity(self) -> int:
        return {OpKind.UNARY: 1, OpKind.BINARY: 2, OpKind.ROLLING: 2,
                OpKind.PAIR_ROLLING: 3, OpKind.COND: 4}[self.kind]

    @property
    def arg_sorts(self) -> tuple[frozenset[Sort], ...]:
        s, sc, td = Sort.SERIES, Sort.SCALAR, Sort.DELTA
        either = frozenset({s, sc})
        if self.kind is OpKind.UNARY:
            return (frozenset({s}),)
        if self.kind is OpKind.BINARY:
            return (either, either)
        if self.kind is OpKind.ROLLING:
            return (frozenset({s}), frozenset({td}))
        if self.kind is OpKind.PAIR_ROLLING:
            return (frozenset({s}), frozenset({s}), frozenset({td}))
        return (either,) * 4

    result_sort = Sort.SERIES

    def accepts(self, sorts: Sequence[Sort]) -> bool:
        if len(sorts) != self.arity:
            return False
        if not all(s in allowed for s, allowed in zip(sorts, self.arg_sorts)):
            return False
        if self.kind in (OpKind.BINARY, OpKind.COND):
            return Sort.SERIES in sorts
        return True


_UNARY = ("Abs", "Log", "Sign", "CSRank", "Scale")
_BINARY = ("Add", "Sub", "Mul", "Div", "Pow", "Greater", "Less")
_ROLLING = ("Ref", "Mean", "Std", "Var", "Sum", "Max", "Min", "Med", "Mad",
            "Delta", "WMA", "EMA", "Rank", "Argmax", "Argmin", "Product",
            "Skew", "Kurt")
_PAIR = ("Cov", "Corr")

OPERATORS: dict[str, OperatorSignature] = {}
for _names, _kind in ((_UNARY, OpKind.UNARY), (_BINARY, OpKind.BINARY),
                      (_ROLLING, OpKind.ROLLING), (_PAIR, OpKind.PAIR_ROLLING),
                      (("Cond",), OpKind.COND)):
    for _n in _names:
        OPERATORS[_n] = OperatorSignature(_n, _kind)

_OP_BY_LOWER = {name.lower(): name for name in OPERATORS}


# --------------------------------------------------------------------------
# expression tree

@dataclass(frozen=True)
class Feature:
    name: str

    @property
    def sort(self) -> Sort:
        return Sort.SERIES


@dataclass(frozen=True)
class Constant:
    value: float

    @property
    def sort(self) -> Sort:
        return Sort.SCALAR


@dataclass(frozen=True)
class Window:
    days: int

    @property
    def sort(self) -> Sort:
        return Sort.DELTA


@dataclass(frozen=True)
class Call:
    op: str
    args: tuple["Node", ...]

    @property
    def sort(self) -> Sort:
        return Sort.SERIES


Node = Union[Feature, Constant, Window, Call]


class DSLError(ValueError):
    """Malformed formula or token sequence."""


class ParseError(DSLError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class TokenSequenceError(DSLError):
    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (token index {index})")
        self.index = index


def make_call(op: str, args: Sequence[Node]) -> Call:
    sig = OPERATORS.get(op)
    if sig is None:
        raise DSLError(f"unknown operator {op!r}")
    if len(args) != sig.arity:
        raise DSLError(f"{op} takes {sig.arity} arguments, got {len(args)}")
    if not sig.accepts([a.sort for a in args]):
        got = ", ".join(a.sort.value for a in args)
        raise DSLError(f"sort mismatch for {op}({got})")
    return Call(op, tuple(args))


def check(node: Node) -> None:
    """Raise DSLError unless ``node`` is a well-sorted Series expression."""
    if node.sort is not Sort.SERIES:
        raise DSLError(f"root must be a Series, got {node.sort.value}")
    _check(node)


def _check(node: Node) -> None:
    if isinstance(node, Feature):
        if node.name not in FEATURES:
            raise DSLError(f"unknown feature {node.name!r}")
    elif isinstance(node, Constant):
        if not math.isfinite(node.value):
            raise DSLError("constants must be finite")
    elif isinstance(node, Window):
        if node.days < 1:
            raise DSLError("time delta must be a positive number of days")
    else:
        make_call(node.op, node.args)
        for a in node.args:
            _check(a)


def walk(node: Node) -> Iterable[Node]:
    yield node
    if isinstance(node, Call):
        for a in node.args:
            yield from walk(a)


def size(node: Node) -> int:
    """Number of tokens in the encoding, excluding BEG/SEP."""
    return sum(1 for _ in walk(node))


# --------------------------------------------------------------------------
# printing

def _fmt_number(v: float) -> str:
    text = repr(float(v))
    return text[:-2] if text.endswith(".0") else text


_INFIX = {"Add": "+", "Sub": "-", "Mul": "*", "Div": "/"}


def to_formula(node: Node) -> str:
    if isinstance(node, Feature):
        return node.name
    if isinstance(node, Constant):
        return _fmt_number(node.value)
    if isinstance(node, Window):
        return str(node.days)
    if node.op in _INFIX:
        lhs, rhs = (to_formula(a) for a in node.args)
        return f"({lhs} {_INFIX[node.op]} {rhs})"
    return f"{node.op}({', '.join(to_formula(a) for a in node.args)})"


# --------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_$][A-Za-z_0-9]*)
  | (?P<punct>[-+*/(),])
""", re.VERBOSE)


def _lex(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.toks[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        kind, text, pos = self.take()
        if text != value or kind == "end":
            what = "end of input" if kind == "end" else repr(text)
            raise ParseError(f"expected {value!r}, found {what}", pos)

    def expr(self) -> tuple[Node, int]:
        lhs, start = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "punct":
            _, sym, pos = self.take()
            rhs, _ = self.term()
            lhs = self._binary("Add" if sym == "+" else "Sub", lhs, rhs, pos)
        return lhs, start

    def term(self) -> tuple[Node, int]:
        lhs, start = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "punct":
            _, sym, pos = self.take()
            rhs, _ = self.unary()
            lhs = self._binary("Mul" if sym == "*" else "Div", lhs, rhs, pos)
        return lhs, start

    def unary(self) -> tuple[Node, int]:
        kind, text, pos = self.peek()
        if kind == "punct" and text == "-":
            self.take()
            inner, _ = self.unary()
            if isinstance(inner, Constant):
                return Constant(-inner.value), pos
            return self._binary("Mul", Constant(-1.0), inner, pos), pos
        if kind == "punct" and text == "+":
            self.take()
            return self.unary()
        return self.primary()

    def primary(self) -> tuple[Node, int]:
        kind, text, pos = self.take()
        if kind == "num":
            return Constant(float(text)), pos
        if kind == "punct" and text == "(":
            node, _ = self.expr()
            self.expect(")")
            return node, pos
        if kind == "ident":
            name = text.lower().lstrip("$")
            if self.peek()[1] == "(":
                op = _OP_BY_LOWER.get(name)
                if op is None:
                    raise ParseError(f"unknown operator {text!r}", pos)
                self.take()
                args: list[tuple[Node, int]] = []
                if self.peek()[1] != ")":
                    args.append(self.expr())
                    while self.peek()[1] == ",":
                        self.take()
                        args.append(self.expr())
                self.expect(")")
                return self._call(op, args, pos), pos
            if name in FEATURES:
                return Feature(name), pos
            raise ParseError(f"unknown identifier {text!r}", pos)
        what = "end of input" if kind == "end" else repr(text)
        raise ParseError(f"unexpected {what}", pos)

    def _binary(self, op: str, lhs: Node, rhs: Node, pos: int) -> Node:
        try:
            return make_call(op, [lhs, rhs])
        except DSLError as exc:
            raise ParseError(str(exc), pos) from None

    def _call(self, op: str, args: list[tuple[Node, int]], pos: int) -> Call:
        sig = OPERATORS[op]
        if len(args) != sig.arity:
            raise ParseError(f"{op} takes {sig.arity} arguments, got {len(args)}", pos)
        nodes: list[Node] = []
        for (node, apos), allowed in zip(args, sig.arg_sorts):
            if Sort.DELTA in allowed:
                if not isinstance(node, Constant):
                    raise ParseError(f"{op} expects a time delta literal", apos)
                days = int(math.floor(node.value + 0.5))
                if days < 1:
                    raise ParseError(f"time delta must be >= 1 day, got {node.value}", apos)
                node = Window(days)
            nodes.append(node)
        try:
            return make_call(op, nodes)
        except DSLError as exc:
            raise ParseError(str(exc), pos) from None


def parse(text: str) -> Node:
    """Parse a formula such as ``(-1 * Corr(open, volume, 10))``.

    Numeric literals in time-delta positions are rounded to the nearest whole
    day; all other literals are kept exactly.
    """
    p = _Parser(text)
    node, _ = p.expr()
    kind, rest, pos = p.peek()
    if kind != "end":
        raise ParseError(f"unexpected trailing {rest!r}", pos)
    if node.sort is not Sort.SERIES:
        raise ParseError(f"formula must evaluate to a Series, got {node.sort.value}", 0)
    return node


# --------------------------------------------------------------------------
# tokens

class TokenKind(enum.Enum):
    FEATURE = "Feature"
    OPERATOR = "Operator"
    DELTA = "TimeDelta"
    CONSTANT = "Constant"
    BEG = "BEG"
    SEP = "SEP"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    payload: Union[str, int, float, None] = None

    @property
    def name(self) -> str:
        if self.kind is TokenKind.FEATURE or self.kind is TokenKind.OPERATOR:
            return str(self.payload)
        if self.kind is TokenKind.DELTA:
            return f"{self.payload}d"
        if self.kind is TokenKind.CONSTANT:
            return _fmt_number(float(self.payload))
        return self.kind.value

    @classmethod
    def from_name(cls, name: str) -> "Token":
        if name in ("BEG", "SEP"):
            return cls(TokenKind[name])
        if name in FEATURES:
            return cls(TokenKind.FEATURE, name)
        if name in OPERATORS:
            return cls(TokenKind.OPERATOR, name)
        if re.fullmatch(r"\d+d", name):
            return cls(TokenKind.DELTA, int(name[:-1]))
        try:
            return cls(TokenKind.CONSTANT, float(name))
        except ValueError:
            raise DSLError(f"unknown token name {name!r}") from None

    def __repr__(self) -> str:
        return self.name


BEG = Token(TokenKind.BEG)
SEP = Token(TokenKind.SEP)

# Generator action space: every emittable token in a fixed order.
VOCAB: tuple[Token, ...] = (
    tuple(Token(TokenKind.FEATURE, f) for f in FEATURES)
    + tuple(Token(TokenKind.OPERATOR, o) for o in OPERATORS)
    + tuple(Token(TokenKind.DELTA, d) for d in TIME_DELTAS)
    + tuple(Token(TokenKind.CONSTANT, c) for c in CONSTANTS)
    + (SEP,)
)
TOKEN_INDEX: dict[Token, int] = {t: i for i, t in enumerate(VOCAB)}


def in_vocab(tokens: Sequence[Token]) -> bool:
    return all(t in TOKEN_INDEX for t in tokens if t is not BEG)


def to_tokens(node: Node) -> list[Token]:
    out = [BEG]

    def visit(n: Node) -> None:
        if isinstance(n, Feature):
            out.append(Token(TokenKind.FEATURE, n.name))
        elif isinstance(n, Constant):
            out.append(Token(TokenKind.CONSTANT, float(n.value)))
        elif isinstance(n, Window):
            out.append(Token(TokenKind.DELTA, n.days))
        else:
            for a in n.args:
                visit(a)
            out.append(Token(TokenKind.OPERATOR, n.op))

    visit(node)
    out.append(SEP)
    return out


def from_tokens(tokens: Sequence[Token]) -> Node:
    if not tokens or tokens[0] != BEG:
        raise TokenSequenceError("sequence must start with BEG", 0)
    if len(tokens) < 2 or tokens[-1] != SEP:
        raise TokenSequenceError("sequence must end with SEP", len(tokens) - 1)
    stack: list[Node] = []
    for i, tok in enumerate(tokens[1:-1], start=1):
        if tok.kind is TokenKind.FEATURE:
            if tok.payload not in FEATURES:
                raise TokenSequenceError(f"unknown feature {tok.payload!r}", i)
            stack.append(Feature(str(tok.payload)))
        elif tok.kind is TokenKind.CONSTANT:
            stack.append(Constant(float(tok.payload)))
        elif tok.kind is TokenKind.DELTA:
            stack.append(Window(int(tok.payload)))
        elif tok.kind is TokenKind.OPERATOR:
            sig = OPERATORS.get(str(tok.payload))
            if sig is None:
                raise TokenSequenceError(f"unknown operator {tok.payload!r}", i)
            if len(stack) < sig.arity:
                raise TokenSequenceError(f"stack underflow at {sig.name}", i)
            args = stack[len(stack) - sig.arity:]
            del stack[len(stack) - sig.arity:]
            try:
                stack.append(make_call(sig.name, args))
            except DSLError as exc:
                raise TokenSequenceError(str(exc), i) from None
        else:
            raise TokenSequenceError(f"unexpected {tok.name} inside sequence", i)
    if len(stack) != 1:
        raise TokenSequenceError(f"{len(stack)} operands left on the stack", len(tokens) - 1)
    if stack[0].sort is not Sort.SERIES:
        raise TokenSequenceError(f"expression ends with a {stack[0].sort.value}", len(tokens) - 1)
    return stack[0]


# --------------------------------------------------------------------------
# prefix validity

_S, _C, _D = Sort.SERIES, Sort.SCALAR, Sort.DELTA
_INF = 10 ** 9


def token_sort(tok: Token) -> Sort | None:
    """Sort pushed by an operand token; None for operators and markers."""
    return {TokenKind.FEATURE: _S, TokenKind.CONSTANT: _C,
            TokenKind.DELTA: _D}.get(tok.kind)


def apply_token(stack: tuple[Sort, ...], tok: Token) -> tuple[Sort, ...] | None:
    """Sort stack after ``tok``; None when the token cannot be applied."""
    pushed = token_sort(tok)
    if pushed is not None:
        return stack + (pushed,)
    if tok.kind is not TokenKind.OPERATOR:
        return None
    sig = OPERATORS[str(tok.payload)]
    if len(stack) < sig.arity:
        return None
    args = stack[len(stack) - sig.arity:]
    if not sig.accepts(args):
        return None
    return stack[:len(stack) - sig.arity] + (_S,)


def _reduce_cost(m: int) -> int:
    # m Series-topped items -> 1 using Cond (-3) and binary (-1) steps
    return (m - 1) // 3 + (m - 1) % 3


@functools.lru_cache(maxsize=None)
def completion_cost(stack: tuple[Sort, ...]) -> int:
    """Fewest tokens (excluding SEP) that reduce ``stack`` to one Series."""
    m = len(stack)
    if m == 0:
        return 1
    if _D in stack[:-1]:
        return _INF
    if stack[-1] is _D:
        if m < 2 or stack[-2] is not _S:
            return _INF
        best = 1 + completion_cost(stack[:-2] + (_S,))
        if m >= 3 and stack[-3] is _S:
            best = min(best, 1 + completion_cost(stack[:-3] + (_S,)))
        return best
    r = 0
    while r < m and stack[m - 1 - r] is _C:
        r += 1
    if r == 0:
        return _reduce_cost(m)
    best = 1 + _reduce_cost(m + 1)
    if r < m:
        if r == 1:
            best = min(best, 1 + _reduce_cost(m - 1))
        if r <= 3 and m >= 4:
            best = min(best, 1 + _reduce_cost(m - 3))
    return best


@dataclass(frozen=True)
class PrefixState:
    stack: tuple[Sort, ...] = ()
    tokens: tuple[Token, ...] = (BEG,)

    def push(self, tok: Token) -> "PrefixState":
        nxt = apply_token(self.stack, tok)
        if nxt is None:
            raise TokenSequenceError(f"token {tok.name} cannot be applied", len(self.tokens))
        return PrefixState(nxt, self.tokens + (tok,))

    @property
    def length(self) -> int:
        return len(self.tokens) - 1

    def completable(self, budget: int) -> bool:
        return completion_cost(self.stack) <= budget


@functools.lru_cache(maxsize=None)
def _legal_indices(stack: tuple[Sort, ...], budget: int) -> tuple[int, ...]:
    out = []
    for i, tok in enumerate(VOCAB):
        if tok is SEP:
            if stack == (_S,):
                out.append(i)
            continue
        if budget < 1:
            continue
        nxt = apply_token(stack, tok)
        if nxt is not None and completion_cost(nxt) <= budget - 1:
            out.append(i)
    return tuple(out)


def legal_next_tokens(state: PrefixState, budget: int) -> frozenset[Token]:
    """Tokens that keep ``state`` completable; ``budget`` counts remaining
    non-SEP tokens."""
    return frozenset(VOCAB[i] for i in _legal_indices(state.stack, budget))


def legal_mask(stack: tuple[Sort, ...], budget: int) -> list[bool]:
    idx = set(_legal_indices(stack, budget))
    return [i in idx for i in range(len(VOCAB))]


def legal_index_set(stack: tuple[Sort, ...], budget: int) -> tuple[int, ...]:
    return _legal_indices(stack, budget)
