"""The subscription rule language.

    WHEN MEAN(user_cpu) OVER LAST 30 SAMPLES > 90 ON NODE rack1-h04/vm2
    WHEN PERCENTILE[95](ambient_temp) OVER LAST 120 SECONDS >= 31.5 ON GROUP rack1
    WHEN VALUE(entropy) < 128 ON NODE rack1-h04

Keywords are case-insensitive. An omitted window means INSTANT (the latest
sample only); VALUE admits no other window. `render` produces the canonical
uppercase form and `parse(render(s)) == s` for any valid subscription.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace

from .errors import RuleSemanticError, RuleSyntaxError, UnknownGroup
from .model import EndpointId, GroupRegistry

__all__ = [
    "AggKind",
    "Aggregator",
    "Cmp",
    "CompiledSubscription",
    "Direction",
    "Scope",
    "ScopeKind",
    "Subscription",
    "WindowKind",
    "WindowSpec",
    "compile_subscription",
    "parse",
    "render",
]


class AggKind(enum.Enum):
    VALUE = "VALUE"
    MIN = "MIN"
    MAX = "MAX"
    MEAN = "MEAN"
    MEDIAN = "MEDIAN"
    STDDEV = "STDDEV"
    VARIANCE = "VARIANCE"
    PERCENTILE = "PERCENTILE"


@dataclass(frozen=True, slots=True)
class Aggregator:
    kind: AggKind
    p: float | None = None  # percentile rank, only for PERCENTILE

    def __str__(self) -> str:
        if self.kind is AggKind.PERCENTILE:
            return f"PERCENTILE[{_render_number(self.p)}]"
        return self.kind.value


class WindowKind(enum.Enum):
    INSTANT = "INSTANT"
    COUNT = "COUNT"
    DURATION = "DURATION"


@dataclass(frozen=True, slots=True)
class WindowSpec:
    kind: WindowKind
    length: int = 1  # samples for COUNT, seconds for DURATION, 1 for INSTANT

    def normalized(self) -> "WindowSpec":
        """INSTANT behaves exactly like a one-sample count window."""
        if self.kind is WindowKind.INSTANT:
            return WindowSpec(WindowKind.COUNT, 1)
        return self

    def __str__(self) -> str:
        if self.kind is WindowKind.INSTANT:
            return "INSTANT"
        unit = "SAMPLES" if self.kind is WindowKind.COUNT else "SECONDS"
        return f"OVER LAST {self.length} {unit}"


INSTANT = WindowSpec(WindowKind.INSTANT, 1)


class Direction(enum.Enum):
    """Which side of the threshold a comparison matches."""

    GREATER = "GREATER"
    LESS = "LESS"


class Cmp(enum.Enum):
    GT = ">"
    LT = "<"
    GE = ">="
    LE = "<="

    @property
    def direction(self) -> Direction:
        return Direction.GREATER if self in (Cmp.GT, Cmp.GE) else Direction.LESS

    def matches(self, value: float, threshold: float) -> bool:
        if self is Cmp.GT:
            return value > threshold
        if self is Cmp.LT:
            return value < threshold
        if self is Cmp.GE:
            return value >= threshold
        return value <= threshold


class ScopeKind(enum.Enum):
    NODE = "NODE"
    GROUP = "GROUP"


@dataclass(frozen=True, slots=True)
class Scope:
    kind: ScopeKind
    endpoint: EndpointId | None = None  # NODE only
    group: str | None = None  # GROUP only

    def __str__(self) -> str:
        if self.kind is ScopeKind.NODE:
            return f"NODE {self.endpoint}"
        return f"GROUP {self.group}"


@dataclass(frozen=True)
class Subscription:
    """A parsed rule. Identity fields do not participate in equality, so
    `parse(render(s)) == s` holds regardless of registration state."""

    agg: Aggregator
    metric: str
    window: WindowSpec
    cmp: Cmp
    threshold: float
    scope: Scope
    id: str = field(default="", compare=False)
    subscriber: str = field(default="", compare=False)
    created_at: int = field(default=0, compare=False)

    def with_identity(self, id: str, subscriber: str, created_at: int) -> "Subscription":
        return replace(self, id=id, subscriber=subscriber, created_at=created_at)


@dataclass(frozen=True, slots=True)
class CompiledSubscription:
    """One rule pinned to one endpoint. A NODE rule compiles to a single
    instance; a GROUP rule compiles to one per member, all sharing sub_id."""

    compiled_id: str
    sub_id: str
    endpoint: EndpointId
    metric: str
    agg: Aggregator
    window: WindowSpec
    cmp: Cmp
    threshold: float
    spatial_arity: int = 1
    group: str | None = None

    @property
    def spatial(self) -> bool:
        return self.spatial_arity > 1


def compile_subscription(
    sub: Subscription, groups: GroupRegistry | None = None
) -> list[CompiledSubscription]:
    if sub.scope.kind is ScopeKind.NODE:
        members = [sub.scope.endpoint]
        group = None
    else:
        if groups is None:
            raise UnknownGroup(f"unknown group {sub.scope.group!r}")
        members = groups.expand(sub.scope.group)
        group = sub.scope.group
    arity = len(members)
    return [
        CompiledSubscription(
            compiled_id=f"{sub.id}/{ep}",
            sub_id=sub.id,
            endpoint=ep,
            metric=sub.metric,
            agg=sub.agg,
            window=sub.window,
            cmp=sub.cmp,
            threshold=sub.threshold,
            spatial_arity=arity,
            group=group,
        )
        for ep in members
    ]


# --- rendering ---------------------------------------------------------

def _render_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e17:
        return str(int(v))
    return repr(v)


def render(sub: Subscription) -> str:
    parts = [f"WHEN {sub.agg}({sub.metric})"]
    if sub.window.kind is not WindowKind.INSTANT:
        parts.append(str(sub.window))
    parts.append(f"{sub.cmp.value} {_render_number(sub.threshold)}")
    parts.append(f"ON {sub.scope}")
    return " ".join(parts)


# --- tokenizer ---------------------------------------------------------

_PUNCT_RE = re.compile(r"(?P<WS>\s+)|(?P<CMP>>=|<=|>|<)|(?P<LPAREN>\()|(?P<RPAREN>\))|(?P<LBRACKET>\[)|(?P<RBRACKET>\])")
_NUMBER_RE = re.compile(r"-?(\d+(\.\d+)?|\.\d+)([eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z0-9_./-]+")

_KEYWORDS = frozenset(
    {"WHEN", "OVER", "LAST", "SAMPLES", "SECONDS", "ON", "NODE", "GROUP"}
    | {k.value for k in AggKind}
)

# Words that cannot name a metric, host, or group (matched case-insensitively).
RESERVED_WORDS = _KEYWORDS


@dataclass(slots=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    line, col = 1, 1
    while pos < len(text):
        m = _PUNCT_RE.match(text, pos)
        if m is not None:
            kind, tok_text = m.lastgroup or "", m.group()
        else:
            # Idents may contain digits, dots, and dashes (hostnames), so
            # numbers and idents overlap; take the longer match, numbers
            # winning ties so thresholds lex as numbers.
            mn = _NUMBER_RE.match(text, pos)
            mi = _IDENT_RE.match(text, pos)
            if mn is None and mi is None:
                raise RuleSyntaxError(
                    f"unexpected character {text[pos]!r}", line=line, col=col
                )
            if mi is not None and (mn is None or mi.end() > mn.end()):
                kind, tok_text = "IDENT", mi.group()
                pos_end = mi.end()
            else:
                kind, tok_text = "NUMBER", mn.group()
                pos_end = mn.end()
            m = None
        if kind != "WS":
            tokens.append(_Token(kind, tok_text, line, col))
        end = m.end() if m is not None else pos_end
        nl = tok_text.count("\n")
        if nl:
            line += nl
            col = len(tok_text) - tok_text.rfind("\n")
        else:
            col += len(tok_text)
        pos = end
    tokens.append(_Token("EOF", "", line, col))
    return tokens


# --- parser ------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def _fail(self, want: str) -> RuleSyntaxError:
        t = self.cur
        got = "end of input" if t.kind == "EOF" else repr(t.text)
        return RuleSyntaxError(f"expected {want}, got {got}", line=t.line, col=t.col)

    def advance(self) -> _Token:
        t = self.cur
        if t.kind != "EOF":
            self.i += 1
        return t

    def expect(self, kind: str, want: str) -> _Token:
        if self.cur.kind != kind:
            raise self._fail(want)
        return self.advance()

    def keyword(self, *words: str) -> str:
        t = self.cur
        if t.kind == "IDENT" and t.text.upper() in words:
            self.advance()
            return t.text.upper()
        raise self._fail(" or ".join(words))

    def peek_keyword(self, *words: str) -> bool:
        t = self.cur
        return t.kind == "IDENT" and t.text.upper() in words

    def ident(self, what: str) -> _Token:
        t = self.cur
        # A pure number is a legal ident too (hosts like "42"), as long as
        # its spelling stays inside the ident charset (no +, no spaces).
        if t.kind == "NUMBER" and _IDENT_RE.fullmatch(t.text):
            self.advance()
            return t
        if t.kind != "IDENT":
            raise self._fail(what)
        if t.text.upper() in _KEYWORDS:
            raise RuleSyntaxError(
                f"expected {what}, got keyword {t.text!r}", line=t.line, col=t.col
            )
        self.advance()
        return t

    def number(self, what: str) -> tuple[float, _Token]:
        t = self.expect("NUMBER", what)
        return float(t.text), t

    def integer(self, what: str) -> tuple[int, _Token]:
        t = self.expect("NUMBER", what)
        try:
            n = int(t.text)
        except ValueError:
            raise RuleSyntaxError(
                f"expected {what} (an integer), got {t.text!r}", line=t.line, col=t.col
            ) from None
        return n, t

    def parse(self) -> Subscription:
        self.keyword("WHEN")
        agg = self._agg()
        self.expect("LPAREN", "'(' after aggregator")
        metric = self.ident("metric name").text
        self.expect("RPAREN", "')' after metric name")

        window = INSTANT
        window_tok = None
        if self.peek_keyword("OVER"):
            window_tok = self.cur
            window = self._window()

        cmp_tok = self.expect("CMP", "comparison operator")
        cmp = Cmp(cmp_tok.text)
        threshold, thr_tok = self.number("threshold")
        if not math.isfinite(threshold):
            raise RuleSemanticError(
                f"threshold must be finite, got {thr_tok.text}"
            )

        self.keyword("ON")
        scope = self._scope()
        self.expect("EOF", "end of rule")

        if agg.kind is AggKind.VALUE and window.kind is not WindowKind.INSTANT:
            raise RuleSemanticError(
                "VALUE admits no window clause; it always reads the latest sample"
            )
        return Subscription(agg=agg, metric=metric, window=window, cmp=cmp,
                            threshold=threshold, scope=scope)

    def _agg(self) -> Aggregator:
        word = self.keyword(*(k.value for k in AggKind))
        kind = AggKind(word)
        if kind is not AggKind.PERCENTILE:
            return Aggregator(kind)
        self.expect("LBRACKET", "'[' after PERCENTILE")
        p, tok = self.number("percentile rank")
        self.expect("RBRACKET", "']' after percentile rank")
        if not (0.0 < p < 100.0):
            raise RuleSemanticError(
                f"percentile rank must be strictly between 0 and 100, got {tok.text}"
            )
        return Aggregator(AggKind.PERCENTILE, p)

    def _window(self) -> WindowSpec:
        self.keyword("OVER")
        self.keyword("LAST")
        n, tok = self.integer("window length")
        unit = self.keyword("SAMPLES", "SECONDS")
        if n < 1:
            raise RuleSemanticError(f"window length must be >= 1, got {n}")
        kind = WindowKind.COUNT if unit == "SAMPLES" else WindowKind.DURATION
        return WindowSpec(kind, n)

    def _scope(self) -> Scope:
        word = self.keyword("NODE", "GROUP")
        if word == "NODE":
            tok = self.ident("endpoint (host or host/vmN)")
            try:
                ep = EndpointId.parse(tok.text)
            except Exception:
                raise RuleSemanticError(
                    f"bad endpoint {tok.text!r}: want host or host/vmN"
                ) from None
            return Scope(ScopeKind.NODE, endpoint=ep)
        tok = self.ident("group name")
        return Scope(ScopeKind.GROUP, group=tok.text)


def parse(text: str) -> Subscription:
    """Parse one rule. Raises RuleSyntaxError (with line/col) on malformed
    input and RuleSemanticError on well-formed but meaningless rules."""
    return _Parser(text).parse()
