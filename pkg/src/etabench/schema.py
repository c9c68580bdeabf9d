"""Feature schemas: names, perturbation constraints, derived-feature formulas.

A schema fixes the feature order of a dataset and records, per feature, how an
attacker may touch it:

* ``free``    - modifiable without limits
* ``mask``    - never modifiable; the remap step restores the original value
* ``clip``    - modifiable, then clamped into a fitted valid range
* ``derived`` - recomputed from the other features through a formula

Schemas live on disk as a small line-oriented text format (see ``parse_schema``)
that round-trips exactly: feature names, ranges and formula text survive a
save/load cycle bit for bit.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import FormulaError, IoFailureError, SchemaError

__all__ = [
    "ConstraintKind",
    "FeatureSpec",
    "FeatureSchema",
    "Formula",
    "parse_schema",
    "serialize_schema",
    "load_schema",
    "save_schema",
]


class ConstraintKind(enum.Enum):
    FREE = "free"
    MASKED = "mask"
    RANGE_CLIPPED = "clip"
    DERIVED = "derived"


# ---------------------------------------------------------------------------
# Formula parsing.  Grammar (precedence climbing):
#   expr   := term  (("+" | "-") term)*
#   term   := factor (("*" | "/") factor)*
#   factor := NUMBER | '"' feature name '"' | "(" expr ")" | "-" factor
# Division by zero evaluates to 0 by convention (rates over empty windows).
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r'\s*(?:(?P<name>"[^"]*")|(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)'
    r"|(?P<op>[-+*/()]))"
)


def _tokenize(src: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            if src[pos:].strip() == "":
                break
            raise FormulaError(f"cannot tokenize formula at: {src[pos:]!r}")
        pos = m.end()
        if m.group("name") is not None:
            tokens.append(("name", m.group("name")[1:-1]))
        elif m.group("num") is not None:
            tokens.append(("num", m.group("num")))
        else:
            tokens.append(("op", m.group("op")))
    return tokens


class Formula:
    """A parsed arithmetic expression over quoted feature names."""

    def __init__(self, source: str):
        self.source = source
        self._tokens = _tokenize(source)
        if not self._tokens:
            raise FormulaError("empty formula")
        self._pos = 0
        self._ast = self._parse_expr()
        if self._pos != len(self._tokens):
            raise FormulaError(f"trailing tokens in formula: {source!r}")
        self.references = frozenset(self._collect_names(self._ast))

    # -- recursive descent ---------------------------------------------------

    def _peek(self):
        return self._tokens[self._pos] if self._pos < len(self._tokens) else (None, None)

    def _next(self):
        tok = self._peek()
        self._pos += 1
        return tok

    def _parse_expr(self):
        node = self._parse_term()
        while self._peek() == ("op", "+") or self._peek() == ("op", "-"):
            _, op = self._next()
            node = (op, node, self._parse_term())
        return node

    def _parse_term(self):
        node = self._parse_factor()
        while self._peek() == ("op", "*") or self._peek() == ("op", "/"):
            _, op = self._next()
            node = (op, node, self._parse_factor())
        return node

    def _parse_factor(self):
        kind, val = self._next()
        if kind == "num":
            return ("lit", float(val))
        if kind == "name":
            return ("ref", val)
        if (kind, val) == ("op", "-"):
            return ("neg", self._parse_factor())
        if (kind, val) == ("op", "("):
            node = self._parse_expr()
            if self._next() != ("op", ")"):
                raise FormulaError(f"unbalanced parenthesis in {self.source!r}")
            return node
        raise FormulaError(f"unexpected token {val!r} in {self.source!r}")

    def _collect_names(self, node):
        op = node[0]
        if op == "ref":
            yield node[1]
        elif op == "neg":
            yield from self._collect_names(node[1])
        elif op in "+-*/":
            yield from self._collect_names(node[1])
            yield from self._collect_names(node[2])

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, env):
        """Evaluate against ``env`` mapping feature name -> scalar or array."""
        return self._eval(self._ast, env)

    def _eval(self, node, env):
        op = node[0]
        if op == "lit":
            return node[1]
        if op == "ref":
            try:
                return env[node[1]]
            except KeyError:
                raise FormulaError(f"formula references unknown feature {node[1]!r}")
        if op == "neg":
            return -self._eval(node[1], env)
        a = self._eval(node[1], env)
        b = self._eval(node[2], env)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        # division: zero denominator -> 0, elementwise for arrays
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(b == 0.0, 0.0, a / np.where(b == 0.0, 1.0, b))
        return float(out) if out.ndim == 0 else out

    def __eq__(self, other):
        return isinstance(other, Formula) and self.source == other.source

    def __hash__(self):
        return hash(self.source)

    def __repr__(self):
        return f"Formula({self.source!r})"


@dataclass(frozen=True)
class FeatureSpec:
    """One feature: name, constraint kind, optional formula / valid range."""

    name: str
    kind: ConstraintKind
    formula: Formula | None = None
    valid_range: tuple[float, float] | None = None

    def __post_init__(self):
        if (self.kind is ConstraintKind.DERIVED) != (self.formula is not None):
            raise SchemaError(
                f"feature {self.name!r}: formula present iff kind is derived"
            )
        if self.valid_range is not None:
            lo, hi = self.valid_range
            if not (lo <= hi):
                raise SchemaError(f"feature {self.name!r}: range min exceeds max")
            if self.kind is not ConstraintKind.RANGE_CLIPPED:
                raise SchemaError(
                    f"feature {self.name!r}: only clip features carry a range"
                )


@dataclass
class FeatureSchema:
    """Ordered feature specs plus the label column and an attack-type tag."""

    attack_type: str
    label_column: str
    features: list[FeatureSpec]
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names in schema")
        if '"' in self.label_column or any('"' in n for n in names):
            raise SchemaError("double quotes are not allowed in feature names")
        if self.label_column in names:
            raise SchemaError("label column collides with a feature name")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})
        for spec in self.features:
            if spec.kind is not ConstraintKind.DERIVED:
                continue
            for ref in spec.formula.references:
                if ref not in self._index:
                    raise SchemaError(
                        f"derived {spec.name!r} references unknown feature {ref!r}"
                    )
                if self.features[self._index[ref]].kind is ConstraintKind.DERIVED:
                    raise SchemaError(
                        f"derived {spec.name!r} may not reference derived {ref!r}"
                    )

    # -- lookups -------------------------------------------------------------

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def n_features(self) -> int:
        return len(self.features)

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown feature {name!r}")

    def indices_of_kind(self, kind: ConstraintKind) -> np.ndarray:
        return np.array(
            [i for i, f in enumerate(self.features) if f.kind is kind], dtype=int
        )

    def modifiable_mask(self) -> np.ndarray:
        """Boolean mask of features an attack may steer directly (free + clip)."""
        return np.array(
            [
                f.kind in (ConstraintKind.FREE, ConstraintKind.RANGE_CLIPPED)
                for f in self.features
            ],
            dtype=bool,
        )

    def with_features(self, features: list[FeatureSpec]) -> "FeatureSchema":
        return FeatureSchema(self.attack_type, self.label_column, list(features))

    def drop_features(self, names) -> "FeatureSchema":
        """Schema without the named features; derived specs that reference a
        dropped feature are dropped too."""
        gone = set(names)
        kept = []
        for f in self.features:
            if f.name in gone:
                continue
            if f.kind is ConstraintKind.DERIVED and f.formula.references & gone:
                continue
            kept.append(f)
        return self.with_features(kept)

    def evaluate_derived(self, values: np.ndarray) -> np.ndarray:
        """Recompute every derived feature from ``values`` (raw coordinates).

        values: (n_features,) or (m, n_features). Returns a copy with the
        derived columns replaced by their formula results.
        """
        values = np.asarray(values, dtype=float)
        out = values.copy()
        single = out.ndim == 1
        mat = out[None, :] if single else out
        env = {name: mat[:, i] for name, i in self._index.items()}
        for i, spec in enumerate(self.features):
            if spec.kind is ConstraintKind.DERIVED:
                mat[:, i] = spec.formula.evaluate(env)
        return mat[0] if single else mat


# ---------------------------------------------------------------------------
# On-disk format.  Line oriented, "#" comments, blank lines ignored:
#
#   attack_type Botnet
#   label Label
#   feature "Flow Duration" clip range 0.0 120.0
#   feature "URG Flag Count" mask
#   feature "Down/Up Ratio" derived "Total Bwd Packets" / "Total Fwd Packets"
#   feature "Flow IAT Min" free
# ---------------------------------------------------------------------------

_QUOTED_RE = re.compile(r'"([^"]*)"')


def _format_float(x: float) -> str:
    return repr(float(x))


def parse_schema(text: str) -> FeatureSchema:
    attack_type = None
    label = None
    features: list[FeatureSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            head, rest = (line.split(None, 1) + [""])[:2]
            if head == "attack_type":
                attack_type = rest.strip()
            elif head == "label":
                m = _QUOTED_RE.fullmatch(rest.strip())
                label = m.group(1) if m else rest.strip()
            elif head == "feature":
                features.append(_parse_feature_line(rest))
            else:
                raise SchemaError(f"unknown directive {head!r}")
        except (SchemaError, FormulaError) as exc:
            raise SchemaError(f"schema line {lineno}: {exc}") from None
    if attack_type is None or label is None:
        raise SchemaError("schema must declare attack_type and label")
    return FeatureSchema(attack_type, label, features)


def _parse_feature_line(rest: str) -> FeatureSpec:
    m = _QUOTED_RE.match(rest.strip())
    if m is None:
        raise SchemaError("feature name must be double quoted")
    name = m.group(1)
    tail = rest.strip()[m.end():].strip()
    kind_word, _, extra = tail.partition(" ")
    extra = extra.strip()
    if kind_word == "free":
        if extra:
            raise SchemaError(f"free feature {name!r} takes no arguments")
        return FeatureSpec(name, ConstraintKind.FREE)
    if kind_word == "mask":
        if extra:
            raise SchemaError(f"mask feature {name!r} takes no arguments")
        return FeatureSpec(name, ConstraintKind.MASKED)
    if kind_word == "clip":
        if not extra:
            return FeatureSpec(name, ConstraintKind.RANGE_CLIPPED)
        parts = extra.split()
        if len(parts) != 3 or parts[0] != "range":
            raise SchemaError(f"clip feature {name!r}: expected 'range <min> <max>'")
        try:
            lo, hi = float(parts[1]), float(parts[2])
        except ValueError:
            raise SchemaError(f"clip feature {name!r}: bad range numbers")
        return FeatureSpec(name, ConstraintKind.RANGE_CLIPPED, valid_range=(lo, hi))
    if kind_word == "derived":
        if not extra:
            raise SchemaError(f"derived feature {name!r} needs a formula")
        return FeatureSpec(name, ConstraintKind.DERIVED, formula=Formula(extra))
    raise SchemaError(f"unknown constraint kind {kind_word!r}")


def serialize_schema(schema: FeatureSchema) -> str:
    lines = [f"attack_type {schema.attack_type}", f'label "{schema.label_column}"']
    for f in schema.features:
        if f.kind is ConstraintKind.FREE:
            lines.append(f'feature "{f.name}" free')
        elif f.kind is ConstraintKind.MASKED:
            lines.append(f'feature "{f.name}" mask')
        elif f.kind is ConstraintKind.RANGE_CLIPPED:
            if f.valid_range is None:
                lines.append(f'feature "{f.name}" clip')
            else:
                lo, hi = f.valid_range
                lines.append(
                    f'feature "{f.name}" clip range {_format_float(lo)} {_format_float(hi)}'
                )
        else:
            lines.append(f'feature "{f.name}" derived {f.formula.source}')
    return "\n".join(lines) + "\n"


def load_schema(path) -> FeatureSchema:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailureError(f"cannot read schema {path}: {exc}") from exc
    return parse_schema(text)


def save_schema(schema: FeatureSchema, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(serialize_schema(schema))
    except OSError as exc:
        raise IoFailureError(f"cannot write schema {path}: {exc}") from exc
