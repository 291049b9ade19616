"""Legal chains: premise-situation-conclusion triplets with AND/OR conditions.

A chain couples a behavioral *premise* and a consequential *situation* (both
arbitrary AND/OR trees over named predicates) to a *conclusion* carrying a
statutory sentencing range in months.  The module owns the chain-file JSON
schema, structural validation, the decomposition prompt sent to an external
completion model, and the parser for such a model's delimited responses.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError, ExtractionError, ParseError, ValidationError
from .tokenizer import tokenize

# ---------------------------------------------------------------------------
# Condition expressions
# ---------------------------------------------------------------------------


def normalize_label(label: str) -> str:
    return " ".join(label.split()).casefold()


@dataclass(frozen=True)
class Predicate:
    label: str

    def __post_init__(self):
        if not self.label or not self.label.strip():
            raise ValidationError("predicate label must be non-empty")


@dataclass(frozen=True)
class Node:
    op: str  # "and" | "or"
    children: tuple["ConditionExpr", ...]

    def __post_init__(self):
        if self.op not in ("and", "or"):
            raise ValidationError(f"condition operator must be 'and' or 'or', got {self.op!r}")
        if len(self.children) < 2:
            raise ValidationError(f"{self.op.upper()} node needs at least 2 children, got {len(self.children)}")


ConditionExpr = Predicate | Node


def eval_condition(expr: ConditionExpr, facts: set[str]) -> bool:
    """Standard boolean semantics over a set of established predicate labels."""
    normalized = {normalize_label(f) for f in facts}

    def rec(e: ConditionExpr) -> bool:
        if isinstance(e, Predicate):
            return normalize_label(e.label) in normalized
        if e.op == "and":
            return all(rec(c) for c in e.children)
        return any(rec(c) for c in e.children)

    return rec(expr)


def expr_labels(expr: ConditionExpr) -> list[str]:
    """Normalized predicate labels in left-to-right tree order, deduplicated."""
    out: list[str] = []
    seen: set[str] = set()

    def rec(e: ConditionExpr):
        if isinstance(e, Predicate):
            lab = normalize_label(e.label)
            if lab not in seen:
                seen.add(lab)
                out.append(lab)
        else:
            for c in e.children:
                rec(c)

    rec(expr)
    return out


def expr_to_json(expr: ConditionExpr):
    if isinstance(expr, Predicate):
        return {"pred": expr.label}
    return {expr.op: [expr_to_json(c) for c in expr.children]}


def expr_from_json(obj, where: str = "expr") -> ConditionExpr:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ParseError("condition must be an object with exactly one key", field=where)
    key, value = next(iter(obj.items()))
    if key == "pred":
        if not isinstance(value, str) or not value.strip():
            raise ParseError("predicate must be a non-empty string", field=where)
        return Predicate(value)
    if key in ("and", "or"):
        if not isinstance(value, list) or len(value) < 2:
            raise ParseError(f"{key.upper()} needs a list of at least 2 children", field=where)
        return Node(key, tuple(expr_from_json(c, f"{where}.{key}[{i}]") for i, c in enumerate(value)))
    raise ParseError(f"unknown condition key {key!r}", field=where)


def expr_to_text(expr: ConditionExpr) -> str:
    """Infix rendering with uppercase operators; inverse of :func:`parse_infix`."""
    if isinstance(expr, Predicate):
        return expr.label
    joiner = f" {expr.op.upper()} "
    parts = []
    for c in expr.children:
        text = expr_to_text(c)
        if isinstance(c, Node):
            text = f"({text})"
        parts.append(text)
    return joiner.join(parts)


_INFIX_SPLIT = re.compile(r"(\(|\)|\bAND\b|\bOR\b)")


def parse_infix(text: str) -> ConditionExpr:
    """Parse ``a AND (b OR c)`` style condition text.

    Uppercase AND/OR are operators (AND binds tighter); anything else is
    predicate text.  Lowercase "and"/"or" stay inside predicate labels.
    """
    tokens = [t.strip() for t in _INFIX_SPLIT.split(text)]
    tokens = [t for t in tokens if t]
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        return tok

    def parse_or() -> ConditionExpr:
        items = [parse_and()]
        while peek() == "OR":
            take()
            items.append(parse_and())
        return items[0] if len(items) == 1 else Node("or", tuple(items))

    def parse_and() -> ConditionExpr:
        items = [parse_atom()]
        while peek() == "AND":
            take()
            items.append(parse_atom())
        return items[0] if len(items) == 1 else Node("and", tuple(items))

    def parse_atom() -> ConditionExpr:
        tok = peek()
        if tok is None:
            raise ParseError(f"condition text ended unexpectedly: {text!r}")
        if tok == "(":
            take()
            inner = parse_or()
            if peek() != ")":
                raise ParseError(f"unbalanced parentheses in condition: {text!r}")
            take()
            return inner
        if tok in (")", "AND", "OR"):
            raise ParseError(f"misplaced {tok!r} in condition: {text!r}")
        return Predicate(take())

    expr = parse_or()
    if pos != len(tokens):
        raise ParseError(f"trailing tokens after condition: {text!r}")
    return expr


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SentencingRange:
    min_months: int
    max_months: int
    label: str = ""

    def contains(self, months: int) -> bool:
        return self.min_months <= months <= self.max_months

    def text(self) -> str:
        """Surface string used when the conclusion is embedded."""
        return f"{self.min_months} to {self.max_months} months of fixed-term imprisonment"


@dataclass(frozen=True)
class LegalChain:
    premise_text: str
    premise: ConditionExpr
    situation_text: str
    situation: ConditionExpr
    conclusion: SentencingRange
    source_provision: str = ""

    def __post_init__(self):
        if not self.premise_text.strip() or not self.situation_text.strip():
            raise ValidationError("premise and situation display texts must be non-empty")

    def conclusion_text(self) -> str:
        return self.conclusion.text()

    def predicate_labels(self) -> list[str]:
        """Premise labels followed by situation labels (normalized, deduped)."""
        labels = expr_labels(self.premise)
        seen = set(labels)
        for lab in expr_labels(self.situation):
            if lab not in seen:
                seen.add(lab)
                labels.append(lab)
        return labels


@dataclass
class ChainSet:
    charge: str
    chains: list[LegalChain]
    lexicon: dict[str, list[str]] = field(default_factory=dict)

    def phrases_for(self, label: str) -> list[str]:
        """Surface phrases that realize a predicate; the label itself by default."""
        lab = normalize_label(label)
        phrases = self.lexicon.get(lab)
        return list(phrases) if phrases else [lab]


def chain_from_text(premise_text: str, situation_text: str, conclusion: SentencingRange,
                    source_provision: str = "") -> LegalChain:
    """Build a chain whose condition trees are parsed from infix display text."""
    return LegalChain(
        premise_text=premise_text.strip(),
        premise=parse_infix(premise_text),
        situation_text=situation_text.strip(),
        situation=parse_infix(situation_text),
        conclusion=conclusion,
        source_provision=source_provision,
    )


# ---------------------------------------------------------------------------
# Chain-file (de)serialization
# ---------------------------------------------------------------------------


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise ParseError(f"missing required key {key!r}", field=where)
    value = obj[key]
    if not isinstance(value, kind):
        raise ParseError(f"key {key!r} must be {kind.__name__}", field=f"{where}.{key}")
    return value


def parse_chain_file(text: str) -> ChainSet:
    """Parse the chain-file JSON document; raises on schema or range violations."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"chain file is not valid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("chain file must be a JSON object", field="$")
    charge = _require(doc, "charge", str, "$")
    if not charge.strip():
        raise ParseError("charge must be non-empty", field="charge")
    raw_chains = _require(doc, "chains", list, "$")
    if not raw_chains:
        raise ValidationError(f"chain file for {charge!r} has an empty chains list")
    chains: list[LegalChain] = []
    for i, raw in enumerate(raw_chains):
        where = f"chains[{i}]"
        if not isinstance(raw, dict):
            raise ParseError("chain entry must be an object", field=where)
        premise = _require(raw, "premise", dict, where)
        situation = _require(raw, "situation", dict, where)
        conclusion = _require(raw, "conclusion", dict, where)
        p_text = _require(premise, "text", str, f"{where}.premise")
        s_text = _require(situation, "text", str, f"{where}.situation")
        lo = _require(conclusion, "min_months", int, f"{where}.conclusion")
        hi = _require(conclusion, "max_months", int, f"{where}.conclusion")
        if lo < 0 or hi < lo:
            raise ValidationError(
                f"conclusion range inverted or negative in {where}: min={lo}, max={hi}"
            )
        label = conclusion.get("label", "")
        if not isinstance(label, str):
            raise ParseError("label must be a string", field=f"{where}.conclusion.label")
        source = raw.get("source_provision", "")
        if not isinstance(source, str):
            raise ParseError("source_provision must be a string", field=f"{where}.source_provision")
        chains.append(
            LegalChain(
                premise_text=p_text,
                premise=expr_from_json(_require(premise, "expr", dict, f"{where}.premise"), f"{where}.premise.expr"),
                situation_text=s_text,
                situation=expr_from_json(_require(situation, "expr", dict, f"{where}.situation"), f"{where}.situation.expr"),
                conclusion=SentencingRange(lo, hi, label),
                source_provision=source,
            )
        )
    lexicon = {}
    raw_lex = doc.get("lexicon", {})
    if not isinstance(raw_lex, dict):
        raise ParseError("lexicon must be an object", field="lexicon")
    for key, phrases in raw_lex.items():
        if not isinstance(phrases, list) or not all(isinstance(p, str) for p in phrases):
            raise ParseError("lexicon values must be lists of strings", field=f"lexicon.{key}")
        lexicon[normalize_label(key)] = list(phrases)
    return ChainSet(charge=charge, chains=chains, lexicon=lexicon)


def serialize_chain_set(cs: ChainSet) -> str:
    doc = {
        "charge": cs.charge,
        "chains": [
            {
                "premise": {"text": c.premise_text, "expr": expr_to_json(c.premise)},
                "situation": {"text": c.situation_text, "expr": expr_to_json(c.situation)},
                "conclusion": {
                    "min_months": c.conclusion.min_months,
                    "max_months": c.conclusion.max_months,
                    "label": c.conclusion.label,
                },
                "source_provision": c.source_provision,
            }
            for c in cs.chains
        ],
    }
    if cs.lexicon:
        doc["lexicon"] = {k: list(v) for k, v in sorted(cs.lexicon.items())}
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def load_chain_library(path: str | Path) -> dict[str, ChainSet]:
    """Load one chain file or every ``*.json`` in a directory, keyed by charge."""
    p = Path(path)
    files = sorted(p.glob("*.json")) if p.is_dir() else [p]
    if not files:
        raise ValidationError(f"no chain files found under {p}")
    library: dict[str, ChainSet] = {}
    for f in files:
        cs = parse_chain_file(f.read_text(encoding="utf-8"))
        if cs.charge in library:
            raise ValidationError(f"duplicate chain set for charge {cs.charge!r} in {f.name}")
        library[cs.charge] = cs
    return library


# ---------------------------------------------------------------------------
# Validation report
# ---------------------------------------------------------------------------

PRONOUN_STOPLIST = frozenset(
    "he she it they him her them his hers its their theirs this that these those".split()
)

CONSTRAINT_NAMES = (
    "Exhaustiveness",
    "Semantic separation",
    "Logical coherence",
    "Referential specificity",
    "Sentencing specificity",
)


@dataclass
class ConstraintResult:
    constraint: str
    status: str  # "pass" | "fail" | "not machine-checkable"
    details: list[str] = field(default_factory=list)


@dataclass
class ValidationReport:
    charge: str
    results: list[ConstraintResult]

    @property
    def ok(self) -> bool:
        return all(r.status != "fail" for r in self.results)

    def to_dict(self) -> dict:
        return {
            "charge": self.charge,
            "ok": self.ok,
            "constraints": [
                {"constraint": r.constraint, "status": r.status, "details": r.details}
                for r in self.results
            ],
        }


def _well_formed(expr: ConditionExpr, where: str, problems: list[str]) -> None:
    if isinstance(expr, Predicate):
        if not expr.label.strip():
            problems.append(f"{where}: empty predicate label")
        return
    if expr.op not in ("and", "or"):
        problems.append(f"{where}: bad operator {expr.op!r}")
    if len(expr.children) < 2:
        problems.append(f"{where}: {expr.op.upper()} node with fewer than 2 children")
    for c in expr.children:
        _well_formed(c, where, problems)


def validate_chain_set(cs: ChainSet, stoplist: frozenset[str] = PRONOUN_STOPLIST) -> ValidationReport:
    """Report pass/fail per machine-checkable extraction constraint.

    Exhaustiveness cannot be machine-checked without provision semantics and is
    reported as such.
    """
    separation: list[str] = []
    coherence: list[str] = []
    specificity: list[str] = []
    sentencing: list[str] = []
    for i, chain in enumerate(cs.chains):
        shared = set(expr_labels(chain.premise)) & set(expr_labels(chain.situation))
        if shared:
            separation.append(f"chain {i}: premise and situation share labels {sorted(shared)}")
        _well_formed(chain.premise, f"chain {i} premise", coherence)
        _well_formed(chain.situation, f"chain {i} situation", coherence)
        for part, text in (("premise", chain.premise_text), ("situation", chain.situation_text)):
            hits = sorted({t for t in tokenize(text.casefold()) if t in stoplist})
            if hits:
                specificity.append(f"chain {i} {part}: pronoun tokens {hits}")
        rng = chain.conclusion
        if rng.min_months < 0 or rng.max_months < rng.min_months:
            sentencing.append(
                f"chain {i}: invalid range [{rng.min_months}, {rng.max_months}]"
            )
    results = [
        ConstraintResult("Exhaustiveness", "not machine-checkable",
                         ["requires expert review of the source provision"]),
        ConstraintResult("Semantic separation", "fail" if separation else "pass", separation),
        ConstraintResult("Logical coherence", "fail" if coherence else "pass", coherence),
        ConstraintResult("Referential specificity", "fail" if specificity else "pass", specificity),
        ConstraintResult("Sentencing specificity", "fail" if sentencing else "pass", sentencing),
    ]
    return ValidationReport(charge=cs.charge, results=results)


# ---------------------------------------------------------------------------
# Extraction prompt and response parsing
# ---------------------------------------------------------------------------

_PROMPT_TEMPLATE = """\
You are assisting with the decomposition of a statutory provision into
structured legal chains for the charge of {charge}.

A legal chain is a premise-situation-conclusion triplet:
- PREMISE: the behavioral elements that constitute the offense.
- SITUATION: the consequence or severity circumstances attached to the premise.
- CONCLUSION: the statutory sentencing range that applies when both hold.

Decompose the provision below into legal chains, following these five rules:
1. Exhaustiveness: every distinct behavior and condition in the provision must
   be represented by at least one chain.
2. Semantic separation: behavioral elements belong in the premise and
   consequence or severity conditions belong in the situation; never mix the
   two within one component.
3. Logical coherence: combine conditions with explicit AND/OR operators
   (parentheses allowed) so that the provision's inferential structure is
   preserved.
4. Referential specificity: name actors and objects concretely; do not use
   pronouns such as "he", "it", or "they".
5. Sentencing specificity: every conclusion must state the legally prescribed
   sentencing range in months.

Format each chain exactly as follows, one block per chain:
===CHAIN===
PREMISE: <conditions joined with AND/OR>
SITUATION: <conditions joined with AND/OR>
CONCLUSION: range: <min>-<max> months; label: <short clause tag>
SOURCE: <provision identifier>

Provision ({charge}):
{provision}
"""


def build_extraction_prompt(provision_text: str, charge: str) -> str:
    """Deterministic decomposition prompt; contains all five constraint names."""
    if not provision_text or not provision_text.strip():
        raise ContractError("provision text must be non-empty")
    return _PROMPT_TEMPLATE.format(charge=charge, provision=provision_text.strip())


_RANGE_RE = re.compile(r"range:\s*(\d+)\s*-\s*(\d+)\s*months", re.IGNORECASE)
_LABEL_RE = re.compile(r"label:\s*([^\s;]+)")


def parse_extraction_response(text: str, charge: str) -> tuple[ChainSet, list[str]]:
    """Parse ``===CHAIN===`` blocks into a ChainSet.

    Returns the set plus a diagnostic line per malformed block.  Raises
    :class:`ExtractionError` when no block is usable.
    """
    blocks: list[list[str]] = []
    current: list[str] | None = None
    for line in text.splitlines():
        if line.strip() == "===CHAIN===":
            current = []
            blocks.append(current)
        elif current is not None:
            current.append(line)
    chains: list[LegalChain] = []
    diagnostics: list[str] = []
    for idx, blk in enumerate(blocks):
        fields: dict[str, str] = {}
        for line in blk:
            stripped = line.strip()
            for header in ("PREMISE:", "SITUATION:", "CONCLUSION:", "SOURCE:"):
                if stripped.startswith(header):
                    fields[header[:-1]] = stripped[len(header):].strip()
                    break
        missing = [h for h in ("PREMISE", "SITUATION", "CONCLUSION") if not fields.get(h)]
        if missing:
            diagnostics.append(f"chain block {idx}: missing {', '.join(missing)}")
            continue
        m = _RANGE_RE.search(fields["CONCLUSION"])
        if not m:
            diagnostics.append(
                f"chain block {idx}: conclusion lacks 'range: <min>-<max> months'"
            )
            continue
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            diagnostics.append(f"chain block {idx}: inverted range {lo}-{hi}")
            continue
        label_m = _LABEL_RE.search(fields["CONCLUSION"])
        try:
            chain = chain_from_text(
                fields["PREMISE"],
                fields["SITUATION"],
                SentencingRange(lo, hi, label_m.group(1) if label_m else ""),
                fields.get("SOURCE", ""),
            )
        except (ParseError, ValidationError) as exc:
            diagnostics.append(f"chain block {idx}: {exc}")
            continue
        shared = set(expr_labels(chain.premise)) & set(expr_labels(chain.situation))
        if shared:
            diagnostics.append(
                f"chain block {idx}: premise and situation share labels {sorted(shared)}"
            )
            continue
        chains.append(chain)
    if not chains:
        raise ExtractionError(
            f"no well-formed chain blocks in response for charge {charge!r} "
            f"({len(diagnostics)} diagnostic(s))"
        )
    return ChainSet(charge=charge, chains=chains), diagnostics
