#!/usr/bin/env python3
"""Build, evaluate, and round-trip the boolean condition trees used by chains.

A chain's premise and situation are AND/OR trees over predicate labels.  This
script constructs a tree by hand, evaluates it against a few fact sets, parses
the same tree from infix text, and shows the JSON wire format.
"""
import json

from lexchain import (
    Node,
    Predicate,
    eval_condition,
    expr_from_json,
    expr_labels,
    expr_to_json,
    expr_to_text,
    parse_infix,
)

# (violence OR intimidation) AND took property
expr = Node("and", (
    Node("or", (Predicate("used violence against the victim"),
                Predicate("threatened the victim with a weapon"))),
    Predicate("took property from the victim"),
))
print("tree as text:", expr_to_text(expr))
print("labels:", expr_labels(expr))

fact_sets = [
    {"used violence against the victim", "took property from the victim"},
    {"threatened the victim with a weapon", "took property from the victim"},
    {"took property from the victim"},
    set(),
]
for facts in fact_sets:
    print(f"  facts={sorted(facts)!r:>90} -> {eval_condition(expr, facts)}")

# The same tree can be written in infix text.  Operators must be uppercase;
# lowercase "and"/"or" are left alone so they can appear inside labels.
parsed = parse_infix(
    "(used violence against the victim OR threatened the victim with a weapon)"
    " AND took property from the victim"
)
print("parse_infix round trip matches:", expr_to_json(parsed) == expr_to_json(expr))

# JSON wire format: nested {"op": ..., "children": [...]} / {"label": ...}.
wire = expr_to_json(expr)
print(json.dumps(wire, indent=2, ensure_ascii=False))
restored = expr_from_json(wire)
print("JSON round trip matches:", expr_to_json(restored) == wire)

# Normalization: label matching ignores case and surrounding whitespace.
print("normalized match:",
      eval_condition(Predicate("Took  Property from the victim"),
                     {"took property from the victim"}))
