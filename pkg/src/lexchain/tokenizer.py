"""Shared surface tokenizer used by the encoder, the decoder and the metrics.

Tokens are integers, alphabetic words (with an optional internal apostrophe),
single CJK characters, or single punctuation marks.  The inverse
:func:`detokenize` restores conventional spacing; corpus templates are written
so that every generated text round-trips exactly.
"""

from __future__ import annotations

import re

# Words keep internal apostrophes and hyphens ("victim's", "fixed-term") so
# that detokenization can restore them without lookahead.
_TOKEN_RE = re.compile(
    r"\d+|[A-Za-z]+(?:['-][A-Za-z]+)*|[一-鿿]|[^\sA-Za-z0-9一-鿿]"
)

# Punctuation that attaches to the preceding token / the following token.
_NO_SPACE_BEFORE = set(".,:;?!%)]}")
_NO_SPACE_AFTER = set("([{")

_CJK_RE = re.compile(r"[一-鿿]")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Tokens with their (start, end) character offsets."""
    return [(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def _is_cjk(token: str) -> bool:
    return bool(_CJK_RE.search(token))


def detokenize(tokens: list[str]) -> str:
    parts: list[str] = []
    for tok in tokens:
        if not parts:
            parts.append(tok)
            continue
        prev = parts[-1]
        glue = " "
        if tok and tok[0] in _NO_SPACE_BEFORE:
            glue = ""
        elif prev and prev[-1] in _NO_SPACE_AFTER:
            glue = ""
        elif _is_cjk(prev[-1]) or _is_cjk(tok[0]):
            glue = ""
        parts.append(glue + tok)
    return "".join(parts)


def span_to_token_interval(text: str, span: tuple[int, int]) -> tuple[int, int] | None:
    """Map a character span to the interval of tokens it overlaps.

    Returns ``(first, last_exclusive)`` over the token sequence of ``text``,
    or ``None`` when no token overlaps the span.
    """
    start, end = span
    if start >= end:
        return None
    first = None
    last = None
    for i, (_, s, e) in enumerate(tokenize_with_offsets(text)):
        if e <= start or s >= end:
            continue
        if first is None:
            first = i
        last = i
    if first is None:
        return None
    return first, last + 1
