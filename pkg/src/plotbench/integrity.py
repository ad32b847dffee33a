"""JSON integrity of model responses: extraction, strict and repaired parsing,
key-missing accounting and BLEU-4 against the ground-truth document."""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable

from .config import flatten_keys

SMOOTHING_EPS = 1e-9


class NoJsonFound(ValueError):
    """The response contains no '{' at all."""


class JsonSyntaxError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte {offset})")
        self.offset = offset


class UnrepairableError(ValueError):
    def __init__(self, text: str, log: list[str]):
        super().__init__("response could not be repaired into valid JSON")
        self.text = text
        self.log = log


_FENCE = re.compile(r"```[^\n`]*\n?(.*?)```", re.DOTALL)


def _balanced_end(text: str, start: int) -> int | None:
    """Index one past the brace closing ``text[start]``, or None if never closed."""
    depth = 0
    in_str = esc = False
    for i in range(start, len(text)):
        c = text[i]
        if in_str:
            if esc:
                esc = False
            elif c == "\\":
                esc = True
            elif c == '"':
                in_str = False
        elif c == '"':
            in_str = True
        elif c in "{[":
            depth += 1
        elif c in "}]":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def extract_json(response: str) -> str:
    """Pull the JSON payload out of a free-form model response.

    Order: first fenced code block; else the first '{' through its balanced
    closing brace; an unclosed object runs to the end of the response so
    truncation can still be repaired.
    """
    m = _FENCE.search(response)
    if m:
        return m.group(1).strip()
    start = response.find("{")
    if start < 0:
        raise NoJsonFound("no '{' in response")
    end = _balanced_end(response, start)
    if end is None:
        return response[start:].rstrip()
    return response[start:end]


def _reject_constant(name: str):
    raise ValueError(f"non-standard constant {name}")


def strict_parse(text: str) -> Any:
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise JsonSyntaxError(e.msg, len(text[: e.pos].encode("utf-8"))) from None
    except ValueError as e:
        raise JsonSyntaxError(str(e), 0) from None


# ---------------------------------------------------------------------------
# repair


def _strip_trailing_commas(text: str) -> tuple[str, int]:
    removed = 0
    while True:
        out = []
        n = len(text)
        in_str = esc = False
        changed = 0
        i = 0
        while i < n:
            c = text[i]
            if in_str:
                if esc:
                    esc = False
                elif c == "\\":
                    esc = True
                elif c == '"':
                    in_str = False
                out.append(c)
            elif c == '"':
                in_str = True
                out.append(c)
            elif c == ",":
                j = i + 1
                while j < n and text[j] in " \t\r\n":
                    j += 1
                if j == n or text[j] in "}]":
                    changed += 1
                else:
                    out.append(c)
            else:
                out.append(c)
            i += 1
        text = "".join(out)
        removed += changed
        if not changed:
            return text, removed


def _close_open(text: str) -> tuple[str, str]:
    stack = []
    in_str = esc = False
    for c in text:
        if in_str:
            if esc:
                esc = False
            elif c == "\\":
                esc = True
            elif c == '"':
                in_str = False
        elif c == '"':
            in_str = True
        elif c in "{[":
            stack.append(c)
        elif c in "}]":
            if not stack or (stack[-1] == "{") != (c == "}"):
                return text, ""
            stack.pop()
    if in_str or not stack:
        return text, ""
    closers = "".join("}" if c == "{" else "]" for c in reversed(stack))
    return text + closers, closers


def _strip_control_chars(text: str) -> tuple[str, int]:
    out = []
    removed = 0
    in_str = esc = False
    for c in text:
        if in_str:
            if esc:
                esc = False
            elif c == "\\":
                esc = True
            elif c == '"':
                in_str = False
            elif ord(c) < 0x20:
                removed += 1
                continue
        elif c == '"':
            in_str = True
        out.append(c)
    return "".join(out), removed


def repair_text(text: str) -> tuple[str, list[str]]:
    """Apply the fixed repair pipeline and return (text, log).

    Steps, in order: drop trailing commas, append missing closers, drop raw
    control characters inside strings. Valid JSON passes through unchanged.
    """
    log = []
    text, n = _strip_trailing_commas(text)
    if n:
        log.append(f"trailing-comma×{n}" if n > 1 else "trailing-comma")
    text, closers = _close_open(text)
    if closers:
        braces, brackets = closers.count("}"), closers.count("]")
        for ch in dict.fromkeys(closers):
            if ch == "}":
                log.append(f"close-brace×{braces}")
            else:
                log.append(f"close-bracket×{brackets}")
    text, n = _strip_control_chars(text)
    if n:
        log.append(f"control-char×{n}")
    return text, log


def repair_parse(text: str) -> tuple[Any, list[str]]:
    """Parse, repairing common generation defects when the strict parse fails."""
    try:
        return strict_parse(text), []
    except JsonSyntaxError:
        pass
    fixed, log = repair_text(text)
    try:
        return strict_parse(fixed), log
    except JsonSyntaxError:
        raise UnrepairableError(text, log) from None


# ---------------------------------------------------------------------------
# key accounting


def key_missing(target: Any, truth_keys: Iterable[str]) -> tuple[list[str], float]:
    """Ground-truth key paths absent from ``target`` and their share of the key set."""
    truth = list(truth_keys)
    if not truth:
        return [], 0.0
    present = set(flatten_keys(target)) if isinstance(target, dict) else set()
    missing = [k for k in truth if k not in present]
    return missing, len(missing) / len(truth)


def extra_keys(target: Any, truth_keys: Iterable[str]) -> list[str]:
    truth = set(truth_keys) | {"reasoning"}
    if not isinstance(target, dict):
        return []
    return [k for k in flatten_keys(target) if k not in truth]


# ---------------------------------------------------------------------------
# BLEU-4

_TOKEN = re.compile(r'[{}\[\],:"]|[^\s{}\[\],:"]+')


def tokenize(text: str) -> list[str]:
    """Whitespace split with each of {}[],:" as a standalone token."""
    return _TOKEN.findall(text)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: str | list[str], reference: str | list[str]) -> float:
    """Sentence BLEU-4 with uniform weights and a single reference.

    Zero precisions above the unigram level are floored at 1e-9 inside the
    log; no unigram overlap at all gives exactly 0.
    """
    cand = tokenize(candidate) if isinstance(candidate, str) else list(candidate)
    ref = tokenize(reference) if isinstance(reference, str) else list(reference)
    if not cand or not ref:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        c_counts = _ngrams(cand, n)
        total = sum(c_counts.values())
        r_counts = _ngrams(ref, n)
        clipped = sum(min(c, r_counts[g]) for g, c in c_counts.items())
        if n == 1 and clipped == 0:
            return 0.0
        p = clipped / total if total else 0.0
        log_sum += 0.25 * math.log(max(p, SMOOTHING_EPS))
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return min(1.0, bp * math.exp(log_sum))


# ---------------------------------------------------------------------------


@dataclass
class IntegrityReport:
    strict_parse_ok: bool
    repaired_parse_ok: bool
    repair_log: list[str] = field(default_factory=list)
    missing_keys: list[str] | None = None
    key_missing_rate: float | None = None
    bleu4: float | None = None
    extra_keys: list[str] = field(default_factory=list)
    error: str | None = None
    document: Any = None


def assess(response: str, truth_keys: Iterable[str], reference: str | None = None) -> IntegrityReport:
    """Full integrity pass over one raw response.

    BLEU-4 is scored on the extracted JSON text (the whole response when no
    JSON is found) and only when a reference text is given.
    """
    truth_keys = list(truth_keys)
    try:
        payload = extract_json(response)
    except NoJsonFound as e:
        rep = IntegrityReport(False, False, error=f"NoJsonFound: {e}")
        if reference is not None:
            rep.bleu4 = bleu4(response, reference)
        return rep

    score = bleu4(payload, reference) if reference is not None else None
    try:
        doc = strict_parse(payload)
        strict_ok, log, err = True, [], None
    except JsonSyntaxError as e:
        strict_ok, err = False, f"SyntaxError: {e}"
        try:
            doc, log = repair_parse(payload)
        except UnrepairableError as u:
            return IntegrityReport(False, False, repair_log=u.log, bleu4=score, error=err)

    missing, rate = key_missing(doc, truth_keys)
    return IntegrityReport(strict_ok, True, repair_log=log, missing_keys=missing, key_missing_rate=rate,
                           bleu4=score, extra_keys=extra_keys(doc, truth_keys), error=err, document=doc)
