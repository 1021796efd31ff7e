"""Prompt construction and the ``<think>``/``<answer>`` + JSON wire format."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DuplicateIds, EmptyEntries, NonFiniteValue
from .ordinal import Permutation

SYSTEM_PROMPT = (
    "The user asks a question, and the Assistant solves it. The assistant first thinks "
    "about the reasoning process in the mind and then provides the user with the answer. "
    "The reasoning process and answer are enclosed within <think> </think> and <answer> "
    "</answer> tags, respectively, i.e., <think> reasoning process here </think> "
    "<answer> answer here </answer>."
)

INSTRUCT_TEMPLATE = (
    "Analyze each image to determine the [Rule], and if there are multiple images, sort "
    "them in ascending order of [Rule]. Output the results as a JSON list of dictionaries "
    "in this format: [{'image_id': number, 'value': value}, ...], where value is the "
    "[Rule] ([Value_Range]). Ensure the list is sorted correctly with strictly followed syntax."
)

THINK_PLACEHOLDER = "reasoning"

_TAGS = ("<think>", "</think>", "<answer>", "</answer>")
_TEMPLATE_RE = re.compile(
    r"\A\s*<think>(?P<think>.*)</think>\s*<answer>(?P<answer>.*)</answer>\s*\Z", re.DOTALL
)


@dataclass(frozen=True)
class PromptSpec:
    rule: str
    value_range: str
    num_images: int = 1

    def __post_init__(self):
        if not self.rule or not self.value_range:
            raise ValueError("rule and value_range must be non-empty")
        if self.num_images < 1:
            raise ValueError("num_images must be positive")


@dataclass(frozen=True)
class ParsedResponse:
    raw_text: str
    entries: tuple[tuple[int, float], ...] = ()
    format_ok: bool = False
    parse_error: str | None = None
    pred_perm: Permutation = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "pred_perm", tuple(i for i, _ in self.entries))

    @property
    def values(self) -> dict[int, float]:
        return dict(self.entries)


def build_prompt(spec: PromptSpec) -> str:
    images = "".join(f"<image_{i}>" for i in range(1, spec.num_images + 1))
    instruct = INSTRUCT_TEMPLATE.replace("[Rule]", spec.rule).replace(
        "[Value_Range]", spec.value_range
    )
    return f"{SYSTEM_PROMPT}\n\n{images}\n{instruct}"


def serialize_response(entries: Sequence[tuple[int, float]], think_text: str = THINK_PLACEHOLDER) -> str:
    if len(entries) == 0:
        raise EmptyEntries("cannot serialize an empty answer")
    ids = [int(i) for i, _ in entries]
    if len(set(ids)) != len(ids):
        raise DuplicateIds(f"duplicate image ids {ids}")
    if any(t in think_text for t in _TAGS):
        raise ValueError("think_text must not contain response tags")
    payload = []
    for i, v in entries:
        v = float(v)
        if not math.isfinite(v):
            raise NonFiniteValue(f"value for image {i} is {v}")
        payload.append({"image_id": int(i), "value": v})
    # float repr is shortest round-trip, so json.dumps preserves values exactly
    return f"<think>{think_text}</think><answer>{json.dumps(payload)}</answer>"


def _fail(raw: str, why: str) -> ParsedResponse:
    return ParsedResponse(raw_text=raw, entries=(), format_ok=False, parse_error=why)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def parse_response(raw, expected_ids: Iterable[int]) -> ParsedResponse:
    """Parse one model output. Never raises; failures set ``format_ok=False``."""
    if isinstance(raw, (bytes, bytearray)):
        raw = bytes(raw).decode("utf-8", errors="replace")
    elif not isinstance(raw, str):
        return _fail(str(raw), f"expected text, got {type(raw).__name__}")
    for tag in _TAGS:
        if raw.count(tag) != 1:
            return _fail(raw, f"tag {tag} must appear exactly once")
    m = _TEMPLATE_RE.match(raw)
    if m is None:
        return _fail(raw, "text does not match <think>...</think><answer>...</answer>")
    try:
        data = json.loads(m.group("answer"))
    except (ValueError, RecursionError) as exc:
        return _fail(raw, f"answer is not valid JSON: {exc}")
    if not isinstance(data, list) or not data:
        return _fail(raw, "answer must be a non-empty JSON list")
    expected = set(expected_ids)
    entries = []
    seen = set()
    for k, obj in enumerate(data):
        if not isinstance(obj, dict):
            return _fail(raw, f"entry {k} is not an object")
        iid, val = obj.get("image_id"), obj.get("value")
        if not _is_int(iid):
            return _fail(raw, f"entry {k} lacks an integer image_id")
        if not _is_number(val):
            return _fail(raw, f"entry {k} lacks a numeric value")
        try:
            val = float(val)
        except OverflowError:
            return _fail(raw, f"entry {k} value overflows")
        if not math.isfinite(val):
            return _fail(raw, f"entry {k} value is not finite")
        if iid in seen:
            return _fail(raw, f"image_id {iid} appears more than once")
        if iid not in expected:
            return _fail(raw, f"image_id {iid} not among the expected ids")
        seen.add(iid)
        entries.append((iid, val))
    return ParsedResponse(raw_text=raw, entries=tuple(entries), format_ok=True)


def format_reward(pr: ParsedResponse) -> float:
    return 1.0 if pr.format_ok else 0.0
