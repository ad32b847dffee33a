"""Prompt construction for the five in-context-learning methods and the blind ablation.

Each method adds context on top of the previous one:

1. instructions and parameter reference
2. + JSON schema
3. + example answer JSONs
4. + example images with their answers as prior chat turns
5. + grounding hints for the target image

A bundle is a plain ordered list of chat messages; image parts carry a file
path that the client resolves at send time.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

from .config import SchemaManifest, default_schema_manifest
from .geometry import PointSet, meters_to_rel
from .integrity import strict_parse
from .solar import SunPosition

log = logging.getLogger(__name__)

METHODS = (1, 2, 3, 4, 5)
BLIND = "blind"
DEFAULT_N_EXAMPLES = 3
CHARS_PER_TOKEN = 4
IMAGE_TOKEN_ESTIMATE = 256
ANSWER_CUE = "Answer:"
BLIND_CUE = "Answer now:"


class MissingExamples(ValueError):
    pass


class MissingGrounding(ValueError):
    pass


class GroundingForbidden(ValueError):
    pass


@dataclass(frozen=True)
class ImagePart:
    path: str


Part = Union[str, ImagePart]


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[Part, ...]

    def text(self) -> str:
        return "\n".join(p for p in self.parts if isinstance(p, str))

    def images(self) -> list[ImagePart]:
        return [p for p in self.parts if isinstance(p, ImagePart)]


@dataclass(frozen=True)
class PromptBundle:
    messages: tuple[Message, ...]
    method_id: int | str
    token_estimate: int = 0
    blind: bool = False

    def images(self) -> list[ImagePart]:
        return [im for m in self.messages for im in m.images()]


@dataclass(frozen=True)
class FewShotExample:
    answer_json: str
    image: str | None = None

    def __post_init__(self):
        doc = strict_parse(self.answer_json)
        if not isinstance(doc, dict) or next(iter(doc), None) != "reasoning":
            raise ValueError("few-shot answer must be a JSON object whose first key is 'reasoning'")


@dataclass(frozen=True)
class GroundingInfo:
    dap: int
    rel_points: tuple[tuple[float, float], ...]
    sun: SunPosition
    extent_w_m: float
    extent_h_m: float
    text: str = field(default="", compare=False)


# ---------------------------------------------------------------------------
# text blocks

INSTRUCTIONS = (
    "Role: you read overhead renders of single crop plots and work out how each render was set up.\n"
    "Task: recover the configuration values given to the plant renderer for the plot in the image.\n"
    "Goal: a configuration that, fed back to the renderer, reproduces this plot.\n"
    "Format: answer with one valid JSON object and nothing else. Put a \"reasoning\" key first, with "
    "a brief plain-text account of what you see; the configuration keys come after it."
)


def _range_text(k) -> str:
    lo, hi = k.min, k.max
    if lo is None and hi is None:
        return ""
    if hi is None:
        return f", {'>' if k.exclusive_min else '>='} {lo:g}"
    if lo is None:
        return f", {'<' if k.exclusive_max else '<='} {hi:g}"
    right = ")" if k.exclusive_max else "]"
    left = "(" if k.exclusive_min else "["
    return f", {left}{lo:g}, {hi:g}{right}"


def parameter_reference(schema: SchemaManifest) -> str:
    lines = ["PARAMETER REFERENCE:"]
    n = 0
    for top in schema.children(""):
        if top.type != "object":
            unit = f" {top.unit}" if top.unit else ""
            lines.append(f"- {top.path} ({top.type}{unit}{_range_text(top)}): {top.description}")
            continue
        n += 1
        lines.append(f"{n}. {top.path}: {top.description}")
        for k in schema.children(top.path):
            name = k.path.rsplit(".", 1)[1]
            unit = f" {k.unit}" if k.unit else ""
            lines.append(f"   - {name} ({k.type}{unit}{_range_text(k)}): {k.description}")
    return "\n".join(lines)


def schema_skeleton(schema: SchemaManifest) -> dict:
    def build(prefix: str) -> dict:
        out = {}
        for k in schema.children(prefix):
            name = k.path.rsplit(".", 1)[-1]
            if k.type == "object":
                out[name] = build(k.path)
            elif k.schema is not None:
                out[name] = k.schema
            else:
                out[name] = k.type
        return out

    skeleton = {"reasoning": "string"}
    skeleton.update(build(""))
    return skeleton


def schema_block(schema: SchemaManifest) -> str:
    return "JSON SCHEMA:\n" + json.dumps(schema_skeleton(schema), indent=2)


def examples_block(examples: Sequence[FewShotExample]) -> str:
    parts = ["Example answers for other plots:"]
    for i, ex in enumerate(examples, start=1):
        parts.append(f"Example {i}:\n{ex.answer_json.strip()}")
    return "\n\n".join(parts)


def grounding_from_truth(dap: int, plant_points: PointSet | Sequence[tuple[float, float]], sun: SunPosition,
                         extents: tuple[float, float]) -> GroundingInfo:
    """Hints derived from ground truth: age, count, sun angles, relative plant positions."""
    w, h = extents
    if w <= 0 or h <= 0:
        raise ValueError("extents must be positive")
    pts = plant_points.points if isinstance(plant_points, PointSet) else tuple(plant_points)
    rel = tuple(meters_to_rel(x, y, w, h) for x, y in pts)
    locs = ", ".join(f"({rx:.3f}, {ry:.3f})" for rx, ry in rel)
    text = (
        f"Ground truth hints for target image: Plant age: {dap} DAP, Plant count: {len(rel)}, "
        f"Sun position: {sun.elevation_deg:.1f}° elev., {sun.azimuth_deg:.1f}° azim., "
        f"Plant locations (rx, ry): [{locs}]. "
        f"Convert to meters: x = (r_x - 0.5) × {w:.4f}, y = -(r_y - 0.5) × {h:.4f}"
    )
    return GroundingInfo(dap=dap, rel_points=rel, sun=sun, extent_w_m=w, extent_h_m=h, text=text)


# ---------------------------------------------------------------------------


def estimate_tokens(messages: Sequence[Message]) -> int:
    chars = sum(len(p) for m in messages for p in m.parts if isinstance(p, str))
    n_images = sum(len(m.images()) for m in messages)
    return math.ceil(chars / CHARS_PER_TOKEN) + IMAGE_TOKEN_ESTIMATE * n_images


def _bundle(messages: list[Message], method_id, blind: bool, context_window: int) -> PromptBundle:
    est = estimate_tokens(messages)
    if est > context_window:
        log.warning("prompt for method %s is ~%d tokens, above the %d-token context", method_id, est, context_window)
    return PromptBundle(tuple(messages), method_id, est, blind)


def build(method_id: int, target_image: str, schema: SchemaManifest | None = None,
          examples: Sequence[FewShotExample] = (), grounding: GroundingInfo | None = None,
          n_examples: int = DEFAULT_N_EXAMPLES, context_window: int = 32768) -> PromptBundle:
    if method_id not in METHODS:
        raise ValueError(f"unknown method {method_id!r}")
    schema = schema or default_schema_manifest()
    if method_id == 5 and grounding is None:
        raise MissingGrounding("method 5 needs grounding information")
    if method_id < 5 and grounding is not None:
        raise GroundingForbidden(f"method {method_id} must not carry grounding information")
    if method_id >= 3:
        if len(examples) != n_examples:
            raise MissingExamples(f"method {method_id} needs exactly {n_examples} examples, got {len(examples)}")
        if method_id >= 4 and any(ex.image is None for ex in examples):
            raise MissingExamples(f"method {method_id} needs an image for every example")

    system = [INSTRUCTIONS, parameter_reference(schema)]
    if method_id >= 2:
        system.append(schema_block(schema))
    if method_id >= 3:
        system.append(examples_block(examples))
    messages = [Message("system", ("\n\n".join(system),))]

    if method_id >= 4:
        for ex in examples:
            messages.append(Message("user", (ImagePart(ex.image), ANSWER_CUE)))
            messages.append(Message("assistant", (ex.answer_json.strip(),)))

    final = ANSWER_CUE if method_id < 5 else f"{grounding.text}\n\n{ANSWER_CUE}"
    messages.append(Message("user", (ImagePart(target_image), final)))
    return _bundle(messages, method_id, False, context_window)


def build_blind(bundle: PromptBundle, context_window: int = 32768) -> PromptBundle:
    """Same conversation, but the final turn has no image and only says "Answer now:"."""
    messages = list(bundle.messages)
    if not messages or messages[-1].role != "user":
        raise ValueError("bundle must end with a user turn")
    messages[-1] = Message("user", (BLIND_CUE,))
    return _bundle(messages, bundle.method_id, True, context_window)


def render_bundle(bundle: PromptBundle) -> str:
    """Stable text form of a bundle, used for golden files."""
    msgs = []
    for m in bundle.messages:
        content = []
        for p in m.parts:
            if isinstance(p, ImagePart):
                content.append({"type": "image", "path": p.path})
            else:
                content.append({"type": "text", "text": p})
        msgs.append({"role": m.role, "content": content})
    doc = {"method": bundle.method_id, "blind": bundle.blind, "token_estimate": bundle.token_estimate,
           "messages": msgs}
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
