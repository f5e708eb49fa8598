"""Prompt assembly, chat transports and the propose / diagnose / revise loop."""

from __future__ import annotations

import base64
import json
import logging
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from .compiler import STRENGTH_BANDS, compile_proposal, compile_raw
from .diag import Annotations, equilibria, profile_grid, render_svg, stick_regions
from .errors import FileIOError, JointFieldError, TransportError, UnparseableProposalError
from .errors import ValidationError
from .field import ELASTICITY_DAMPING_RATIO, LIMIT_SIDES
from .schema import (
    STRENGTH_LABELS,
    parse_proposal,
    parse_raw_proposal,
    serialize_composed,
    serialize_context,
)
from .templates import TEMPLATES

log = logging.getLogger(__name__)

PROMPT_VERSION = "jointfield-prompt-1"
API_KEY_ENV = "JODA_API_KEY"
COMPLETE_TOKEN = "complete"
DEFAULT_MAX_REQUEST_BYTES = 20 * 1024 * 1024
FEEDBACK_POINTS = 101

_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".webp": "image/webp",
    ".gif": "image/gif",
    ".svg": "image/svg+xml",
}


@dataclass(frozen=True)
class Image:
    name: str
    media_type: str
    data_b64: str

    @classmethod
    def from_bytes(cls, name, data, media_type):
        return cls(name, media_type, base64.b64encode(data).decode("ascii"))


def load_image(path):
    path = Path(path)
    media = _MEDIA_TYPES.get(path.suffix.lower())
    if media is None:
        raise FileIOError(f"{path}: unsupported image type {path.suffix!r}")
    try:
        data = path.read_bytes()
    except OSError as e:
        raise FileIOError(f"cannot read image {path}: {e.strerror}") from None
    return Image.from_bytes(path.name, data, media)


def image_files(directory):
    """Image files in ``directory`` in name order."""
    d = Path(directory)
    if not d.is_dir():
        raise FileIOError(f"image directory {d} does not exist")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in _MEDIA_TYPES)


# --------------------------------------------------------------------------
# prompt text


_SYSTEM = (
    "You study photographs and renderings of articulated objects and work out how "
    "one of their joints behaves when a person moves it: where it resists, where "
    "it pulls or pushes on its own, where it clicks or latches, and how it stops "
    "at the ends of its travel. You answer with structured JSON only, and you "
    "ground each claim in what the images and the joint description show."
)

_TEMPLATE_TASK = (
    "Describe the joint's behaviour as a list of effects. Each effect picks one "
    "template from the table below, places it on a sub-interval of the joint range "
    "given as fractions start_ratio < end_ratio in [0, 1] (0 is q_min, 1 is q_max), "
    "and rates its strength separately for the conservative, friction and damping "
    "channels. Effects may overlap: conservative forces add, friction takes the "
    "largest value, damping adds. Strength labels are mapped onto physical "
    "magnitudes using the joint's gravity load and inertia, so choose labels "
    "relative to what a person would feel, not absolute units."
)

_RAW_TASK = (
    "Describe the joint's behaviour directly as curves over the normalized "
    "position s in [0, 1] (0 is q_min, 1 is q_max). For each channel you need, "
    "give control points [s, value] with s strictly increasing from 0 to 1. "
    "Values are multiples of the joint's reference force (conservative, "
    "friction) or reference damping (damping). Conservative values may be "
    "negative (pulling toward q_min); friction and damping values must be "
    "non-negative. Curves are joined with shape-preserving cubic interpolation."
)


def template_table():
    rows = ["| template | behaviour | where it usually sits | channels |",
            "|---|---|---|---|"]
    for t in TEMPLATES.values():
        chans = ", ".join(sorted(ch.value for ch in t.supported_channels))
        rows.append(f"| {t.name} | {t.description} | {t.placement_prior} | {chans} |")
    return "\n".join(rows)


def _template_format():
    bands = ", ".join(f"{k} = {lo:g}-{hi:g}x" for k, (lo, hi) in STRENGTH_BANDS.items())
    example = {
        "joint_summary": {"joint_name": "<name>", "joint_type": "revolute | prismatic",
                          "motion_description": "<one sentence>",
                          "overall_confidence": 0.0},
        "whole_motion_descrptn": "<what happens over the full travel>",
        "gravity_can_be_ignored": False,
        "joint_limit_hint": {"selected_side": " | ".join(LIMIT_SIDES),
                             "elasticity": " | ".join(ELASTICITY_DAMPING_RATIO)},
        "effect_proposals": [{
            "effect_name": "<template name>",
            "start_ratio": 0.0,
            "end_ratio": 1.0,
            "strength": {"conservative": "none", "friction": "weak", "damping": "none"},
            "refineFactor": {"conservative": 1.0, "friction": 1.0, "damping": 1.0},
            "confidence": 0.0,
            "reason": "<visual evidence>",
        }],
    }
    return (
        "Reply with one JSON object of this shape:\n"
        + json.dumps(example, indent=2)
        + f"\nStrength labels: {', '.join(STRENGTH_LABELS)} (approximate multiples of the "
        f"reference magnitude: {bands}). refineFactor is optional and rescales a channel "
        "after the label is applied; leave it at 1 unless you are correcting a previous "
        "round. joint_limit_hint says at which end the part hits a hard stop and how "
        "much it bounces."
    )


def _raw_format():
    example = {
        "joint_summary": {"joint_name": "<name>", "joint_type": "revolute | prismatic",
                          "motion_description": "<one sentence>",
                          "overall_confidence": 0.0},
        "control_points": {"conservative": [[0.0, 0.0], [1.0, -1.0]],
                           "friction": [[0.0, 0.2], [1.0, 0.2]],
                           "damping": [[0.0, 0.0], [1.0, 0.0]]},
        "joint_limit_hint": {"selected_side": " | ".join(LIMIT_SIDES),
                             "elasticity": " | ".join(ELASTICITY_DAMPING_RATIO)},
    }
    return "Reply with one JSON object of this shape:\n" + json.dumps(example, indent=2)


@dataclass(frozen=True)
class Feedback:
    """What the model sees from the previous round."""

    round: int
    prior_proposal: str  # the previous reply's JSON, verbatim
    profile_csv: str
    summary: str
    image: Image | None = None


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user_text: str
    images: tuple
    mode: str
    version: str = PROMPT_VERSION

    def messages(self):
        imgs = list(self.images)
        return [{"role": "system", "text": self.system, "images": []},
                {"role": "user", "text": self.user_text, "images": imgs}]

    def size_bytes(self):
        return len(self.system.encode()) + len(self.user_text.encode()) + sum(
            len(i.data_b64) for i in self.images)


def build_prompt(ctx, images=(), mode="template", feedback=None, allow_no_images=False,
                 max_bytes=DEFAULT_MAX_REQUEST_BYTES):
    """Assemble the request text deterministically from its inputs.

    ``images`` may hold paths or :class:`Image` objects.
    """
    if mode not in ("template", "raw"):
        raise ValidationError("mode must be 'template' or 'raw'", "mode")
    imgs = tuple(i if isinstance(i, Image) else load_image(i) for i in images)
    if not imgs and not allow_no_images:
        raise ValidationError("at least one image is required unless no-image mode is set",
                              "images")
    parts = [f"[prompt {PROMPT_VERSION}, mode {mode}]",
             _TEMPLATE_TASK if mode == "template" else _RAW_TASK,
             "Joint context (SI units; gravity is the generalized gravity force over s):",
             serialize_context(ctx).rstrip()]
    if mode == "template":
        parts += ["Effect templates:", template_table(), _template_format()]
    else:
        parts.append(_raw_format())
    if imgs:
        parts.append("Attached images, in order: " + ", ".join(i.name for i in imgs) + ".")
    else:
        parts.append("No images are attached; rely on the joint context.")
    if feedback is not None:
        parts += [
            f"Revision round {feedback.round}. Your previous reply was:",
            feedback.prior_proposal.rstrip(),
            "It was compiled and analysed. Summary: " + feedback.summary,
            "Sampled profile of the compiled field (force units of the joint; band_lo and "
            "band_hi bound what static friction can hold against the conservative and "
            "gravity forces):",
            feedback.profile_csv.rstrip(),
            f"If this matches how the joint should behave, reply with the single word "
            f"{COMPLETE_TOKEN}. Otherwise reply with a corrected JSON object in the same "
            "format; to strengthen or weaken one channel of an effect, change its "
            "refineFactor.",
        ]
        if feedback.image is not None:
            imgs = imgs + (feedback.image,)
    bundle = PromptBundle(_SYSTEM, "\n\n".join(parts) + "\n", imgs, mode)
    if bundle.size_bytes() > max_bytes:
        raise ValidationError(f"request is {bundle.size_bytes()} bytes, over the cap of "
                              f"{max_bytes}", "images")
    return bundle


# --------------------------------------------------------------------------
# transports


@dataclass(frozen=True)
class Exchange:
    request: bytes
    response: bytes
    text: str


class Transport:
    """Chat backend: request encoding, response decoding and the POST itself."""

    name = "base"

    def encode(self, messages):
        """Return ``(url, body_bytes)``; credentials are added in :meth:`post`."""
        raise NotImplementedError

    def decode(self, body):
        raise NotImplementedError

    def post(self, url, body):
        raise NotImplementedError

    def send(self, messages):
        url, body = self.encode(messages)
        resp = self.post(url, body)
        return Exchange(body, resp, self.decode(resp))


def _json_bytes(obj):
    return (json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode()


def _load_response(body):
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TransportError(f"response is not JSON: {e}") from None


class _Http:
    timeout = 120.0

    def _key(self):
        key = os.environ.get(API_KEY_ENV)
        if not key:
            raise TransportError(f"environment variable {API_KEY_ENV} is not set")
        return key

    def _headers(self, key):
        raise NotImplementedError

    def post(self, url, body):
        req = urllib.request.Request(url, data=body, method="POST",
                                     headers=self._headers(self._key()))
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as r:
                return r.read()
        except urllib.error.HTTPError as e:
            detail = e.read()[:500].decode("utf-8", "replace")
            raise TransportError(f"HTTP error from {self.name}: {detail}", e.code) from None
        except (urllib.error.URLError, TimeoutError, OSError) as e:
            raise TransportError(f"cannot reach {self.name} endpoint: {e}") from None


class OpenAIChat(_Http, Transport):
    """OpenAI-style ``/chat/completions`` endpoint."""

    name = "openai"

    def __init__(self, model="gpt-4o", base_url="https://api.openai.com/v1", timeout=120.0):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def encode(self, messages):
        out = []
        for m in messages:
            if m["images"]:
                content = [{"type": "text", "text": m["text"]}] + [
                    {"type": "image_url",
                     "image_url": {"url": f"data:{i.media_type};base64,{i.data_b64}"}}
                    for i in m["images"]]
            else:
                content = m["text"]
            out.append({"role": m["role"], "content": content})
        body = {"model": self.model, "temperature": 0, "messages": out}
        return f"{self.base_url}/chat/completions", _json_bytes(body)

    def decode(self, body):
        d = _load_response(body)
        try:
            content = d["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError("response has no choices[0].message.content") from None
        if isinstance(content, list):
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        if not isinstance(content, str):
            raise TransportError("message content is not text")
        return content

    def _headers(self, key):
        return {"Content-Type": "application/json", "Authorization": f"Bearer {key}"}


class GeminiChat(_Http, Transport):
    """Gemini-style ``models/<model>:generateContent`` endpoint."""

    name = "gemini"

    def __init__(self, model="gemini-1.5-pro",
                 base_url="https://generativelanguage.googleapis.com/v1beta", timeout=120.0):
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def encode(self, messages):
        system = [m["text"] for m in messages if m["role"] == "system"]
        contents = []
        for m in messages:
            if m["role"] == "system":
                continue
            parts = [{"text": m["text"]}] + [
                {"inline_data": {"mime_type": i.media_type, "data": i.data_b64}}
                for i in m["images"]]
            contents.append({"role": "model" if m["role"] == "assistant" else "user",
                             "parts": parts})
        body = {"contents": contents, "generationConfig": {"temperature": 0}}
        if system:
            body["systemInstruction"] = {"parts": [{"text": t} for t in system]}
        return f"{self.base_url}/models/{self.model}:generateContent", _json_bytes(body)

    def decode(self, body):
        d = _load_response(body)
        try:
            parts = d["candidates"][0]["content"]["parts"]
        except (KeyError, IndexError, TypeError):
            raise TransportError("response has no candidates[0].content.parts") from None
        return "".join(p.get("text", "") for p in parts if isinstance(p, dict))

    def _headers(self, key):
        return {"Content-Type": "application/json", "x-goog-api-key": key}


BACKENDS = {"openai": OpenAIChat, "gemini": GeminiChat}


class ReplayTransport(Transport):
    """Test double: encodes like ``backend`` and answers with recorded bodies."""

    name = "replay"

    def __init__(self, responses, backend=None):
        self.backend = backend or OpenAIChat()
        self._responses = [r.encode() if isinstance(r, str) else bytes(r) for r in responses]
        self._lock = threading.Lock()
        self.requests = []

    @classmethod
    def from_texts(cls, texts, backend=None):
        """Wrap plain reply texts in the backend's response envelope."""
        backend = backend or OpenAIChat()
        if isinstance(backend, GeminiChat):
            bodies = [_json_bytes({"candidates": [{"content": {"role": "model",
                                                              "parts": [{"text": t}]}}]})
                      for t in texts]
        else:
            bodies = [_json_bytes({"choices": [{"index": 0, "message": {
                "role": "assistant", "content": t}}]}) for t in texts]
        return cls(bodies, backend)

    @property
    def remaining(self):
        return len(self._responses)

    def encode(self, messages):
        return self.backend.encode(messages)

    def decode(self, body):
        return self.backend.decode(body)

    def post(self, url, body):
        with self._lock:
            self.requests.append(body)
            if not self._responses:
                raise TransportError("replay transport has no recorded response left")
            return self._responses.pop(0)


# --------------------------------------------------------------------------
# propose


_FENCE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n?(.*?)```", re.DOTALL)


def extract_json_text(text):
    """Strip code fences and surrounding prose from a reply."""
    m = _FENCE.search(text)
    if m:
        return m.group(1).strip()
    s = text.strip()
    lo, hi = s.find("{"), s.rfind("}")
    if lo > 0 and hi > lo:
        return s[lo:hi + 1]
    return s


def is_complete(text):
    t = extract_json_text(text).strip().strip("\"'`.").strip()
    return t.lower() == COMPLETE_TOKEN


@dataclass
class ProposeResult:
    proposal: object  # ProposalDocument, RawCurveProposal, or None when complete
    text: str  # the accepted reply after fence stripping
    retries: int
    exchanges: list
    complete: bool = False


def _repair_note(err):
    return (f"That reply could not be used: {err}. Reply again with only the corrected "
            "JSON object, no commentary.")


def propose(bundle, transport, retries=2, allow_complete=False):
    """Send ``bundle``; parse the reply, asking for repairs up to ``retries`` times."""
    messages = bundle.messages()
    parse = parse_proposal if bundle.mode == "template" else parse_raw_proposal
    exchanges = []
    for attempt in range(retries + 1):
        try:
            ex = transport.send(messages)
        except JointFieldError as e:
            e.exchanges = exchanges
            raise
        exchanges.append(ex)
        if allow_complete and is_complete(ex.text):
            return ProposeResult(None, COMPLETE_TOKEN, attempt, exchanges, True)
        body = extract_json_text(ex.text)
        try:
            doc = parse(body)
        except ValidationError as e:
            log.info("attempt %d: unusable reply (%s)", attempt + 1, e)
            if attempt == retries:
                err = UnparseableProposalError(
                    f"no valid proposal after {retries + 1} attempts: {e}", ex.text)
                err.exchanges = exchanges
                raise err from None
            messages = messages + [{"role": "assistant", "text": ex.text, "images": []},
                                   {"role": "user", "text": _repair_note(e), "images": []}]
            continue
        return ProposeResult(doc, body, attempt, exchanges)
    raise AssertionError("unreachable")


# --------------------------------------------------------------------------
# iterate


@dataclass(frozen=True)
class IterationPolicy:
    max_rounds: int = 4
    retries: int = 2
    svg_to_png: object = None  # optional callable(svg_text) -> png bytes

    def __post_init__(self):
        if not (isinstance(self.max_rounds, int) and self.max_rounds >= 1):
            raise ValidationError("max_rounds must be an integer >= 1", "max_rounds")
        if not (isinstance(self.retries, int) and self.retries >= 0):
            raise ValidationError("retries must be a non-negative integer", "retries")


@dataclass
class RoundRecord:
    round: int
    exchanges: list
    retries: int
    complete: bool = False
    proposal_text: str | None = None
    composed_json: str | None = None
    profile_svg: str | None = None
    profile_csv: str | None = None


@dataclass
class IterationResult:
    field: object
    transcript: list
    completed: bool

    @property
    def composed_json(self):
        return serialize_composed(self.field)


def _summary(grid, f):
    regions = stick_regions(grid)
    eqs = equilibria(grid, f)
    parts = []
    parts.append("stick regions (s): " + (", ".join(f"[{a:.3f}, {b:.3f}]" for a, b in regions)
                                          or "none"))
    parts.append("rest points (s): " + (", ".join(f"{e.s:.3f} {e.stability}" for e in eqs
                                                  if e.kind == "root") or "none"))
    return "; ".join(parts) + "."


def write_round(out_dir, joint_name, rec):
    d = Path(out_dir) / "runs" / joint_name / f"round{rec.round}"
    try:
        d.mkdir(parents=True, exist_ok=True)
        last = rec.exchanges[-1] if rec.exchanges else None
        if last is not None:
            (d / "request.json").write_bytes(last.request)
            (d / "response.json").write_bytes(last.response)
        for k, ex in enumerate(rec.exchanges[:-1], start=1):
            (d / f"request.retry{k}.json").write_bytes(ex.request)
            (d / f"response.retry{k}.json").write_bytes(ex.response)
        if rec.proposal_text is not None:
            (d / "proposal.json").write_text(rec.proposal_text.rstrip() + "\n", encoding="utf-8")
        if rec.composed_json is not None:
            (d / "composed.json").write_text(rec.composed_json, encoding="utf-8")
        if rec.profile_svg is not None:
            (d / "profile.svg").write_text(rec.profile_svg, encoding="utf-8")
    except OSError as e:
        raise FileIOError(f"cannot write transcript under {d}: {e.strerror}") from None
    return d


def iterate(ctx, images, transport, policy=None, mode="template", out_dir=None,
            allow_no_images=False):
    """Propose, compile, diagnose and revise until "complete" or ``max_rounds``.

    On failure the exception carries ``transcript`` with every finished round.
    """
    policy = policy or IterationPolicy()
    compile_fn = compile_proposal if mode == "template" else compile_raw
    transcript = []
    current = None
    feedback = None
    completed = False
    try:
        for k in range(1, policy.max_rounds + 1):
            bundle = build_prompt(ctx, images, mode, feedback, allow_no_images)
            try:
                res = propose(bundle, transport, policy.retries, allow_complete=k > 1)
            except JointFieldError as e:
                rec = RoundRecord(k, getattr(e, "exchanges", []), policy.retries)
                transcript.append(rec)
                if out_dir is not None:
                    write_round(out_dir, ctx.joint_name, rec)
                raise
            rec = RoundRecord(k, res.exchanges, res.retries, res.complete)
            transcript.append(rec)
            if res.complete:
                completed = True
                if out_dir is not None:
                    write_round(out_dir, ctx.joint_name, rec)
                break
            f = compile_fn(ctx, res.proposal)
            grid = profile_grid(f)
            ann = Annotations(tuple(equilibria(grid, f)), tuple(stick_regions(grid)), True,
                              title=f"{ctx.asset_name}/{ctx.joint_name} round {k}")
            rec.proposal_text = res.text
            rec.composed_json = serialize_composed(f)
            rec.profile_svg = render_svg(grid, ann)
            coarse = profile_grid(f, FEEDBACK_POINTS)
            rec.profile_csv = coarse.to_csv()
            if out_dir is not None:
                write_round(out_dir, ctx.joint_name, rec)
            current = f
            image = None
            if policy.svg_to_png is not None:
                image = Image.from_bytes(f"round{k}_profile.png",
                                         policy.svg_to_png(rec.profile_svg), "image/png")
            feedback = Feedback(k + 1, res.text, rec.profile_csv, _summary(grid, f), image)
    except JointFieldError as e:
        e.transcript = transcript
        raise
    return IterationResult(current, transcript, completed)
