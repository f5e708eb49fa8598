import json

import numpy as np
import pytest

from jointfield.compiler import compile_proposal
from jointfield.errors import FileIOError, TransportError, UnparseableProposalError
from jointfield.errors import ValidationError
from jointfield.field import Channel
from jointfield.schema import parse_context, parse_proposal
from jointfield.templates import TEMPLATE_NAMES
from jointfield.vlm import (
    API_KEY_ENV,
    Feedback,
    GeminiChat,
    IterationPolicy,
    OpenAIChat,
    ReplayTransport,
    build_prompt,
    extract_json_text,
    image_files,
    is_complete,
    iterate,
    propose,
)

from conftest import FIXTURES

CONV = FIXTURES / "conversation"
P01 = (FIXTURES / "proposals" / "p01_friction.json").read_text()
P10 = (FIXTURES / "proposals" / "p10_all_channels.json").read_text()
RAW = (FIXTURES / "raw_proposal.json").read_text()


@pytest.fixture
def ctx():
    return parse_context((FIXTURES / "context.json").read_text())


@pytest.fixture
def images():
    return image_files(CONV / "images")


def test_prompt_is_deterministic(ctx, images):
    a = build_prompt(ctx, images)
    b = build_prompt(ctx, images)
    assert a == b
    assert a.user_text.encode() == b.user_text.encode()


def test_template_prompt_lists_every_template(ctx, images):
    text = build_prompt(ctx, images).user_text
    for name in TEMPLATE_NAMES:
        assert f"| {name} |" in text
    assert len(TEMPLATE_NAMES) == 13


def test_raw_prompt_asks_for_control_points(ctx, images):
    text = build_prompt(ctx, images, mode="raw").user_text
    assert "control_points" in text
    assert "| detent_internal |" not in text


def test_feedback_includes_prior_proposal_verbatim(ctx, images):
    fb = Feedback(2, P01, "s,q\n0,0\n", "stick regions (s): none.")
    text = build_prompt(ctx, images, feedback=fb).user_text
    assert P01.rstrip() in text
    assert "s,q\n0,0" in text
    assert "complete" in text


def test_prompt_image_rules(ctx, tmp_path):
    with pytest.raises(ValidationError):
        build_prompt(ctx, [])
    assert build_prompt(ctx, [], allow_no_images=True).images == ()
    with pytest.raises(FileIOError) as e:
        build_prompt(ctx, [tmp_path / "missing.png"])
    assert "missing.png" in str(e.value)
    with pytest.raises(ValidationError):
        build_prompt(ctx, image_files(CONV / "images"), max_bytes=100)


def test_fence_stripping():
    assert extract_json_text("```json\n{\"a\": 1}\n```") == '{"a": 1}'
    assert extract_json_text("```\n{\"a\": 1}\n```") == '{"a": 1}'
    assert extract_json_text("Here you go: {\"a\": 1} hope it helps") == '{"a": 1}'
    assert extract_json_text('{"a": 1}') == '{"a": 1}'
    assert is_complete("complete") and is_complete(" Complete.\n") and is_complete("`complete`")
    assert not is_complete('{"complete": true}')


def test_propose_valid_and_fenced_parse_identically(ctx, images):
    bundle = build_prompt(ctx, images)
    plain = propose(bundle, ReplayTransport.from_texts([P10]))
    fenced = propose(bundle, ReplayTransport.from_texts(["```json\n" + P10 + "```"]))
    assert plain.proposal == fenced.proposal
    assert len(plain.proposal.effect_proposals) == len(json.loads(P10)["effect_proposals"])
    assert plain.retries == 0


def test_propose_repair_round(ctx, images):
    t = ReplayTransport.from_texts(['{"joint_summary": ', P01])
    res = propose(build_prompt(ctx, images), t)
    assert res.retries == 1 and len(res.exchanges) == 2
    second = json.loads(t.requests[1])
    assert second["messages"][-1]["role"] == "user"
    assert "could not be used" in second["messages"][-1]["content"]
    assert second["messages"][-2]["content"] == '{"joint_summary": '


def test_propose_retries_exhausted_carries_raw_text(ctx, images):
    t = ReplayTransport.from_texts(["nope"] * 3)
    with pytest.raises(UnparseableProposalError) as e:
        propose(build_prompt(ctx, images), t, retries=2)
    assert e.value.raw_text == "nope" and t.remaining == 0


def test_propose_raw_mode(ctx, images):
    res = propose(build_prompt(ctx, images, mode="raw"), ReplayTransport.from_texts([RAW]))
    assert Channel.CONSERVATIVE in res.proposal.points


def test_openai_and_gemini_encoding(ctx, images):
    bundle = build_prompt(ctx, images)
    url, body = OpenAIChat(model="m").encode(bundle.messages())
    d = json.loads(body)
    assert url.endswith("/chat/completions") and d["temperature"] == 0
    assert d["messages"][1]["content"][1]["image_url"]["url"].startswith("data:image/png;base64,")
    url, body = GeminiChat(model="g").encode(bundle.messages())
    d = json.loads(body)
    assert url.endswith("/models/g:generateContent")
    assert d["generationConfig"]["temperature"] == 0
    assert d["contents"][0]["parts"][1]["inline_data"]["mime_type"] == "image/png"
    t = ReplayTransport.from_texts([P01], backend=GeminiChat())
    assert propose(bundle, t).proposal == parse_proposal(P01)


def test_missing_api_key_is_a_transport_error(monkeypatch, ctx, images):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    with pytest.raises(TransportError):
        propose(build_prompt(ctx, images), OpenAIChat(base_url="http://127.0.0.1:9"))


def test_http_error_reports_status(monkeypatch, ctx, images):
    import http.server
    import threading

    class H(http.server.BaseHTTPRequestHandler):
        def do_POST(self):
            self.rfile.read(int(self.headers["Content-Length"]))
            self.send_response(429)
            self.end_headers()
            self.wfile.write(b'{"error": "slow down"}')

        def log_message(self, *a):
            pass

    srv = http.server.HTTPServer(("127.0.0.1", 0), H)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    monkeypatch.setenv(API_KEY_ENV, "test-key")
    try:
        with pytest.raises(TransportError) as e:
            propose(build_prompt(ctx, images),
                    OpenAIChat(base_url=f"http://127.0.0.1:{srv.server_port}"))
        assert e.value.status == 429
    finally:
        srv.shutdown()


def test_iterate_stops_on_complete(ctx, images, tmp_path):
    t = ReplayTransport.from_texts([P01, "complete"])
    res = iterate(ctx, images, t, out_dir=tmp_path)
    assert res.completed and len(res.transcript) == 2
    r1 = tmp_path / "runs" / "door_hinge" / "round1"
    for name in ("request.json", "response.json", "proposal.json", "composed.json",
                 "profile.svg"):
        assert (r1 / name).exists()
    assert (tmp_path / "runs" / "door_hinge" / "round2" / "response.json").exists()
    assert (r1 / "composed.json").read_text() == res.composed_json


def test_iterate_max_rounds_one(ctx, images):
    t = ReplayTransport.from_texts([P01, P01, P01])
    res = iterate(ctx, images, t, IterationPolicy(max_rounds=1))
    assert len(res.transcript) == 1 and not res.completed and t.remaining == 2
    with pytest.raises(ValidationError):
        IterationPolicy(max_rounds=0)


def test_iterate_failure_carries_transcript(ctx, images):
    t = ReplayTransport.from_texts([P01, "bad", "bad", "bad"])
    with pytest.raises(UnparseableProposalError) as e:
        iterate(ctx, images, t)
    assert len(e.value.transcript) == 2
    assert e.value.transcript[0].composed_json is not None
    assert len(e.value.transcript[1].exchanges) == 3


def test_refine_factor_scales_peak_exactly(ctx, images):
    d = json.loads(P01)
    d["effect_proposals"][0]["refineFactor"] = {"friction": 2.0}
    t = ReplayTransport.from_texts([P01, json.dumps(d), "complete"])
    res = iterate(ctx, images, t)
    f1 = compile_proposal(ctx, parse_proposal(P01))
    y1 = f1.components[0].curves[Channel.FRICTION].ys
    y2 = res.field.components[0].curves[Channel.FRICTION].ys
    assert np.array_equal(y2, 2.0 * y1)


def test_recorded_conversation_reproduces_final_field(images):
    ctx = parse_context((CONV / "context.json").read_text())
    bodies = [(CONV / "responses" / f"round{k}.json").read_bytes() for k in (1, 2, 3)]
    res = iterate(ctx, images, ReplayTransport(bodies))
    assert res.completed and len(res.transcript) == 3
    assert res.composed_json.encode() == (CONV / "final.composed.json").read_bytes()
