"""Regenerate the frozen golden files under tests/fixtures.

Only run this after an intentional change to compiled output; the tests
compare against the committed files byte for byte.
"""

import json
import struct
import zlib
from pathlib import Path

from jointfield.compiler import compile_proposal
from jointfield.diag import Annotations, equilibria, profile_grid, render_svg, stick_regions
from jointfield.schema import parse_composed, parse_context, parse_proposal, serialize_composed
from jointfield.vlm import IterationPolicy, ReplayTransport, image_files, iterate

FIX = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
CONV = FIX / "conversation"

OVEN_CONTEXT = {
    "asset_name": "oven_02",
    "joint_name": "door_hinge",
    "joint_type": "revolute",
    "q_min": 0.0,
    "q_max": 1.5708,
    "inertia_eq": 0.35,
    "t_ref": 1.0,
    "gravity": {"xs": [0.0, 0.5, 1.0], "ys": [0.0, 4.24, 6.0]},
}


def _proposal(spring_factor):
    return {
        "joint_summary": {"joint_name": "door_hinge", "joint_type": "revolute",
                          "motion_description": "drop-down oven door hinged at the bottom",
                          "overall_confidence": 0.75},
        "whole_motion_descrptn": "door is held shut by a latch, then a counterbalance "
                                 "spring slows its fall until it rests fully open",
        "gravity_can_be_ignored": False,
        "joint_limit_hint": {"selected_side": "high_end", "elasticity": "weak"},
        "effect_proposals": [
            {"effect_name": "magnetic_return_to_low_end", "start_ratio": 0.0,
             "end_ratio": 0.12,
             "strength": {"conservative": "medium", "friction": "none", "damping": "none"},
             "confidence": 0.6, "reason": "latch visible on the door frame"},
            {"effect_name": "constant_negative_conservative_hinge", "start_ratio": 0.1,
             "end_ratio": 1.0,
             "strength": {"conservative": "medium", "friction": "none", "damping": "none"},
             "refineFactor": {"conservative": spring_factor, "friction": 1.0,
                              "damping": 1.0},
             "confidence": 0.7, "reason": "hinge springs counter the door weight"},
            {"effect_name": "constant_friction_hinge", "start_ratio": 0.0, "end_ratio": 1.0,
             "strength": {"conservative": "none", "friction": "weak", "damping": "none"},
             "confidence": 0.5, "reason": "hinge friction"},
            {"effect_name": "constant_damping_hinge", "start_ratio": 0.0, "end_ratio": 1.0,
             "strength": {"conservative": "none", "friction": "none", "damping": "weak"},
             "confidence": 0.5, "reason": "door swings smoothly"},
        ],
    }


REPLIES = [
    "```json\n" + json.dumps(_proposal(1.0), indent=2) + "\n```\n",
    "The door still falls open too fast, so the counterbalance is raised.\n"
    + json.dumps(_proposal(1.5), indent=2) + "\nThis should hold it near mid-travel.\n",
    "complete",
]


def _png(width, height, rgb):
    """A solid-colour PNG built with zlib only."""
    def chunk(tag, data):
        return (struct.pack(">I", len(data)) + tag + data
                + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF))
    raw = b"".join(b"\x00" + bytes(rgb) * width for _ in range(height))
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))


def golden_proposals():
    out = FIX / "golden"
    out.mkdir(exist_ok=True)
    ctx = parse_context((FIX / "context.json").read_text())
    for p in sorted((FIX / "proposals").glob("*.json")):
        f = compile_proposal(ctx, parse_proposal(p.read_text()))
        (out / f"{p.stem}.composed.json").write_text(serialize_composed(f), encoding="utf-8")
        print("wrote", p.stem)
    f = parse_composed((out / "p04_detent.composed.json").read_text())
    g = profile_grid(f)
    ann = Annotations(tuple(equilibria(g, f)), tuple(stick_regions(g)), True, title="p04")
    (out / "p04_detent.svg").write_text(render_svg(g, ann), encoding="utf-8")


def conversation():
    (CONV / "images").mkdir(parents=True, exist_ok=True)
    (CONV / "responses").mkdir(exist_ok=True)
    (CONV / "context.json").write_text(json.dumps(OVEN_CONTEXT, indent=2) + "\n")
    (CONV / "images" / "closed.png").write_bytes(_png(4, 3, (200, 200, 210)))
    (CONV / "images" / "open.png").write_bytes(_png(4, 3, (90, 90, 100)))
    transport = ReplayTransport.from_texts(REPLIES)
    for k, body in enumerate(transport._responses, start=1):
        (CONV / "responses" / f"round{k}.json").write_bytes(body)
    ctx = parse_context((CONV / "context.json").read_text())
    res = iterate(ctx, image_files(CONV / "images"), transport, IterationPolicy())
    assert res.completed and len(res.transcript) == 3
    (CONV / "final.composed.json").write_text(res.composed_json, encoding="utf-8")
    print("wrote conversation fixture")


def main():
    golden_proposals()
    conversation()


if __name__ == "__main__":
    main()
