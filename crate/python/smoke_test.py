"""Smoke test for the Python bindings.

Build the extension first, then run this script:

    cargo build --release -p teleop-py
    python3 python/smoke_test.py

The shared library is looked up in target/release, then target/debug, unless
TELEOP_PY_LIB points at it.
"""

import importlib.util
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "core" / "fixtures"


def find_library():
    env = os.environ.get("TELEOP_PY_LIB")
    if env:
        return Path(env)
    for profile in ("release", "debug"):
        candidate = ROOT / "target" / profile / "libteleop.so"
        if candidate.exists():
            return candidate
    sys.exit("libteleop.so not found; run `cargo build --release -p teleop-py`")


def load_module():
    tmp = Path(tempfile.mkdtemp())
    target = tmp / "teleop.so"
    shutil.copy(find_library(), target)
    spec = importlib.util.spec_from_file_location("teleop", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    teleop = load_module()
    assert teleop.CLASSES == ["Move", "Angle", "Grab", "NoGesture"], teleop.CLASSES

    hand = teleop.generate_sample("Grab", 7, 0.0)
    assert len(hand) == 21
    features = teleop.feature_vector(hand)
    assert len(features) == teleop.FEATURE_LEN == 288

    # features ignore where the hand is and how large it appears
    moved = [[2 * x + 0.1, 2 * y - 0.3, 2 * z] for x, y, z in hand]
    drift = max(abs(a - b) for a, b in zip(features, teleop.feature_vector(moved)))
    assert drift < 1e-9, drift

    clf = teleop.Classifier(str(FIXTURES / "model.gbdt"))
    for name in teleop.CLASSES:
        sample = teleop.generate_sample(name, 3, 0.02)
        proba = clf.predict_proba(sample)
        assert abs(sum(proba) - 1.0) < 1e-12
        assert clf.classify(sample) == name, (name, proba)

    commands = clf.replay((FIXTURES / "grab.jsonl").read_text())
    assert commands == (FIXTURES / "grab_commands.jsonl").read_text()
    first = json.loads(commands.splitlines()[0])
    assert first["cmd"] == {"kind": "gripper_set", "opening": 0.0}, first

    pos, quat = teleop.forward_kinematics([0.0] * 6)
    assert max(abs(a - b) for a, b in zip(pos, [-1.184, -0.256, 0.012])) < 1e-12, pos
    assert quat[0] >= 0.0

    msg = b'{"v":1,"type":"join","ts":5,"payload":{"session":"s","user":"u"}}'
    kind, canonical = teleop.canonical_message(msg)
    assert kind == "join" and bytes(canonical) == msg
    for bad, code in [(b'{"v":2,"type":"join","ts":0,"payload":{}}', "unsupported-version"),
                      (b'{"v":1,"type":"dance","ts":0,"payload":{}}', "unknown-type"),
                      (b"nope", "malformed-message")]:
        try:
            teleop.canonical_message(bad)
        except ValueError as e:
            assert str(e).startswith(code), e
        else:
            raise AssertionError(f"{bad!r} accepted")

    print("python bindings ok")


if __name__ == "__main__":
    main()
