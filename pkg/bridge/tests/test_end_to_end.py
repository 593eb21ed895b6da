"""Acceptance: the engine scores a corpus through the live bridge.

Uses only the primary package's public CLI and the stdio protocol; requires
apa-metrics to be installed alongside this package.
"""

import json
import shutil
import subprocess
import sys

import pytest

from clap_bridge.model import init_checkpoint

APA = shutil.which("apa") or "apa"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    proc = subprocess.run(
        [APA, "synth", str(root), "--songs", "10", "--song-duration", "12"],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    return proc.stdout.strip()


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    return str(init_checkpoint(tmp_path_factory.mktemp("ckpt") / "cm.pt", "CM"))


def test_selftest_passes(checkpoint):
    proc = subprocess.run(
        [sys.executable, "-m", "clap_bridge", "--checkpoint", checkpoint,
         "--layer", "1", "--selftest"],
        capture_output=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr


def test_score_through_live_bridge(corpus, checkpoint, tmp_path):
    out = tmp_path / "report.json"
    bridge_cmd = f"{sys.executable} -m clap_bridge --checkpoint {checkpoint} --layer 1"
    proc = subprocess.run(
        [APA, "score", corpus, corpus,
         "--embedder", "bridge", "--bridge-cmd", bridge_cmd,
         "--windows", "48", "--duration", "5", "--seed", "3",
         "--out", str(out)],
        capture_output=True, text=True, timeout=600,
    )
    assert proc.returncode == 0, proc.stderr
    report = json.loads(out.read_text())
    assert 0.0 <= report["result"]["apa"] <= 1.0
    assert report["config"]["embedder_id"] == "clap:CM:1"
    assert report["counts"]["candidate_windows"] == 48
    # no protocol errors surfaced as warnings or stderr noise
    assert "BridgeError" not in proc.stderr


def test_validation_grid_through_live_bridge(corpus, checkpoint, tmp_path):
    bridge_cmd = f"{sys.executable} -m clap_bridge --checkpoint {checkpoint} --layer 0"
    out = tmp_path / "val"
    proc = subprocess.run(
        [APA, "validate", corpus, "--transforms", "TRUE,SUBS",
         "--embedder", "bridge", "--bridge-cmd", bridge_cmd,
         "--windows", "32", "--duration", "5", "--seed", "4",
         "--out", str(out)],
        capture_output=True, text=True, timeout=600,
    )
    assert proc.returncode == 0, proc.stderr
    rows = (tmp_path / "val.csv").read_text().strip().splitlines()
    assert len(rows) == 3
    payload = json.loads((tmp_path / "val.json").read_text())
    scores = {r["transform"]: r["apa"] for r in payload["rows"]}
    assert scores["TRUE"] > scores["SUBS"]
