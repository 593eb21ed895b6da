import json

import pytest

from apa_metrics.cli import cli_main

COMMON = ["--windows", "24", "--duration", "3"]


@pytest.fixture()
def corpus(small_corpus):
    return str(small_corpus)


class TestExitCodes:
    def test_missing_manifest_argument_is_usage_error(self, capsys):
        assert cli_main(["score"]) == 1
        err = capsys.readouterr().err
        assert "usage" in err.lower() or "error" in err.lower()

    def test_unknown_subcommand_is_usage_error(self):
        assert cli_main(["frobnicate"]) == 1

    def test_nonexistent_manifest_is_data_error(self, capsys, tmp_path):
        assert cli_main(["score", str(tmp_path / "no.json"),
                         str(tmp_path / "no.json")] + COMMON) == 2

    def test_single_song_manifest_is_data_error(self, tmp_path, capsys):
        from apa_metrics.synth import generate_corpus
        manifest = generate_corpus(tmp_path / "one", n_songs=1, duration_s=8.0, seed=0)
        code = cli_main(["score", str(manifest), str(manifest), "--windows", "8",
                         "--duration", "2"])
        assert code == 2

    def test_degenerate_anchor_is_numerical_error(self, monkeypatch, corpus, capsys):
        from apa_metrics import cli
        from apa_metrics.errors import DegenerateAnchor

        def boom(*args, **kwargs):
            raise DegenerateAnchor("anchors indistinguishable")

        monkeypatch.setattr(cli, "compute_apa", boom)
        assert cli_main(["score", corpus, corpus] + COMMON) == 3


class TestSynth:
    def test_writes_manifest(self, tmp_path, capsys):
        assert cli_main(["synth", str(tmp_path / "c"), "--songs", "2",
                         "--song-duration", "4"]) == 0
        out = capsys.readouterr().out.strip()
        assert out.endswith("manifest.json")
        manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
        assert len(manifest["songs"]) == 2


class TestScore:
    def test_score_writes_report(self, corpus, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = cli_main(["score", corpus, corpus, "--seed", "3",
                         "--out", str(out)] + COMMON)
        assert code == 0
        report = json.loads(out.read_text())
        assert 0.0 <= report["result"]["apa"] <= 1.0
        assert report["config"]["regime"] == "L0"


class TestEmbedAndFad:
    def test_fad_of_cache_with_itself_is_zero(self, corpus, tmp_path, capsys):
        cache = tmp_path / "r.apae"
        assert cli_main(["embed", corpus, "--out", str(cache)] + COMMON) == 0
        capsys.readouterr()
        assert cli_main(["fad", str(cache), str(cache)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["fad"] <= 1e-8

    def test_fad_between_different_seeds_positive(self, corpus, tmp_path, capsys):
        a, b = tmp_path / "a.apae", tmp_path / "b.apae"
        assert cli_main(["embed", corpus, "--out", str(a), "--seed", "1"] + COMMON) == 0
        assert cli_main(["embed", corpus, "--out", str(b), "--seed", "2"] + COMMON) == 0
        capsys.readouterr()
        assert cli_main(["fad", str(a), str(b)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["fad"] > 0.0

    def test_fad_on_garbage_file_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.apae"
        bad.write_bytes(b"junkjunkjunk")
        assert cli_main(["fad", str(bad), str(bad)]) == 2


class TestValidate:
    def test_default_run_produces_csv_rows(self, corpus, tmp_path, capsys):
        out = tmp_path / "val"
        code = cli_main([
            "validate", corpus, "--transforms", "TRUE,SUBS",
            "--out", str(out), "--seed", "4",
        ] + COMMON)
        assert code == 0
        lines = (tmp_path / "val.csv").read_text().strip().splitlines()
        assert len(lines) == 3  # header + one row per (config, transform)
        report = json.loads((tmp_path / "val.json").read_text())
        assert report["cles"][0]["cles"] is not None

    def test_csv_to_stdout_without_out(self, corpus, capsys):
        code = cli_main(["validate", corpus, "--transforms", "TRUE,SUBS",
                         "--seed", "4"] + COMMON)
        assert code == 0
        head = capsys.readouterr().out.splitlines()[0]
        assert head.startswith("config_id,regime,projection")
