"""Command-line stages: exit codes, reports, determinism, failure isolation."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from scoreforge.cli import ConfigError, PipelineConfig, run_command
from scoreforge.gmfix import NORMALIZED_VELOCITY
from scoreforge.smf import ControlChange, NoteOn, SetTempo, parse_smf


def tree_bytes(root: Path) -> dict:
    return {p.relative_to(root): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline_out(strings_corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    rc = run_command(["pipeline", str(strings_corpus_dir), "--out", str(out),
                      "--seed", "7", "--jobs", "2"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def fixed_raw(raw_corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("fixed_raw")
    rc = run_command(["fix", str(raw_corpus_dir), "--out", str(out)])
    assert rc == 0
    return out


class TestConfig:
    def test_defaults_and_round_trip(self):
        config = PipelineConfig()
        again = PipelineConfig.from_dict(config.to_dict())
        assert again == config

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"master_sede": 3})

    def test_nested_annotation_params(self):
        config = PipelineConfig.from_dict(
            {"annotation": {"tempo_mean": 90.0, "seed": 4}})
        assert config.annotation.tempo_mean == 90.0
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"annotation": {"tempo_mean": -5.0}})

    def test_mode_fields_validated(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"annotate_mode": "fancy"})
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"projection": "vector"})

    def test_from_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"master_seed": 99}))
        assert PipelineConfig.from_file(path).master_seed == 99
        with pytest.raises(ConfigError):
            PipelineConfig.from_file(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        with pytest.raises(ConfigError):
            PipelineConfig.from_file(bad)


class TestFixCommand:
    def test_report_and_outputs(self, fixed_raw, raw_corpus_files):
        report = json.loads((fixed_raw / "fix_report.json").read_text())
        kept = set(report["kept"])
        rejected = set(report["rejected"])
        dropped = {d["dropped"] for d in report["duplicates"]}
        assert kept | rejected | dropped == {p.stem for p in raw_corpus_files}
        assert not kept & rejected
        pairs = {(d["kept"], d["dropped"]) for d in report["duplicates"]}
        assert pairs == {(f"raw_{i:03d}", f"raw_{i:03d}_dup") for i in (7, 21, 33)}
        assert {p.stem for p in fixed_raw.glob("*.mid")} == kept
        for instruments in report["kept"].values():
            assert len(instruments) >= 2  # monotimbral pieces filtered out

    def test_rejections_explained(self, fixed_raw):
        report = json.loads((fixed_raw / "fix_report.json").read_text())
        reasons = " ".join(report["rejected"].values())
        assert "no instrument mapping" in reasons
        assert "monotimbral" in reasons
        for index in (4, 13, 22, 31, 40, 49):  # the planted unknown names
            assert f"raw_{index:03d}" in report["rejected"]

    def test_provenance_written(self, fixed_raw):
        data = json.loads((fixed_raw / "provenance.json").read_text())
        assert data["tool"] == "scoreforge"
        assert data["stage"] == "fix"
        assert "master_seed" in data["config"]

    def test_strict_exit_code(self, raw_corpus_dir, tmp_path):
        rc = run_command(["fix", str(raw_corpus_dir), "--out",
                          str(tmp_path / "out"), "--strict"])
        assert rc == 1

    def test_missing_input_dir(self, tmp_path):
        rc = run_command(["fix", str(tmp_path / "nowhere"), "--out",
                          str(tmp_path / "out")])
        assert rc == 2

    def test_empty_input_dir(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = run_command(["fix", str(empty), "--out", str(tmp_path / "out")])
        assert rc == 2


class TestNormalizeCommand:
    def test_flattens_everything(self, fixed_raw, tmp_path):
        out = tmp_path / "norm"
        assert run_command(["normalize", str(fixed_raw), "--out", str(out)]) == 0
        files = sorted(out.glob("*.mid"))
        assert len(files) == len(list(fixed_raw.glob("*.mid")))
        piece = parse_smf(files[0].read_bytes())
        tempos = [(i, ev) for i, t in enumerate(piece.tracks)
                  for ev in t.events if isinstance(ev, SetTempo)]
        assert tempos == [(0, SetTempo(0, 500000))]
        velocities = {ev.velocity for t in piece.tracks for ev in t.events
                      if isinstance(ev, NoteOn)}
        assert velocities <= {NORMALIZED_VELOCITY}


class TestAnnotateCommand:
    def test_plain_mode_keeps_bytes(self, pipeline_out, tmp_path):
        normalized = pipeline_out / "20_normalized"
        out = tmp_path / "plain"
        rc = run_command(["annotate", str(normalized), "--out", str(out),
                          "--mode", "plain"])
        assert rc == 0
        for path in normalized.glob("*.mid"):
            assert (out / path.name).read_bytes() == path.read_bytes()
            plan = json.loads((out / f"{path.stem}.plan.json").read_text())
            assert plan["mode"] == "plain"

    def test_proposed_mode_deterministic(self, pipeline_out, tmp_path):
        normalized = pipeline_out / "20_normalized"
        out1, out2, out3 = (tmp_path / n for n in ("a", "b", "c"))
        for out, seed in ((out1, "5"), (out2, "5"), (out3, "6")):
            rc = run_command(["annotate", str(normalized), "--out", str(out),
                              "--seed", seed])
            assert rc == 0
        names = sorted(p.name for p in out1.glob("*.mid"))
        assert names
        same = [(out1 / n).read_bytes() == (out2 / n).read_bytes() for n in names]
        assert all(same)
        differ = [(out1 / n).read_bytes() != (out3 / n).read_bytes() for n in names]
        assert any(differ)

    def test_plan_sidecars(self, pipeline_out):
        annotated = pipeline_out / "30_annotated"
        midis = sorted(annotated.glob("*.mid"))
        assert midis
        for path in midis:
            plan = json.loads((annotated / f"{path.stem}.plan.json").read_text())
            assert plan["mode"] == "proposed"
            assert plan["plan"]["tempo"]
            assert plan["plan"]["articulations"]

    def test_missing_tables_isolated_per_piece(self, fixed_raw, tmp_path):
        # raw corpus includes winds; only string tracks have bundled tables
        norm = tmp_path / "norm"
        assert run_command(["normalize", str(fixed_raw), "--out", str(norm)]) == 0
        out = tmp_path / "ann"
        rc = run_command(["annotate", str(norm), "--out", str(out)])
        assert rc == 0  # failures skipped, not fatal
        rc = run_command(["annotate", str(norm), "--out", str(tmp_path / "s"),
                          "--strict"])
        assert rc == 1


class TestStatsCommand:
    def test_totals_are_sums(self, pipeline_out):
        stats = json.loads((pipeline_out / "40_stats" / "stats.json").read_text())
        assert stats["pieces"]
        for name, total in stats["corpus"]["activity_seconds"].items():
            summed = sum(p["activity_seconds"].get(name, 0.0)
                         for p in stats["pieces"].values())
            assert total == pytest.approx(summed, rel=1e-12)
        for piece in stats["pieces"].values():
            assert piece["activity_seconds"]
            assert all(s >= 0 for s in piece["polyphony_seconds"].values())


class TestSplitCommand:
    def test_partition(self, pipeline_out):
        split = json.loads((pipeline_out / "50_split" / "split.json").read_text())
        splits = split["splits"]
        all_ids = sorted(split["assignment"])
        listed = sorted(pid for ids in splits.values() for pid in ids)
        assert listed == all_ids
        assert len(all_ids) == 10
        assert split["ratios"] == [0.7, 0.1, 0.2]
        assert all(split["balance_report"].values())

    def test_custom_ratios(self, pipeline_out, tmp_path):
        annotated = pipeline_out / "30_annotated"
        out = tmp_path / "split"
        rc = run_command(["split", str(annotated), "--out", str(out),
                          "--ratios", "0.5,0.25,0.25"])
        assert rc == 0
        split = json.loads((out / "split.json").read_text())
        assert split["ratios"] == [0.5, 0.25, 0.25]

    def test_bad_ratios_exit_2(self, pipeline_out, tmp_path):
        annotated = pipeline_out / "30_annotated"
        rc = run_command(["split", str(annotated), "--out", str(tmp_path / "x"),
                          "--ratios", "0.5,0.5,0.5"])
        assert rc == 2


class TestManifestCommand:
    def test_manifests_with_plans(self, pipeline_out):
        man_dir = pipeline_out / "60_manifests"
        annotated = pipeline_out / "30_annotated"
        midis = sorted(annotated.glob("*.mid"))
        manifests = sorted(man_dir.glob("*.manifest.json"))
        assert [m.name for m in manifests] == [
            f"{p.stem}.manifest.json" for p in midis]
        data = json.loads(manifests[0].read_text())
        assert data["sample_rate"] == 22050
        stems = {entry["stem"] for entry in data["stems"]}
        assert stems <= {"violin", "viola", "cello", "contrabass"}
        assert len(stems) >= 2
        for entry in data["stems"]:
            for track in entry["tracks"]:
                assert track["schedule"], "plan schedules must be present"
                assert all(step[2] for step in track["schedule"])


@pytest.fixture(scope="module")
def audio_tree(pipeline_out, tmp_path_factory):
    subset = tmp_path_factory.mktemp("subset")
    midis = sorted((pipeline_out / "30_annotated").glob("*.mid"))[:2]
    for path in midis:
        (subset / path.name).write_bytes(path.read_bytes())
    audio = tmp_path_factory.mktemp("audio")
    rc = run_command(["synth-test", str(subset), "--out", str(audio)])
    assert rc == 0
    return audio


class TestSynthAndEval:
    def test_stems_and_mixture_written(self, audio_tree):
        piece_dirs = sorted(p for p in audio_tree.iterdir() if p.is_dir())
        assert len(piece_dirs) == 2
        for piece_dir in piece_dirs:
            wavs = {p.stem for p in piece_dir.glob("*.wav")}
            assert "mixture" in wavs
            assert len(wavs) >= 3  # at least two stems plus the mixture
        report = json.loads((audio_tree / "synth_report.json").read_text())
        assert set(report["pieces"]) == {p.name for p in piece_dirs}

    def test_mixture_is_exact_stem_sum(self, audio_tree):
        from scoreforge.audio import read_wav
        piece_dir = sorted(p for p in audio_tree.iterdir() if p.is_dir())[0]
        stems = [read_wav(p).samples for p in sorted(piece_dir.glob("*.wav"))
                 if p.stem != "mixture"]
        mixture = read_wav(piece_dir / "mixture.wav").samples
        total = np.zeros_like(mixture)
        for stem in stems:
            total[:len(stem)] += stem
        assert np.array_equal(total.astype(np.float32),
                              mixture.astype(np.float32))

    def test_eval_self_estimates_hit_cap(self, audio_tree, tmp_path):
        out = tmp_path / "eval_perfect"
        rc = run_command(["eval", str(audio_tree), "--out", str(out),
                          "--estimates", str(audio_tree)])
        assert rc == 0
        report = json.loads((out / "eval_report.json").read_text())
        assert report["corpus_medians"]
        assert all(v == 100.0 for v in report["corpus_medians"].values())

    def test_eval_mixture_fallback(self, audio_tree, tmp_path):
        out = tmp_path / "eval_mix"
        rc = run_command(["eval", str(audio_tree), "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "eval_report.json").read_text())
        for value in report["corpus_medians"].values():
            assert value < 30.0  # the raw mixture is a poor estimate

    def test_eval_empty_tree(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = run_command(["eval", str(empty), "--out", str(tmp_path / "o")])
        assert rc == 2


class TestPipeline:
    def test_all_stages_present(self, pipeline_out):
        names = {p.name for p in pipeline_out.iterdir() if p.is_dir()}
        assert names == {"10_fixed", "20_normalized", "30_annotated",
                         "40_stats", "50_split", "60_manifests"}
        for name in names:
            prov = json.loads((pipeline_out / name / "provenance.json").read_text())
            assert prov["config"]["master_seed"] == 7

    def test_rerun_identical(self, strings_corpus_dir, pipeline_out,
                             tmp_path_factory):
        again = tmp_path_factory.mktemp("again")
        rc = run_command(["pipeline", str(strings_corpus_dir), "--out",
                          str(again), "--seed", "7", "--jobs", "1"])
        assert rc == 0
        first = tree_bytes(pipeline_out)
        second = tree_bytes(again)
        assert set(first) == set(second)
        assert all(first[k] == second[k] for k in first)

    def test_json_outputs_are_canonical(self, pipeline_out):
        for path in pipeline_out.rglob("*.json"):
            text = path.read_text()
            assert text.endswith("\n")
            data = json.loads(text)
            assert text == json.dumps(data, indent=2, sort_keys=True) + "\n"

    def test_missing_corpus_dir(self, tmp_path):
        rc = run_command(["pipeline", str(tmp_path / "nope"), "--out",
                          str(tmp_path / "out")])
        assert rc == 2

    def test_paths_from_config(self, strings_corpus_dir, tmp_path):
        config = tmp_path / "config.json"
        out = tmp_path / "run"
        config.write_text(json.dumps({"corpus_dir": str(strings_corpus_dir),
                                      "output_dir": str(out)}))
        assert run_command(["pipeline", "--config", str(config)]) == 0
        assert (out / "60_manifests" / "provenance.json").exists()
        # neither a positional path nor corpus_dir is a config error
        empty = tmp_path / "empty.json"
        empty.write_text("{}")
        assert run_command(["pipeline", "--config", str(empty)]) == 2


class TestEntryPoints:
    def test_module_help(self):
        proc = subprocess.run([sys.executable, "-m", "scoreforge.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for name in ("fix", "normalize", "annotate", "stats", "split",
                     "manifest", "synth-test", "eval", "pipeline"):
            assert name in proc.stdout

    def test_console_script(self):
        import shutil
        exe = shutil.which("scoreforge")
        if exe is None:
            pytest.skip("console script not on PATH")
        proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
