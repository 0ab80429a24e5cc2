"""End-to-end command-line flows on a small synthetic dataset."""

import contextlib
import io
import json

import numpy as np
import pytest

from gesturegen import audio
from gesturegen.cli import EXIT_CODES, main
from gesturegen.data import DataError, Dataset, load_manifest, prepare_dataset
from gesturegen.motion.bvh import read_bvh
from gesturegen.style_space import EmbeddingSet

TINY_MODEL = {"reduced": True, "speech_channels": 8, "speech_dim": 8, "style_dim": 8, "style_channels": 16,
              "fft_channels": 8, "gru_hidden": 16, "init_hidden": 16}
TINY_TRAIN = {"batch_size": 2, "window": 16, "style_min": 24, "style_max": 40, "max_iters": 100, "seed": 5}


def run(*argv):
    """Run the CLI in-process; return (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def ok(*argv):
    code, out, err = run(*argv)
    assert code == 0, err
    return out


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """make-synthetic -> prepare-data -> train (3 iterations) -> encode-style."""
    root = tmp_path_factory.mktemp("cli")
    ok("make-synthetic", root / "data", "--styles", "High", "Low", "Mid", "--heldout", "Mid",
       "--seconds", 6, "--seed", 4)
    ok("prepare-data", root / "data" / "manifest.json", "--out", root / "cache.zegm", "--report", root / "report.txt")
    (root / "cfg.json").write_text(json.dumps(dict(TINY_TRAIN, model=TINY_MODEL)))
    ok("train", "--config", root / "cfg.json", "--cache", root / "cache.zegm", "--out", root / "run", "--iters", 3)
    ok("encode-style", root / "run" / "checkpoint_final.zegc", "--cache", root / "cache.zegm",
       "--out", root / "emb.csv")
    return root


class TestData:
    def test_manifest_and_report(self, work):
        report = (work / "report.txt").read_text()
        assert "High" in report and "Mid" in report
        assert "styles: 3  clips (with mirrors): 6" in report

    def test_cache_round_trip(self, work):
        ds = Dataset.load(work / "cache.zegm")
        fresh = prepare_dataset(work / "data" / "manifest.json")
        assert [r.clip_id for r in ds.records] == [r.clip_id for r in fresh.records]
        for a, b in zip(ds.records, fresh.records):
            np.testing.assert_array_equal(a.pose, b.pose)
            np.testing.assert_array_equal(a.speech, b.speech)
        np.testing.assert_array_equal(ds.stats.std["pose"], fresh.stats.std["pose"])
        assert sorted({r.split for r in ds.records}) == ["heldout", "train"]

    def test_parallel_workers_match(self, work):
        serial = prepare_dataset(work / "data" / "manifest.json")
        parallel = prepare_dataset(work / "data" / "manifest.json", workers=2)
        for a, b in zip(serial.records, parallel.records):
            np.testing.assert_array_equal(a.pose, b.pose)

    def test_missing_file_named(self, work, tmp_path):
        doc = json.loads((work / "data" / "manifest.json").read_text())
        doc["entries"][0]["motion"] = str(work / "data" / "absent.bvh")
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(DataError, match="absent.bvh"):
            load_manifest(tmp_path / "m.json")

    def test_bad_split(self, work, tmp_path):
        doc = json.loads((work / "data" / "manifest.json").read_text())
        doc["entries"][0]["split"] = "validation"
        doc["entries"][0]["motion"] = str(work / "data" / doc["entries"][0]["motion"])
        doc["entries"][0]["audio"] = str(work / "data" / doc["entries"][0]["audio"])
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(DataError, match="validation"):
            load_manifest(tmp_path / "m.json")

    def test_corrupt_bvh_names_file(self, work, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        for f in (work / "data").iterdir():
            (data / f.name).write_bytes(f.read_bytes())
        text = (data / "low_01.bvh").read_text().splitlines()
        (data / "low_01.bvh").write_text("\n".join(text[:-2]) + "\n")
        code, _, err = run("prepare-data", data / "manifest.json", "--out", tmp_path / "c.zegm")
        assert code == EXIT_CODES["data"]
        assert "low_01.bvh" in err and err.startswith("error[data]:") and err.count("\n") == 1

    def test_inspect_cache(self, work):
        out = ok("inspect", work / "cache.zegm")
        assert "clips=6" in out and "Total" in out


class TestTrainCli:
    def test_outputs(self, work):
        lines = (work / "run" / "metrics.csv").read_text().splitlines()
        assert len(lines) == 4
        out = ok("inspect", work / "run" / "checkpoint_final.zegc")
        assert "iteration: 3" in out and "parameters:" in out

    def test_invalid_field_named(self, work, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({"batch_size": 0}))
        code, _, err = run("train", "--config", tmp_path / "cfg.json", "--cache", work / "cache.zegm",
                           "--out", tmp_path / "run")
        assert code == EXIT_CODES["config"] and "batch_size" in err

    def test_unknown_model_field_named(self, work, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({"model": {"gru_units": 3}}))
        code, _, err = run("train", "--config", tmp_path / "cfg.json", "--cache", work / "cache.zegm",
                           "--out", tmp_path / "run")
        assert code == EXIT_CODES["config"] and "gru_units" in err

    def test_resume_continues(self, work, tmp_path):
        ok("train", "--resume", work / "run" / "checkpoint_final.zegc", "--cache", work / "cache.zegm",
           "--out", tmp_path / "more", "--iters", 2)
        assert "iteration: 5" in ok("inspect", tmp_path / "more" / "checkpoint_final.zegc")

    def test_missing_cache(self, tmp_path):
        code, _, err = run("train", "--cache", tmp_path / "none.zegm", "--out", tmp_path / "r")
        assert code == EXIT_CODES["input"] and "none.zegm" in err


class TestStyleCli:
    def test_encode_style(self, work):
        store = EmbeddingSet.load_csv(work / "emb.csv")
        assert store.ids == ["high_00@0", "low_01@0", "mid_02@0"]
        assert store.matrix.shape == (3, 8) and np.isfinite(store.matrix).all()

    def test_pca_fit_and_edit(self, work, tmp_path):
        ok("pca-fit", work / "emb.csv", "--k", 2, "--out", tmp_path / "pca.json", "--scatter", tmp_path / "s.csv")
        assert len((tmp_path / "s.csv").read_text().splitlines()) == 4
        name = ok("pca-edit", work / "emb.csv", tmp_path / "pca.json", "--id", "high_00@0", "--style", "High",
                  "--out", tmp_path / "edited.csv").strip()
        edited = EmbeddingSet.load_csv(tmp_path / "edited.csv")
        assert edited.ids[-1] == name and len(edited) == 4
        code, _, err = run("pca-edit", work / "emb.csv", tmp_path / "pca.json", "--id", "high_00@0",
                           "--style", "Oration")
        assert code == EXIT_CODES["style"] and "Oration" in err

    def test_pca_rank_error(self, work, tmp_path):
        code, _, err = run("pca-fit", work / "emb.csv", "--k", 5, "--out", tmp_path / "pca.json")
        assert code == EXIT_CODES["style"]


@pytest.fixture(scope="module")
def speech_wav(tmp_path_factory):
    """Two seconds of amplitude-modulated tone at 16 kHz."""
    path = tmp_path_factory.mktemp("wav") / "speech.wav"
    t = np.arange(32000) / 16000.0
    wave = 0.3 * np.sin(2 * np.pi * 180 * t) * (0.5 + 0.5 * np.sin(2 * np.pi * 3 * t))
    path.write_bytes(audio.write_wav(audio.Waveform(wave, 16000)))
    return path


class TestGenerateCli:
    def test_style_clip_frame_count(self, work, speech_wav, tmp_path):
        out = tmp_path / "g.bvh"
        _, _, err = run("generate", work / "run" / "checkpoint_final.zegc", speech_wav, "--out", out,
                        "--style-clip", work / "data" / "mid_02.bvh")
        assert err.startswith("seed: ")
        clip = read_bvh(out)
        assert abs(clip.num_frames - 120) <= 1
        assert np.isfinite(clip.positions).all()

    def test_deterministic_repeatable(self, work, speech_wav, tmp_path):
        args = ("generate", work / "run" / "checkpoint_final.zegc", speech_wav, "--style-clip",
                work / "data" / "high_00.bvh", "--deterministic", "--frames", 40)
        ok(*args, "--out", tmp_path / "a.bvh")
        ok(*args, "--out", tmp_path / "b.bvh")
        assert (tmp_path / "a.bvh").read_text() == (tmp_path / "b.bvh").read_text()

    def test_embedding_and_blend(self, work, speech_wav, tmp_path):
        ckpt = work / "run" / "checkpoint_final.zegc"
        ok("generate", ckpt, speech_wav, "--out", tmp_path / "e.bvh", "--embeddings", work / "emb.csv",
           "--embedding", "low_01@0", "--frames", 20, "--seed", 1)
        ok("generate", ckpt, speech_wav, "--out", tmp_path / "b.bvh", "--embeddings", work / "emb.csv",
           "--blend", "low_01@0:0.25,high_00@0:0.75", "--frames", 20, "--seed", 1)
        code, _, err = run("generate", ckpt, speech_wav, "--out", tmp_path / "x.bvh", "--embeddings",
                           work / "emb.csv", "--blend", "low_01@0:0.5,high_00@0:0.6", "--seed", 1)
        assert code == EXIT_CODES["style"] and "sum" in err

    def test_missing_style_source(self, work, speech_wav, tmp_path):
        code, _, _ = run("generate", work / "run" / "checkpoint_final.zegc", speech_wav, "--out",
                         tmp_path / "x.bvh", "--seed", 0)
        assert code == EXIT_CODES["usage"]

    def test_bad_audio(self, work, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"RIFF0000WAVEjunk")
        code, _, err = run("generate", work / "run" / "checkpoint_final.zegc", tmp_path / "bad.wav", "--out",
                           tmp_path / "x.bvh", "--style-clip", work / "data" / "high_00.bvh", "--seed", 0)
        assert code == EXIT_CODES["audio"] and "bad.wav" in err


def test_inspect_full_config():
    out = ok("inspect", "--full-config")
    total = int(out.split("parameters: ")[1].split()[0])
    assert 12.5e6 <= total <= 50e6


def test_usage_error():
    code, _, err = run("frobnicate")
    assert code == EXIT_CODES["usage"] and err.startswith("error[usage]:")
