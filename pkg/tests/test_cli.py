import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from sketchvos import cli, dataio


def run_cli(*args):
    return cli.main(list(args))


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def gen_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert run_cli("gen-synth", "--out", str(root), "--seqs", "3",
                   "--frames", "6", "--seed", "7") == 0
    return root


def test_gen_synth_writes_sequences_and_echo(gen_root):
    index = dataio.load_dataset(gen_root)
    assert len(index) == 3
    assert (gen_root / "config_echo.json").exists()


def test_gen_synth_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run_cli("gen-synth", "--out", str(tmp_path / d), "--seqs", "2",
                       "--frames", "4", "--seed", "3") == 0
    # the echoed config embeds the differing --out path; compare data dirs only
    digests = []
    for d in ("a", "b"):
        h = hashlib.sha256()
        for sub in ("JPEGImages", "Annotations", "References", "meta.json"):
            p = tmp_path / d / sub
            h.update(tree_digest(p).encode() if p.is_dir() else p.read_bytes())
        digests.append(h.hexdigest())
    assert digests[0] == digests[1]


def test_gen_synth_rejects_bad_object_count(tmp_path, capsys):
    assert run_cli("gen-synth", "--out", str(tmp_path / "x"),
                   "--objects", "9") == 2
    assert "[1, 4]" in capsys.readouterr().err


def test_gen_refs_writes_all_kinds(gen_root):
    assert run_cli("gen-refs", "--data", str(gen_root), "--kinds",
                   "click,box", "--seed", "1") == 0
    for seq in dataio.load_dataset(gen_root):
        for oid in seq.object_ids:
            for kind in ("click", "box"):
                assert seq.reference_path(oid, kind).exists()


def test_gen_refs_unknown_kind(gen_root):
    assert run_cli("gen-refs", "--data", str(gen_root), "--kinds", "doodle") == 2


def test_gen_refs_contour_needs_sketches(tmp_path, capsys):
    cfg = dataio.SynthConfig(n_sequences=1, frames_per_seq=3, n_objects=1,
                             distractor_mode=False)
    dataio.gen_synthetic(cfg, tmp_path / "d", seed=1)
    seq = dataio.load_dataset(tmp_path / "d").sequences[0]
    seq.strokes_path(1).unlink()
    assert run_cli("gen-refs", "--data", str(tmp_path / "d"),
                   "--kinds", "contour") == 2
    assert "sketch" in capsys.readouterr().err


def test_emit_reference_config_round_trips(tmp_path):
    out = tmp_path / "ref.yaml"
    assert run_cli("train", "--emit-config", str(out)) == 0
    cfg = cli.load_run_config(out)
    assert cfg["train"].steps == 500
    assert cfg["train"].fusion.design == "cross_q"
    assert cfg["eval"]["reference_kind"] == "sketch"


def test_unknown_config_key_exits_2(tmp_path, capsys):
    raw = yaml.safe_load(cli.reference_config_text())
    raw["train"]["bogus"] = 1
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(raw))
    assert run_cli("train", "--config", str(path)) == 2
    assert "bogus" in capsys.readouterr().err


def test_unknown_config_section_exits_2(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("model: {}\n")
    assert run_cli("train", "--config", str(path)) == 2


def test_missing_checkpoint_exits_2(tmp_path):
    assert run_cli("eval", "--checkpoint", str(tmp_path / "nope.npz"),
                   "--data", str(tmp_path), "--out", str(tmp_path / "o")) == 2


def test_check_metrics_suite_passes(capsys):
    assert run_cli("check", "--suite", "metrics") == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_train_eval_visualize_round_trip(gen_root, tmp_path):
    raw = yaml.safe_load(cli.reference_config_text())
    raw["data"] = {"root": str(gen_root), "out_dir": str(tmp_path / "run")}
    raw["encoder"] = {"widths": [4, 6, 8, 8], "key_dim": 4, "value_dim": 6,
                      "attn_dim": 8, "decoder_dim": 8}
    raw["fusion"]["attn_dim"] = 8
    raw["train"].update(steps=2, batch_size=1)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    assert run_cli("train", "--config", str(path)) == 0
    ckpt = tmp_path / "run" / "last.npz"
    assert ckpt.exists()
    assert (tmp_path / "run" / "config_echo.json").exists()

    out = tmp_path / "eval"
    assert run_cli("eval", "--checkpoint", str(ckpt), "--data", str(gen_root),
                   "--out", str(out)) == 0
    assert (out / "global.csv").exists()
    first = (out / "global.csv").read_bytes()

    # determinism: a second eval writes identical CSVs
    out2 = tmp_path / "eval2"
    assert run_cli("eval", "--checkpoint", str(ckpt), "--data", str(gen_root),
                   "--out", str(out2)) == 0
    assert (out2 / "global.csv").read_bytes() == first

    vis = tmp_path / "vis"
    assert run_cli("visualize", "--predictions", str(out / "Predictions"),
                   "--data", str(gen_root), "--out", str(vis)) == 0
    seq = dataio.load_dataset(gen_root).sequences[0]
    pngs = sorted((vis / seq.name).glob("*.png"))
    assert len(pngs) == seq.n_frames
