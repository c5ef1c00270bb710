import numpy as np
import pytest

from masc import geometry
from masc.cli import main

import oracles


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    rc = main(["synth", "--out", str(out), "--ranges", "2", "--rows", "3", "--plants", "10",
               "--double-rate", "0.1", "--seed", "4", "--frame-size", "250x200", "--stride", "150x100", "-q"])
    assert rc == 0
    return out


def test_synth_outputs(synth_dir):
    for name in ("field.png", "truth.csv", "truth_global.txt", "layout_truth.json"):
        assert (synth_dir / name).is_file()
    frames = sorted((synth_dir / "frames").glob("frame_*.png"))
    assert len(frames) > 4
    assert len(list((synth_dir / "frames").glob("hom_*.txt"))) == len(frames)


def test_mosaic_counts_match_truth(synth_dir, tmp_path, capsys):
    out = tmp_path / "m"
    rc = main(["mosaic", "--image", str(synth_dir / "field.png"), "--out", str(out), "--patch-size", "256",
               "--overlap", "0.2", "--overlay", "--truth", str(synth_dir / "truth.csv"), "-q"])
    assert rc == 0
    assert (out / "counts.csv").read_text() == (synth_dir / "truth.csv").read_text()
    assert capsys.readouterr().out.strip().splitlines()[-1] == "R2=1.000000"
    for name in ("global.txt", "layout.json", "overlay.png", "eval.csv", "eval_summary.txt", "timings.csv"):
        assert (out / name).is_file()


def test_raw_counts_match_truth(synth_dir, tmp_path, capsys):
    out = tmp_path / "r"
    rc = main(["raw", "--frames", str(synth_dir / "frames"), "--out", str(out), "--render-mosaic",
               "--truth", str(synth_dir / "truth.csv"), "-q"])
    assert rc == 0
    assert (out / "counts.csv").read_text() == (synth_dir / "truth.csv").read_text()
    assert capsys.readouterr().out.strip().endswith("R2=1.000000")
    assert (out / "mosaic.png").is_file()


def test_runs_are_byte_identical(synth_dir, tmp_path):
    outs = []
    for k, workers in enumerate(("1", "4", "1")):
        out = tmp_path / str(k)
        assert main(["mosaic", "--image", str(synth_dir / "field.png"), "--out", str(out), "--patch-size", "200",
                     "--overlap", "0.25", "--workers", workers, "-q"]) == 0
        outs.append(((out / "counts.csv").read_bytes(), (out / "global.txt").read_bytes()))
    assert outs[0] == outs[1] == outs[2]
    r = []
    for k, workers in enumerate(("1", "3")):
        out = tmp_path / f"raw{k}"
        assert main(["raw", "--frames", str(synth_dir / "frames"), "--out", str(out), "--workers", workers, "-q"]) == 0
        r.append(((out / "counts.csv").read_bytes(), (out / "global.txt").read_bytes()))
    assert r[0] == r[1]


def test_dump_stages(synth_dir, tmp_path):
    out = tmp_path / "d"
    assert main(["mosaic", "--image", str(synth_dir / "field.png"), "--out", str(out), "--patch-size", "400",
                 "--dump-stages", "-q"]) == 0
    names = {p.name for p in (out / "stages").iterdir()}
    assert {"patch_0_0_exg.png", "patch_0_0_mask.png", "patch_0_0_distance.png"} <= names


def test_invert_pairwise_flag(synth_dir, tmp_path):
    inv = tmp_path / "inv"
    inv.mkdir()
    for p in (synth_dir / "frames").iterdir():
        if p.name.startswith("hom_"):
            geometry.save_homography(inv / p.name, geometry.invert(geometry.load_homography(p)))
        else:
            (inv / p.name).write_bytes(p.read_bytes())
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["raw", "--frames", str(synth_dir / "frames"), "--out", str(a), "-q"]) == 0
    assert main(["raw", "--frames", str(inv), "--invert-pairwise", "--out", str(b), "-q"]) == 0
    assert (a / "counts.csv").read_text() == (b / "counts.csv").read_text()


def test_frames_without_images_use_box_density(synth_dir, tmp_path):
    bare = tmp_path / "bare"
    bare.mkdir()
    for p in (synth_dir / "frames").glob("*.txt"):
        (bare / p.name).write_bytes(p.read_bytes())
    out = tmp_path / "o"
    assert main(["raw", "--frames", str(bare), "--frame-size", "250x200", "--out", str(out), "-q"]) == 0
    assert (out / "counts.csv").read_text() == (synth_dir / "truth.csv").read_text()


def test_config_file_and_overrides(synth_dir, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# test run\nimage = {synth_dir / 'field.png'}\npatch-size=256\noverlap = 0.2\nquiet=true\n")
    out = tmp_path / "c"
    assert main(["mosaic", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "counts.csv").read_text() == (synth_dir / "truth.csv").read_text()
    # the command line wins: a bad --iou from the flags is still rejected
    assert main(["mosaic", "--config", str(cfg), "--out", str(out), "--iou", "2"]) == 2
    cfg.write_text("colour = red\n")
    assert main(["mosaic", "--config", str(cfg)]) == 2
    assert "unknown option 'colour'" in capsys.readouterr().err
    cfg.write_text("overlay = maybe\n")
    assert main(["mosaic", "--config", str(cfg)]) == 2


def test_output_dir_from_environment(synth_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("MASC_OUT_DIR", str(tmp_path / "envout"))
    assert main(["mosaic", "--image", str(synth_dir / "field.png"), "--patch-size", "400", "-q"]) == 0
    assert (tmp_path / "envout" / "counts.csv").is_file()


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["mosaic", "--image", str(tmp_path / "nope.png")]) == 2
    assert "--image" in capsys.readouterr().err
    assert main(["raw", "--frames", str(tmp_path / "none")]) == 2
    assert "--frames" in capsys.readouterr().err
    assert main(["eval", "--counts", str(tmp_path / "a.csv"), "--truth", str(tmp_path / "b.csv")]) == 2
    assert main(["synth", "--out", str(tmp_path), "--double-rate", "1.5"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["mosaic", "--no-such-flag"])
    assert info.value.code == 2


def test_pipeline_failure_exit_3_names_stage(tmp_path, capsys):
    d = tmp_path / "f"
    d.mkdir()
    (d / "frame_000000.txt").write_text("0 0.5 0.5 0.1 0.1\n")
    (d / "frame_000001.txt").write_text("0 0.5 0.5 0.1 0.1\n")
    geometry.save_homography(d / "hom_000000.txt", geometry.identity())
    (d / "hom_000001.txt").write_text("1 2 0 2 4 0 0 0 1\n")
    assert main(["raw", "--frames", str(d), "--frame-size", "100x100", "-q", "--out", str(tmp_path / "o")]) == 3
    assert "stage 'load' failed" in capsys.readouterr().err
    (d / "hom_000001.txt").write_text("1 0 0 0 1 0 0 0 1\n")
    (d / "frame_000001.txt").write_text("0 0.5 0.5 0.1\n")
    assert main(["raw", "--frames", str(d), "--frame-size", "100x100", "-q", "--out", str(tmp_path / "o")]) == 3
    assert "line 1" in capsys.readouterr().err


def test_eval_subcommand(tmp_path, capsys):
    a = tmp_path / "counts.csv"
    b = tmp_path / "truth.csv"
    a.write_text("range,row,count\n1,1,12\n1,2,18\n1,3,33\n")
    b.write_text("range,row,count\n1,1,10\n1,2,20\n1,3,30\n")
    assert main(["eval", "--counts", str(a), "--truth", str(a), "-q"]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "R2=1.000000"
    assert main(["eval", "--counts", str(a), "--truth", str(b), "-q"]) == 0
    want = oracles.r_squared([10, 20, 30], [12, 18, 33])
    assert capsys.readouterr().out.splitlines()[-1] == f"R2={want:.6f}"
    c = tmp_path / "other.csv"
    c.write_text("range,row,count\n5,1,10\n5,2,20\n")
    assert main(["eval", "--counts", str(a), "--truth", str(c), "-q"]) == 4
    assert np.isclose(float((tmp_path / "eval_summary.txt").read_text().split("\n")[0][3:]), 0.915)
