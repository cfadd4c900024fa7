import numpy as np
import pytest

from cffont.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from cffont.glyphgen import GlyphImage, read_pgm, write_pgm

SMALL = ["--set", "image_size=24", "--set", "n_fonts=8", "--set", "n_heldout=2", "--set", "basis_size=2",
         "--set", "content_dim=8", "--set", "style_dim=4", "--set", "stage1_iters=40",
         "--set", "stage2_iters=20", "--set", "batch_size=8", "--set", "isr_epochs=2"]


def pgm(path, pixels):
    write_pgm(GlyphImage(np.asarray(pixels, dtype=np.float64)), path)
    return str(path)


def point_image(size, r, c):
    img = np.zeros((size, size))
    img[r, c] = 1.0
    return img


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    import os
    for key in list(os.environ):
        if key.startswith("CFK_"):
            monkeypatch.delenv(key)


def test_pcl_shift_example(tmp_path, capsys):
    a = pgm(tmp_path / "a.pgm", point_image(80, 40, 40))
    b = pgm(tmp_path / "b.pgm", point_image(80, 40, 43))
    assert main(["pcl", a, b, "--directions", "1"]) == EXIT_OK
    assert abs(float(capsys.readouterr().out) - 3.0) <= 1e-9


def test_project_output(tmp_path, capsys):
    a = pgm(tmp_path / "a.pgm", point_image(9, 4, 4))
    assert main(["project", a, "--directions", "2"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "direction\ttheta\tbin\tvalue"
    assert len(lines) == 1 + 2 * 13
    ones = [line for line in lines[1:] if float(line.split("\t")[3]) == 1.0]
    assert [line.split("\t")[2] for line in ones] == ["6", "6"]


def test_invalid_input_exit_codes(tmp_path, capsys):
    a = pgm(tmp_path / "a.pgm", point_image(12, 4, 4))
    b = pgm(tmp_path / "b.pgm", point_image(13, 4, 4))
    (tmp_path / "junk.pgm").write_bytes(b"not an image")
    assert main(["pcl", a, str(tmp_path / "missing.pgm")]) == EXIT_INVALID
    assert main(["pcl", a, b]) == EXIT_INVALID
    assert main(["project", str(tmp_path / "junk.pgm")]) == EXIT_INVALID
    assert main(["pcl", a]) == EXIT_INVALID
    assert main(["pipeline", "--set", "nope=1"]) == EXIT_INVALID
    assert main(["pipeline", "--set", "tau=-1"]) == EXIT_INVALID
    assert main(["pipeline", "--until", "never"]) == EXIT_INVALID
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_INVALID


def test_numeric_failure_exit_code(tmp_path):
    a = pgm(tmp_path / "a.pgm", np.zeros((12, 12)))
    b = pgm(tmp_path / "b.pgm", point_image(12, 4, 4))
    assert main(["pcl", a, b]) == EXIT_RUNTIME


def test_missing_stage_artifacts_are_invalid_input(tmp_path):
    out = str(tmp_path / "run")
    for cmd in (["basis"], ["fuse-weights"], ["isr"], ["ablation"], ["eval"], ["train", "--stage", "2"]):
        assert main(cmd + ["--set", f"out_dir={out}"]) == EXIT_INVALID, cmd


def test_eval_pairs(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(16, 16))
    pgm(tmp_path / "g1.pgm", x)
    pgm(tmp_path / "t1.pgm", x)
    pgm(tmp_path / "g2.pgm", np.zeros((16, 16)))
    pgm(tmp_path / "t2.pgm", np.ones((16, 16)))
    pairs = tmp_path / "pairs.tsv"
    pairs.write_text("generated\ttruth\ng1.pgm\tt1.pgm\ng2.pgm\tt2.pgm\n")
    assert main(["eval", "--pairs", str(pairs)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    same, diff = lines[1].split("\t"), lines[2].split("\t")
    assert same[0] == "g1.pgm" and float(same[1]) == 0.0 and abs(float(same[3]) - 1.0) <= 1e-9
    assert float(diff[1]) == 1.0 and float(diff[2]) == 1.0
    assert lines[3].startswith("MEAN[n=2]")
    (tmp_path / "bad.tsv").write_text("only-one-column\n")
    assert main(["eval", "--pairs", str(tmp_path / "bad.tsv")]) == EXIT_INVALID


@pytest.mark.parametrize("metric", ["l1", "pc-wdl", "pc-kl"])
def test_retrieve_query_is_first(tmp_path, capsys, metric):
    rng = np.random.default_rng(1)
    cand = tmp_path / "cands"
    cand.mkdir()
    imgs = [rng.uniform(size=(16, 16)) * (rng.uniform(size=(16, 16)) < 0.4) for _ in range(4)]
    for i, im in enumerate(imgs):
        pgm(cand / f"c{i}.pgm", im)
    q = cand / "c2.pgm"
    assert main(["retrieve", "--query", str(q), "--candidates", str(cand), "--metric", metric,
                 "--k", "99"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == f"rank\tcandidate\t{metric}"
    assert lines[1].split("\t")[1] == "c2" and float(lines[1].split("\t")[2]) == 0.0
    assert len(lines) == 5


def test_retrieve_tsv_candidates_and_errors(tmp_path, capsys):
    a = pgm(tmp_path / "a.pgm", point_image(12, 3, 3))
    pgm(tmp_path / "b.pgm", point_image(12, 3, 5))
    (tmp_path / "c.tsv").write_text("first\ta.pgm\nsecond\tb.pgm\n")
    assert main(["retrieve", "--query", a, "--candidates", str(tmp_path / "c.tsv"), "--k", "1"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[1].split("\t")[1] == "first"
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["retrieve", "--query", a, "--candidates", str(empty)]) == EXIT_INVALID
    assert main(["retrieve", "--query", a]) == EXIT_INVALID


def test_grad_check_subcommand(capsys):
    assert main(["pcl", "--grad-check", "--cases", "2"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("check\tcoords")
    assert [line.split("\t")[0] for line in out[1:]] == ["pc-wdl", "pc-kl"]
    assert all(line.endswith("PASS") for line in out[1:])


def test_config_file_env_and_set(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"out_dir = {tmp_path / 'from_file'}\nimage_size = 16\nn_fonts = 3\nn_heldout = 1\n"
                   "basis_size = 1\n")
    assert main(["--config", str(cfg), "gen-dataset"]) == EXIT_OK
    assert read_pgm(tmp_path / "from_file" / "dataset" / "data" / "f000" / "A.pgm").shape == (16, 16)
    monkeypatch.setenv("CFK_IMAGE_SIZE", "20")
    assert main(["gen-dataset", "--config", str(cfg), "--out", str(tmp_path / "env")]) == EXIT_OK
    assert read_pgm(tmp_path / "env" / "data" / "f000" / "A.pgm").shape == (20, 20)
    assert main(["gen-dataset", "--config", str(cfg), "--set", "image_size=24",
                 "--out", str(tmp_path / "set")]) == EXIT_OK
    assert read_pgm(tmp_path / "set" / "data" / "f000" / "A.pgm").shape == (24, 24)
    # refuses to overwrite
    assert main(["gen-dataset", "--config", str(cfg), "--out", str(tmp_path / "set")]) == EXIT_INVALID


def test_full_small_workflow(tmp_path, capsys):
    common = SMALL + ["--set", f"out_dir={tmp_path / 'run'}"]
    assert main(["pipeline"] + common) == EXIT_OK
    assert "(60 training iterations run)" in capsys.readouterr().out
    assert main(["pipeline"] + common) == EXIT_OK
    assert "(0 training iterations run)" in capsys.readouterr().out

    assert main(["basis"] + common) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "rank\tfont_id\tcluster_size" and len(lines) == 3

    assert main(["fuse-weights", "--tau", "0.5", "--out", str(tmp_path / "w.tsv")] + common) == EXIT_OK
    assert len((tmp_path / "w.tsv").read_text().splitlines()) == 9

    assert main(["isr", "--font", "f007", "--out", str(tmp_path / "s.cfsv")] + common) == EXIT_OK
    trace = capsys.readouterr().out.splitlines()
    assert trace[0] == "epoch\tloss" and len(trace) == 4
    assert (tmp_path / "s.cfsv").read_bytes()[:4] == b"CFSV"
    assert main(["isr", "--font", "nobody"] + common) == EXIT_INVALID

    assert main(["ablation", "--out", str(tmp_path / "abl.tsv")] + common) == EXIT_OK
    rows = (tmp_path / "abl.tsv").read_text().splitlines()
    assert rows[0] == "condition\tfont_id\tl1\trmse\tssim"
    assert {r.split("\t")[0] for r in rows[1:]} == {"source", "retrieval", "fusion"}
    assert main(["ablation", "--tau", "0"] + common) == EXIT_INVALID

    assert main(["train", "--stage", "1"] + common) == EXIT_OK
    assert "stage1: 40 iterations" in capsys.readouterr().out
    assert main(["eval"] + common) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[-1].startswith("MEAN[n=20]")
