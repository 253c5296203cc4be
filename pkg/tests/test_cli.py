import argparse

import pytest

from dualfd import cli
from dualfd.mesh import load


def test_parse_levels():
    assert cli.parse_levels("2..4") == [2, 3, 4]
    assert cli.parse_levels("1,3") == [1, 3]
    with pytest.raises(argparse.ArgumentTypeError):
        cli.parse_levels("4..2")
    with pytest.raises(argparse.ArgumentTypeError):
        cli.parse_levels("a,b")


def test_read_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# study defaults\nmesh = pentagon\nfit-last = 2  # inline\n")
    assert cli.read_config(p) == {"mesh": "pentagon", "fit_last": "2"}


def test_mesh_commands(tmp_path, capsys):
    base, fine = tmp_path / "b.dmesh", tmp_path / "f.dmesh"
    assert cli.main(["mesh", "gen", "--kind", "pentagon", "--out", str(base)]) == 0
    assert cli.main(["mesh", "refine", str(base), "--times", "1", "--out", str(fine)]) == 0
    assert load(fine).n_vertices > load(base).n_vertices
    assert cli.main(["mesh", "validate", str(fine)]) == 0
    assert "valid" in capsys.readouterr().out


def test_mesh_convert_round_trip(tmp_path):
    pytest.importorskip("meshio")
    base = tmp_path / "b.dmesh"
    cli.main(["mesh", "gen", "--kind", "triangle", "--out", str(base)])
    assert cli.main(["mesh", "convert", str(base), str(tmp_path / "b.vtk")]) == 0
    assert cli.main(["mesh", "convert", str(tmp_path / "b.vtk"), str(tmp_path / "c.dmesh")]) == 0
    a, b = load(base), load(tmp_path / "c.dmesh")
    assert sorted(map(tuple, a.faces)) == sorted(map(tuple, b.faces))


def test_bad_mesh_file_exits_2(tmp_path):
    p = tmp_path / "bad.dmesh"
    p.write_text("v 0 0\nf 1 2 3\n")
    assert cli.main(["mesh", "validate", str(p)]) == 2


def test_study_gate_and_csv(tmp_path):
    out = tmp_path / "p.csv"
    argv = ["study", "--problem", "poisson9", "--mesh", "regular-plane", "--refinements", "1..3",
            "--out", str(out)]
    assert cli.main(argv + ["--expect", "2", "--tol", "0.5"]) == 0
    assert out.read_text().startswith("n,error\n1,")
    assert cli.main(argv + ["--expect", "6"]) == 1


def test_config_presets_flags(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("refinements = 0..1\nmesh = triangle\n")
    assert cli.main(["--config", str(cfg), "diff2d"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("n,dx,dy,dxx,dxy,dyy\n0,")
    assert "\n1," in text and "\n2," not in text


def test_diff1d_and_eigs(tmp_path):
    assert cli.main(["diff1d", "--out-reg", str(tmp_path / "r.csv"),
                     "--out-irreg", str(tmp_path / "i.csv")]) == 0
    assert (tmp_path / "i.csv").read_text().startswith("n,irreg1")
    assert cli.main(["eigs", "--mesh", "regular-plane", "--refinements", "1",
                     "--out", str(tmp_path / "e.csv")]) == 0
    assert cli.main(["eigs", "--mesh", "regular-plane", "--refinements", "3"]) == 1
