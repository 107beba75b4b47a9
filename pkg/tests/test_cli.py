import os

import numpy as np
import pytest

import _meshgen as mg
from speccorr import load_mesh, save_mesh
from speccorr.cli import (build_config, discover_pairs, main,
                          read_correspondence, read_config_file)

CFG_TEXT = """\
# compact settings for the test meshes
n_eigs = 40
n_candidates = 40
skm_points = 300
fskm_points = 400
n_iterations = 6
coarse_faces = 700
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    mesh = mg.bumpy_sphere(3)
    moved, truth = mg.rigid_permuted_copy(mesh, seed=3)
    save_mesh(mesh, root / "shape_x.off")
    save_mesh(moved, root / "shape_y.off")
    (root / "small.cfg").write_text(CFG_TEXT)
    return root, mesh, moved, truth


def run(argv):
    return main([str(a) for a in argv])


def test_config_file_parsing(workdir):
    root, *_ = workdir
    values = read_config_file(str(root / "small.cfg"))
    assert values == {"n_eigs": 40, "n_candidates": 40, "skm_points": 300,
                      "fskm_points": 400, "n_iterations": 6,
                      "coarse_faces": 700}


def test_config_file_unknown_key(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_modes = 7\n")
    from speccorr.cli import UsageError
    with pytest.raises(UsageError, match="unknown option"):
        read_config_file(str(bad))


def test_build_config_cli_overrides(workdir):
    root, *_ = workdir

    class Args:
        config = str(root / "small.cfg")
        n_eigs = 55
        seed = 4

    cfg = build_config(Args())
    assert cfg.n_eigs == 55
    assert cfg.seed == 4
    assert cfg.skm_points == 300


def test_spectrum_cache_and_corrupt_recompute(workdir, tmp_path, capsys):
    root, *_ = workdir
    out = tmp_path / "x.spec"
    assert run(["spectrum", root / "shape_x.off", "--out", out,
                "--n-eigs", 30]) == 0
    assert out.exists()
    capsys.readouterr()
    assert run(["spectrum", root / "shape_x.off", "--out", out,
                "--n-eigs", 30]) == 0
    assert "cache hit" in capsys.readouterr().out
    # corrupt the cache; the command recomputes instead of failing
    data = out.read_bytes()
    out.write_bytes(data[:len(data) // 2])
    assert run(["spectrum", root / "shape_x.off", "--out", out,
                "--n-eigs", 30]) == 0
    assert "recomputing" in capsys.readouterr().out
    assert out.read_bytes() == data


def test_correspond_end_to_end(workdir, tmp_path):
    root, mesh, moved, truth = workdir
    out = tmp_path / "pair.corr"
    code = run(["correspond", root / "shape_x.off", root / "shape_y.off",
                "--out", out, "--config", root / "small.cfg",
                "--cache-dir", tmp_path / "cache"])
    assert code == 0
    corr = read_correspondence(str(out))
    assert (corr.mapping == truth).mean() >= 0.99
    manifest = out.with_suffix(".corr.manifest.json")
    assert manifest.exists()
    import json
    info = json.loads(manifest.read_text())
    assert info["config"]["n_eigs"] == 40
    assert info["quality"] > 0.9
    assert (tmp_path / "cache").is_dir()
    assert any(p.endswith(".spec")
               for p in os.listdir(tmp_path / "cache"))


def test_correspond_deterministic_bytes(workdir, tmp_path):
    root, *_ = workdir
    outs = []
    for name in ("a.corr", "b.corr"):
        out = tmp_path / name
        assert run(["correspond", root / "shape_x.off", root / "shape_y.off",
                    "--out", out, "--config", root / "small.cfg",
                    "--seed", 0]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_correspond_missing_file(workdir, tmp_path, capsys):
    root, *_ = workdir
    code = run(["correspond", root / "no_such.off", root / "shape_y.off",
                "--out", tmp_path / "x.corr"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_discover_pairs(tmp_path):
    for name in ("cat_0.off", "cat_1.off", "cat_2.off", "dog0.ply",
                 "dog3.ply", "notes.txt", "lonely_1.obj"):
        (tmp_path / name).write_text("")
    pairs = discover_pairs(str(tmp_path))
    labels = [p[0] for p in pairs]
    assert labels == ["cat0-cat1", "cat0-cat2", "dog0-dog3"]
    assert discover_pairs(str(tmp_path), {"dog"}) \
        == [("dog0-dog3", str(tmp_path / "dog0.ply"),
             str(tmp_path / "dog3.ply"))]


def test_benchmark_end_to_end(workdir, tmp_path, capsys):
    root, mesh, *_ = workdir
    data = tmp_path / "data"
    data.mkdir()
    save_mesh(mesh, data / "blob_0.off")
    # benchmark ground truth is shared vertex ordering, so rotate only
    rng = np.random.default_rng(5)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.linalg.det(q)
    from speccorr import TriangleMesh
    moved = TriangleMesh(mesh.vertices @ q.T + [0.3, -0.1, 0.2], mesh.faces)
    save_mesh(moved, data / "blob_1.off")
    out = tmp_path / "bench"
    code = run(["benchmark", data, "--out", out,
                "--config", root / "small.cfg"])
    assert code == 0
    text = capsys.readouterr().out
    assert "blob0-blob1" in text
    assert (out / "summary.txt").exists()
    assert (out / "aggregate.csv").exists()
    agg = (out / "aggregate.csv").read_text().splitlines()
    assert agg[0] == "threshold,fraction"
    # a rigid permuted copy is matched essentially perfectly
    assert agg[1].startswith("0.000,") and float(agg[1].split(",")[1]) >= 0.99


def test_benchmark_empty_dataset(tmp_path, capsys):
    code = run(["benchmark", tmp_path, "--out", tmp_path / "o"])
    assert code == 2
    assert "no benchmark pairs" in capsys.readouterr().err


def test_symmetry_failure_exit_code(workdir, tmp_path, capsys):
    root, *_ = workdir
    code = run(["symmetry", root / "shape_x.off", "--out", tmp_path / "s.ply",
                "--config", root / "small.cfg"])
    assert code == 1
    assert "no intrinsic reflective symmetry" in capsys.readouterr().err


def test_symmetry_end_to_end(workdir, tmp_path, capsys):
    root, *_ = workdir
    mesh, mirror = mg.mirror_symmetric_blob(3)
    path = tmp_path / "sym.off"
    save_mesh(mesh, path)
    out = tmp_path / "sym.ply"
    code = run(["symmetry", path, "--out", out,
                "--config", root / "small.cfg"])
    assert code == 0
    assert "Q=-0." in capsys.readouterr().out
    corr = read_correspondence(str(tmp_path / "sym.corr"))
    assert (corr.mapping == mirror).mean() >= 0.95
    colored = load_mesh(str(out))
    assert "displacement" in colored.attributes


def test_transfer_end_to_end(workdir, tmp_path, capsys):
    root, mesh, moved, truth = workdir
    out = tmp_path / "map.corr"
    assert run(["correspond", root / "shape_x.off", root / "shape_y.off",
                "--out", out, "--config", root / "small.cfg"]) == 0
    attr = np.arange(moved.n_vertices, dtype=float)
    save_mesh(moved.with_attributes({"height": attr}),
              tmp_path / "colored_y.ply", fmt="ply")
    dest = tmp_path / "transferred.ply"
    code = run(["transfer", out, root / "shape_x.off",
                tmp_path / "colored_y.ply", "--out", dest])
    assert code == 0
    got = load_mesh(str(dest)).attributes["height"]
    assert (got == attr[truth]).mean() >= 0.99


def test_transfer_without_attributes(workdir, tmp_path, capsys):
    root, *_ = workdir
    out = tmp_path / "map.corr"
    run(["correspond", root / "shape_x.off", root / "shape_y.off",
         "--out", out, "--config", root / "small.cfg"])
    code = run(["transfer", out, root / "shape_x.off", root / "shape_y.off",
                "--out", tmp_path / "t.ply"])
    assert code == 2
    assert "no vertex attributes" in capsys.readouterr().err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["--version"])
    assert exc.value.code == 0
