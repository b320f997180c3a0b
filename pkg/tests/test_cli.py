import csv
import io
import json

import pytest

from handover_sim.cli import EXIT_INPUT, EXIT_INTERNAL, EXIT_OK, main
from handover_sim.ingest import write_scenario
from handover_sim.synth import SceneSpec, build_scene


@pytest.fixture(scope="module")
def scene_dirs(tmp_path_factory, demo_scenes, fixture_scenes):
    root = tmp_path_factory.mktemp("scenes")
    for name, sc in {**demo_scenes, **fixture_scenes}.items():
        write_scenario(root / name, sc)
    broken = root / "broken"
    write_scenario(broken, demo_scenes["cylinder_clean"])
    (broken / "mask_1.pgm").unlink()
    return root


@pytest.fixture(scope="module")
def batch_dir(tmp_path_factory, fixture_scenes):
    root = tmp_path_factory.mktemp("batch")
    for name, sc in fixture_scenes.items():
        write_scenario(root / name, sc)
    return root


def read_csv(path):
    return list(csv.reader(io.StringIO(path.read_text())))


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- run ------------------------------------------------------------------------------

def test_run_clean(scene_dirs, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", str(scene_dirs / "cylinder_clean"), "--out", str(out)]) == EXIT_OK
    for name in ("report.csv", "report.json", "log.csv", "events.json", "container.obj", "overview.png"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["delta"] > 0.9
    assert report["events"] == ["GRASP_EXECUTED", "PLACED"]
    assert "cylinder_clean: events=GRASP_EXECUTED;PLACED" in capsys.readouterr().out


def test_run_missing_mask_exit_code(scene_dirs, tmp_path, capsys):
    code = main(["run", str(scene_dirs / "broken"), "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT
    assert "error: MissingFile('mask_1.pgm')" in capsys.readouterr().err


def test_run_no_safe_region_is_not_an_error(scene_dirs, tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(scene_dirs / "full_occlusion"), "--out", str(out), "--no-figures"]) == EXIT_OK
    assert "NO_SAFE_REGION" in json.loads((out / "report.json").read_text())["events"]
    assert not (out / "overview.png").exists()


def test_bad_params_file(scene_dirs, tmp_path, capsys):
    bad = tmp_path / "p.json"
    bad.write_text('{"c": 2.0}')
    assert main(["run", str(scene_dirs / "cylinder_clean"), "--params", str(bad), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    broken = tmp_path / "q.json"
    broken.write_text("{nope")
    assert main(["run", str(scene_dirs / "cylinder_clean"), "--params", str(broken), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    assert "error:" in capsys.readouterr().err


def test_params_override_applied(scene_dirs, tmp_path):
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"eta": 250.0, "c": 0.9}))
    out = tmp_path / "o"
    assert main(["run", str(scene_dirs / "cylinder_clean"), "--params", str(p), "--out", str(out), "--no-figures"]) == EXIT_OK
    params = json.loads((out / "report.json").read_text())["params"]
    assert params["eta"] == 250.0 and params["c"] == 0.9


def test_bad_transition_matrix(scene_dirs, tmp_path):
    t = tmp_path / "t.json"
    t.write_text(json.dumps([[0.5] * 8] * 8))
    code = main(["run", str(scene_dirs / "cylinder_clean"), "--transition-matrix", str(t), "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT


def test_contact_noise_is_seeded(scene_dirs, tmp_path):
    outs = []
    for i, seed in enumerate((1, 1, 2)):
        out = tmp_path / f"o{i}"
        args = ["run", str(scene_dirs / "cylinder_clean"), "--contact-noise", "0.3", "--seed", str(seed),
                "--out", str(out), "--no-figures"]
        assert main(args) == EXIT_OK
        outs.append(json.loads((out / "report.json").read_text())["applied_force_N"])
    assert outs[0] == outs[1] != outs[2]


# -- batch ----------------------------------------------------------------------------

def test_batch_outputs(batch_dir, tmp_path):
    out = tmp_path / "b"
    assert main(["batch", str(batch_dir / "*"), "--out", str(out)]) == EXIT_OK
    runs = read_csv(out / "runs.csv")
    assert len(runs) == 5
    assert [r[0] for r in runs[1:]] == sorted(r[0] for r in runs[1:])
    for metric in ("psi_h", "psi_f", "psi_f_bar", "delta"):
        m = read_csv(out / f"matrix_{metric}.csv")
        assert m[0] == ["configuration", "C1", "C2"]
        filled = [(row[0], col) for row in m[1:] for col, v in zip(m[0][1:], row[1:]) if v]
        assert sorted(filled) == [("0", "C1"), ("0", "C2"), ("W5", "C1"), ("W5", "C2")]
        assert (out / f"matrix_{metric}.png").exists()
    assert (out / "runs" / "c1_empty.json").exists()
    assert (out / "runs" / "c2_w5_log.csv").exists()


def test_batch_is_byte_identical(batch_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("HANDOVER_SIM_THREADS", "1")
    assert main(["batch", str(batch_dir / "*"), "--out", str(tmp_path / "a")]) == EXIT_OK
    monkeypatch.setenv("HANDOVER_SIM_THREADS", "4")
    assert main(["batch", str(batch_dir / "*"), "--out", str(tmp_path / "b")]) == EXIT_OK
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_batch_hand_failure_cell(batch_dir, tmp_path):
    root = tmp_path / "scenes"
    write_scenario(root / "c1_empty", build_scene(SceneSpec("c1_empty", "C1", hand="base")))
    write_scenario(root / "c3_nohand", build_scene(SceneSpec("c3_nohand", "C3", hand="none")))
    out = tmp_path / "b"
    assert main(["batch", str(root / "*"), "--out", str(out), "--no-figures"]) == EXIT_OK
    m = read_csv(out / "matrix_psi_h.csv")
    row = [r for r in m if r[0] == "0"][0]
    assert row[m[0].index("C3")] == "X"
    assert row[m[0].index("C1")] not in ("", "X")


def test_batch_no_match(tmp_path):
    assert main(["batch", str(tmp_path / "nothing*"), "--out", str(tmp_path / "o")]) == EXIT_INPUT


# -- oracle ---------------------------------------------------------------------------

def test_oracle_scenario_passes(scene_dirs, capsys):
    assert main(["oracle", str(scene_dirs / "mid_occlusion")]) == EXIT_OK
    assert "oracle PASS" in capsys.readouterr().out


def test_oracle_fuzz_passes(capsys):
    assert main(["oracle", "--fuzz", "1000", "--seed", "7"]) == EXIT_OK
    assert "oracle PASS: 1000 random scenes" in capsys.readouterr().out


def test_oracle_detects_injected_margin_error(capsys):
    assert main(["oracle", "--fuzz", "300", "--seed", "7", "--inject-r-error", "3"]) == EXIT_INTERNAL
    assert "oracle FAIL" in capsys.readouterr().out


def test_oracle_needs_a_target():
    assert main(["oracle"]) == EXIT_INPUT


# -- export-curves / synth ------------------------------------------------------------------

def test_export_curves(tmp_path):
    assert main(["export-curves", "--out", str(tmp_path)]) == EXIT_OK
    h = read_csv(tmp_path / "psi_h_curves.csv")
    assert h[0] == ["c", "l_mm", "psi_h"]
    assert {r[0] for r in h[1:]} == {"0.5", "0.7", "0.9", "0.995"}
    at_l = [r for r in h[1:] if r[0] == "0.995" and r[1] == "21.00"]
    assert float(at_l[0][2]) == pytest.approx(0.995, abs=1e-9)
    f = read_csv(tmp_path / "psi_f_curves.csv")
    assert f[0] == ["c", "force_N", "reference_N", "psi_f"]
    assert (tmp_path / "psi_h_curves.png").exists() and (tmp_path / "psi_f_curves.png").exists()


def test_synth_writes_bundles(tmp_path):
    assert main(["synth", "--out", str(tmp_path)]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "batch").iterdir()) == ["c1_empty", "c1_w5", "c2_empty", "c2_w5"]
    assert not (tmp_path / "missing_mask" / "mask_1.pgm").exists()
