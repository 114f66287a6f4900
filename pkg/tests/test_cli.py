import json

from diffrbd import cli
from diffrbd.textio import read_blocks


def run(argv):
    return cli.main(argv)


def test_simulate_writes_frames(tmp_path):
    out = tmp_path / "traj.csv"
    code = run(["simulate", "corpus:pendulum", "--steps", "100",
                "-o", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("frame,t,q0,qd0")
    assert len(lines) == 102  # header + initial frame + 100 steps
    assert lines[-1].split(",")[0] == "100"


def test_simulate_invalid_scene_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.scene"
    bad.write_text("{ nope", encoding="utf-8")
    code = run(["simulate", str(bad), "--steps", "1", "-o", "-"])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_simulate_deterministic_bytes(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    for out in (a, b):
        assert run(["--seed", "7", "simulate", "corpus:ball_on_plane",
                    "--steps", "50", "-o", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_with_controls(tmp_path):
    controls = tmp_path / "controls.csv"
    controls.write_text("\n".join(["0.5"] * 10) + "\n", encoding="utf-8")
    out = tmp_path / "t.csv"
    assert run(["simulate", "corpus:pendulum", "--steps", "10",
                "--controls", str(controls), "-o", str(out)]) == 0
    cells = out.read_text().strip().splitlines()[-1].split(",")
    free = tmp_path / "free.csv"
    assert run(["simulate", "corpus:pendulum", "--steps", "10",
                "-o", str(free)]) == 0
    assert cells != free.read_text().strip().splitlines()[-1].split(",")


def test_jacobian_blocks_and_check(tmp_path):
    out = tmp_path / "jac.txt"
    code = run(["jacobian", "corpus:pendulum", "--check", "ridders",
                "--tol", "1e-6", "-o", str(out)])
    assert code == 0
    text = out.read_text()
    blocks = read_blocks("\n".join(
        line for line in text.splitlines() if "," not in line or
        line.startswith("#") or line.replace(",", "").replace(".", "")
        .replace("-", "").replace("e", "").replace("+", "").isdigit()))
    for name in ("dq_dq", "dqdot_dq", "dq_dqd", "dqdot_dqd", "dqdot_dtau",
                 "dqdot_dmu"):
        assert name in blocks
    assert "pass" in text


def test_jacobian_check_contact_scene(tmp_path):
    code = run(["jacobian", "corpus:ball_on_plane", "--check", "central",
                "--tol", "1e-4", "-o", str(tmp_path / "j.txt")])
    assert code == 0


def test_jacobian_check_failure_exits_2(tmp_path, monkeypatch):
    # an impossible tolerance forces the failure path
    code = run(["jacobian", "corpus:ball_on_plane", "--check", "central",
                "--tol", "1e-18", "-o", str(tmp_path / "j.txt")])
    assert code == 2


def test_benchmark_table_columns(tmp_path):
    out = tmp_path / "bench.csv"
    code = run(["benchmark", "corpus:pendulum", "--repetitions", "3",
                "--ridders-repetitions", "1", "-o", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "scene,jacobian,analytic,central,speedup,ridders,speedup"
    labels = [line.split(",")[1] for line in lines[1:]]
    assert labels == ["All", "dq_dq", "dqdot_dq", "dq_dqd", "dqdot_dqd",
                      "dqdot_dtau"]
    for line in lines[1:]:
        cells = line.split(",")
        assert float(cells[2]) > 0 and float(cells[3]) > 0
        assert abs(float(cells[4]) - float(cells[3]) / float(cells[2])) < 1e-9


def test_optimize_writes_curves(tmp_path):
    spec = {"q_target": [1.5], "q_weight": 1.0, "horizon": 10,
            "learning_rate": 10.0, "iterations": 3}
    spec_path = tmp_path / "obj.json"
    spec_path.write_text(json.dumps(spec), encoding="utf-8")
    base = tmp_path / "run"
    code = run(["optimize", "corpus:drone", "--objective", str(spec_path),
                "--method", "sgd", "--out", str(base)])
    assert code == 0
    loss_lines = (tmp_path / "run.loss.csv").read_text().strip().splitlines()
    assert loss_lines[0] == "iteration,loss"
    assert len(loss_lines) == 4
    ctrl_lines = (tmp_path / "run.controls.csv").read_text().strip().splitlines()
    assert len(ctrl_lines) == 10


def test_optimize_deterministic(tmp_path):
    spec = {"q_target": [1.5], "q_weight": 1.0, "horizon": 8,
            "learning_rate": 20.0, "iterations": 4}
    spec_path = tmp_path / "obj.json"
    spec_path.write_text(json.dumps(spec), encoding="utf-8")
    outs = []
    for tag in ("x", "y"):
        base = tmp_path / tag
        assert run(["--seed", "3", "optimize", "corpus:drone",
                    "--objective", str(spec_path), "--method", "sgd",
                    "--complementarity-aware", "--out", str(base)]) == 0
        outs.append((tmp_path / f"{tag}.loss.csv").read_bytes()
                    + (tmp_path / f"{tag}.controls.csv").read_bytes())
    assert outs[0] == outs[1]


def test_jacobian_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for out in (a, b):
        assert run(["--seed", "11", "jacobian", "corpus:box_on_plane",
                    "-o", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
