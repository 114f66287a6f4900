import subprocess
from importlib import resources

import numpy as np
import pytest

from diffrbd_bindings import (ClosedHandleError, EngineError, WorldHandle,
                              load_world, plot_benchmark, plot_loss)


@pytest.fixture
def pendulum_scene(tmp_path):
    text = resources.files("diffrbd").joinpath(
        "corpus/pendulum.scene").read_text(encoding="utf-8")
    path = tmp_path / "pendulum.scene"
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def drone_scene(tmp_path):
    text = resources.files("diffrbd").joinpath(
        "corpus/drone.scene").read_text(encoding="utf-8")
    path = tmp_path / "drone.scene"
    path.write_text(text, encoding="utf-8")
    return path


def cli_bytes(args):
    proc = subprocess.run(["diffrbd", *args], capture_output=True)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def test_rollout_matches_cli_byte_for_byte(pendulum_scene, tmp_path):
    out = tmp_path / "direct.csv"
    proc = subprocess.run(["diffrbd", "simulate", str(pendulum_scene),
                           "--steps", "100", "-o", str(out)],
                          capture_output=True)
    assert proc.returncode == 0
    direct = out.read_bytes()
    with load_world(pendulum_scene) as handle:
        dump = handle.rollout(100)
    assert dump.encode("utf-8") == direct


def test_stepwise_states_match_dump_exactly(pendulum_scene):
    # 100 single-step calls reproduce the 100-step dump's states exactly:
    # the text format round-trips float64 without loss
    with load_world(pendulum_scene) as handle:
        reference = handle.rollout(100)
    from diffrbd_bindings.world import parse_trajectory
    qs, qds, _ = parse_trajectory(reference)
    with load_world(pendulum_scene) as handle:
        for k in range(100):
            q, qd = handle.step(np.zeros(handle.n))
            assert q[0] == qs[k + 1][0]
            assert qd[0] == qds[k + 1][0]


def test_jacobian_block_names(pendulum_scene):
    with load_world(pendulum_scene) as handle:
        blocks = handle.jacobians()
    assert set(blocks) == {"dq_dq", "dqdot_dq", "dq_dqd", "dqdot_dqd",
                           "dqdot_dtau", "dqdot_dmu"}
    assert blocks["dq_dq"].shape == (1, 1)


def test_closed_handle_raises(pendulum_scene):
    handle = load_world(pendulum_scene)
    handle.close()
    with pytest.raises(ClosedHandleError):
        handle.step()
    with pytest.raises(ClosedHandleError):
        handle.jacobians()


def test_engine_errors_carry_diagnostics(tmp_path):
    bad = tmp_path / "bad.scene"
    bad.write_text("{}", encoding="utf-8")
    with pytest.raises((EngineError, KeyError)):
        handle = WorldHandle(bad)
        handle.rollout(1)


def test_optimize_round_trip(drone_scene):
    with load_world(drone_scene) as handle:
        loss, controls = handle.optimize(
            {"q_target": [1.5], "horizon": 8, "learning_rate": 20.0,
             "iterations": 3}, complementarity_aware=True)
    assert loss.shape == (3,)
    assert controls.shape == (8, 1)


def test_plot_benchmark(tmp_path, pendulum_scene):
    table = tmp_path / "bench.csv"
    proc = subprocess.run(
        ["diffrbd", "benchmark", str(pendulum_scene), "--repetitions", "2",
         "--ridders-repetitions", "1", "-o", str(table)],
        capture_output=True)
    assert proc.returncode == 0
    out = tmp_path / "bench.png"
    plot_benchmark(table, out)
    assert out.exists() and out.stat().st_size > 0


def test_plot_benchmark_rejects_bad_columns(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n", encoding="utf-8")
    out = tmp_path / "nope.png"
    with pytest.raises(ValueError):
        plot_benchmark(bad, out)
    assert not out.exists()


def test_plot_loss_overlay(tmp_path):
    c1 = tmp_path / "standard.loss.csv"
    c1.write_text("iteration,loss\n0,1.0\n1,1.0\n2,1.0\n", encoding="utf-8")
    c2 = tmp_path / "aware.loss.csv"
    c2.write_text("iteration,loss\n0,1.0\n1,0.6\n2,0.2\n", encoding="utf-8")
    out = tmp_path / "loss.png"
    plot_loss([c1, c2], out, labels=["standard", "complementarity-aware"])
    assert out.exists() and out.stat().st_size > 0


def test_plot_loss_empty_table_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    out = tmp_path / "nope.png"
    with pytest.raises(ValueError):
        plot_loss([empty], out)
    assert not out.exists()
