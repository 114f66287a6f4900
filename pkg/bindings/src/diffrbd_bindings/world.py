"""Handle-style bindings over the engine's command-line interface.

Everything goes through the CLI and its documented text formats (scene
JSON, trajectory CSV, labeled matrix blocks), so the engine binary remains
the single source of numeric truth: the 17-significant-digit float format
round-trips float64 exactly, and a state parsed back from a dump equals the
engine's state bit for bit.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
from pathlib import Path

import numpy as np

CLI = "diffrbd"


class EngineError(RuntimeError):
    """The engine CLI failed; carries its diagnostic text."""


class ClosedHandleError(RuntimeError):
    pass


def _run(args):
    proc = subprocess.run([CLI, *args], capture_output=True, text=True)
    if proc.returncode != 0:
        raise EngineError(proc.stderr.strip()
                          or f"exit code {proc.returncode}")
    return proc.stdout


def read_matrix_blocks(text: str) -> dict:
    """Parse the CLI's labeled comma-separated matrix format."""
    blocks = {}
    name = None
    rows_left = 0
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) != 3:
                continue  # trailing annotations (reports) are not blocks
            name, r, c = parts[0], int(parts[1]), int(parts[2])
            rows_left, rows = r, []
            if r == 0:
                blocks[name] = np.zeros((0, c))
                name = None
            continue
        if name is None:
            continue
        rows.append([float(x) for x in line.split(",")])
        rows_left -= 1
        if rows_left == 0:
            blocks[name] = np.array(rows)
            name = None
    return blocks


def parse_trajectory(text: str):
    """Trajectory dump -> (frames, q array, qd array, raw header)."""
    lines = [l for l in text.strip().splitlines() if l]
    header = lines[0].split(",")
    n = sum(1 for h in header if h.startswith("q") and not h.startswith("qd"))
    qs, qds = [], []
    for line in lines[1:]:
        cells = line.split(",")
        qs.append([float(x) for x in cells[2:2 + n]])
        qds.append([float(x) for x in cells[2 + n:2 + 2 * n]])
    return np.array(qs), np.array(qds), header


class WorldHandle:
    """One loaded scene with a mutable current state.

    ``step``/``rollout`` advance the state through CLI calls; the handle is
    valid until :meth:`close`.
    """

    def __init__(self, scene_path):
        path = Path(scene_path)
        self._scene = json.loads(path.read_text(encoding="utf-8"))
        self._workdir = tempfile.TemporaryDirectory(prefix="diffrbd_")
        self._closed = False
        self.q = np.asarray(self._scene["state"]["q"], dtype=float)
        self.qd = np.asarray(self._scene["state"]["qd"], dtype=float)

    # -- lifecycle ---------------------------------------------------------

    def close(self):
        if not self._closed:
            self._workdir.cleanup()
            self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _check_open(self):
        if self._closed:
            raise ClosedHandleError("handle is closed")

    @property
    def n(self) -> int:
        return len(self._scene["bodies"])

    # -- engine calls ------------------------------------------------------

    def _write_scene(self) -> str:
        data = json.loads(json.dumps(self._scene))
        data["state"]["q"] = [float(x) for x in self.q]
        data["state"]["qd"] = [float(x) for x in self.qd]
        path = Path(self._workdir.name) / "current.scene"
        path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")
        return str(path)

    def _write_controls(self, controls) -> str:
        controls = np.atleast_2d(np.asarray(controls, dtype=float))
        path = Path(self._workdir.name) / "controls.csv"
        path.write_text("\n".join(
            ",".join(f"{x:.17g}" for x in row) for row in controls) + "\n",
            encoding="utf-8")
        return str(path)

    def step(self, tau=None):
        """Advance one timestep under the given joint forces."""
        self._check_open()
        tau = np.zeros(self.n) if tau is None else np.asarray(tau, dtype=float)
        text = self.rollout(1, controls=tau.reshape(1, -1))
        return self.q.copy(), self.qd.copy()

    def rollout(self, steps: int, controls=None) -> str:
        """Run the engine for several steps; returns the raw trajectory dump
        (byte-identical to calling the CLI directly) and moves the handle's
        state to the final frame."""
        self._check_open()
        scene = self._write_scene()
        out = Path(self._workdir.name) / "traj.csv"
        args = ["simulate", scene, "--steps", str(steps), "-o", str(out)]
        if controls is not None:
            args += ["--controls", self._write_controls(controls)]
        _run(args)
        text = out.read_text(encoding="utf-8")
        qs, qds, _ = parse_trajectory(text)
        self.q = qs[-1]
        self.qd = qds[-1]
        return text

    def jacobians(self) -> dict:
        """Timestep Jacobian blocks at the current state, by name."""
        self._check_open()
        scene = self._write_scene()
        out = Path(self._workdir.name) / "jacobian.txt"
        _run(["jacobian", scene, "-o", str(out)])
        return read_matrix_blocks(out.read_text(encoding="utf-8"))

    def optimize(self, objective: dict, method: str = "sgd",
                 iterations: int | None = None,
                 complementarity_aware: bool = False):
        """Trajectory optimization from the current state; returns the loss
        curve and the optimized control table."""
        self._check_open()
        scene = self._write_scene()
        spec = Path(self._workdir.name) / "objective.json"
        spec.write_text(json.dumps(objective), encoding="utf-8")
        base = Path(self._workdir.name) / "opt"
        args = ["optimize", scene, "--objective", str(spec),
                "--method", method, "--out", str(base)]
        if iterations is not None:
            args += ["--iterations", str(iterations)]
        if complementarity_aware:
            args.append("--complementarity-aware")
        _run(args)
        loss_lines = (Path(f"{base}.loss.csv").read_text(encoding="utf-8")
                      .strip().splitlines()[1:])
        loss = np.array([float(l.split(",")[1]) for l in loss_lines])
        controls = np.array([
            [float(x) for x in line.split(",")]
            for line in Path(f"{base}.controls.csv").read_text(
                encoding="utf-8").strip().splitlines()])
        return loss, controls


def load_world(scene_path) -> WorldHandle:
    return WorldHandle(scene_path)
