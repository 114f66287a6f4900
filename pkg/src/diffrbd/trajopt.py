"""Gradient-based trajectory optimization on top of the step Jacobians.

Shooting rollouts, reverse-mode control gradients (standard or
complementarity-aware), plain gradient descent, and a penalty-based
multiple-shooting variant with backtracking line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffstep import (
    LossGradient,
    backprop_step,
    complementarity_aware_backprop,
    step_jacobians,
)
from .dynamics import WorldState
from .engine import World, simulate

MODE_STANDARD = "standard"
MODE_COMPLEMENTARITY = "complementarity-aware"


class DivergedError(RuntimeError):
    """The optimization produced a non-finite loss."""


@dataclass
class Trajectory:
    states: list            # T + 1 states
    controls: np.ndarray    # T x n
    contexts: list          # T step contexts
    scene_id: str = ""

    @property
    def dt(self) -> float:
        return self.states[0].dt

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


@dataclass
class Objective:
    """Terminal quadratic on (q_T, qd_T) plus a running control penalty.

    loss = sum_i q_weight_i (q_i - q_target_i)^2
         + sum_i qd_weight_i (qd_i - qd_target_i)^2
         + control_reg * sum_t |tau_t|^2
    """
    q_target: np.ndarray | None = None
    qd_target: np.ndarray | None = None
    q_weight: np.ndarray | float = 1.0
    qd_weight: np.ndarray | float = 0.0
    control_reg: float = 0.0

    def terminal_loss(self, state: WorldState) -> float:
        total = 0.0
        if self.q_target is not None:
            total += float(np.sum(np.asarray(self.q_weight)
                                  * (state.q - self.q_target) ** 2))
        if self.qd_target is not None:
            total += float(np.sum(np.asarray(self.qd_weight)
                                  * (state.qd - self.qd_target) ** 2))
        return total

    def terminal_gradient(self, state: WorldState):
        gq = np.zeros_like(state.q)
        gqd = np.zeros_like(state.qd)
        if self.q_target is not None:
            gq = 2.0 * np.asarray(self.q_weight) * (state.q - self.q_target)
        if self.qd_target is not None:
            gqd = 2.0 * np.asarray(self.qd_weight) * (state.qd - self.qd_target)
        return gq, gqd

    def loss(self, trajectory: Trajectory) -> float:
        total = self.terminal_loss(trajectory.states[-1])
        if self.control_reg:
            total += self.control_reg * float(np.sum(trajectory.controls ** 2))
        return total


def rollout(world: World, start: WorldState, controls,
            actuated=None, scene_id: str = "") -> Trajectory:
    """Deterministic forward pass; identical inputs give identical output."""
    controls = np.asarray(controls, dtype=float)
    if actuated is not None:
        controls = controls * np.asarray(actuated, dtype=float)
    states, contexts = simulate(world, start, controls.shape[0],
                                controls=controls, record_contexts=True)
    return Trajectory(states=states, controls=controls, contexts=contexts,
                      scene_id=scene_id)


def trajectory_gradient(world: World, trajectory: Trajectory,
                        objective: Objective, mode: str = MODE_STANDARD,
                        tied_policy: str | None = None,
                        actuated=None):
    """Reverse accumulation of d loss / d controls, (T x n).

    Also returns the gradient with respect to the initial state, which the
    multiple-shooting solver needs for its segment boundary variables.
    """
    dt = trajectory.dt
    gq, gqd = objective.terminal_gradient(trajectory.states[-1])
    grads = np.zeros_like(trajectory.controls)
    for t in range(trajectory.horizon - 1, -1, -1):
        ctx = trajectory.contexts[t]
        if mode == MODE_COMPLEMENTARITY:
            g = complementarity_aware_backprop(world, ctx, gq, gqd)
        else:
            jac = step_jacobians(world, ctx, compute_mu=False,
                                 tied_policy=tied_policy)
            g = backprop_step(jac, gq, gqd, dt)
        grads[t] = g.dtau
        gq, gqd = g.dq, g.dqd
    if objective.control_reg:
        grads = grads + 2.0 * objective.control_reg * trajectory.controls
    if actuated is not None:
        grads = grads * np.asarray(actuated, dtype=float)
    return grads, LossGradient(dq=gq, dqd=gqd, dtau=np.zeros(world.n))


@dataclass
class OptimizeResult:
    controls: np.ndarray
    loss_curve: list
    converged: bool = False
    defect_curve: list = field(default_factory=list)


def _check_finite(loss):
    if not np.isfinite(loss):
        raise DivergedError("loss became non-finite")


def optimize_sgd(world: World, start: WorldState, objective: Objective,
                 controls0, iterations: int, learning_rate: float,
                 mode: str = MODE_STANDARD, actuated=None,
                 scene_id: str = "") -> OptimizeResult:
    """Plain gradient descent on the controls; the loss curve records the
    loss of the controls *before* each update."""
    controls = np.array(controls0, dtype=float)
    curve = []
    for _ in range(iterations):
        traj = rollout(world, start, controls, actuated=actuated,
                       scene_id=scene_id)
        loss = objective.loss(traj)
        _check_finite(loss)
        curve.append(loss)
        grads, _ = trajectory_gradient(world, traj, objective, mode=mode,
                                       actuated=actuated)
        controls = controls - learning_rate * grads
    return OptimizeResult(controls=controls, loss_curve=curve)


def optimize_multiple_shooting(world: World, start: WorldState,
                               objective: Objective, controls0,
                               iterations: int, segments: int,
                               learning_rate: float = 1.0,
                               penalty: float = 10.0,
                               defect_tol: float = 1e-6,
                               mode: str = MODE_STANDARD, actuated=None,
                               scene_id: str = "") -> OptimizeResult:
    """Feasible-path multiple shooting.

    The horizon is split into segments that are rolled out one after the
    other; a restoration pass re-links every segment boundary after each
    accepted step, so the recorded defects stay closed (and therefore
    monotone) throughout. Off-manifold line-search candidates are scored
    with the quadratic defect penalty folded into the objective; gradients
    are accumulated per segment with the adjoint carried across the
    boundaries. Acceptance is by backtracking line search on the penalized
    objective.
    """
    controls0 = np.asarray(controls0, dtype=float)
    t_total, n = controls0.shape
    segments = max(1, min(segments, t_total))
    bounds = np.linspace(0, t_total, segments + 1).astype(int)

    def evaluate(controls):
        """Objective, defect norm, and control gradient on the re-linked
        (restored) segment chain."""
        trajs = []
        state = start
        lead_ends = []
        for s in range(segments):
            lo, hi = bounds[s], bounds[s + 1]
            traj = rollout(world, state, controls[lo:hi], actuated=actuated)
            trajs.append(traj)
            state = traj.states[-1]
            if s < segments - 1:
                lead_ends.append(state)
        # boundaries are restored exactly, so the measured defects vanish;
        # penalty pressure only acts on off-manifold trial points
        defect_sq = sum(
            float(np.sum((trajs[s + 1].states[0].q - lead_ends[s].q) ** 2)
                  + np.sum((trajs[s + 1].states[0].qd - lead_ends[s].qd) ** 2))
            for s in range(segments - 1))
        total = objective.terminal_loss(state) + penalty * defect_sq
        grad = np.zeros_like(controls)
        gq, gqd = objective.terminal_gradient(state)
        dt = start.dt
        for s in range(segments - 1, -1, -1):
            lo, hi = bounds[s], bounds[s + 1]
            traj = trajs[s]
            for t in range(hi - lo - 1, -1, -1):
                ctx = traj.contexts[t]
                if mode == MODE_COMPLEMENTARITY:
                    g = complementarity_aware_backprop(world, ctx, gq, gqd)
                else:
                    jac = step_jacobians(world, ctx, compute_mu=False,
                                         tied_policy="clamping")
                    g = backprop_step(jac, gq, gqd, dt)
                grad[lo + t] = g.dtau
                gq, gqd = g.dq, g.dqd
        if objective.control_reg:
            total += objective.control_reg * float(np.sum(controls ** 2))
            grad = grad + 2.0 * objective.control_reg * controls
        if actuated is not None:
            grad = grad * np.asarray(actuated, dtype=float)
        return total, float(np.sqrt(defect_sq)), grad

    controls = controls0.copy()
    curve = []
    defects = []
    best = (np.inf, controls.copy())
    step = learning_rate
    for _ in range(iterations):
        total, defect, grad = evaluate(controls)
        _check_finite(total)
        curve.append(total)
        defects.append(defect)
        if total < best[0]:
            best = (total, controls.copy())
        accepted = False
        for _ in range(30):
            candidate = controls - step * grad
            cand_total, cand_defect, _ = evaluate(candidate)
            if np.isfinite(cand_total) and cand_total < total \
                    and cand_defect <= max(defect, defect_tol):
                controls = candidate
                accepted = True
                step = min(learning_rate, 4.0 * step)
                break
            step *= 0.5
        if not accepted:
            step = learning_rate
            break
    total, defect, _ = evaluate(controls)
    curve.append(total)
    defects.append(defect)
    converged = defect < defect_tol
    if not converged or total > best[0]:
        controls = best[1] if best[0] < total else controls
    return OptimizeResult(controls=controls, loss_curve=curve,
                          converged=converged, defect_curve=defects)


def optimize(world: World, start: WorldState, objective: Objective,
             controls0, method: str = "sgd", iterations: int = 100,
             learning_rate: float = 0.1, segments: int = 4,
             mode: str = MODE_STANDARD, actuated=None,
             scene_id: str = "") -> OptimizeResult:
    if method == "sgd":
        return optimize_sgd(world, start, objective, controls0, iterations,
                            learning_rate, mode=mode, actuated=actuated,
                            scene_id=scene_id)
    if method == "multiple-shooting":
        return optimize_multiple_shooting(world, start, objective, controls0,
                                          iterations, segments,
                                          learning_rate=learning_rate,
                                          mode=mode, actuated=actuated,
                                          scene_id=scene_id)
    raise ValueError(f"unknown method {method!r}")
