"""Forward stepping: dynamics, contact detection, LCP resolution.

One semi-implicit Euler step:

    qd' = qd + M^-1 (-dt (c - tau) + J^T f)
    q'  = q + dt qd'

where f comes from the boxed contact LCP. Restitution enters as a shift of
the LCP offset: a bouncing row must leave with at least sigma times its
approach speed, measured against the velocity at the start of the step.

The step returns a StepContext carrying everything the gradient engine
needs (contacts, Jacobian rows, the stabilized LCP solution, and the
dynamics caches), so differentiation never recomputes the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lcp
from .collision import (
    Contact,
    ContactJacobian,
    contact_jacobian,
    detect,
    evaluate_contact,
    tangent_basis,
)
from .dynamics import (
    ArticulatedCache,
    Skeleton,
    WorldState,
    coriolis_gravity,
    mass_matrix,
    minv_matrix,
)

BOUNCE_SPEED = 1e-8  # approach speed below which restitution is ignored


@dataclass
class World:
    skeleton: Skeleton
    colliders: list

    @property
    def n(self) -> int:
        return self.skeleton.n


@dataclass
class StepContext:
    state: WorldState
    next_state: WorldState
    cache: ArticulatedCache
    mass: np.ndarray
    minv: np.ndarray
    coriolis: np.ndarray
    contacts: list = field(default_factory=list)
    jac: ContactJacobian | None = None
    problem: lcp.LcpProblem | None = None
    solution: lcp.LcpSolution | None = None
    v_pre: np.ndarray | None = None
    restitution_shift: np.ndarray | None = None  # per-row sigma actually applied
    warm_hit: bool = False

    @property
    def has_contacts(self) -> bool:
        return bool(self.contacts)

    def bounce_rows(self) -> np.ndarray:
        """Normal-row indices that bounced this step."""
        if not self.has_contacts:
            return np.array([], dtype=int)
        return np.flatnonzero(self.restitution_shift > 0.0)

    def contact_signature(self):
        return tuple((c.kind, c.features["a"], c.features["b"])
                     for c in self.contacts)


def _row_bounds(contacts):
    """friction_link and mu arrays for rows grouped (normal, t1, t2)."""
    m = len(contacts)
    link = np.full(3 * m, -1, dtype=int)
    mu = np.zeros(3 * m)
    for k, contact in enumerate(contacts):
        link[3 * k + 1] = link[3 * k + 2] = 3 * k
        mu[3 * k + 1] = mu[3 * k + 2] = contact.friction
    return link, mu


def step(world: World, state: WorldState, warm_status=None,
         warm_signature=None) -> StepContext:
    """Advance one timestep; warm_status may carry the previous step's LCP
    classification (used only if the contact signature is unchanged)."""
    skeleton = world.skeleton
    cache = ArticulatedCache(skeleton, state.q)
    c = coriolis_gravity(skeleton, state.q, state.qd, cache=cache)
    minv = minv_matrix(skeleton, state.q, cache=cache)
    mass = mass_matrix(skeleton, state.q, cache=cache)
    contacts = detect(skeleton, state.q, world.colliders, cache=cache)
    ctx = StepContext(state=state, next_state=state, cache=cache, mass=mass,
                      minv=minv, coriolis=c, contacts=contacts)
    z = -state.dt * (c - state.tau)
    if not contacts:
        qd_next = state.qd + minv @ z
        q_next = state.q + state.dt * qd_next
        ctx.next_state = WorldState(q=q_next, qd=qd_next, tau=state.tau.copy(),
                                    dt=state.dt)
        return ctx

    jac = contact_jacobian(skeleton, state.q, contacts, cache=cache)
    link, mu = _row_bounds(contacts)
    problem = lcp.assemble(mass, jac.matrix, state.qd, state.tau, c, state.dt,
                           friction_link=link, mu=mu, minv=minv)
    v_pre = jac.matrix @ state.qd
    shift = np.zeros(problem.m)
    for k, contact in enumerate(contacts):
        row = 3 * k
        if contact.restitution > 0.0 and v_pre[row] < -BOUNCE_SPEED:
            shift[row] = contact.restitution
    problem.b = problem.b + shift * v_pre

    warm = None
    if warm_status is not None and warm_signature == ctx.contact_signature():
        warm = warm_status
    solution = lcp.solve_direct(problem, warm=warm)

    impulse = jac.matrix.T @ solution.f
    qd_next = state.qd + minv @ (z + impulse)
    q_next = state.q + state.dt * qd_next
    ctx.jac = jac
    ctx.problem = problem
    ctx.solution = solution
    ctx.v_pre = v_pre
    ctx.restitution_shift = shift
    ctx.warm_hit = solution.warm_hit
    ctx.next_state = WorldState(q=q_next, qd=qd_next, tau=state.tau.copy(),
                                dt=state.dt)
    return ctx


def contact_rows_at(world: World, q, contacts):
    """Contact Jacobian rows for stored contacts re-evaluated at another
    configuration (fixed kind and features). Used for the post-step rows
    that the elastic-bounce correction needs."""
    skeleton = world.skeleton
    cache = ArticulatedCache(skeleton, q)
    n = skeleton.n
    rows = np.zeros((3 * len(contacts), n))
    for k, contact in enumerate(contacts):
        p, nrm, _ = evaluate_contact(skeleton, q, world.colliders, contact,
                                     cache=cache)
        psi = np.zeros(n)
        if contact.body_a is not None:
            psi += skeleton._ancestor_mask[:, contact.body_a].astype(float)
        if contact.body_b is not None:
            psi -= skeleton._ancestor_mask[:, contact.body_b].astype(float)
        t1, t2 = tangent_basis(nrm, contact.tangent_axis)
        for r, d in enumerate((nrm, t1, t2)):
            wrench = np.concatenate([np.cross(p, d), d])
            rows[3 * k + r] = psi * (cache.world_screws @ wrench)
    return rows


def simulate(world: World, state: WorldState, steps: int, controls=None,
             record_contexts: bool = False):
    """Roll the world forward; controls is an optional (steps x n) array of
    joint forces. Returns the trajectory of states plus contexts when asked.
    Warm starts carry across steps automatically."""
    states = [state]
    contexts = []
    warm_status = None
    warm_signature = None
    for t in range(steps):
        tau = state.tau if controls is None else np.asarray(controls[t], dtype=float)
        state = WorldState(q=state.q, qd=state.qd, tau=tau, dt=state.dt)
        ctx = step(world, state, warm_status=warm_status,
                   warm_signature=warm_signature)
        if ctx.solution is not None:
            warm_status = list(ctx.solution.status)
            warm_signature = ctx.contact_signature()
        else:
            warm_status = None
            warm_signature = None
        state = ctx.next_state
        states.append(state)
        if record_contexts:
            contexts.append(ctx)
    return (states, contexts) if record_contexts else states
