"""The gradient engine: analytic Jacobians of one timestep.

Blocks produced (names are also the CLI export labels):

* ``dqdot_dq``, ``dqdot_dqd``, ``dqdot_dtau``: velocity blocks, assembled
  from the Featherstone derivative recursions, the contact-geometry
  gradients, and the impulse Jacobian of the boxed LCP.
* ``dqdot_dmu``: inertial-parameter block; evaluated semi-analytically
  (finite differences of the analytic fixed-classification pipeline over
  the parameter vector) and tagged as such so benchmarks can exclude it.
* ``dq_dq``, ``dq_dqd``: position blocks. Under the semi-implicit update
  these are I + dt * dqdot_dq and dt * dqdot_dqd; on steps with elastic
  bounces they are replaced by the continuous-time approximation (the
  impulse Jacobians keep their discrete values).

Impulse differentiation works on the stabilized solution's classification:
separating rows contribute nothing, bounded rows follow their normals
through the linkage matrix E, and the clamping block is differentiated
through A_CC_eff = A_CC + A_CB E. A rank-deficient clamping block switches
to the derivative of the least-squares-minimal (pseudo-inverse) solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lcp
from .collision import contact_jacobian_derivative
from .dynamics import (
    ArticulatedCache,
    coriolis_gravity,
    d_coriolis,
    d_minv_z_dq,
    mass_matrix,
    minv_matrix,
)
from .engine import StepContext, World, contact_rows_at

BLOCK_NAMES = ("dqdot_dq", "dqdot_dqd", "dqdot_dtau", "dqdot_dmu",
               "dq_dq", "dq_dqd")

MU_FD_STEP = 1e-6

TIED_CLAMPING = "clamping"
TIED_SEPARATING = "separating"
TIED_RANDOM = "random"


class TiedPresentError(RuntimeError):
    """Tied rows present: the caller must pick a subgradient policy."""


class DegenerateBounceRowsError(RuntimeError):
    """A bouncing contact row is identically zero; no bounce direction."""


@dataclass
class StepJacobians:
    dqdot_dq: np.ndarray
    dqdot_dqd: np.ndarray
    dqdot_dtau: np.ndarray
    dq_dq: np.ndarray
    dq_dqd: np.ndarray
    dqdot_dmu: np.ndarray | None = None
    mu_semianalytic: bool = True
    bounce_corrected: bool = False

    def blocks(self) -> dict:
        out = {"dqdot_dq": self.dqdot_dq, "dqdot_dqd": self.dqdot_dqd,
               "dqdot_dtau": self.dqdot_dtau, "dq_dq": self.dq_dq,
               "dq_dqd": self.dq_dqd}
        if self.dqdot_dmu is not None:
            out["dqdot_dmu"] = self.dqdot_dmu
        return out


@dataclass
class LossGradient:
    dq: np.ndarray
    dqd: np.ndarray
    dtau: np.ndarray
    dv: np.ndarray | None = None          # per contact row, when requested
    complementarity_candidate: int = 0    # which candidate won (0 standard)

    def selection_norm(self, dt: float) -> float:
        return float(self.dqd @ self.dqd + (self.dtau @ self.dtau) / dt)


def tied_subgradient(status, policy: str, seed: int = 0):
    """Resolve tied rows to clamping or separating per policy."""
    status = list(status)
    tied = [i for i, s in enumerate(status) if s == lcp.TIED]
    if not tied:
        return status
    if policy == TIED_CLAMPING:
        picks = [lcp.CLAMPING] * len(tied)
    elif policy == TIED_SEPARATING:
        picks = [lcp.SEPARATING] * len(tied)
    elif policy == TIED_RANDOM:
        rng = np.random.default_rng(seed)
        picks = [lcp.CLAMPING if rng.random() < 0.5 else lcp.SEPARATING
                 for _ in tied]
    else:
        raise ValueError(f"unknown tied policy {policy!r}")
    for i, pick in zip(tied, picks):
        status[i] = pick
    return status


def lcp_impulse_jacobian(problem: lcp.LcpProblem, solution: lcp.LcpSolution,
                         da_product, db: np.ndarray,
                         status=None) -> np.ndarray:
    """d f / d x for a batch of scalars x, given the solved classification.

    ``da_product(vec)`` must return the (m x K) stack of (dA/dx_k) @ vec for
    a fixed full-size vector, or None when A does not depend on x. ``db`` is
    the (m x K) stack of db/dx_k. Separating rows get zero gradient, bounded
    rows follow E times the clamping gradient.
    """
    status = list(solution.status) if status is None else list(status)
    if any(s == lcp.TIED for s in status):
        raise TiedPresentError("tied rows present; resolve a subgradient first")
    m, k = db.shape
    c_rows = np.array([i for i, s in enumerate(status) if s == lcp.CLAMPING],
                      dtype=int)
    b_rows = np.array([i for i, s in enumerate(status)
                       if s in (lcp.BOUND_POS, lcp.BOUND_NEG)], dtype=int)
    b_signs = [1.0 if status[i] == lcp.BOUND_POS else -1.0 for i in b_rows]
    df = np.zeros((m, k))
    if len(c_rows) == 0:
        return df
    a_cc, e = lcp._effective_system(problem, c_rows, b_rows, b_signs)
    rhs = db[c_rows]
    if da_product is not None:
        # (dA_CC_eff/dx) f_C equals rows C of (dA/dx) applied to the full
        # impulse with separating rows zeroed
        f_ext = np.zeros(m)
        f_ext[c_rows] = solution.f[c_rows]
        if len(b_rows):
            f_ext[b_rows] = e @ solution.f[c_rows]
        rhs = rhs + da_product(f_ext)[c_rows]

    sing = np.linalg.svd(a_cc, compute_uv=False) if a_cc.size else np.array([1.0])
    full_rank = sing.min() > lcp.PINV_RCOND * max(sing.max(), 1.0) * 10
    if full_rank:
        df_c = -np.linalg.solve(a_cc, rhs)
    else:
        # derivative of the least-squares-minimal solution f_C = -pinv(A) b_C
        a_pinv = np.linalg.pinv(a_cc, rcond=lcp.PINV_RCOND)
        b_c = problem.b[c_rows]
        f_c = solution.f[c_rows]
        df_c = -a_pinv @ rhs
        if da_product is not None:
            p_left = np.eye(len(c_rows)) - a_cc @ a_pinv
            p_right = np.eye(len(c_rows)) - a_pinv @ a_cc
            w1 = p_left @ b_c
            w2 = a_pinv.T @ f_c
            # dA_CC_eff^T w = rows C of dA @ scatter(w) + E^T (rows B ...)
            def datw(w):
                full = np.zeros(m)
                full[c_rows] = w
                prod = da_product(full)
                out = prod[c_rows]
                if len(b_rows):
                    out = out + e.T @ prod[b_rows]
                return out
            df_c = df_c - (a_pinv @ a_pinv.T) @ datw(w1) + p_right @ datw(w2)
    df[c_rows] = df_c
    if len(b_rows):
        df[b_rows] = e @ df_c
    return df


class _StepDerivatives:
    """Shared intermediates for the Jacobian blocks of one completed step.

    Everything is computed lazily and cached, so asking for a single block
    pays only for what that block actually needs.
    """

    def __init__(self, world: World, ctx: StepContext, status=None):
        self.world = world
        self.ctx = ctx
        self.n = world.skeleton.n
        self.dt = ctx.state.dt
        self.cache = ctx.cache
        self.minv = ctx.minv
        self.status = status
        if ctx.has_contacts:
            self.jmat = ctx.jac.matrix
            if self.status is None:
                self.status = list(ctx.solution.status)
        self._memo = {}

    def _cached(self, key, fn):
        if key not in self._memo:
            self._memo[key] = fn()
        return self._memo[key]

    @property
    def dc_dq(self):
        return self._cached("dc", self._compute_dc)[0]

    @property
    def dc_dqd(self):
        return self._cached("dc", self._compute_dc)[1]

    def _compute_dc(self):
        state = self.ctx.state
        return d_coriolis(self.world.skeleton, state.q, state.qd,
                          cache=self.cache)

    @property
    def d_minv_tc_dq(self):
        state = self.ctx.state
        return self._cached("minv_tc", lambda: d_minv_z_dq(
            self.world.skeleton, state.q, state.tau - self.ctx.coriolis,
            cache=self.cache, minv=self.minv))

    @property
    def dj(self):
        state = self.ctx.state
        return self._cached("dj", lambda: contact_jacobian_derivative(
            self.world.skeleton, state.q, self.world.colliders,
            self.ctx.contacts, cache=self.cache))

    @property
    def jminv(self):
        return self._cached("jminv", lambda: self.jmat @ self.minv)

    def d_minv_vec_dq(self, z):
        return d_minv_z_dq(self.world.skeleton, self.ctx.state.q, z,
                           cache=self.cache, minv=self.minv)

    def da_product_q(self, vec):
        """(dA/dq_j) @ vec for all j, as an (m x n) stack."""
        u = self.jmat.T @ vec
        term1 = np.einsum("rij,i->rj", self.dj, self.minv @ u)
        term2 = self.jmat @ self.d_minv_vec_dq(u)
        term3 = self.jminv @ np.tensordot(vec, self.dj, axes=(0, 0))
        return term1 + term2 + term3

    def db_dq(self):
        state = self.ctx.state
        w = state.qd + self.dt * (self.minv @ (state.tau - self.ctx.coriolis))
        dw_dq = self.dt * (self.d_minv_tc_dq - self.minv @ self.dc_dq)
        out = np.einsum("rij,i->rj", self.dj, w) + self.jmat @ dw_dq
        shift = self.ctx.restitution_shift
        if np.any(shift > 0):
            dvpre_dq = np.einsum("rij,i->rj", self.dj, state.qd)
            out = out + shift[:, None] * dvpre_dq
        return out

    def db_dqd(self):
        out = self.jmat @ (np.eye(self.n) - self.dt * (self.minv @ self.dc_dqd))
        shift = self.ctx.restitution_shift
        if np.any(shift > 0):
            out = out + shift[:, None] * self.jmat
        return out

    def db_dtau(self):
        return self.dt * self.jminv


def _block_dqdot_dq(deriv: _StepDerivatives):
    ctx = deriv.ctx
    state = ctx.state
    dt, minv = deriv.dt, deriv.minv
    z = -dt * (ctx.coriolis - state.tau)
    if not ctx.has_contacts:
        return deriv.d_minv_vec_dq(z) + minv @ (-dt * deriv.dc_dq)
    df_dq = lcp_impulse_jacobian(ctx.problem, ctx.solution,
                                 deriv.da_product_q, deriv.db_dq(),
                                 status=deriv.status)
    djtf = np.tensordot(ctx.solution.f, deriv.dj, axes=(0, 0))
    z = z + deriv.jmat.T @ ctx.solution.f
    return deriv.d_minv_vec_dq(z) + minv @ (-dt * deriv.dc_dq + djtf
                                            + deriv.jmat.T @ df_dq)


def _block_dqdot_dqd(deriv: _StepDerivatives):
    ctx = deriv.ctx
    dt, minv = deriv.dt, deriv.minv
    eye = np.eye(deriv.n)
    if not ctx.has_contacts:
        return eye + minv @ (-dt * deriv.dc_dqd)
    df_dqd = lcp_impulse_jacobian(ctx.problem, ctx.solution, None,
                                  deriv.db_dqd(), status=deriv.status)
    return eye + minv @ (-dt * deriv.dc_dqd + deriv.jmat.T @ df_dqd)


def _block_dqdot_dtau(deriv: _StepDerivatives):
    ctx = deriv.ctx
    dt, minv = deriv.dt, deriv.minv
    if not ctx.has_contacts:
        return dt * minv
    df_dtau = lcp_impulse_jacobian(ctx.problem, ctx.solution, None,
                                   deriv.db_dtau(), status=deriv.status)
    return minv @ (dt * np.eye(deriv.n) + deriv.jmat.T @ df_dtau)


def _velocity_blocks(deriv: _StepDerivatives):
    return (_block_dqdot_dq(deriv), _block_dqdot_dqd(deriv),
            _block_dqdot_dtau(deriv))


def _resolve_status(ctx: StepContext, tied_policy, status):
    if status is None and ctx.has_contacts:
        status = list(ctx.solution.status)
        if any(s == lcp.TIED for s in status):
            if tied_policy is None:
                raise TiedPresentError(
                    "tied contact rows; pass tied_policy to choose a subgradient")
            status = tied_subgradient(status, tied_policy)
    return status


def jacobian_block(world: World, ctx: StepContext, name: str,
                   tied_policy: str | None = None, velocity=None):
    """One named Jacobian block computed on its own.

    Position blocks compose I + dt * (velocity block); passing ``velocity``
    reuses a precomputed velocity block so only the marginal composition
    runs (this is what the per-block benchmark rows measure). Bounce steps
    replace the composition with the continuous-time least-squares fit.
    """
    status = _resolve_status(ctx, tied_policy, None)
    deriv = _StepDerivatives(world, ctx, status=status)
    if name == "dqdot_dq":
        return _block_dqdot_dq(deriv)
    if name == "dqdot_dqd":
        return _block_dqdot_dqd(deriv)
    if name == "dqdot_dtau":
        return _block_dqdot_dtau(deriv)
    if name == "dqdot_dmu":
        return _mu_block(world, ctx, status=status)
    if name in ("dq_dq", "dq_dqd"):
        bounce = _bounce_spec(world, ctx) if ctx.has_contacts else None
        if bounce is not None:
            dq_dq, dq_dqd = bounce_position_jacobians(bounce)
            return dq_dq if name == "dq_dq" else dq_dqd
        if name == "dq_dq":
            vel = velocity if velocity is not None else _block_dqdot_dq(deriv)
            return np.eye(deriv.n) + deriv.dt * vel
        vel = velocity if velocity is not None else _block_dqdot_dqd(deriv)
        return deriv.dt * vel
    raise KeyError(f"unknown block {name!r}")


def _mu_block(world: World, ctx: StepContext, status=None):
    """d qd_{t+1} / d mu by central differences of the analytic pipeline.

    The contact classification is frozen: perturbed solves go through the
    stabilization formula rather than fresh pivoting, so this differentiates
    exactly the function whose other blocks are analytic.
    """
    skeleton = world.skeleton
    state = ctx.state
    mu0 = skeleton.inertial_params()
    status = list(ctx.solution.status) if ctx.has_contacts and status is None \
        else status

    def qd_next_of(mu):
        sk = skeleton.with_inertial_params(mu)
        cache = ArticulatedCache(sk, state.q)
        c = coriolis_gravity(sk, state.q, state.qd, cache=cache)
        minv = minv_matrix(sk, state.q, cache=cache)
        z = -state.dt * (c - state.tau)
        if not ctx.has_contacts:
            return state.qd + minv @ z
        jmat = ctx.jac.matrix
        mass = mass_matrix(sk, state.q, cache=cache)
        problem = lcp.assemble(mass, jmat, state.qd, state.tau, c, state.dt,
                               friction_link=ctx.problem.friction_link,
                               mu=ctx.problem.mu, minv=minv)
        problem.b = problem.b + ctx.restitution_shift * (jmat @ state.qd)
        solution = lcp.stabilize(problem, status)
        return state.qd + minv @ (z + jmat.T @ solution.f)

    k = mu0.shape[0]
    out = np.zeros((skeleton.n, k))
    for i in range(k):
        h = MU_FD_STEP * max(1.0, abs(mu0[i]))
        for _ in range(8):
            hi, lo = mu0.copy(), mu0.copy()
            hi[i] += h
            lo[i] -= h
            try:
                out[:, i] = (qd_next_of(hi) - qd_next_of(lo)) / (2 * h)
                break
            except ValueError:
                # perturbing a small inertia entry can leave the valid cone;
                # shrink until both sides are admissible
                h *= 0.1
        else:
            raise ValueError(f"cannot perturb inertial parameter {i}")
    return out


@dataclass
class BounceSpec:
    rows_now: np.ndarray    # contact rows at q_t, one per bouncing contact
    rows_next: np.ndarray   # same rows re-evaluated at q_{t+1}
    sigmas: np.ndarray
    dt: float


def bounce_position_jacobians(spec: BounceSpec):
    """Continuous-time position Jacobians for elastic bounces.

    Finds the X closest to the identity whose projection onto each bouncing
    contact row equals -sigma (rows_next X pinv(rows_now) diagonal matching,
    solved as one least-squares problem); the velocity position block is
    dt X.
    """
    nb, n = spec.rows_now.shape
    w = np.zeros((n * n, nb))
    for i in range(nb):
        jt = spec.rows_now[i]
        jn = spec.rows_next[i]
        denom = float(jt @ jt)
        if denom <= 0.0 or float(jn @ jn) <= 0.0:
            raise DegenerateBounceRowsError(f"bounce row {i} is zero")
        jt_pinv = jt / denom
        w[:, i] = np.outer(jn, jt_pinv).reshape(-1, order="F")
    center = np.eye(n).reshape(-1, order="F")
    r = spec.sigmas
    rhs = r + w.T @ center
    v = center - np.linalg.pinv(w.T, rcond=lcp.PINV_RCOND) @ rhs
    x = v.reshape(n, n, order="F")
    return x, spec.dt * x


def _bounce_spec(world: World, ctx: StepContext) -> BounceSpec | None:
    rows = ctx.bounce_rows()
    if len(rows) == 0:
        return None
    rows_next = contact_rows_at(world, ctx.next_state.q, ctx.contacts)
    return BounceSpec(rows_now=ctx.jac.matrix[rows],
                      rows_next=rows_next[rows],
                      sigmas=ctx.restitution_shift[rows],
                      dt=ctx.state.dt)


def step_jacobians(world: World, ctx: StepContext, compute_mu: bool = True,
                   tied_policy: str | None = None,
                   status=None) -> StepJacobians:
    """All Jacobian blocks of one completed step.

    ``status`` overrides the classification used for impulse gradients (the
    complementarity-aware pass uses this); tied rows raise TiedPresentError
    unless a policy resolves them.
    """
    status = _resolve_status(ctx, tied_policy, status)
    deriv = _StepDerivatives(world, ctx, status=status)
    dqdot_dq, dqdot_dqd, dqdot_dtau = _velocity_blocks(deriv)
    n = world.skeleton.n
    dt = ctx.state.dt
    dq_dq = np.eye(n) + dt * dqdot_dq
    dq_dqd = dt * dqdot_dqd
    bounce = _bounce_spec(world, ctx) if ctx.has_contacts else None
    corrected = False
    if bounce is not None:
        dq_dq, dq_dqd = bounce_position_jacobians(bounce)
        corrected = True
    jac = StepJacobians(dqdot_dq=dqdot_dq, dqdot_dqd=dqdot_dqd,
                        dqdot_dtau=dqdot_dtau, dq_dq=dq_dq, dq_dqd=dq_dqd,
                        bounce_corrected=corrected)
    if compute_mu:
        jac.dqdot_dmu = _mu_block(world, ctx, status=status)
    return jac


def backprop_step(jacobians: StepJacobians, grad_q_next, grad_qd_next,
                  dt: float) -> LossGradient:
    """Pull a loss gradient at t+1 back to (q_t, qd_t, tau_t)."""
    gq = np.asarray(grad_q_next, dtype=float)
    gqd = np.asarray(grad_qd_next, dtype=float)
    dq = jacobians.dq_dq.T @ gq + jacobians.dqdot_dq.T @ gqd
    dqd = jacobians.dq_dqd.T @ gq + jacobians.dqdot_dqd.T @ gqd
    dtau = jacobians.dqdot_dtau.T @ (gqd + dt * gq)
    return LossGradient(dq=dq, dqd=dqd, dtau=dtau)


def _reclassified_status(ctx: StepContext, dl_dv, tol=1e-12):
    """Candidate classification from the sign of dl/dv on normal rows:
    pushing for separation frees the row, pushing for approach clamps it.
    Friction rows follow their normal when it separates."""
    status = list(ctx.solution.status)
    m = len(status)
    new = list(status)
    for k in range(len(ctx.contacts)):
        row = 3 * k
        if dl_dv[row] < -tol:
            new[row] = lcp.SEPARATING
            for r in (row + 1, row + 2):
                if r < m:
                    new[r] = lcp.SEPARATING
        elif dl_dv[row] > tol:
            if new[row] != lcp.CLAMPING:
                new[row] = lcp.CLAMPING
                # bounded friction needs its normal in the clamping set; the
                # forward friction classes are kept otherwise
                for r in (row + 1, row + 2):
                    if r < m and new[r] == lcp.SEPARATING:
                        new[r] = lcp.CLAMPING
    return new


def complementarity_aware_backprop(world: World, ctx: StepContext,
                                   grad_q_next, grad_qd_next,
                                   jacobians: StepJacobians | None = None,
                                   tied_policy: str = TIED_CLAMPING):
    """Backward pass that also tries the contact classification suggested by
    the loss itself and keeps whichever candidate carries more gradient.

    Returns the winning LossGradient; candidate 0 is the true classification
    and candidate 1 reclassifies rows by the sign of dl/dv.
    """
    dt = ctx.state.dt
    if jacobians is None:
        jacobians = step_jacobians(world, ctx, compute_mu=False,
                                   tied_policy=tied_policy)
    standard = backprop_step(jacobians, grad_q_next, grad_qd_next, dt)
    if not ctx.has_contacts:
        standard.dv = np.zeros(0)
        return standard
    gqd_total = np.asarray(grad_qd_next, dtype=float) \
        + dt * np.asarray(grad_q_next, dtype=float)
    dl_dv = ctx.jac.matrix @ (ctx.minv @ gqd_total)
    standard.dv = dl_dv
    status2 = _reclassified_status(ctx, dl_dv)
    base_status = tied_subgradient(ctx.solution.status, tied_policy)
    if status2 == base_status:
        return standard
    jac2 = step_jacobians(world, ctx, compute_mu=False, status=status2)
    candidate = backprop_step(jac2, grad_q_next, grad_qd_next, dt)
    candidate.dv = dl_dv
    candidate.complementarity_candidate = 1
    if candidate.selection_norm(dt) >= standard.selection_norm(dt):
        return candidate
    return standard
