"""Boxed contact LCP: assembly, direct solution, enumeration oracle,
stabilization, and warm starting.

Row model: every row is either a normal row (bounds [0, inf)) or a friction
row boxed by +-mu times the impulse of its linked normal row. A solution
classifies each row:

* ``C``  clamping: relative velocity held at zero by an interior impulse.
* ``S``  separating: zero impulse, velocity free (nonnegative for normals).
  A friction row is ``S`` exactly when its normal carries no impulse.
* ``B+`` / ``B-``  friction saturated at +bound / -bound.
* ``T``  tied: impulse and velocity both at zero (reported for normal rows;
  gradient code resolves these to a subgradient).

Complementarity residual is accumulated over normal and clamping-friction
rows; bounded friction rows legitimately do negative work and are excluded.

Sign conventions follow the clamping condition 0 = A_CC f_C + b_C, so the
stabilized impulse is f_C = -pinv(A_CC_eff) b_C with the friction coupling
A_CC_eff = A_CC + A_CB E.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .textio import write_blocks

EPS_BASE = 1e-9
PINV_RCOND = 1e-10
MAX_PIVOTS_PER_ROW = 64
ENUM_MAX_ROWS = 12

CLAMPING = "C"
SEPARATING = "S"
TIED = "T"
BOUND_POS = "B+"
BOUND_NEG = "B-"


class DimensionMismatchError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    """Enumeration found no classification satisfying all LCP conditions."""


class NoConvergenceError(RuntimeError):
    """Pivoting exceeded its budget; boxed LCPs carry no solvability
    guarantee and the failure is surfaced rather than regularized."""


class StaleClassificationError(RuntimeError):
    """A supplied classification no longer verifies against the problem."""


@dataclass
class LcpProblem:
    a: np.ndarray
    b: np.ndarray
    friction_link: np.ndarray  # -1 for normal rows, else linked normal row
    mu: np.ndarray             # friction coefficient per friction row

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        m = self.b.shape[0]
        if self.a.shape != (m, m):
            raise DimensionMismatchError("A must be m x m matching b")
        if self.friction_link is None:
            self.friction_link = -np.ones(m, dtype=int)
        self.friction_link = np.asarray(self.friction_link, dtype=int)
        if self.mu is None:
            self.mu = np.zeros(m)
        self.mu = np.asarray(self.mu, dtype=float)
        if self.friction_link.shape != (m,) or self.mu.shape != (m,):
            raise DimensionMismatchError("bound spec must match b")
        for i, link in enumerate(self.friction_link):
            if link >= 0 and not link < i:
                raise DimensionMismatchError(
                    "friction rows must come after their normal row")
        if np.abs(self.a - self.a.T).max() > 1e-10 * max(1.0, np.abs(self.a).max()):
            raise ValueError("A must be symmetric")
        if self.a.size and np.linalg.eigvalsh(self.a).min() < -1e-10 * max(
                1.0, np.abs(self.a).max()):
            raise ValueError("A must be positive semidefinite")

    @property
    def m(self) -> int:
        return self.b.shape[0]

    def is_friction(self) -> np.ndarray:
        return self.friction_link >= 0

    def row_tol(self) -> np.ndarray:
        scale = np.maximum(1.0, np.maximum(
            np.linalg.norm(self.a, axis=1), np.abs(self.b)))
        return EPS_BASE * scale

    def dump(self, solution: "LcpSolution | None" = None) -> str:
        """Text dump of (A, b, bounds, solution, classification) for triage."""
        blocks = {"A": self.a, "b": self.b.reshape(1, -1),
                  "friction_link": self.friction_link.reshape(1, -1).astype(float),
                  "mu": self.mu.reshape(1, -1)}
        text = write_blocks(blocks)
        if solution is not None:
            text += write_blocks({"f": solution.f.reshape(1, -1),
                                  "v": solution.v.reshape(1, -1)})
            text += "# classification " + ",".join(solution.status) + "\n"
        return text


@dataclass
class LcpSolution:
    f: np.ndarray
    v: np.ndarray
    status: list
    warm_hit: bool = False

    def clamping_rows(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.status)
                         if s in (CLAMPING, TIED)], dtype=int)

    def bounded_rows(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.status)
                         if s in (BOUND_POS, BOUND_NEG)], dtype=int)

    def tied_rows(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.status) if s == TIED],
                        dtype=int)


def assemble(m_matrix, j_matrix, qd, tau, c, dt, friction_link=None, mu=None,
             minv=None) -> LcpProblem:
    """A = J M^-1 J^T and b = J (qd + dt M^-1 (tau - c))."""
    j_matrix = np.asarray(j_matrix, dtype=float)
    qd, tau, c = (np.asarray(x, dtype=float) for x in (qd, tau, c))
    n = qd.shape[0]
    if j_matrix.shape[1] != n or np.shape(m_matrix) != (n, n):
        raise DimensionMismatchError("J and M must match the state dimension")
    if minv is None:
        minv = np.linalg.inv(m_matrix)
    a = j_matrix @ minv @ j_matrix.T
    a = 0.5 * (a + a.T)  # exact symmetry despite roundoff
    b = j_matrix @ (qd + dt * (minv @ (tau - c)))
    mrows = j_matrix.shape[0]
    if friction_link is None:
        friction_link = -np.ones(mrows, dtype=int)
    if mu is None:
        mu = np.zeros(mrows)
    return LcpProblem(a=a, b=b, friction_link=friction_link, mu=mu)


# ---------------------------------------------------------------------------
# Classification helpers.


def _effective_system(problem: LcpProblem, c_rows, b_rows, b_signs):
    """A_CC_eff = A_CC + A_CB E and the E matrix mapping f_C to f_B."""
    c_rows = np.asarray(c_rows, dtype=int)
    b_rows = np.asarray(b_rows, dtype=int)
    e = np.zeros((len(b_rows), len(c_rows)))
    c_pos = {int(r): k for k, r in enumerate(c_rows)}
    for row_idx, (r, sgn) in enumerate(zip(b_rows, b_signs)):
        link = int(problem.friction_link[r])
        if link not in c_pos:
            raise StaleClassificationError(
                f"bounded row {r} links to normal {link} outside clamping set")
        e[row_idx, c_pos[link]] = sgn * problem.mu[r]
    a_cc = problem.a[np.ix_(c_rows, c_rows)]
    if len(b_rows):
        a_cc = a_cc + problem.a[np.ix_(c_rows, b_rows)] @ e
    return a_cc, e


def _canonical_status(problem: LcpProblem, f, v):
    """Relabel rows from the solved values; deterministic and shared by the
    direct solver and the enumeration oracle."""
    tol = problem.row_tol()
    status = []
    for i in range(problem.m):
        link = problem.friction_link[i]
        if link < 0:
            if f[i] > tol[i]:
                status.append(CLAMPING)
            elif v[i] > tol[i]:
                status.append(SEPARATING)
            else:
                status.append(TIED)
        else:
            bound = problem.mu[i] * max(f[link], 0.0)
            if bound <= tol[i]:
                status.append(SEPARATING)
            elif f[i] >= bound - tol[i]:
                status.append(BOUND_POS)
            elif f[i] <= -bound + tol[i]:
                status.append(BOUND_NEG)
            else:
                status.append(CLAMPING)
    return status


def _verify(problem: LcpProblem, f, v, status) -> bool:
    tol = problem.row_tol()
    for i, s in enumerate(status):
        link = problem.friction_link[i]
        if link < 0:
            if f[i] < -tol[i] or v[i] < -tol[i]:
                return False
            if s in (CLAMPING, TIED) and abs(v[i]) > tol[i] and f[i] > tol[i]:
                return False
            if abs(f[i]) > tol[i] and abs(v[i]) > tol[i]:
                return False
        else:
            bound = problem.mu[i] * max(f[link], 0.0)
            if abs(f[i]) > bound + tol[i]:
                return False
            if s == BOUND_POS and v[i] > tol[i]:
                return False
            if s == BOUND_NEG and v[i] < -tol[i]:
                return False
            if s in (CLAMPING, TIED) and abs(f[i]) < bound - tol[i] \
                    and abs(v[i]) > tol[i]:
                return False
    return True


def complementarity_residual(problem: LcpProblem, f, v) -> float:
    """|f . v| accumulated over normal rows and interior friction rows."""
    tol = problem.row_tol()
    total = 0.0
    for i in range(problem.m):
        link = problem.friction_link[i]
        if link < 0:
            total += f[i] * v[i]
        else:
            bound = problem.mu[i] * max(f[link], 0.0)
            if abs(f[i]) < bound - tol[i]:
                total += f[i] * v[i]
    return abs(total)


def _status_sets(status):
    c_rows = [i for i, s in enumerate(status) if s in (CLAMPING, TIED)]
    b_rows = [i for i, s in enumerate(status) if s in (BOUND_POS, BOUND_NEG)]
    b_signs = [1.0 if status[i] == BOUND_POS else -1.0 for i in b_rows]
    return np.array(c_rows, dtype=int), np.array(b_rows, dtype=int), b_signs


def stabilize(problem: LcpProblem, status) -> LcpSolution:
    """Least-squares-minimal exact impulse for a given classification.

    f_C solves A_CC_eff f_C = -b_C through a rank-revealing pseudo-inverse
    (singular values below 1e-10 of the largest are dropped), f_B = E f_C,
    f_S = 0. Verification failure raises StaleClassificationError.
    """
    c_rows, b_rows, b_signs = _status_sets(status)
    f = np.zeros(problem.m)
    if len(c_rows):
        a_cc, e = _effective_system(problem, c_rows, b_rows, b_signs)
        f_c = -np.linalg.pinv(a_cc, rcond=PINV_RCOND) @ problem.b[c_rows]
        f[c_rows] = f_c
        if len(b_rows):
            f[b_rows] = e @ f_c
        residual = a_cc @ f_c + problem.b[c_rows]
        tol = problem.row_tol()[c_rows]
        if np.any(np.abs(residual) > tol):
            raise StaleClassificationError("clamping system is inconsistent")
    v = problem.a @ f + problem.b
    new_status = _canonical_status(problem, f, v)
    if not _verify(problem, f, v, new_status):
        raise StaleClassificationError("stabilized impulse fails verification")
    return LcpSolution(f=f, v=v, status=new_status)


def bound_linkage_matrix(problem: LcpProblem, solution: LcpSolution) -> np.ndarray:
    """E with one entry of +-mu per bounded row, mapping f_C to f_B."""
    c_rows, b_rows, b_signs = _status_sets(solution.status)
    _, e = _effective_system(problem, c_rows, b_rows, b_signs)
    return e


# ---------------------------------------------------------------------------
# Enumeration oracle.


def solve_enumerate(problem: LcpProblem) -> LcpSolution:
    """Brute-force reference solve: try every classification, keep every
    feasible candidate, return the least-squares-minimal impulse."""
    if problem.m > ENUM_MAX_ROWS:
        raise ValueError(f"enumeration limited to m <= {ENUM_MAX_ROWS}")
    normals = [i for i in range(problem.m) if problem.friction_link[i] < 0]
    frictions = [i for i in range(problem.m) if problem.friction_link[i] >= 0]
    tol = problem.row_tol()
    best = None
    best_norm = np.inf

    def candidates(idx, assignment):
        if idx == len(normals) + len(frictions):
            yield dict(assignment)
            return
        if idx < len(normals):
            row = normals[idx]
            for s in (CLAMPING, SEPARATING):
                assignment[row] = s
                yield from candidates(idx + 1, assignment)
        else:
            row = frictions[idx - len(normals)]
            if assignment[problem.friction_link[row]] == SEPARATING:
                assignment[row] = SEPARATING
                yield from candidates(idx + 1, assignment)
            else:
                for s in (CLAMPING, BOUND_POS, BOUND_NEG):
                    assignment[row] = s
                    yield from candidates(idx + 1, assignment)

    for assign in candidates(0, {}):
        status = [assign[i] for i in range(problem.m)]
        c_rows, b_rows, b_signs = _status_sets(status)
        f = np.zeros(problem.m)
        if len(c_rows):
            try:
                a_cc, e = _effective_system(problem, c_rows, b_rows, b_signs)
            except StaleClassificationError:
                continue
            f_c, *_ = np.linalg.lstsq(a_cc, -problem.b[c_rows], rcond=PINV_RCOND)
            if np.any(np.abs(a_cc @ f_c + problem.b[c_rows]) > tol[c_rows]):
                continue
            f[c_rows] = f_c
            if len(b_rows):
                f[b_rows] = e @ f_c
        elif len(b_rows):
            continue  # bounded rows require their normals clamping
        v = problem.a @ f + problem.b
        if not _verify(problem, f, v, status):
            continue
        norm = float(f @ f)
        if norm < best_norm - 1e-15:
            best, best_norm = (f, v), norm
    if best is None:
        raise InfeasibleError("no feasible classification")
    f, v = best
    return LcpSolution(f=f, v=v, status=_canonical_status(problem, f, v))


def enumerate_solutions(problem: LcpProblem) -> list:
    """Every distinct feasible stabilized impulse, for membership checks.

    Boxed LCPs with coupled friction bounds can have several genuine
    solutions even when A is positive-definite; the direct solver is
    required to land inside this set.
    """
    if problem.m > ENUM_MAX_ROWS:
        raise ValueError(f"enumeration limited to m <= {ENUM_MAX_ROWS}")
    normals = [i for i in range(problem.m) if problem.friction_link[i] < 0]
    frictions = [i for i in range(problem.m) if problem.friction_link[i] >= 0]

    def candidates(idx, assignment):
        if idx == len(normals) + len(frictions):
            yield dict(assignment)
            return
        if idx < len(normals):
            row = normals[idx]
            for s in (CLAMPING, SEPARATING):
                assignment[row] = s
                yield from candidates(idx + 1, assignment)
        else:
            row = frictions[idx - len(normals)]
            if assignment[problem.friction_link[row]] == SEPARATING:
                assignment[row] = SEPARATING
                yield from candidates(idx + 1, assignment)
            else:
                for s in (CLAMPING, BOUND_POS, BOUND_NEG):
                    assignment[row] = s
                    yield from candidates(idx + 1, assignment)

    found = []
    for assign in candidates(0, {}):
        status = [assign[i] for i in range(problem.m)]
        try:
            sol = stabilize(problem, status)
        except StaleClassificationError:
            continue
        if all(np.abs(sol.f - other.f).max() > 1e-10 for other in found):
            found.append(sol)
    return found


# ---------------------------------------------------------------------------
# Direct boxed-Dantzig solver.


def _settled(problem: LcpProblem, f, v, d, tol):
    """Terminal classification for row d at its current values, or None if
    the row still violates complementarity and must be driven."""
    link = problem.friction_link[d]
    if link < 0:
        if f[d] <= tol[d] and v[d] >= -tol[d]:
            return CLAMPING if v[d] <= tol[d] else SEPARATING
        if f[d] > tol[d] and abs(v[d]) <= tol[d]:
            return CLAMPING
        return None
    bound = problem.mu[d] * max(f[link], 0.0)
    if bound <= tol[d]:
        return SEPARATING if abs(f[d]) <= tol[d] else None
    if abs(f[d]) > bound + tol[d]:
        return None
    if abs(v[d]) <= tol[d]:
        if f[d] >= bound - tol[d]:
            return BOUND_POS
        if f[d] <= -bound + tol[d]:
            return BOUND_NEG
        return CLAMPING
    desired = -np.sign(v[d])
    if f[d] * desired >= bound - tol[d]:
        return BOUND_POS if desired > 0 else BOUND_NEG
    return None


def _drive_direction(problem: LcpProblem, f, v, d, tol):
    """(direction, want_zero) for the next drive of row d."""
    link = problem.friction_link[d]
    if link < 0:
        if v[d] < -tol[d]:
            return 1.0, False
        return -1.0, True  # positive force with separating velocity: shed it
    bound = problem.mu[d] * max(f[link], 0.0)
    if bound <= tol[d]:
        return -np.sign(f[d]), True  # bound collapsed: walk the force to zero
    if abs(f[d]) > bound + tol[d]:
        return -np.sign(f[d]), False  # outside the box: walk back to the bound
    return -np.sign(v[d]), False


def _drive_index(problem: LcpProblem, f, status, d, tol):
    """Enforce complementarity for row d by a continuous Dantzig drive.

    The clamping set responds so its velocities stay at zero; friction
    bounds are re-evaluated against the moving normal impulses at every
    pivot, so bounded rows ride their boxes during the drive."""
    a, b = problem.a, problem.b
    m = problem.m
    status[d] = "U"
    for _ in range(MAX_PIVOTS_PER_ROW * max(1, m)):
        v = a @ f + b
        settled = _settled(problem, f, v, d, tol)
        if settled is not None:
            status[d] = settled
            if settled == SEPARATING:
                f[d] = 0.0
            return
        direction, want_zero = _drive_direction(problem, f, v, d, tol)

        c_rows, b_rows, b_signs = _status_sets(status)
        try:
            a_cc, e = _effective_system(problem, c_rows, b_rows, b_signs)
        except StaleClassificationError as exc:
            raise NoConvergenceError(str(exc)) from exc
        s_full = np.zeros(m)
        s_full[d] = direction
        if len(c_rows):
            rhs = a[c_rows, d] * direction
            try:
                s_c = -np.linalg.solve(a_cc, rhs)
            except np.linalg.LinAlgError:
                s_c = -np.linalg.lstsq(a_cc, rhs, rcond=PINV_RCOND)[0]
            s_full[c_rows] = s_c
            if len(b_rows):
                s_full[b_rows] = e @ s_c
        dv = a @ s_full

        events = []  # (t, kind, payload)
        if want_zero:
            if abs(s_full[d]) > 1e-14 and f[d] * direction < 0:
                events.append((abs(f[d]), "drive_zero", d))
        else:
            if abs(dv[d]) > 1e-14:
                t = -v[d] / dv[d]
                if t > 0:
                    events.append((t, "drive_done", d))
        link = problem.friction_link[d]
        if link >= 0 and not want_zero:
            bound = problem.mu[d] * max(f[link], 0.0)
            bound_rate = problem.mu[d] * s_full[link]
            for sgn in (1.0, -1.0):
                denom = direction - sgn * bound_rate
                if abs(denom) > 1e-14:
                    t = (sgn * bound - f[d]) / denom
                    if t > 1e-14:
                        events.append((t, "drive_bound", sgn))
        for k in c_rows:
            rate = s_full[k]
            klink = problem.friction_link[k]
            if klink < 0:
                if rate < -1e-14 and f[k] > 0:
                    events.append((f[k] / -rate, "c_to_zero", k))
            else:
                kb = problem.mu[k] * max(f[klink], 0.0)
                kb_rate = problem.mu[k] * s_full[klink]
                for sgn in (1.0, -1.0):
                    denom = rate - sgn * kb_rate
                    if abs(denom) > 1e-14:
                        t = (sgn * kb - f[k]) / denom
                        if t > 1e-14:
                            events.append((t, "c_to_bound", (k, sgn)))
        for k in range(m):
            if k == d:
                continue
            if status[k] == SEPARATING and problem.friction_link[k] < 0:
                if dv[k] < -1e-14 and v[k] >= 0:
                    events.append((v[k] / -dv[k], "join_c", k))
            elif status[k] == BOUND_POS and dv[k] > 1e-14 and v[k] <= 0:
                events.append((-v[k] / dv[k], "join_c", k))
            elif status[k] == BOUND_NEG and dv[k] < -1e-14 and v[k] >= 0:
                events.append((v[k] / -dv[k], "join_c", k))

        if not events:
            # Degenerate ray: the drive direction lies in the null space of A
            # restricted to the active rows, so nothing can ever trigger. A
            # zero-impulse clamping row is pinning a velocity for free; drop
            # the first one and retry with the freed degree of freedom.
            dropped = False
            for k in c_rows:
                if abs(f[k]) <= tol[k]:
                    status[k] = "U"
                    f[k] = 0.0
                    dropped = True
                    break
            if dropped:
                continue
            raise NoConvergenceError(f"row {d}: no admissible pivot direction")
        t, kind, payload = min(events, key=lambda ev: ev[0])
        f += t * s_full
        if kind == "drive_zero":
            f[d] = 0.0
            continue  # settles as separating on the next check
        if kind == "drive_done":
            status[d] = CLAMPING
            return
        if kind == "drive_bound":
            status[d] = BOUND_POS if payload > 0 else BOUND_NEG
            return
        if kind == "c_to_zero":
            status[payload] = SEPARATING
            f[payload] = 0.0
            # friction rows boxed by this normal saw their bound collapse to
            # zero along the drive; their forces are zero now
            for j in range(m):
                if problem.friction_link[j] == payload and status[j] != "U" \
                        and status[j] != SEPARATING:
                    status[j] = SEPARATING
                    f[j] = 0.0
        elif kind == "c_to_bound":
            k, sgn = payload
            status[k] = BOUND_POS if sgn > 0 else BOUND_NEG
        elif kind == "join_c":
            status[payload] = CLAMPING
    raise NoConvergenceError(f"row {d}: pivot budget exhausted")


def _first_violation(problem: LcpProblem, f, v, status, tol):
    for d in range(problem.m):
        link = problem.friction_link[d]
        if link < 0:
            if f[d] < -tol[d] or v[d] < -tol[d]:
                return d
            if f[d] > tol[d] and abs(v[d]) > tol[d]:
                return d
        else:
            bound = problem.mu[d] * max(f[link], 0.0)
            if abs(f[d]) > bound + tol[d]:
                return d
            if bound > tol[d] and abs(f[d]) < bound - tol[d] \
                    and abs(v[d]) > tol[d]:
                return d
            if bound > tol[d] and abs(v[d]) > tol[d] \
                    and f[d] * (-np.sign(v[d])) < bound - tol[d]:
                return d
    return None


def _pivot_solve(problem: LcpProblem, order):
    """One full pivoting pass in the given processing order, then re-drive
    sweeps until every row verifies."""
    m = problem.m
    f = np.zeros(m)
    status = ["U"] * m
    tol = problem.row_tol()
    for d in order:
        _drive_index(problem, f, status, d, tol)
    for _ in range(MAX_PIVOTS_PER_ROW * max(1, m)):
        v = problem.a @ f + problem.b
        bad = _first_violation(problem, f, v, status, tol)
        if bad is None:
            break
        _drive_index(problem, f, status, bad, tol)
    else:
        raise NoConvergenceError("re-drive sweep did not settle")
    v = problem.a @ f + problem.b
    status = _canonical_status(problem, f, v)
    if not _verify(problem, f, v, status):
        raise NoConvergenceError("pivoting finished on an infeasible point")
    return status


def _solve_fixed_box(a, b, lo, hi, tol):
    """Dantzig solve of a symmetric-PSD LCP with constant box bounds.

    Used by the fixed-point fallback; with constant bounds every principal
    pivot is a Schur complement of a symmetric PSD matrix, which keeps the
    drives monotone."""
    m = b.shape[0]
    f = np.zeros(m)
    # interior: velocity zero; at a bound: velocity signed away from the box
    state = ["L"] * m  # L at lo, H at hi, C interior (lo<f<hi, v=0)
    for i in range(m):
        if lo[i] == 0.0 and hi[i] == 0.0:
            pass
        f[i] = np.clip(0.0, lo[i], hi[i])

    def drive(d, budget):
        for _ in range(budget):
            v = a @ f + b
            if state[d] == "L" and v[d] >= -tol[d]:
                return
            if state[d] == "H" and v[d] <= tol[d]:
                return
            if state[d] == "C" and abs(v[d]) <= tol[d]:
                return
            direction = -np.sign(v[d])
            c_rows = np.array([k for k in range(m) if state[k] == "C" and k != d],
                              dtype=int)
            s = np.zeros(m)
            s[d] = direction
            if len(c_rows):
                sub = a[np.ix_(c_rows, c_rows)]
                rhs = a[c_rows, d] * direction
                try:
                    s[c_rows] = -np.linalg.solve(sub, rhs)
                except np.linalg.LinAlgError:
                    s[c_rows] = -np.linalg.lstsq(sub, rhs, rcond=PINV_RCOND)[0]
            dv = a @ s
            events = []
            if abs(dv[d]) > 1e-14:
                t = -v[d] / dv[d]
                if t > 0:
                    events.append((t, "done", d, None))
            if direction > 0 and np.isfinite(hi[d]):
                t = (hi[d] - f[d]) / direction
                if t > 1e-14 or (t >= 0 and not events):
                    events.append((max(t, 0.0), "box", d, "H"))
            if direction < 0 and np.isfinite(lo[d]):
                t = (lo[d] - f[d]) / direction
                if t > 1e-14 or (t >= 0 and not events):
                    events.append((max(t, 0.0), "box", d, "L"))
            for k in c_rows:
                if s[k] > 1e-14 and np.isfinite(hi[k]):
                    events.append(((hi[k] - f[k]) / s[k], "box", k, "H"))
                elif s[k] < -1e-14 and np.isfinite(lo[k]):
                    events.append(((lo[k] - f[k]) / s[k], "box", k, "L"))
            for k in range(m):
                if k == d or state[k] == "C":
                    continue
                if state[k] == "L" and dv[k] < -1e-14 and v[k] >= 0:
                    events.append((v[k] / -dv[k], "join", k, None))
                elif state[k] == "H" and dv[k] > 1e-14 and v[k] <= 0:
                    events.append((-v[k] / dv[k], "join", k, None))
            if not events:
                dropped = False
                for k in c_rows:
                    if abs(f[k]) <= tol[k]:
                        state[k] = "L" if abs(lo[k]) <= abs(hi[k]) else "H"
                        f[k] = lo[k] if state[k] == "L" else hi[k]
                        dropped = True
                        break
                if dropped:
                    continue
                raise NoConvergenceError(f"fixed box row {d}: no pivot")
            t, kind, row, side = min(events, key=lambda ev: ev[0])
            f[:] = f + t * s
            if kind == "done":
                state[d] = "C"
                return
            if kind == "box":
                f[row] = hi[row] if side == "H" else lo[row]
                state[row] = side
                if row == d:
                    return
            elif kind == "join":
                state[row] = "C"
        raise NoConvergenceError(f"fixed box row {d}: budget exhausted")

    budget = MAX_PIVOTS_PER_ROW * max(1, m)
    for d in range(m):
        drive(d, budget)
    for _ in range(budget):
        v = a @ f + b
        bad = None
        for d in range(m):
            ok = ((state[d] == "L" and v[d] >= -tol[d])
                  or (state[d] == "H" and v[d] <= tol[d])
                  or (state[d] == "C" and abs(v[d]) <= tol[d]
                      and lo[d] - tol[d] <= f[d] <= hi[d] + tol[d]))
            if not ok:
                bad = d
                break
        if bad is None:
            return f
        drive(bad, budget)
    raise NoConvergenceError("fixed box sweep did not settle")


def _fixed_point_solve(problem: LcpProblem):
    """ODE-style outer iteration: freeze friction bounds at the current
    normal impulses, solve the constant-box LCP, update, repeat."""
    m = problem.m
    tol = problem.row_tol()
    is_fr = problem.is_friction()
    f = np.zeros(m)
    for _ in range(60):
        lo = np.where(is_fr, -problem.mu * np.maximum(
            f[problem.friction_link], 0.0), 0.0)
        hi = np.where(is_fr, -lo, np.inf)
        f_new = _solve_fixed_box(problem.a, problem.b, lo, hi, tol)
        if np.abs(f_new - f).max() <= 1e-12 * max(1.0, np.abs(f_new).max()):
            f = f_new
            break
        f = f_new
    v = problem.a @ f + problem.b
    status = _canonical_status(problem, f, v)
    if not _verify(problem, f, v, status):
        raise NoConvergenceError("fixed-point bounds did not verify")
    return status


def _group_orders(problem: LcpProblem):
    """Deterministic alternative processing orders: contact groups rotated,
    friction rows always after their own normal."""
    groups = []
    for i in range(problem.m):
        if problem.friction_link[i] < 0:
            groups.append([i])
        else:
            groups[-1].append(i)  # friction rows follow their normal
    orders = []
    for shift in range(len(groups)):
        rotated = groups[shift:] + groups[:shift]
        orders.append([i for g in rotated for i in g])
    return orders[:4]


def solve_direct(problem: LcpProblem, warm=None) -> LcpSolution:
    """Direct boxed-LCP solve: Dantzig-style principal pivoting with friction
    bounds re-evaluated at every pivot, followed by stabilization.

    With a warm classification that still verifies, the answer comes from a
    single stabilized linear solve and no pivoting happens at all. If the
    coupled pivoting stalls (friction coupling can produce negative
    effective pivots), a fixed-bound outer iteration and rotated processing
    orders are tried before surfacing NoConvergence; nothing is regularized
    silently.
    """
    if warm is not None:
        try:
            solution = stabilize(problem, warm)
            solution.warm_hit = True
            return solution
        except StaleClassificationError:
            pass
    attempts = [("pivot", list(range(problem.m)))]
    attempts.append(("fixed_point", None))
    attempts.extend(("pivot", order) for order in _group_orders(problem)[1:])
    last_error = None
    for kind, order in attempts:
        try:
            if kind == "pivot":
                status = _pivot_solve(problem, order)
            else:
                status = _fixed_point_solve(problem)
            return stabilize(problem, status)
        except (NoConvergenceError, StaleClassificationError) as exc:
            last_error = exc
    raise NoConvergenceError(str(last_error))
