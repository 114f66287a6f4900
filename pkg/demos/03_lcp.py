"""Anatomy of the boxed contact LCP.

Shows the direct solver and the brute-force enumeration oracle agreeing,
the least-squares stabilization resolving a rank-deficient contact pair,
and friction rows saturating at their Coulomb bound.
"""

import numpy as np

from diffrbd import lcp

# --- a non-rotating box on two contacts: rank-one A --------------------------
# both contact columns are identical, so any split of the weight solves the
# LCP; stabilization returns the least-squares-minimal (symmetric) split
w = 2.0 * 9.81 * 1e-3
problem = lcp.LcpProblem(a=np.array([[1.0, 1.0], [1.0, 1.0]]),
                         b=np.array([-w, -w]),
                         friction_link=np.array([-1, -1]), mu=np.zeros(2))
sol = lcp.solve_direct(problem)
print("rank-deficient pair: f =", sol.f, " (w/2 =", w / 2, ")")
print("  classification:", sol.status)
print("  enumeration oracle agrees:",
      np.abs(lcp.solve_enumerate(problem).f - sol.f).max() < 1e-12)

# stabilization is idempotent, bit for bit
s1 = lcp.stabilize(problem, sol.status)
s2 = lcp.stabilize(problem, s1.status)
print("  stabilize twice, identical bytes:", s1.f.tobytes() == s2.f.tobytes())

# --- friction saturation ------------------------------------------------------
# a unit mass sliding sideways: the normal row clamps, the friction row hits
# its box at mu times the normal impulse, opposing the slide
dt, mu_s = 0.01, 0.2
j = np.array([[0.0, 1.0], [1.0, 0.0]])   # rows: normal (z), tangent (x)
problem = lcp.assemble(np.eye(2), j, np.array([1.0, -0.001]), np.zeros(2),
                       np.array([0.0, 9.81]), dt,
                       friction_link=np.array([-1, 0]),
                       mu=np.array([0.0, mu_s]))
sol = lcp.solve_direct(problem)
print("\nsliding block: classification", sol.status)
print("  normal impulse ", sol.f[0])
print("  friction impulse", sol.f[1], "= -mu * normal =", -mu_s * sol.f[0])

# --- warm starting -------------------------------------------------------------
# the prior classification verifies against a slightly different problem, so
# the new solve is a single stabilized linear system, no pivoting at all
shifted = lcp.LcpProblem(a=problem.a, b=problem.b + 1e-6,
                         friction_link=problem.friction_link, mu=problem.mu)
warm = lcp.solve_direct(shifted, warm=sol.status)
print("\nwarm start accepted:", warm.warm_hit,
      " impulse drift:", np.abs(warm.f - sol.f).max())

# --- the failure-triage dump ----------------------------------------------------
print("\ndebug dump of (A, b, bounds, solution, classification):")
print(problem.dump(sol))
