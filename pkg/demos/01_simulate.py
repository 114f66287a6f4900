"""Forward simulation walkthrough.

Loads bundled scenes, steps them, and prints what the engine is doing:
resting contact holds a ball perfectly still, an elastic ball bounces back
to its drop height, and a sliding box is braked by Coulomb friction.
"""

import numpy as np

from diffrbd import engine, scenes

# --- a ball resting on the ground ------------------------------------------
world, state = scenes.load_corpus("ball_on_plane").to_world()
states, contexts = engine.simulate(world, state, 500, record_contexts=True)
print("ball_on_plane: 500 steps")
print("  start height:", state.q[1])
print("  end height:  ", states[-1].q[1])
print("  max |qd| over the run:", max(np.abs(s.qd).max() for s in states))
print("  warm-start hits:", sum(c.warm_hit for c in contexts), "/ 500")

# the normal impulse exactly carries the supported weight each millisecond
fn = contexts[10].solution.f[0]
print("  normal impulse per step:", fn, "(= m g dt of the supported mass)")

# --- an elastic bouncing ball ----------------------------------------------
from diffrbd import collision as col
from diffrbd import dynamics as dyn
from diffrbd.spatial import SpatialInertia

sk = dyn.Skeleton((dyn.Body(SpatialInertia(1.0, np.zeros(3), 1e-3 * np.eye(3)),
                            -1, dyn.JointDef("prismatic", [0, 0, 1])),))
bouncy = engine.World(sk, [
    col.Collider(0, col.Sphere(0.1), restitution=1.0),
    col.Collider(None, col.HalfSpace([0, 0, 1], 0.0), restitution=1.0)])
state = dyn.WorldState(q=[0.55], qd=[0.0], tau=[0.0], dt=1e-3)
trace = engine.simulate(bouncy, state, 2500)
heights = np.array([s.q[0] for s in trace])
apexes = [float(heights[i]) for i in range(1, len(heights) - 1)
          if heights[i] >= heights[i - 1] and heights[i] >= heights[i + 1]
          and heights[i] > 0.3]
print("\nbouncing ball: apex heights", [round(a, 4) for a in apexes[:4]],
      "(drop height 0.55, full restitution)")

# --- a box sliding to rest ---------------------------------------------------
world, state = scenes.load_corpus("box_on_plane").to_world()
trace = engine.simulate(world, state, 1200)
speeds = [abs(s.qd[0]) for s in trace]
stop = next((i for i, v in enumerate(speeds) if v < 1e-10), None)
print("\nbox_on_plane: initial speed", speeds[0], "m/s, friction mu = 0.3")
print("  slides to rest after", stop, "steps",
      f"(Coulomb prediction ~ v0 / (mu g dt) = "
      f"{speeds[0] / (0.3 * 9.81 * state.dt):.0f})")
