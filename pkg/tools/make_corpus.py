"""Regenerate the bundled corpus scenes.

Placements that depend on contact geometry are solved numerically: the
root height of each dynamic body is bisected until the deepest contact
sits at the target penetration, so every scene starts with real (small)
penetration and a deterministic contact set.
"""

import math
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from diffrbd import scenes
from diffrbd.collision import detect

PEN = 5e-4
OUT = os.path.join(os.path.dirname(__file__), "..", "src", "diffrbd", "corpus")


def quat_about(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = angle / 2
    return [math.cos(half), *(math.sin(half) * axis)]


def quat_mul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return [
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ]


def placement(translation=(0, 0, 0), quaternion=(1, 0, 0, 0)):
    return {"translation": list(map(float, translation)),
            "quaternion": list(map(float, quaternion))}


def body(name, parent, kind, axis, mass, com=(0, 0, 0),
         moments=(1e-3, 1e-3, 1e-3), products=(0, 0, 0), **place):
    return {"name": name, "parent": parent,
            "joint": {"kind": kind, "axis": list(map(float, axis))},
            "placement": placement(**place),
            "inertia": {"mass": float(mass), "com": list(map(float, com)),
                        "moments": list(map(float, moments)),
                        "products": list(map(float, products))}}


def collider(body_name, shape, restitution=0.0, friction=0.5, **place):
    return {"body": body_name, "shape": shape, "placement": placement(**place),
            "restitution": float(restitution), "friction": float(friction)}


def sphere(r):
    return {"type": "sphere", "radius": float(r)}


def capsule(r, hl):
    return {"type": "capsule", "radius": float(r), "half_length": float(hl)}


def box(he):
    return {"type": "box", "half_extents": list(map(float, he))}


def ground():
    return {"type": "halfspace", "normal": [0.0, 0.0, 1.0], "offset": 0.0}


def scene(bodies, colliders, q, qd=None, dt=1e-3, gravity=(0, 0, -9.81),
          actuated=None):
    n = len(bodies)
    return {"version": 1, "gravity": list(map(float, gravity)), "dt": float(dt),
            "bodies": bodies, "colliders": colliders,
            "state": {"q": list(map(float, q)),
                      "qd": list(map(float, qd or [0.0] * n))},
            "actuated": actuated or [True] * n}


def solve_height(make, index, lo, hi, target=PEN, expect=None):
    """Bisect q[index] so the deepest contact has the target penetration."""
    def depth_at(z):
        data = make(z)
        desc = scenes.validate(data)
        world, state = desc.to_world()
        contacts = detect(world.skeleton, state.q, world.colliders)
        if not contacts:
            return -1.0, []
        return max(c.depth for c in contacts), contacts
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        d, _ = depth_at(mid)
        if d > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    z = 0.5 * (lo + hi)
    d, contacts = depth_at(z)
    kinds = sorted(c.kind for c in contacts)
    print(f"  solved height {z:.9f} depth {d:.2e} kinds {kinds}")
    if expect is not None:
        assert kinds == sorted(expect), (kinds, expect)
    return make(z)


def write(name, data):
    desc = scenes.validate(data)
    world, state = desc.to_world()
    path = os.path.join(OUT, f"{name}.scene")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scenes.serialize(desc))
    print(f"wrote {name}.scene  (n={world.skeleton.n})")


def main():
    os.makedirs(OUT, exist_ok=True)

    # --- contact-free ---
    write("pendulum", scene(
        [body("arm", None, "revolute", [0, 1, 0], 1.0, com=(0, 0, -0.8),
              moments=(1e-4, 1e-4, 1e-4))],
        [], q=[0.5], dt=0.01))

    write("double_pendulum", scene(
        [body("upper", None, "revolute", [0, 1, 0], 1.3, com=(0, 0, -0.8),
              moments=(1e-4, 1e-4, 1e-4)),
         body("lower", "upper", "revolute", [0, 1, 0], 0.7, com=(0, 0, -0.6),
              moments=(1e-4, 1e-4, 1e-4), translation=(0, 0, -0.8))],
        [], q=[0.3, 0.4], dt=0.01))

    # --- primary contact scenes ---
    r = 0.5
    write("ball_on_plane", scene(
        [body("slide_x", None, "prismatic", [1, 0, 0], 0.05),
         body("slide_z", "slide_x", "prismatic", [0, 0, 1], 0.05),
         body("ball", "slide_z", "revolute", [0, 1, 0], 1.0,
              moments=(0.1, 0.1, 0.1))],
        [collider("ball", sphere(r), friction=0.6),
         collider(None, ground(), friction=0.8)],
        q=[0.0, r - PEN, 0.0]))

    write("box_on_plane", scene(
        [body("slide_x", None, "prismatic", [1, 0, 0], 0.05),
         body("slide_z", "slide_x", "prismatic", [0, 0, 1], 0.05),
         body("box", "slide_z", "revolute", [0, 1, 0], 2.0,
              moments=(0.068, 0.087, 0.102))],
        [collider("box", box([0.3, 0.25, 0.2]), friction=0.3),
         collider(None, ground(), friction=0.3)],
        q=[0.0, 0.2 - PEN, 0.0], qd=[1.5, 0.0, 0.0]))

    rot_y90 = quat_about([0, 1, 0], math.pi / 2)
    rot_xm90 = quat_about([1, 0, 0], -math.pi / 2)
    rc = 0.15
    write("capsule_pair", scene(
        [body("lower_z", None, "prismatic", [0, 0, 1], 1.0,
              moments=(5e-3, 5e-3, 5e-3)),
         body("upper_z", None, "prismatic", [0, 0, 1], 1.0,
              moments=(5e-3, 5e-3, 5e-3))],
        [collider("lower_z", capsule(rc, 0.4), friction=0.7,
                  quaternion=rot_y90),
         collider("upper_z", capsule(rc, 0.4), friction=0.7,
                  quaternion=rot_xm90),
         collider(None, ground(), friction=0.7)],
        q=[rc - PEN, rc - PEN + 2 * rc - PEN]))

    write("drone", scene(
        [body("lift", None, "prismatic", [0, 0, 1], 1.0,
              moments=(0.1, 0.1, 0.1))],
        [collider("lift", sphere(0.5), friction=0.0),
         collider(None, ground(), friction=0.0)],
        q=[0.5 - PEN], dt=0.01))

    # --- benchmark chains: planar base + hanging legs with sphere feet ---
    def worm(z):
        return scene(
            [body("base_x", None, "prismatic", [1, 0, 0], 0.1),
             body("base_z", "base_x", "prismatic", [0, 0, 1], 0.1),
             body("torso", "base_z", "revolute", [0, 1, 0], 1.0,
                  moments=(0.02, 0.02, 0.02)),
             body("arm_l", "torso", "revolute", [0, 1, 0], 0.4,
                  com=(0, 0, -0.15), translation=(-0.3, 0, 0)),
             body("arm_r", "torso", "revolute", [0, 1, 0], 0.4,
                  com=(0, 0, -0.15), translation=(0.3, 0, 0))],
            [collider("arm_l", sphere(0.1), friction=0.8,
                      translation=(0, 0, -0.3)),
             collider("arm_r", sphere(0.1), friction=0.8,
                      translation=(0, 0, -0.3)),
             collider(None, ground(), friction=0.8)],
            q=[0.0, z, 0.0, 0.0, 0.0])
    write("jump_worm", solve_height(worm, 1, 0.35, 0.45,
                                    expect=["sphere-face"] * 2))

    def chain9(z):
        bodies = [body("base_x", None, "prismatic", [1, 0, 0], 0.1),
                  body("base_z", "base_x", "prismatic", [0, 0, 1], 0.1),
                  body("torso", "base_z", "revolute", [0, 1, 0], 1.2,
                       moments=(0.03, 0.03, 0.03))]
        cols = [collider(None, ground(), friction=0.8)]
        q = [0.0, z, 0.0]
        for side, sx in (("l", -1.0), ("r", 1.0)):
            bodies.append(body(f"hip_{side}", "torso", "revolute", [0, 1, 0],
                               0.5, com=(0, 0, -0.125),
                               translation=(sx * 0.25, 0, 0)))
            bodies.append(body(f"knee_{side}", f"hip_{side}", "revolute",
                               [0, 1, 0], 0.4, com=(0, 0, -0.125),
                               translation=(0, 0, -0.25)))
            bodies.append(body(f"ankle_{side}", f"knee_{side}", "revolute",
                               [0, 1, 0], 0.3, com=(0, 0, -0.125),
                               translation=(0, 0, -0.25)))
            cols.append(collider(f"ankle_{side}", sphere(0.08), friction=0.8,
                                 translation=(0, 0, -0.25)))
            q += [0.0, 0.0, 0.0]  # straight legs: gravity torques balance
        return scene(bodies, cols, q=q)
    write("chain9", solve_height(chain9, 1, 0.6, 1.1,
                                 expect=["sphere-face"] * 2))

    # --- one mini scene per remaining contact kind (static lower shape) ---
    write("sphere_sphere", scene(
        [body("ball", None, "prismatic", [0, 0, 1], 1.0,
              moments=(0.01, 0.01, 0.01))],
        [collider("ball", sphere(0.3), friction=0.6),
         collider(None, sphere(0.5), friction=0.6, translation=(0, 0, 0.5))],
        q=[0.5 + 0.8 - PEN]))

    dz_edge = math.sqrt((0.2 - PEN) ** 2 - 0.05 ** 2)
    write("sphere_box_edge", scene(
        [body("ball", None, "prismatic", [0, 0, 1], 1.0,
              moments=(0.01, 0.01, 0.01))],
        [collider("ball", sphere(0.2), friction=0.6,
                  translation=(0.45, 0, 0)),
         collider(None, box([0.4, 0.4, 0.4]), friction=0.6,
                  translation=(0, 0, 0.4))],
        q=[0.8 + dz_edge]))

    dz_vert = math.sqrt((0.2 - PEN) ** 2 - 2 * 0.05 ** 2)
    write("sphere_box_vertex", scene(
        [body("ball", None, "prismatic", [0, 0, 1], 1.0,
              moments=(0.01, 0.01, 0.01))],
        [collider("ball", sphere(0.2), friction=0.6,
                  translation=(0.45, 0.45, 0)),
         collider(None, box([0.4, 0.4, 0.4]), friction=0.6,
                  translation=(0, 0, 0.4))],
        q=[0.8 + dz_vert]))

    tilt = quat_mul(quat_about([0, 1, 0], 0.6), quat_about([1, 0, 0], 0.45))
    def box_box_vertex(z):
        return scene(
            [body("top", None, "prismatic", [0, 0, 1], 1.0,
                  moments=(0.02, 0.02, 0.02))],
            [collider(None, box([0.5, 0.5, 0.5]), friction=0.6,
                      translation=(0, 0, 0.5)),
             collider("top", box([0.2, 0.2, 0.2]), friction=0.6,
                      quaternion=tilt)],
            q=[z])
    write("box_box_vertex", solve_height(box_box_vertex, 0, 1.0, 1.6,
                                         expect=["face-vertex"]))

    edge_tilt = quat_mul(quat_about([0, 1, 0], 0.12),
                         quat_about([1, 0, 0], math.pi / 4))
    def box_box_edge(z):
        return scene(
            [body("top", None, "prismatic", [0, 0, 1], 1.0,
                  moments=(0.02, 0.02, 0.02))],
            [collider("top", box([0.2, 0.2, 0.2]), friction=0.6,
                      translation=(0.48, 0, 0), quaternion=edge_tilt),
             collider(None, box([0.5, 0.5, 0.5]), friction=0.6,
                      translation=(0, 0, 0.5))],
            q=[z])
    write("box_box_edge", solve_height(box_box_edge, 0, 1.0, 1.6,
                                       expect=["edge-edge"]))

    write("capsule_sphere", scene(
        [body("ball", None, "prismatic", [0, 0, 1], 1.0,
              moments=(0.01, 0.01, 0.01))],
        [collider(None, capsule(0.2, 0.5), friction=0.6,
                  translation=(0, 0, 0.2), quaternion=rot_y90),
         collider("ball", sphere(0.25), friction=0.6,
                  translation=(0.1, 0, 0))],
        q=[0.2 + 0.45 - PEN]))

    cap_yaw = quat_mul(quat_about([0, 0, 1], 0.3), rot_y90)
    def capsule_box_edge(z):
        return scene(
            [body("cap", None, "prismatic", [0, 0, 1], 1.0,
                  moments=(0.01, 0.01, 0.01))],
            [collider("cap", capsule(0.15, 0.6), friction=0.6,
                      translation=(0, 0.05, 0), quaternion=cap_yaw),
             collider(None, box([0.4, 0.4, 0.4]), friction=0.6,
                      translation=(0, 0, 0.4))],
            q=[z])
    write("capsule_box_edge", solve_height(capsule_box_edge, 0, 0.8, 1.1,
                                           expect=["edge-pipe", "edge-pipe"]))

    def capsule_box_vertex(z):
        return scene(
            [body("cap", None, "prismatic", [0, 0, 1], 1.0,
                  moments=(0.01, 0.01, 0.01))],
            [collider(None, box([0.3, 0.3, 0.3]), friction=0.6,
                      translation=(0, 0, 0.45), quaternion=tilt),
             collider("cap", capsule(0.18, 0.5), friction=0.6,
                      translation=(0.04, 0.1, 0), quaternion=rot_xm90)],
            q=[z])
    write("capsule_box_vertex", solve_height(capsule_box_vertex, 0, 0.8, 1.4,
                                             expect=["vertex-pipe"]))


if __name__ == "__main__":
    main()
