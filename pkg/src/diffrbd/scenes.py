"""Scene description format and trajectory persistence.

A ``.scene`` file is JSON (UTF-8) with this layout, all values SI and
angles in radians:

    {
      "version": 1,
      "gravity": [0.0, 0.0, -9.81],
      "dt": 0.001,
      "bodies": [
        {"name": "link", "parent": null,
         "joint": {"kind": "revolute", "axis": [0.0, 1.0, 0.0]},
         "placement": {"translation": [0,0,0], "quaternion": [1,0,0,0]},
         "inertia": {"mass": 1.0, "com": [0,0,-0.5],
                     "moments": [0.01, 0.01, 0.01],
                     "products": [0.0, 0.0, 0.0]}}
      ],
      "colliders": [
        {"body": "link", "shape": {"type": "sphere", "radius": 0.5},
         "placement": {...}, "restitution": 0.0, "friction": 0.5}
      ],
      "state": {"q": [0.0], "qd": [0.0]},
      "actuated": [true]
    }

``parent: null`` roots a body at the world; ``body: null`` pins a collider
rigidly to the world (used for ground planes). ``moments`` is
[Ixx, Iyy, Izz] and ``products`` [Ixy, Ixz, Iyz], about the com. Rotations
cross the file boundary as unit quaternions [w, x, y, z] and are converted
to matrices exactly once, at parse time. Unknown fields anywhere are
rejected. Parsing then serializing returns the canonical form (sorted
keys, two-space indent); serializing then parsing is the identity.

Trajectory dumps are comma-separated frames of
(frame, t, q..., qd..., n_contacts, normal_impulse_sum) with floats at 17
significant digits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .collision import Box, Capsule, Collider, HalfSpace, Sphere
from .dynamics import Body, JointDef, Skeleton, WorldState
from .engine import World
from .spatial import SpatialInertia, Transform, rotation_from_quaternion
from .textio import format_float

SCENE_VERSION = 1


class ParseError(ValueError):
    def __init__(self, location, reason):
        self.location = location
        self.reason = reason
        super().__init__(f"{location}: {reason}")


class ValidationError(ValueError):
    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


@dataclass
class SceneDescription:
    data: dict

    @property
    def dt(self) -> float:
        return float(self.data["dt"])

    @property
    def body_names(self):
        return [b["name"] for b in self.data["bodies"]]

    def actuated_mask(self) -> np.ndarray:
        return np.asarray(self.data["actuated"], dtype=bool)

    def to_world(self):
        """Instantiate (World, initial WorldState)."""
        d = self.data
        name_to_index = {b["name"]: i for i, b in enumerate(d["bodies"])}
        bodies = []
        for b in d["bodies"]:
            inertia = b["inertia"]
            mom, prod = inertia["moments"], inertia["products"]
            rot = np.array([
                [mom[0], prod[0], prod[1]],
                [prod[0], mom[1], prod[2]],
                [prod[1], prod[2], mom[2]],
            ])
            parent = -1 if b["parent"] is None else name_to_index[b["parent"]]
            bodies.append(Body(
                inertia=SpatialInertia(inertia["mass"], np.array(inertia["com"]),
                                       rot),
                parent=parent,
                joint=JointDef(b["joint"]["kind"],
                               np.array(b["joint"]["axis"], dtype=float)),
                offset=_placement_to_transform(b["placement"]),
                name=b["name"],
            ))
        skeleton = Skeleton(tuple(bodies), gravity=np.array(d["gravity"]))
        colliders = []
        for c in d["colliders"]:
            body = None if c["body"] is None else name_to_index[c["body"]]
            colliders.append(Collider(
                body=body, shape=_shape_from(c["shape"]),
                offset=_placement_to_transform(c["placement"]),
                restitution=float(c["restitution"]),
                friction=float(c["friction"])))
        n = skeleton.n
        state = WorldState(q=np.array(d["state"]["q"], dtype=float),
                           qd=np.array(d["state"]["qd"], dtype=float),
                           tau=np.zeros(n), dt=self.dt)
        return World(skeleton=skeleton, colliders=colliders), state


def _placement_to_transform(p) -> Transform:
    return Transform(rotation_from_quaternion(np.array(p["quaternion"])),
                     np.array(p["translation"], dtype=float))


def _shape_from(s):
    kind = s["type"]
    if kind == "sphere":
        return Sphere(float(s["radius"]))
    if kind == "capsule":
        return Capsule(float(s["radius"]), float(s["half_length"]))
    if kind == "box":
        return Box(np.array(s["half_extents"], dtype=float))
    if kind == "halfspace":
        return HalfSpace(np.array(s["normal"], dtype=float), float(s["offset"]))
    raise ValidationError("shape.type", f"unknown shape {kind!r}")


# ---------------------------------------------------------------------------
# Validation.

_TOP_FIELDS = {"version", "gravity", "dt", "bodies", "colliders", "state",
               "actuated"}
_BODY_FIELDS = {"name", "parent", "joint", "placement", "inertia"}
_JOINT_FIELDS = {"kind", "axis"}
_PLACEMENT_FIELDS = {"translation", "quaternion"}
_INERTIA_FIELDS = {"mass", "com", "moments", "products"}
_COLLIDER_FIELDS = {"body", "shape", "placement", "restitution", "friction"}
_SHAPE_FIELDS = {
    "sphere": {"type", "radius"},
    "capsule": {"type", "radius", "half_length"},
    "box": {"type", "half_extents"},
    "halfspace": {"type", "normal", "offset"},
}


def _require(cond, fieldname, reason):
    if not cond:
        raise ValidationError(fieldname, reason)


def _check_fields(obj, allowed, where):
    _require(isinstance(obj, dict), where, "expected an object")
    unknown = set(obj) - allowed
    _require(not unknown, where, f"unknown fields {sorted(unknown)}")
    missing = allowed - set(obj)
    _require(not missing, where, f"missing fields {sorted(missing)}")


def _vec3(v, where):
    _require(isinstance(v, list) and len(v) == 3
             and all(isinstance(x, (int, float)) for x in v),
             where, "expected a list of 3 numbers")


def validate(data) -> SceneDescription:
    _check_fields(data, _TOP_FIELDS, "scene")
    _require(data["version"] == SCENE_VERSION, "version",
             f"unsupported version {data['version']!r}")
    _vec3(data["gravity"], "gravity")
    _require(isinstance(data["dt"], (int, float)) and data["dt"] > 0,
             "dt", "must be a positive number")
    names = set()
    for i, b in enumerate(data["bodies"]):
        where = f"bodies[{i}]"
        _check_fields(b, _BODY_FIELDS, where)
        _require(isinstance(b["name"], str) and b["name"], f"{where}.name",
                 "must be a nonempty string")
        _require(b["name"] not in names, f"{where}.name",
                 f"duplicate body name {b['name']!r}")
        _require(b["parent"] is None or b["parent"] in names,
                 f"{where}.parent",
                 "must be null or the name of an earlier body")
        names.add(b["name"])
        _check_fields(b["joint"], _JOINT_FIELDS, f"{where}.joint")
        _require(b["joint"]["kind"] in ("revolute", "prismatic"),
                 f"{where}.joint.kind", "must be revolute or prismatic")
        _vec3(b["joint"]["axis"], f"{where}.joint.axis")
        norm = float(np.linalg.norm(b["joint"]["axis"]))
        _require(abs(norm - 1.0) < 1e-6, f"{where}.joint.axis",
                 "must be unit length")
        _check_placement(b["placement"], f"{where}.placement")
        inertia = b["inertia"]
        _check_fields(inertia, _INERTIA_FIELDS, f"{where}.inertia")
        _require(isinstance(inertia["mass"], (int, float))
                 and inertia["mass"] > 0,
                 f"{where}.inertia.mass",
                 f"body {b['name']!r} must have positive mass")
        _vec3(inertia["com"], f"{where}.inertia.com")
        _vec3(inertia["moments"], f"{where}.inertia.moments")
        _vec3(inertia["products"], f"{where}.inertia.products")
    for i, c in enumerate(data["colliders"]):
        where = f"colliders[{i}]"
        _check_fields(c, _COLLIDER_FIELDS, where)
        _require(c["body"] is None or c["body"] in names, f"{where}.body",
                 "must be null or a declared body name")
        shape = c["shape"]
        _require(isinstance(shape, dict) and "type" in shape,
                 f"{where}.shape", "must carry a type")
        _require(shape["type"] in _SHAPE_FIELDS, f"{where}.shape.type",
                 f"unknown shape {shape['type']!r}")
        _check_fields(shape, _SHAPE_FIELDS[shape["type"]], f"{where}.shape")
        _check_placement(c["placement"], f"{where}.placement")
        _require(0.0 <= c["restitution"] <= 1.0, f"{where}.restitution",
                 "must lie in [0, 1]")
        _require(c["friction"] >= 0.0, f"{where}.friction",
                 "must be nonnegative")
    state = data["state"]
    _check_fields(state, {"q", "qd"}, "state")
    n = len(data["bodies"])
    for key in ("q", "qd"):
        _require(isinstance(state[key], list) and len(state[key]) == n,
                 f"state.{key}", f"must list one value per body ({n})")
    _require(isinstance(data["actuated"], list)
             and len(data["actuated"]) == n
             and all(isinstance(x, bool) for x in data["actuated"]),
             "actuated", f"must list one boolean per body ({n})")
    desc = SceneDescription(data=data)
    desc.to_world()  # surfaces numeric problems (inertia, axes) early
    return desc


def _check_placement(p, where):
    _check_fields(p, _PLACEMENT_FIELDS, where)
    _vec3(p["translation"], f"{where}.translation")
    q = p["quaternion"]
    _require(isinstance(q, list) and len(q) == 4, f"{where}.quaternion",
             "expected [w, x, y, z]")
    _require(abs(float(np.linalg.norm(q)) - 1.0) < 1e-6,
             f"{where}.quaternion", "must be unit length")


def parse(text: str) -> SceneDescription:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} column {exc.colno}", exc.msg) \
            from exc
    try:
        return validate(data)
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError("scene", str(exc)) from exc


def serialize(desc: SceneDescription) -> str:
    """Canonical form: sorted keys, two-space indent, trailing newline."""
    return json.dumps(desc.data, sort_keys=True, indent=2) + "\n"


def load(path) -> SceneDescription:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


# ---------------------------------------------------------------------------
# Canonical corpus.

CORPUS = (
    "pendulum", "double_pendulum", "ball_on_plane", "box_on_plane",
    "capsule_pair", "drone", "jump_worm", "chain9",
    "sphere_sphere", "sphere_box_edge", "sphere_box_vertex",
    "box_box_vertex", "box_box_edge", "capsule_sphere",
    "capsule_box_edge", "capsule_box_vertex",
)


def corpus_path(name: str):
    """Filesystem path of a bundled corpus scene (without the .scene suffix)."""
    if name not in CORPUS:
        raise KeyError(f"unknown corpus scene {name!r}; have {CORPUS}")
    return resources.files("diffrbd").joinpath(f"corpus/{name}.scene")


def load_corpus(name: str) -> SceneDescription:
    return parse(corpus_path(name).read_text(encoding="utf-8"))


def resolve_scene(path: str) -> SceneDescription:
    """A CLI path; the prefix ``corpus:`` resolves bundled scenes."""
    if path.startswith("corpus:"):
        return load_corpus(path.split(":", 1)[1])
    return load(path)


# ---------------------------------------------------------------------------
# Trajectory dumps.


def dump_header(n: int) -> str:
    cols = ["frame", "t"]
    cols += [f"q{i}" for i in range(n)]
    cols += [f"qd{i}" for i in range(n)]
    cols += ["n_contacts", "normal_impulse_sum"]
    return ",".join(cols)


def dump_frame(frame: int, t: float, state, n_contacts: int,
               normal_impulse: float) -> str:
    cells = [str(frame), format_float(t)]
    cells += [format_float(x) for x in state.q]
    cells += [format_float(x) for x in state.qd]
    cells += [str(n_contacts), format_float(normal_impulse)]
    return ",".join(cells)
