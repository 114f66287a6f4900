"""Contact detection and contact-geometry gradients.

Supported collider shapes: sphere, capsule, box, half-space. Detection is
analytic (no iterative narrowphase): each pair handler classifies the
contact into a named kind, records the body-fixed features that generated
it, and evaluates the world contact point and normal from those features.
Because the features are body-fixed, the same contact can be re-evaluated
at a nearby configuration, which is what both the analytic gradients and
the finite-difference oracles differentiate.

Conventions:

* Contact normals are unit vectors pointing from the second body of the
  pair toward the first.
* Contacts are only reported at positive penetration depth; gradients
  assume the kind classification does not flip, and a guard raises
  ``KindBoundaryError`` when the configuration sits within ``BOUNDARY_TOL``
  of a classification boundary.
* Friction tangents are built deterministically from the normal: take the
  world axis least aligned with the normal, Gram-Schmidt it against the
  normal, and complete the triad with a cross product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ArticulatedCache, Skeleton
from .spatial import Transform, skew

BOUNDARY_TOL = 1e-9

VERTEX_FACE = "vertex-face"
FACE_VERTEX = "face-vertex"
EDGE_EDGE = "edge-edge"
SPHERE_FACE = "sphere-face"
SPHERE_EDGE = "sphere-edge"
SPHERE_VERTEX = "sphere-vertex"
SPHERE_SPHERE = "sphere-sphere"
PIPE_PIPE = "pipe-pipe"
PIPE_SPHERE = "pipe-sphere"
VERTEX_PIPE = "vertex-pipe"
EDGE_PIPE = "edge-pipe"

CONTACT_KINDS = (
    VERTEX_FACE, FACE_VERTEX, EDGE_EDGE, SPHERE_FACE, SPHERE_EDGE,
    SPHERE_VERTEX, SPHERE_SPHERE, PIPE_PIPE, PIPE_SPHERE, VERTEX_PIPE,
    EDGE_PIPE,
)


class KindBoundaryError(RuntimeError):
    """Contact classification is about to flip; gradients are one-sided here."""


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")


@dataclass(frozen=True)
class Capsule:
    """Cylinder of given radius along local z in [-half_length, half_length],
    capped by hemispheres."""

    radius: float
    half_length: float

    def __post_init__(self):
        if not (self.radius > 0 and self.half_length > 0):
            raise ValueError("capsule dimensions must be positive")

    def endpoints(self):
        h = self.half_length
        return np.array([0.0, 0.0, -h]), np.array([0.0, 0.0, h])


@dataclass(frozen=True)
class Box:
    half_extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "half_extents",
                           np.asarray(self.half_extents, dtype=float))
        if not np.all(self.half_extents > 0):
            raise ValueError("box half extents must be positive")

    def vertices(self):
        e = self.half_extents
        return np.array([[sx * e[0], sy * e[1], sz * e[2]]
                         for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])

    def edges(self):
        verts = self.vertices()
        out = []
        for i in range(8):
            for j in range(i + 1, 8):
                if np.sum(verts[i] != verts[j]) == 1:
                    out.append((verts[i], verts[j]))
        return out


@dataclass(frozen=True)
class HalfSpace:
    """Solid region {x : normal . x <= offset}; the normal is the free side."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float))
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-12:
            raise ValueError("half-space normal must be unit length")


@dataclass(frozen=True)
class Collider:
    body: int | None  # None attaches the collider rigidly to the world
    shape: object
    offset: Transform = field(default_factory=Transform.identity)
    restitution: float = 0.0
    friction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must be in [0, 1]")
        if self.friction < 0.0:
            raise ValueError("friction must be nonnegative")


@dataclass
class Contact:
    kind: str
    body_a: int | None
    body_b: int | None
    point: np.ndarray
    normal: np.ndarray   # unit, points from body_b toward body_a
    depth: float
    restitution: float   # combined: product of the pair's restitutions
    friction: float      # combined: min of the pair's coefficients
    features: dict
    margin: float = np.inf  # distance to the nearest classification boundary
    tangent_axis: int = 0   # world axis seeding the friction frame, pinned
                            # at detection so the basis branch never flips

    def bodies(self):
        return self.body_a, self.body_b


# ---------------------------------------------------------------------------
# Differentiable 3-vector / scalar helpers. Each carries a value and its
# Jacobian with respect to q, so the gradient code mirrors the geometry code.

class _DV:
    __slots__ = ("v", "j")

    def __init__(self, v, j):
        self.v = np.asarray(v, dtype=float)
        self.j = j

    def __add__(self, o):
        return _DV(self.v + o.v, self.j + o.j)

    def __sub__(self, o):
        return _DV(self.v - o.v, self.j - o.j)

    def scale(self, s):
        if isinstance(s, _DS):
            return _DV(self.v * s.v, self.j * s.v + np.outer(self.v, s.j))
        return _DV(self.v * s, self.j * s)

    def dot(self, o) -> "_DS":
        return _DS(float(self.v @ o.v), self.v @ o.j + o.v @ self.j)

    def cross(self, o) -> "_DV":
        return _DV(np.cross(self.v, o.v),
                   skew(self.v) @ o.j - skew(o.v) @ self.j)

    def norm(self) -> "_DS":
        n = float(np.linalg.norm(self.v))
        return _DS(n, (self.v / n) @ self.j)

    def normalized(self) -> "_DV":
        n = float(np.linalg.norm(self.v))
        u = self.v / n
        return _DV(u, (np.eye(3) - np.outer(u, u)) @ self.j / n)


class _DS:
    __slots__ = ("v", "j")

    def __init__(self, v, j):
        self.v = float(v)
        self.j = np.asarray(j, dtype=float)

    def __add__(self, o):
        return _DS(self.v + o.v, self.j + o.j)

    def __sub__(self, o):
        return _DS(self.v - o.v, self.j - o.j)

    def __mul__(self, o):
        if isinstance(o, _DS):
            return _DS(self.v * o.v, self.j * o.v + self.v * o.j)
        return _DS(self.v * o, self.j * o)

    def __truediv__(self, o):
        if isinstance(o, _DS):
            return _DS(self.v / o.v, self.j / o.v - self.v * o.j / (o.v * o.v))
        return _DS(self.v / o, self.j / o)


class _FrameSet:
    """World poses of all colliders plus differentiable point/direction maps."""

    def __init__(self, skeleton: Skeleton, q, colliders,
                 cache: ArticulatedCache | None = None):
        self.skeleton = skeleton
        self.cache = cache or ArticulatedCache(skeleton, q)
        self.n = skeleton.n
        self.colliders = list(colliders)
        self.poses = []
        for col in self.colliders:
            if col.body is None:
                self.poses.append(col.offset)
            else:
                self.poses.append(self.cache.world[col.body].compose(col.offset))

    def _support_mask(self, body):
        if body is None:
            return np.zeros(self.n, dtype=bool)
        return self.skeleton._ancestor_mask[:, body]

    def point(self, collider_index: int, local_point) -> _DV:
        """World position of a collider-fixed point, with d/dq."""
        col = self.colliders[collider_index]
        p = self.poses[collider_index].apply(local_point)
        jac = np.zeros((3, self.n))
        for j in np.flatnonzero(self._support_mask(col.body)):
            a = self.cache.world_screws[j]
            jac[:, j] = np.cross(a[:3], p) + a[3:]
        return _DV(p, jac)

    def direction(self, collider_index: int, local_dir) -> _DV:
        """World direction of a collider-fixed vector, with d/dq."""
        col = self.colliders[collider_index]
        d = self.poses[collider_index].rotate(local_dir)
        jac = np.zeros((3, self.n))
        for j in np.flatnonzero(self._support_mask(col.body)):
            jac[:, j] = np.cross(self.cache.world_screws[j][:3], d)
        return _DV(d, jac)

    def constant(self, v) -> _DV:
        return _DV(np.asarray(v, dtype=float), np.zeros((3, self.n)))


def _closest_on_line(c: _DV, base: _DV, direction: _DV) -> tuple[_DS, _DV]:
    """Foot of the perpendicular from point c onto the line base + t dir."""
    d = direction
    t = d.dot(c - base) / d.dot(d)
    return t, base + d.scale(t)


def _closest_line_line(p1: _DV, d1: _DV, p2: _DV, d2: _DV):
    """Closest points between two non-parallel lines, with parameters."""
    w0 = p1 - p2
    a, b, c = d1.dot(d1), d1.dot(d2), d2.dot(d2)
    d, e = d1.dot(w0), d2.dot(w0)
    denom = a * c - b * b
    t = (b * e - c * d) / denom
    s = (a * e - b * d) / denom
    return t, s, p1 + d1.scale(t), p2 + d2.scale(s)


def _segment_closest_params(p1, q1, p2, q2):
    """Plain (non-differentiable) closest parameters between two segments."""
    d1, d2 = q1 - p1, q2 - p2
    w0 = p1 - p2
    a, b, c = d1 @ d1, d1 @ d2, d2 @ d2
    d, e = d1 @ w0, d2 @ w0
    denom = a * c - b * b
    parallel = denom < 1e-12 * max(a * c, 1e-300)
    if parallel:
        t = 0.5  # degenerate; flagged by the caller via the margin
        s = np.clip((b * t + e) / c, 0.0, 1.0) if c > 0 else 0.5
        return t, s, True
    t = np.clip((b * e - c * d) / denom, 0.0, 1.0)
    s = (b * t + e) / c if c > 0 else 0.0
    s = np.clip(s, 0.0, 1.0)
    # re-project t against the clamped s
    t = np.clip((b * s - d) / a, 0.0, 1.0) if a > 0 else 0.0
    return t, s, False


# ---------------------------------------------------------------------------
# Pair handlers. Each returns a list of Contact.


def _combine(ca: Collider, cb: Collider):
    return ca.restitution * cb.restitution, min(ca.friction, cb.friction)


def _mk(kind, ia, ib, frames, features, point, normal, depth, margin):
    ca, cb = frames.colliders[ia], frames.colliders[ib]
    sigma, mu = _combine(ca, cb)
    normal = np.asarray(normal, dtype=float)
    return Contact(kind=kind, body_a=ca.body, body_b=cb.body,
                   point=np.asarray(point, dtype=float),
                   normal=normal,
                   depth=float(depth), restitution=sigma, friction=mu,
                   features=dict(features, a=ia, b=ib), margin=float(margin),
                   tangent_axis=int(np.argmin(np.abs(normal))))


def _sphere_sphere(frames, ia, ib, center_a, radius_a, center_b, radius_b,
                   kind=SPHERE_SPHERE, margin=np.inf):
    ca = frames.poses[ia].apply(center_a)
    cb = frames.poses[ib].apply(center_b)
    delta = ca - cb
    dist = np.linalg.norm(delta)
    depth = radius_a + radius_b - dist
    if depth <= 0.0 or dist == 0.0:
        return []
    n = delta / dist
    p = (radius_b * ca + radius_a * cb) / (radius_a + radius_b)
    feats = {"ca": np.asarray(center_a, float), "cb": np.asarray(center_b, float),
             "ra": radius_a, "rb": radius_b}
    return [_mk(kind, ia, ib, frames, feats, p, n, depth, margin)]


def _sphere_halfspace(frames, ia, ib, center_a, radius, kind=SPHERE_FACE,
                      margin=np.inf):
    hs = frames.colliders[ib].shape
    pose = frames.poses[ib]
    n_world = pose.rotate(hs.normal)
    plane_point = pose.apply(hs.normal * hs.offset)
    c = frames.poses[ia].apply(center_a)
    dist = n_world @ (c - plane_point)
    depth = radius - dist
    if depth <= 0.0:
        return []
    p = c - radius * n_world
    feats = {"center": np.asarray(center_a, float), "r": radius,
             "n_loc": hs.normal, "plane_loc": hs.normal * hs.offset}
    return [_mk(kind, ia, ib, frames, feats, p, n_world, depth, margin)]


def _box_region(box: Box, local_point):
    """Classify the closest box feature to a local point outside the box."""
    e = box.half_extents
    clamped = np.clip(local_point, -e, e)
    over = np.abs(local_point) - e  # >0 where outside along that axis
    outside = over > 0
    count = int(outside.sum())
    # margin to the classification flipping: distance of each coordinate to
    # its own face threshold
    margin = float(np.min(np.abs(over)))
    return clamped, outside, count, margin


def _sphere_box(frames, ia, ib, center_a, radius):
    box: Box = frames.colliders[ib].shape
    pose_b = frames.poses[ib]
    c_world = frames.poses[ia].apply(center_a)
    c_loc = pose_b.inverse().apply(c_world)
    e = box.half_extents
    if np.all(np.abs(c_loc) <= e):
        # center inside the box: deepest face wins
        gaps = e - np.abs(c_loc)
        k = int(np.argmin(gaps))
        sign = 1.0 if c_loc[k] >= 0 else -1.0
        n_loc = np.zeros(3)
        n_loc[k] = sign
        n_world = pose_b.rotate(n_loc)
        depth = radius + gaps[k]
        p = c_world - radius * n_world
        feats = {"center": np.asarray(center_a, float), "r": radius,
                 "n_loc": n_loc}
        margin = float(np.partition(gaps, 1)[1] - gaps[k])
        return [_mk(SPHERE_FACE, ia, ib, frames, feats, p, n_world, depth,
                    margin)]
    clamped, outside, count, margin = _box_region(box, c_loc)
    delta = c_loc - clamped
    dist = np.linalg.norm(delta)
    if dist >= radius or dist == 0.0:
        return []
    if count == 1:
        k = int(np.argmax(outside))
        n_loc = np.zeros(3)
        n_loc[k] = 1.0 if c_loc[k] > 0 else -1.0
        n_world = pose_b.rotate(n_loc)
        p = c_world - radius * n_world
        feats = {"center": np.asarray(center_a, float), "r": radius,
                 "n_loc": n_loc}
        return [_mk(SPHERE_FACE, ia, ib, frames, feats, p, n_world,
                    radius - dist, margin)]
    if count == 2:
        free = int(np.argmin(outside))
        lo, hi = clamped.copy(), clamped.copy()
        lo[free], hi[free] = -e[free], e[free]
        # margin also shrinks as the foot nears an edge endpoint
        margin = min(margin, float(e[free] - abs(c_loc[free])))
        cp_world = pose_b.apply(clamped)
        n_world = (c_world - cp_world) / dist
        feats = {"center": np.asarray(center_a, float), "r": radius,
                 "e0": lo, "e1": hi}
        return [_mk(SPHERE_EDGE, ia, ib, frames, feats, cp_world, n_world,
                    radius - dist, margin)]
    vertex = clamped
    cp_world = pose_b.apply(vertex)
    n_world = (c_world - cp_world) / dist
    feats = {"center": np.asarray(center_a, float), "r": radius,
             "vertex": vertex.copy()}
    return [_mk(SPHERE_VERTEX, ia, ib, frames, feats, cp_world, n_world,
                radius - dist, margin)]


def _capsule_segment_world(frames, idx):
    cap: Capsule = frames.colliders[idx].shape
    p0, p1 = cap.endpoints()
    return frames.poses[idx].apply(p0), frames.poses[idx].apply(p1), p0, p1


def _sphere_capsule(frames, i_sphere, i_cap, center_loc, radius):
    cap: Capsule = frames.colliders[i_cap].shape
    a0, a1, l0, l1 = _capsule_segment_world(frames, i_cap)
    c = frames.poses[i_sphere].apply(center_loc)
    d = a1 - a0
    t = float(np.clip((d @ (c - a0)) / (d @ d), 0.0, 1.0))
    seg_len = float(np.linalg.norm(d))
    margin = min(t, 1.0 - t) * seg_len
    if t <= 0.0 or t >= 1.0:
        end_loc = l0 if t <= 0.0 else l1
        return _sphere_sphere(frames, i_cap, i_sphere, end_loc, cap.radius,
                              center_loc, radius, kind=SPHERE_SPHERE,
                              margin=margin)
    feats = {"seg0": l0, "seg1": l1, "ra": cap.radius,
             "cb": np.asarray(center_loc, float), "rb": radius}
    ca_pt = a0 + t * d
    delta = ca_pt - c
    dist = np.linalg.norm(delta)
    depth = cap.radius + radius - dist
    if depth <= 0.0:
        return []
    n = delta / dist
    p = (radius * ca_pt + cap.radius * c) / (cap.radius + radius)
    return [_mk(PIPE_SPHERE, i_cap, i_sphere, frames, feats, p, n, depth,
                margin)]


def _capsule_capsule(frames, ia, ib):
    ca: Capsule = frames.colliders[ia].shape
    cb: Capsule = frames.colliders[ib].shape
    a0, a1, la0, la1 = _capsule_segment_world(frames, ia)
    b0, b1, lb0, lb1 = _capsule_segment_world(frames, ib)
    t, s, parallel = _segment_closest_params(a0, a1, b0, b1)
    len_a, len_b = np.linalg.norm(a1 - a0), np.linalg.norm(b1 - b0)
    margin = 0.0 if parallel else min(min(t, 1 - t) * len_a,
                                      min(s, 1 - s) * len_b)
    t_int, s_int = 0.0 < t < 1.0, 0.0 < s < 1.0
    if t_int and s_int:
        pa, pb = a0 + t * (a1 - a0), b0 + s * (b1 - b0)
        delta = pa - pb
        dist = np.linalg.norm(delta)
        depth = ca.radius + cb.radius - dist
        if depth <= 0.0 or dist == 0.0:
            return []
        n = delta / dist
        p = (cb.radius * pa + ca.radius * pb) / (ca.radius + cb.radius)
        feats = {"a0": la0, "a1": la1, "b0": lb0, "b1": lb1,
                 "ra": ca.radius, "rb": cb.radius}
        return [_mk(PIPE_PIPE, ia, ib, frames, feats, p, n, depth, margin)]
    if not t_int and not s_int:
        end_a = la0 if t <= 0 else la1
        end_b = lb0 if s <= 0 else lb1
        return _sphere_sphere(frames, ia, ib, end_a, ca.radius, end_b,
                              cb.radius, kind=SPHERE_SPHERE, margin=margin)
    if t_int:  # pipe of A vs end cap of B
        end_b = lb0 if s <= 0 else lb1
        return _sphere_capsule(frames, ib, ia, end_b, cb.radius)
    end_a = la0 if t <= 0 else la1
    return _sphere_capsule(frames, ia, ib, end_a, ca.radius)


def _box_halfspace(frames, i_box, i_hs):
    box: Box = frames.colliders[i_box].shape
    hs: HalfSpace = frames.colliders[i_hs].shape
    pose_h = frames.poses[i_hs]
    n_world = pose_h.rotate(hs.normal)
    plane_point = pose_h.apply(hs.normal * hs.offset)
    out = []
    for v in box.vertices():
        vw = frames.poses[i_box].apply(v)
        depth = n_world @ (plane_point - vw)
        if depth > 0.0:
            feats = {"vertex": v.copy(), "n_loc": hs.normal,
                     "plane_loc": hs.normal * hs.offset}
            out.append(_mk(VERTEX_FACE, i_box, i_hs, frames, feats, vw,
                           n_world, depth, np.inf))
    return out


def _capsule_halfspace(frames, i_cap, i_hs):
    cap: Capsule = frames.colliders[i_cap].shape
    out = []
    for end in cap.endpoints():
        out.extend(_sphere_halfspace(frames, i_cap, i_hs, end, cap.radius))
    return out


def _vertex_in_box_contacts(frames, i_vert_box, i_face_box, flip_kind):
    """Vertices of the first box inside the second box."""
    vbox: Box = frames.colliders[i_vert_box].shape
    fbox: Box = frames.colliders[i_face_box].shape
    pose_f = frames.poses[i_face_box]
    inv_f = pose_f.inverse()
    e = fbox.half_extents
    out = []
    for v in vbox.vertices():
        vw = frames.poses[i_vert_box].apply(v)
        vl = inv_f.apply(vw)
        if np.all(np.abs(vl) < e):
            gaps = e - np.abs(vl)
            k = int(np.argmin(gaps))
            sign = 1.0 if vl[k] >= 0 else -1.0
            n_loc = np.zeros(3)
            n_loc[k] = sign
            n_world = pose_f.rotate(n_loc)
            margin = float(np.partition(gaps, 1)[1] - gaps[k])
            feats = {"vertex": v.copy(), "n_loc": n_loc}
            if flip_kind:
                # first collider of the stored pair provides the face
                out.append(_mk(FACE_VERTEX, i_face_box, i_vert_box, frames,
                               feats, vw, -n_world, gaps[k], margin))
            else:
                out.append(_mk(VERTEX_FACE, i_vert_box, i_face_box, frames,
                               feats, vw, n_world, gaps[k], margin))
    return out


def _box_box(frames, ia, ib):
    out = []
    out.extend(_vertex_in_box_contacts(frames, ia, ib, flip_kind=False))
    out.extend(_vertex_in_box_contacts(frames, ib, ia, flip_kind=True))
    # crossing-edge contacts: both feet strictly interior and the midpoint
    # inside both boxes
    box_a: Box = frames.colliders[ia].shape
    box_b: Box = frames.colliders[ib].shape
    pose_a, pose_b = frames.poses[ia], frames.poses[ib]
    inv_a, inv_b = pose_a.inverse(), pose_b.inverse()
    center_a, center_b = pose_a.translation, pose_b.translation
    for ea0, ea1 in box_a.edges():
        wa0, wa1 = pose_a.apply(ea0), pose_a.apply(ea1)
        for eb0, eb1 in box_b.edges():
            wb0, wb1 = pose_b.apply(eb0), pose_b.apply(eb1)
            t, s, parallel = _segment_closest_params(wa0, wa1, wb0, wb1)
            if parallel or not (0.0 < t < 1.0 and 0.0 < s < 1.0):
                continue
            pa = wa0 + t * (wa1 - wa0)
            pb = wb0 + s * (wb1 - wb0)
            mid = 0.5 * (pa + pb)
            in_a = np.all(np.abs(inv_a.apply(mid)) <= box_a.half_extents + 1e-12)
            in_b = np.all(np.abs(inv_b.apply(mid)) <= box_b.half_extents + 1e-12)
            if not (in_a and in_b):
                continue
            da, db = wa1 - wa0, wb1 - wb0
            n = np.cross(da, db)
            nn = np.linalg.norm(n)
            if nn < 1e-12:
                continue
            n /= nn
            sign = 1.0
            if n @ (center_a - center_b) < 0:
                n, sign = -n, -1.0
            depth = n @ (pb - pa)
            if depth <= 0.0:
                continue
            len_a = np.linalg.norm(da)
            len_b = np.linalg.norm(db)
            margin = min(min(t, 1 - t) * len_a, min(s, 1 - s) * len_b)
            feats = {"a0": ea0, "a1": ea1, "b0": eb0, "b1": eb1, "sign": sign}
            out.append(_mk(EDGE_EDGE, ia, ib, frames, feats, mid, n, depth,
                           margin))
    return out


def _edge_pipe(frames, i_box, i_cap, e0, e1, margin_cap=np.inf):
    """Box edge against a capsule cylinder: pipe-pipe with a zero radius."""
    cap: Capsule = frames.colliders[i_cap].shape
    a0, a1 = frames.poses[i_box].apply(e0), frames.poses[i_box].apply(e1)
    b0, b1, lb0, lb1 = _capsule_segment_world(frames, i_cap)
    t, s, parallel = _segment_closest_params(a0, a1, b0, b1)
    if parallel or not (0.0 < t < 1.0 and 0.0 < s < 1.0):
        return []
    pa = a0 + t * (a1 - a0)
    pb = b0 + s * (b1 - b0)
    delta = pa - pb
    dist = np.linalg.norm(delta)
    depth = cap.radius - dist
    if depth <= 0.0 or dist == 0.0:
        return []
    n = delta / dist
    len_a, len_b = np.linalg.norm(a1 - a0), np.linalg.norm(b1 - b0)
    margin = min(min(t, 1 - t) * len_a, min(s, 1 - s) * len_b, margin_cap)
    feats = {"a0": np.asarray(e0, float), "a1": np.asarray(e1, float),
             "b0": lb0, "b1": lb1, "r": cap.radius}
    return [_mk(EDGE_PIPE, i_box, i_cap, frames, feats, pa, n, depth, margin)]


def _capsule_box(frames, i_cap, i_box):
    cap: Capsule = frames.colliders[i_cap].shape
    box: Box = frames.colliders[i_box].shape
    out = []
    # end caps behave as spheres against the box
    for end in cap.endpoints():
        out.extend(_sphere_box(frames, i_cap, i_box, end, cap.radius))
    pose_b = frames.poses[i_box]
    inv_b = pose_b.inverse()
    a0, a1, _, _ = _capsule_segment_world(frames, i_cap)
    l0, l1 = inv_b.apply(a0), inv_b.apply(a1)
    e = box.half_extents
    # vertex-pipe: box corners poking into the cylinder
    d = l1 - l0
    dd = float(d @ d)
    for v in box.vertices():
        t = float(np.clip((d @ (v - l0)) / dd, 0.0, 1.0))
        if not 0.0 < t < 1.0:
            continue
        foot = l0 + t * d
        dist = float(np.linalg.norm(v - foot))
        if dist >= cap.radius or dist == 0.0:
            continue
        vw = pose_b.apply(v)
        foot_w = frames.poses[i_cap].apply(
            cap.endpoints()[0] + t * (cap.endpoints()[1] - cap.endpoints()[0]))
        n = (vw - foot_w) / dist
        seg_len = float(np.sqrt(dd))
        margin = min(t, 1 - t) * seg_len
        feats = {"vertex": v.copy(), "b0": cap.endpoints()[0],
                 "b1": cap.endpoints()[1], "r": cap.radius}
        out.append(_mk(VERTEX_PIPE, i_box, i_cap, frames, feats, vw, n,
                       cap.radius - dist, margin))
    # face-pipe reduces to the two face edges crossed by the centerline
    # projection (the choice is documented in the format notes)
    mid_loc = 0.5 * (l0 + l1)
    clamped, outside, count, _ = _box_region(box, mid_loc)
    if count == 1 and np.abs(d).max() > 0:
        k = int(np.argmax(outside))
        axes = [ax for ax in range(3) if ax != k]
        proj_dir = d[axes]
        if np.linalg.norm(proj_dir) > 1e-12:
            for ax in axes:
                if abs(proj_dir[axes.index(ax)]) < 1e-12:
                    continue
                for side in (-1.0, 1.0):
                    tt = (side * e[ax] - l0[ax]) / d[ax]
                    if not 0.0 < tt < 1.0:
                        continue
                    hit = l0 + tt * d
                    other = [o for o in axes if o != ax][0]
                    if abs(hit[other]) > e[other]:
                        continue
                    edge0, edge1 = np.zeros(3), np.zeros(3)
                    edge0[k] = edge1[k] = np.sign(mid_loc[k]) * e[k]
                    edge0[ax] = edge1[ax] = side * e[ax]
                    edge0[other], edge1[other] = -e[other], e[other]
                    out.extend(_edge_pipe(frames, i_box, i_cap, edge0, edge1))
    return out


_DISPATCH_ORDER = {Sphere: 0, Capsule: 1, Box: 2, HalfSpace: 3}


def detect(skeleton: Skeleton, q, colliders,
           cache: ArticulatedCache | None = None) -> list:
    """All penetrating contacts among the colliders at configuration q."""
    frames = _FrameSet(skeleton, q, colliders, cache=cache)
    contacts = []
    for ia in range(len(colliders)):
        for ib in range(ia + 1, len(colliders)):
            a, b = colliders[ia], colliders[ib]
            if a.body is not None and a.body == b.body:
                continue
            if a.body is None and b.body is None:
                continue
            i, j = ia, ib
            if _DISPATCH_ORDER[type(a.shape)] > _DISPATCH_ORDER[type(b.shape)]:
                i, j = ib, ia
            sa, sb = colliders[i].shape, colliders[j].shape
            if isinstance(sa, Sphere) and isinstance(sb, Sphere):
                contacts += _sphere_sphere(frames, i, j, np.zeros(3), sa.radius,
                                           np.zeros(3), sb.radius)
            elif isinstance(sa, Sphere) and isinstance(sb, HalfSpace):
                contacts += _sphere_halfspace(frames, i, j, np.zeros(3), sa.radius)
            elif isinstance(sa, Sphere) and isinstance(sb, Box):
                contacts += _sphere_box(frames, i, j, np.zeros(3), sa.radius)
            elif isinstance(sa, Sphere) and isinstance(sb, Capsule):
                contacts += _sphere_capsule(frames, i, j, np.zeros(3), sa.radius)
            elif isinstance(sa, Capsule) and isinstance(sb, Capsule):
                contacts += _capsule_capsule(frames, i, j)
            elif isinstance(sa, Capsule) and isinstance(sb, HalfSpace):
                contacts += _capsule_halfspace(frames, i, j)
            elif isinstance(sa, Capsule) and isinstance(sb, Box):
                contacts += _capsule_box(frames, i, j)
            elif isinstance(sa, Box) and isinstance(sb, HalfSpace):
                contacts += _box_halfspace(frames, i, j)
            elif isinstance(sa, Box) and isinstance(sb, Box):
                contacts += _box_box(frames, i, j)
            # half-space pairs never collide
    return contacts


# ---------------------------------------------------------------------------
# Re-evaluation and analytic gradients.


def _contact_geometry(frames: _FrameSet, contact: Contact):
    """Differentiable (point, normal, signed depth) from the stored features.

    The classification is taken as fixed; this is what gradients (and the
    finite-difference oracles at unchanged kind) differentiate.
    """
    f = contact.features
    ia, ib = f["a"], f["b"]
    kind = contact.kind
    if kind == SPHERE_SPHERE:
        ca = frames.point(ia, f["ca"])
        cb = frames.point(ib, f["cb"])
        delta = ca - cb
        dist = delta.norm()
        n = delta.normalized()
        p = (ca.scale(f["rb"]) + cb.scale(f["ra"])).scale(1.0 / (f["ra"] + f["rb"]))
        depth = _DS(f["ra"] + f["rb"], np.zeros(frames.n)) - dist
        return p, n, depth
    if kind == SPHERE_FACE:
        c = frames.point(ia, f["center"])
        n = frames.direction(ib, f["n_loc"])
        if "plane_loc" in f:
            anchor = frames.point(ib, f["plane_loc"])
            dist = n.dot(c - anchor)
        else:
            # box face: distance from the face plane, measured along n
            inv_n = f["n_loc"]
            he = frames.colliders[ib].shape.half_extents
            plane_loc = inv_n * float(np.abs(inv_n) @ he)
            anchor = frames.point(ib, plane_loc)
            dist = n.dot(c - anchor)
        p = c - n.scale(f["r"])
        depth = _DS(f["r"], np.zeros(frames.n)) - dist
        return p, n, depth
    if kind == SPHERE_EDGE:
        c = frames.point(ia, f["center"])
        e0 = frames.point(ib, f["e0"])
        e1 = frames.point(ib, f["e1"])
        _, foot = _closest_on_line(c, e0, e1 - e0)
        delta = c - foot
        n = delta.normalized()
        depth = _DS(f["r"], np.zeros(frames.n)) - delta.norm()
        return foot, n, depth
    if kind == SPHERE_VERTEX:
        c = frames.point(ia, f["center"])
        v = frames.point(ib, f["vertex"])
        delta = c - v
        n = delta.normalized()
        depth = _DS(f["r"], np.zeros(frames.n)) - delta.norm()
        return v, n, depth
    if kind == VERTEX_FACE:
        v = frames.point(ia, f["vertex"])
        n = frames.direction(ib, f["n_loc"])
        anchor = frames.point(ib, _face_anchor(frames, ib, f))
        depth = n.dot(anchor - v)
        return v, n, depth
    if kind == FACE_VERTEX:
        v = frames.point(ib, f["vertex"])
        n_out = frames.direction(ia, f["n_loc"])  # outward from the face body
        anchor = frames.point(ia, _face_anchor(frames, ia, f))
        depth = n_out.dot(anchor - v)
        n = n_out.scale(-1.0)
        return v, n, depth
    if kind == EDGE_EDGE:
        a0, a1 = frames.point(ia, f["a0"]), frames.point(ia, f["a1"])
        b0, b1 = frames.point(ib, f["b0"]), frames.point(ib, f["b1"])
        _, _, pa, pb = _closest_line_line(a0, a1 - a0, b0, b1 - b0)
        n = (a1 - a0).cross(b1 - b0).normalized().scale(f["sign"])
        p = (pa + pb).scale(0.5)
        depth = n.dot(pb - pa)
        return p, n, depth
    if kind == PIPE_PIPE:
        a0, a1 = frames.point(ia, f["a0"]), frames.point(ia, f["a1"])
        b0, b1 = frames.point(ib, f["b0"]), frames.point(ib, f["b1"])
        _, _, pa, pb = _closest_line_line(a0, a1 - a0, b0, b1 - b0)
        delta = pa - pb
        n = delta.normalized()
        p = (pa.scale(f["rb"]) + pb.scale(f["ra"])).scale(
            1.0 / (f["ra"] + f["rb"]))
        depth = _DS(f["ra"] + f["rb"], np.zeros(frames.n)) - delta.norm()
        return p, n, depth
    if kind == PIPE_SPHERE:
        s0, s1 = frames.point(ia, f["seg0"]), frames.point(ia, f["seg1"])
        cb = frames.point(ib, f["cb"])
        _, pa = _closest_on_line(cb, s0, s1 - s0)
        delta = pa - cb
        n = delta.normalized()
        p = (pa.scale(f["rb"]) + cb.scale(f["ra"])).scale(
            1.0 / (f["ra"] + f["rb"]))
        depth = _DS(f["ra"] + f["rb"], np.zeros(frames.n)) - delta.norm()
        return p, n, depth
    if kind == VERTEX_PIPE:
        v = frames.point(ia, f["vertex"])
        b0, b1 = frames.point(ib, f["b0"]), frames.point(ib, f["b1"])
        _, foot = _closest_on_line(v, b0, b1 - b0)
        delta = v - foot
        n = delta.normalized()
        depth = _DS(f["r"], np.zeros(frames.n)) - delta.norm()
        return v, n, depth
    if kind == EDGE_PIPE:
        a0, a1 = frames.point(ia, f["a0"]), frames.point(ia, f["a1"])
        b0, b1 = frames.point(ib, f["b0"]), frames.point(ib, f["b1"])
        _, _, pa, pb = _closest_line_line(a0, a1 - a0, b0, b1 - b0)
        delta = pa - pb
        n = delta.normalized()
        depth = _DS(f["r"], np.zeros(frames.n)) - delta.norm()
        return pa, n, depth
    raise ValueError(f"unknown contact kind {kind!r}")


def _face_anchor(frames, face_index, feats):
    shape = frames.colliders[face_index].shape
    if isinstance(shape, HalfSpace):
        return feats["plane_loc"]
    n_loc = feats["n_loc"]
    he = shape.half_extents
    return n_loc * float(np.abs(n_loc) @ he)


def evaluate_contact(skeleton: Skeleton, q, colliders, contact: Contact,
                     cache: ArticulatedCache | None = None):
    """(point, normal, signed depth) for a stored contact at configuration q."""
    frames = _FrameSet(skeleton, q, colliders, cache=cache)
    p, n, depth = _contact_geometry(frames, contact)
    return p.v, n.v, depth.v


def contact_gradients(skeleton: Skeleton, q, colliders, contacts,
                      cache: ArticulatedCache | None = None,
                      boundary_tol: float = BOUNDARY_TOL):
    """Per contact (dp/dq, dn/dq), both 3 x n, at fixed kind classification.

    Face normals of polygonal geometry come out with exactly zero gradient
    on the face body's shape axes; curved geometry (spheres, capsule pipes)
    produces the analytic nonzero normal gradients.
    """
    frames = _FrameSet(skeleton, q, colliders, cache=cache)
    out = []
    for contact in contacts:
        if contact.margin < boundary_tol:
            raise KindBoundaryError(
                f"{contact.kind} contact sits {contact.margin:.2e} from a "
                "classification boundary")
        p, n, _ = _contact_geometry(frames, contact)
        out.append((p.j, n.j))
    return out


# ---------------------------------------------------------------------------
# Contact Jacobian rows and their configuration derivatives.

ROWS_PER_CONTACT = 3  # normal + two friction directions


def tangent_basis(n: np.ndarray, axis: int | None = None):
    """Deterministic friction frame: world axis least aligned with n,
    Gram-Schmidt against n, then the completing cross product. The axis is
    chosen (and pinned) at detection time so the branch never flips under
    differentiation."""
    k = int(np.argmin(np.abs(n))) if axis is None else axis
    e = np.zeros(3)
    e[k] = 1.0
    t1 = e - (e @ n) * n
    t1 = t1 / np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


def _tangent_basis_dv(n: _DV, axis: int):
    e = _DV(np.eye(3)[axis], np.zeros_like(n.j))
    w = e - n.scale(e.dot(n))
    t1 = w.normalized()
    t2 = n.cross(t1)
    return t1, t2


@dataclass
class ContactJacobian:
    matrix: np.ndarray          # (3m) x n
    directions: np.ndarray      # (3m) x 3 world direction per row
    points: np.ndarray          # (3m) x 3 world application point per row
    contacts: list
    row_contact: np.ndarray     # (3m,) contact index per row
    row_is_normal: np.ndarray   # (3m,) bool

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]


def _psi(skeleton: Skeleton, body_a, body_b) -> np.ndarray:
    n = skeleton.n
    psi = np.zeros(n)
    if body_a is not None:
        psi += skeleton._ancestor_mask[:, body_a].astype(float)
    if body_b is not None:
        psi -= skeleton._ancestor_mask[:, body_b].astype(float)
    return psi


def _row_from_direction(cache: ArticulatedCache, psi, p, d):
    wrench = np.concatenate([np.cross(p, d), d])
    return psi * (cache.world_screws @ wrench)


def contact_jacobian(skeleton: Skeleton, q, contacts,
                     cache: ArticulatedCache | None = None) -> ContactJacobian:
    """Rows mapping joint velocity to relative contact-point velocity along
    (normal, tangent1, tangent2) for each contact."""
    cache = cache or ArticulatedCache(skeleton, q)
    n = skeleton.n
    m = len(contacts)
    mat = np.zeros((ROWS_PER_CONTACT * m, n))
    dirs = np.zeros((ROWS_PER_CONTACT * m, 3))
    pts = np.zeros((ROWS_PER_CONTACT * m, 3))
    row_contact = np.repeat(np.arange(m), ROWS_PER_CONTACT)
    row_is_normal = np.tile([True, False, False], m)
    for k, contact in enumerate(contacts):
        psi = _psi(skeleton, contact.body_a, contact.body_b)
        t1, t2 = tangent_basis(contact.normal, contact.tangent_axis)
        for r, d in enumerate((contact.normal, t1, t2)):
            row = ROWS_PER_CONTACT * k + r
            mat[row] = _row_from_direction(cache, psi, contact.point, d)
            dirs[row] = d
            pts[row] = contact.point
    return ContactJacobian(matrix=mat, directions=dirs, points=pts,
                           contacts=list(contacts), row_contact=row_contact,
                           row_is_normal=row_is_normal)


def contact_jacobian_derivative(skeleton: Skeleton, q, colliders, contacts,
                                cache: ArticulatedCache | None = None) -> np.ndarray:
    """dJ[row, i, j] = d J[row, i] / d q_j, built from the world-screw
    derivatives and the analytic contact-geometry gradients."""
    cache = cache or ArticulatedCache(skeleton, q)
    frames = _FrameSet(skeleton, q, colliders, cache=cache)
    n = skeleton.n
    m = len(contacts)
    dj = np.zeros((ROWS_PER_CONTACT * m, n, n))
    da = cache.world_screw_derivatives()  # (n, 6, n)
    screws = cache.world_screws
    for k, contact in enumerate(contacts):
        if contact.margin < BOUNDARY_TOL:
            raise KindBoundaryError(
                f"{contact.kind} contact sits {contact.margin:.2e} from a "
                "classification boundary")
        psi = _psi(skeleton, contact.body_a, contact.body_b)
        p, nrm, _ = _contact_geometry(frames, contact)
        t1, t2 = _tangent_basis_dv(nrm, contact.tangent_axis)
        for r, d in enumerate((nrm, t1, t2)):
            row = ROWS_PER_CONTACT * k + r
            wrench = np.concatenate([np.cross(p.v, d.v), d.v])
            # d(wrench)/dq_j stacked as 6 x n
            dw = np.vstack([skew(p.v) @ d.j - skew(d.v) @ p.j, d.j])
            for i in np.flatnonzero(psi):
                dj[row, i, :] = psi[i] * (da[i].T @ wrench + screws[i] @ dw)
    return dj


def d_jtf_dq(skeleton: Skeleton, q, colliders, contacts, f,
             cache: ArticulatedCache | None = None,
             dj: np.ndarray | None = None) -> np.ndarray:
    """d(J^T f)/dq for a fixed per-row impulse vector f (n x n)."""
    if dj is None:
        dj = contact_jacobian_derivative(skeleton, q, colliders, contacts,
                                         cache=cache)
    f = np.asarray(f, dtype=float)
    return np.tensordot(f, dj, axes=(0, 0))
