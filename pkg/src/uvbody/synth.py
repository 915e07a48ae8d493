"""Deterministic synthetic humanoid models for tests and demos.

Builds a watertight, mirror-symmetric blocky humanoid out of axis-aligned
voxel boxes (one box per body part), rigs it with an SMPL-like 24-joint
tree, and derives the UV atlas by exact box unfolding: every part chart is
an isometric cross layout, so UV triangles never overlap and texel density
is uniform over the body. Same (seed, n_subdiv) always reproduces the model
bit for bit; licensed mocap-derived assets are never required.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .bodymodel import BodyModel
from .errors import ValidationError
from .uvmap import UVLayout

# Body plan on a 0.1 m voxel grid (cell bounds x0,x1,y0,y1,z0,z1).
# y is up, x is the mirror axis, the figure stands in a T-pose with feet
# at y=0 and in total 1.7 m tall before smoothing.
_PITCH0 = 0.1
_BOXES: tuple[tuple[str, tuple[int, int, int, int, int, int]], ...] = (
    ("torso", (-2, 2, 9, 15, -1, 1)),
    ("head", (-1, 1, 15, 17, -1, 1)),
    ("arm_l", (2, 8, 13, 14, -1, 0)),
    ("arm_r", (-8, -2, 13, 14, -1, 0)),
    ("hand_l", (8, 10, 13, 14, -1, 0)),
    ("hand_r", (-10, -8, 13, 14, -1, 0)),
    ("leg_l", (1, 2, 1, 9, -1, 1)),
    ("leg_r", (-2, -1, 1, 9, -1, 1)),
    ("foot_l", (1, 2, 0, 1, -1, 2)),
    ("foot_r", (-2, -1, 0, 1, -1, 2)),
)

PART_NAMES = tuple(name for name, _ in _BOXES)

# SMPL-like kinematic tree, root = pelvis.
_PARENTS = np.array(
    [0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21],
    dtype=np.int64,
)

JOINT_NAMES = (
    "pelvis", "hip_l", "hip_r", "spine1", "knee_l", "knee_r", "spine2",
    "ankle_l", "ankle_r", "spine3", "foot_l", "foot_r", "neck",
    "collar_l", "collar_r", "head", "shoulder_l", "shoulder_r",
    "elbow_l", "elbow_r", "wrist_l", "wrist_r", "hand_l", "hand_r",
)

# Joint anchor positions in meters in the body-plan frame.
_JOINT_ANCHORS = np.array([
    (0.00, 0.95, 0.00),    # pelvis
    (0.15, 0.92, 0.00),    # hip_l
    (-0.15, 0.92, 0.00),   # hip_r
    (0.00, 1.05, 0.00),    # spine1
    (0.15, 0.50, 0.00),    # knee_l
    (-0.15, 0.50, 0.00),   # knee_r
    (0.00, 1.15, 0.00),    # spine2
    (0.15, 0.12, 0.00),    # ankle_l
    (-0.15, 0.12, 0.00),   # ankle_r
    (0.00, 1.28, 0.00),    # spine3
    (0.15, 0.04, 0.12),    # foot_l
    (-0.15, 0.04, 0.12),   # foot_r
    (0.00, 1.48, 0.00),    # neck
    (0.10, 1.38, -0.05),   # collar_l
    (-0.10, 1.38, -0.05),  # collar_r
    (0.00, 1.58, 0.00),    # head
    (0.22, 1.35, -0.05),   # shoulder_l
    (-0.22, 1.35, -0.05),  # shoulder_r
    (0.50, 1.35, -0.05),   # elbow_l
    (-0.50, 1.35, -0.05),  # elbow_r
    (0.78, 1.35, -0.05),   # wrist_l
    (-0.78, 1.35, -0.05),  # wrist_r
    (0.92, 1.35, -0.05),   # hand_l
    (-0.92, 1.35, -0.05),  # hand_r
])

_HEIGHT = 1.7
_UV_GUTTER = 0.045  # min spacing between packed charts, in UV units

# Outward-oriented quad corner offsets per face direction, as (dx, dy, dz)
# added to the face cell's min corner.
_FACE_CORNERS = {
    (1, 0, 0): ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)),
    (-1, 0, 0): ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)),
    (0, 1, 0): ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)),
    (0, -1, 0): ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)),
    (0, 0, 1): ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)),
    (0, 0, -1): ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)),
}
_DIRECTIONS = tuple(_FACE_CORNERS)


_AXES_OF_RING = {0: (0, 1, 2), 1: (1, 0, 2), 2: (2, 0, 1)}


def _ring_axis(dims: tuple[int, int, int]) -> int:
    """Unfold around the longest box dimension (prefer y, then x, then z)."""
    order = (1, 0, 2)
    return max(order, key=lambda a: (dims[a], -order.index(a)))


def _ring_uv(
    direction: tuple[int, int, int],
    local: tuple[int, int, int],
    dims: tuple[int, int, int],
    axis: int,
) -> tuple[int, int, int]:
    """Exact ring+caps unfolding of a box face corner.

    The four faces parallel to ``axis`` unfold into one seamless rectangle
    (piece 0) of size (2B + 2C) x A; the two cap faces become their own
    rectangles (pieces 1 and 2). Faces adjacent along the ring share edge
    coordinates exactly, so integer-key welding reconstructs them.
    Returns (piece, u, v) in cell units.
    """
    a, b, c = _AXES_OF_RING[axis]
    sa, sb, sc = dims[a], dims[b], dims[c]
    la, lb, lc = local[a], local[b], local[c]
    d = direction[a]
    if d == 1:
        return 1, lb, lc
    if d == -1:
        return 2, lb, sc - lc
    if direction[c] == 1:
        u = lb
    elif direction[b] == 1:
        u = sb + (sc - lc)
    elif direction[c] == -1:
        u = sb + sc + (sb - lb)
    else:
        u = 2 * sb + sc + lc
    return 0, u, sa - la


def _piece_dims(dims: tuple[int, int, int], axis: int, piece: int) -> tuple[int, int]:
    a, b, c = _AXES_OF_RING[axis]
    if piece == 0:
        return 2 * (dims[b] + dims[c]), dims[a]
    return dims[b], dims[c]


def _pack_pieces(pieces: list[tuple[int, int]]) -> tuple[np.ndarray, float]:
    """Shelf-pack rectangles (meters) into [0,1]^2 at one global scale.

    A single uv-per-meter scale keeps texel density uniform over the body;
    the gutter keeps bilinear lookups at the supported resolutions from
    reaching a neighboring chart.
    """
    dims = np.array(pieces, dtype=np.float64)
    order = sorted(range(len(pieces)), key=lambda i: (-dims[i, 1], -dims[i, 0], i))
    g = _UV_GUTTER

    def place(scale: float) -> np.ndarray | None:
        origins = np.zeros((len(pieces), 2))
        x, y, row_h = g, g, 0.0
        for i in order:
            w, h = dims[i] * scale
            if x + w > 1.0 - g and x > g:
                y += row_h + g
                x, row_h = g, 0.0
            if x + w > 1.0 - g or y + h > 1.0 - g:
                return None
            origins[i] = (x, y)
            x += w + g
            row_h = max(row_h, h)
        return origins

    lo, hi = 1e-3, 3.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if place(mid) is None:
            hi = mid
        else:
            lo = mid
    scale = lo * 0.995
    origins = place(scale)
    assert origins is not None
    return origins, scale


def _build_surface(n_subdiv: int):
    """Extract the boundary quads of the voxel solid, with UV assignment."""
    f = 2 ** n_subdiv
    boxes = [(name, tuple(c * f for c in box)) for name, box in _BOXES]
    mins = np.array([b[0::2] for _, b in boxes]).min(axis=0)
    maxs = np.array([b[1::2] for _, b in boxes]).max(axis=0)
    shape = tuple(maxs - mins)
    owner = np.full(shape, -1, dtype=np.int8)
    for bid, (_, (x0, x1, y0, y1, z0, z1)) in enumerate(boxes):
        owner[x0 - mins[0]: x1 - mins[0], y0 - mins[1]: y1 - mins[1], z0 - mins[2]: z1 - mins[2]] = bid
    solid = owner >= 0
    pitch = _PITCH0 / f
    box_dims = [(b[1] - b[0], b[3] - b[2], b[5] - b[4]) for _, b in boxes]
    box_axis = [_ring_axis(d) for d in box_dims]

    vkey_to_idx: dict[tuple[int, int, int], int] = {}
    vert_cells: list[tuple[int, int, int]] = []
    quads: list[tuple] = []  # (bid, vids[4], uvkeys[4])
    used_pieces: dict[tuple[int, int], None] = {}
    quad_edges: set[tuple[int, int]] = set()

    padded = np.pad(solid, 1, constant_values=False)
    for direction in _DIRECTIONS:
        dx, dy, dz = direction
        nb = padded[1 + dx: 1 + dx + shape[0], 1 + dy: 1 + dy + shape[1], 1 + dz: 1 + dz + shape[2]]
        cells = np.argwhere(solid & ~nb)
        corners = _FACE_CORNERS[direction]
        for cx, cy, cz in cells:
            bid = int(owner[cx, cy, cz])
            _, b = boxes[bid]
            bmin = (b[0], b[2], b[4])
            vids = []
            uvkeys = []
            for off in corners:
                gcell = (int(cx + off[0] + mins[0]), int(cy + off[1] + mins[1]), int(cz + off[2] + mins[2]))
                vid = vkey_to_idx.get(gcell)
                if vid is None:
                    vid = len(vert_cells)
                    vkey_to_idx[gcell] = vid
                    vert_cells.append(gcell)
                vids.append(vid)
                local = (gcell[0] - bmin[0], gcell[1] - bmin[1], gcell[2] - bmin[2])
                piece, u, v = _ring_uv(direction, local, box_dims[bid], box_axis[bid])
                uvkeys.append((bid, piece, u, v))
                used_pieces[(bid, piece)] = None
            quads.append((bid, tuple(vids), tuple(uvkeys)))
            for a, bb in ((0, 1), (1, 2), (2, 3), (3, 0)):
                quad_edges.add((min(vids[a], vids[bb]), max(vids[a], vids[bb])))

    # Pack only the pieces that survived welding (fully welded caps vanish).
    piece_ids = sorted(used_pieces)
    piece_rects = [
        tuple(c * pitch for c in _piece_dims(box_dims[bid], box_axis[bid], piece))
        for bid, piece in piece_ids
    ]
    origins, uv_scale = _pack_pieces(piece_rects)
    origin_of = {pid: origins[i] for i, pid in enumerate(piece_ids)}

    uvkey_to_idx: dict[tuple[int, int, int, int], int] = {}
    uv_cells: list[tuple[float, float]] = []
    uv_owner_vertex: list[int] = []
    faces: list[tuple[int, int, int]] = []
    uv_faces: list[tuple[int, int, int]] = []
    part_of_face: list[int] = []

    for bid, vids, uvkeys in quads:
        uvids = []
        for vid, key in zip(vids, uvkeys):
            uvid = uvkey_to_idx.get(key)
            if uvid is None:
                uvid = len(uv_cells)
                uvkey_to_idx[key] = uvid
                ox, oy = origin_of[(key[0], key[1])]
                uv_cells.append((ox + key[2] * pitch * uv_scale, oy + key[3] * pitch * uv_scale))
                uv_owner_vertex.append(vid)
            elif uv_owner_vertex[uvid] != vid:
                raise ValidationError("uv weld conflict in synthetic chart construction")
            uvids.append(uvid)
        faces.append((vids[0], vids[1], vids[2]))
        faces.append((vids[0], vids[2], vids[3]))
        uv_faces.append((uvids[0], uvids[1], uvids[2]))
        uv_faces.append((uvids[0], uvids[2], uvids[3]))
        part_of_face.extend((bid, bid))

    vertices = np.array(vert_cells, dtype=np.float64) * pitch
    uv_coords = np.array(uv_cells, dtype=np.float64)
    mirror = np.empty(len(vert_cells), dtype=np.int64)
    for idx, (gx, gy, gz) in enumerate(vert_cells):
        mirror[idx] = vkey_to_idx[(-gx, gy, gz)]

    return (
        vertices,
        np.array(faces, dtype=np.int64),
        uv_coords,
        np.array(uv_faces, dtype=np.int64),
        np.array(uv_owner_vertex, dtype=np.int64),
        np.array(part_of_face, dtype=np.int64),
        mirror,
        sorted(quad_edges),
    )


def _smooth(vertices: np.ndarray, edges: list[tuple[int, int]], iters: int, lam: float) -> np.ndarray:
    n = vertices.shape[0]
    e = np.array(edges, dtype=np.int64)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    v = vertices.copy()
    for _ in range(iters):
        mean = (adj @ v) / deg[:, None]
        v = v + lam * (mean - v)
    return v


def _symmetrize(vertices: np.ndarray, mirror: np.ndarray) -> np.ndarray:
    refl = vertices[mirror].copy()
    refl[:, 0] = -refl[:, 0]
    return 0.5 * (vertices + refl)


def _rbf_warp(vertices: np.ndarray, rng: np.random.Generator, n_bumps: int, amp: float) -> np.ndarray:
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    v = vertices.copy()
    for _ in range(n_bumps):
        center = lo + rng.random(3) * (hi - lo)
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        sigma = 0.1 + 0.2 * rng.random()
        a = amp * (2.0 * rng.random() - 1.0)
        d2 = np.sum((v - center) ** 2, axis=1)
        v = v + (a * np.exp(-d2 / (2.0 * sigma**2)))[:, None] * direction
    return v


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def _joint_regressor(vertices: np.ndarray, anchors: np.ndarray, k: int = 8) -> np.ndarray:
    n = vertices.shape[0]
    reg = np.zeros((anchors.shape[0], n))
    for j, anchor in enumerate(anchors):
        d = np.linalg.norm(vertices - anchor, axis=1)
        nearest = np.argsort(d, kind="stable")[:k]
        w = 1.0 / (d[nearest] + 1e-6)
        reg[j, nearest] = w / w.sum()
    return reg


def _skin_weights(vertices: np.ndarray, joints: np.ndarray, parents: np.ndarray, k: int = 4) -> np.ndarray:
    nj = joints.shape[0]
    children: dict[int, list[int]] = {}
    for j in range(nj):
        p = int(parents[j])
        if p != j:
            children.setdefault(p, []).append(j)

    sigma = 0.07
    dist = np.empty((vertices.shape[0], nj))
    for j in range(nj):
        kids = children.get(j)
        if kids:
            end = joints[kids].mean(axis=0)
        else:
            p = int(parents[j])
            end = joints[j] + 0.6 * (joints[j] - joints[p])
        dist[:, j] = _segment_distance(vertices, joints[j], end)

    w = np.exp(-((dist / sigma) ** 2))
    # keep the k strongest joints per vertex (stable under exact ties)
    order = np.argsort(-w, axis=1, kind="stable")
    keep = order[:, :k]
    out = np.zeros_like(w)
    rows = np.arange(w.shape[0])[:, None]
    out[rows, keep] = w[rows, keep]
    out /= out.sum(axis=1, keepdims=True)
    return out


def _shape_dirs(vertices: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = vertices.shape[0]
    dirs = np.zeros((n, 3, 10))
    x, y, z = vertices[:, 0], vertices[:, 1], vertices[:, 2]

    # Stature trades height against width so no combination of directions
    # reproduces a uniform scaling (the similarity scale stays identifiable).
    dirs[:, 1, 0] = 0.05 * (y - 0.95)
    dirs[:, 0, 0] = -0.0075 * x
    dirs[:, 2, 0] = -0.0075 * z
    waist = 1.0 + 0.8 * np.exp(-((y - 1.05) ** 2) / (2 * 0.18**2))
    dirs[:, 0, 1] = 0.04 * waist * x                       # girth, waist-heavy
    dirs[:, 2, 1] = 0.04 * waist * z
    dirs[:, 0, 2] = 0.05 * np.sign(x) * np.maximum(np.abs(x) - 0.2, 0.0)  # arm span
    dirs[:, 1, 3] = 0.06 * np.minimum(y - 0.9, 0.0)        # leg length
    head_c = np.array([0.0, 1.58, 0.0])
    w_head = np.exp(-np.sum((vertices - head_c) ** 2, axis=1) / (2 * 0.12**2))
    dirs[:, :, 4] = 0.06 * w_head[:, None] * (vertices - head_c)
    belly_c = np.array([0.0, 1.05, 0.08])
    w_belly = np.exp(-np.sum((vertices - belly_c) ** 2, axis=1) / (2 * 0.15**2))
    dirs[:, 2, 5] = 0.05 * w_belly

    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    for s in range(6, 10):
        for _ in range(5):
            center = lo + rng.random(3) * (hi - lo)
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            sigma = 0.1 + 0.2 * rng.random()
            amp = 0.04 * (2.0 * rng.random() - 1.0)
            w = np.exp(-np.sum((vertices - center) ** 2, axis=1) / (2 * sigma**2))
            dirs[:, :, s] += amp * w[:, None] * direction
    return dirs


def synth_model(seed: int, n_subdiv: int) -> BodyModel:
    """Build the deterministic synthetic humanoid.

    ``n_subdiv`` halves the voxel pitch per level (0 is the 0.1 m base
    grid); the seed drives a mild RBF warp of the template and the last
    four shape directions, so distinct seeds give distinct bodies on the
    same topology.
    """
    if n_subdiv < 0:
        raise ValidationError("n_subdiv must be >= 0")
    rng = np.random.default_rng(np.uint64(seed))

    vertices, faces, uv_coords, uv_faces, uv_to_vertex, part_labels, mirror, edges = _build_surface(n_subdiv)

    vertices = _smooth(vertices, edges, iters=2, lam=0.5)
    vertices = _symmetrize(vertices, mirror)
    vertices = _rbf_warp(vertices, rng, n_bumps=3, amp=0.01)
    vertices = _symmetrize(vertices, mirror)

    # Normalize: feet on y=0, centered laterally and in depth, 1.7 m tall.
    y0 = vertices[:, 1].min()
    height = vertices[:, 1].max() - y0
    zmid = 0.5 * (vertices[:, 2].min() + vertices[:, 2].max())
    scale = _HEIGHT / height
    vertices = (vertices - np.array([0.0, y0, zmid])) * scale
    anchors = (_JOINT_ANCHORS - np.array([0.0, y0, zmid])) * scale

    regressor = _joint_regressor(vertices, anchors)
    rest_joints = regressor @ vertices
    skin = _skin_weights(vertices, rest_joints, _PARENTS)
    shape_dirs = _shape_dirs(vertices, rng)

    layout = UVLayout(uv_coords=uv_coords, uv_faces=uv_faces, uv_to_vertex=uv_to_vertex)
    return BodyModel(
        template_vertices=vertices,
        faces=faces,
        shape_dirs=shape_dirs,
        joint_regressor=regressor,
        skin_weights=skin,
        parents=_PARENTS.copy(),
        uv_layout=layout,
        part_labels=part_labels,
        root_joint=0,
        pose_dirs=None,
        mirror_perm=mirror,
        num_parts=len(_BOXES),
    )
