"""Parametric body model: blendshapes, linear blend skinning, joint regression.

A :class:`BodyModel` is immutable after construction; every operation here is
a pure function of its inputs, so models can be shared freely across threads.
The mesh produced by :func:`forward` carries no global transform: the root
joint stays at its (shaped) rest location, and orientation/scale/translation
live in the fitting module's similarity transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .rotation import rodrigues, rodrigues_with_jacobian
from .uvmap import UVLayout


@dataclass
class BodyModel:
    """A fixed-topology body mesh with shape blendshapes and a skeleton.

    Attributes
    ----------
    template_vertices : (N, 3) float
        Rest-pose mesh in meters.
    faces : (F, 3) int
        Triangle vertex indices.
    shape_dirs : (N, 3, S) float
        Linear shape basis, meters per unit coefficient.
    pose_dirs : (N, 3, 9*K) float or None
        Optional pose-corrective basis driven by the non-root rotation
        matrices (flattened row-major, minus identity).
    joint_regressor : (J, N) float
        Nonnegative, rows sum to 1; maps vertices to joint positions.
    skin_weights : (N, J) float
        Nonnegative, rows sum to 1.
    parents : (J,) int
        Kinematic tree; parents[root] == root.
    uv_layout : UVLayout
    part_labels : (F,) int
        Per-face part id in [0, num_parts).
    mirror_perm : (N,) int or None
        Left/right vertex involution for flips.
    root_joint : int
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_dirs: np.ndarray
    joint_regressor: np.ndarray
    skin_weights: np.ndarray
    parents: np.ndarray
    uv_layout: UVLayout
    part_labels: np.ndarray
    root_joint: int = 0
    pose_dirs: np.ndarray | None = None
    mirror_perm: np.ndarray | None = None
    num_parts: int = 0

    def __post_init__(self) -> None:
        self.template_vertices = np.ascontiguousarray(self.template_vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        self.shape_dirs = np.ascontiguousarray(self.shape_dirs, dtype=np.float64)
        self.joint_regressor = np.ascontiguousarray(self.joint_regressor, dtype=np.float64)
        self.skin_weights = np.ascontiguousarray(self.skin_weights, dtype=np.float64)
        self.parents = np.ascontiguousarray(self.parents, dtype=np.int64)
        self.part_labels = np.ascontiguousarray(self.part_labels, dtype=np.int64)
        if self.pose_dirs is not None:
            self.pose_dirs = np.ascontiguousarray(self.pose_dirs, dtype=np.float64)
        if self.mirror_perm is not None:
            self.mirror_perm = np.ascontiguousarray(self.mirror_perm, dtype=np.int64)
        if self.num_parts <= 0:
            self.num_parts = int(self.part_labels.max()) + 1 if self.part_labels.size else 0
        validate_model(self)

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def num_pose_joints(self) -> int:
        """Joints carrying pose parameters (all but the root)."""
        return self.num_joints - 1

    @property
    def num_shape_coeffs(self) -> int:
        return self.shape_dirs.shape[2]

    @property
    def rest_joints(self) -> np.ndarray:
        return self.joint_regressor @ self.template_vertices


@dataclass(frozen=True)
class PoseParams:
    """Per-joint Rodrigues vectors (K, 3), root excluded."""

    axis_angle: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.axis_angle, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValidationError(f"pose must be (K, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("pose contains non-finite entries")
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms >= 2.0 * np.pi):
            raise ValidationError("pose rows must have norm < 2*pi")
        object.__setattr__(self, "axis_angle", arr)


@dataclass(frozen=True)
class ShapeParams:
    """Shape coefficients (S,)."""

    coeffs: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.coeffs, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("shape contains non-finite entries")
        object.__setattr__(self, "coeffs", arr)


@dataclass(frozen=True)
class Mesh:
    """Vertices plus the faces of the model that produced them."""

    vertices: np.ndarray
    faces: np.ndarray


@dataclass(frozen=True)
class Joints:
    """Joint positions (J, 3) in meters."""

    positions: np.ndarray
    names: tuple[str, ...] | None = None


def validate_model(model: BodyModel) -> None:
    """Check every structural invariant; raise ValidationError on violation."""
    n = model.template_vertices.shape[0]
    j = model.joint_regressor.shape[0]
    s = model.shape_dirs.shape[2]

    if model.template_vertices.shape != (n, 3):
        raise ValidationError("template_vertices must be (N, 3)")
    if model.shape_dirs.shape != (n, 3, s):
        raise ValidationError("shape_dirs must be (N, 3, S)")
    if model.joint_regressor.shape != (j, n):
        raise ValidationError("joint_regressor must be (J, N)")
    if model.skin_weights.shape != (n, j):
        raise ValidationError(f"skin_weights must be ({n}, {j}), got {model.skin_weights.shape}")
    if model.parents.shape != (j,):
        raise ValidationError("parents must be (J,)")
    if model.faces.ndim != 2 or model.faces.shape[1] != 3:
        raise ValidationError("faces must be (F, 3)")
    if model.part_labels.shape != (model.faces.shape[0],):
        raise ValidationError("part_labels must have one entry per face")
    if model.pose_dirs is not None and model.pose_dirs.shape != (n, 3, 9 * (j - 1)):
        raise ValidationError(f"pose_dirs must be (N, 3, {9 * (j - 1)})")

    if model.faces.size and (model.faces.min() < 0 or model.faces.max() >= n):
        raise ValidationError("face index out of range")
    if model.part_labels.size and (model.part_labels.min() < 0 or model.part_labels.max() >= model.num_parts):
        raise ValidationError("part label out of range")
    if not 0 <= model.root_joint < j:
        raise ValidationError("root_joint out of range")

    if np.any(model.joint_regressor < 0):
        raise ValidationError("joint_regressor must be nonnegative")
    if np.any(model.skin_weights < 0):
        raise ValidationError("skin_weights must be nonnegative")
    reg_sums = model.joint_regressor.sum(axis=1)
    if np.max(np.abs(reg_sums - 1.0)) > 1e-9:
        raise ValidationError("joint_regressor rows must sum to 1 within 1e-9")
    skin_sums = model.skin_weights.sum(axis=1)
    if np.max(np.abs(skin_sums - 1.0)) > 1e-9:
        raise ValidationError("skin_weights rows must sum to 1 within 1e-9")

    _validate_tree(model.parents)

    if model.mirror_perm is not None:
        perm = model.mirror_perm
        if perm.shape != (n,):
            raise ValidationError("mirror_perm must be (N,)")
        if perm.min() < 0 or perm.max() >= n:
            raise ValidationError("mirror_perm index out of range")
        if not np.array_equal(perm[perm], np.arange(n)):
            raise ValidationError("mirror_perm must be an involution")

    if model.uv_layout.uv_to_vertex.size:
        covered = np.unique(model.uv_layout.uv_to_vertex)
        if covered.size != n or covered[0] != 0 or covered[-1] != n - 1:
            raise ValidationError("uv_to_vertex must cover every 3D vertex")
        if model.uv_layout.uv_faces.shape != model.faces.shape:
            raise ValidationError("uv_faces must parallel model faces")


def _validate_tree(parents: np.ndarray) -> None:
    j = parents.shape[0]
    if parents.min() < 0 or parents.max() >= j:
        raise ValidationError("parent index out of range")
    roots = np.nonzero(parents == np.arange(j))[0]
    if roots.size != 1:
        raise ValidationError(f"kinematic tree must have exactly one root, found {roots.size}")
    root = int(roots[0])
    for start in range(j):
        seen = set()
        k = start
        while k != root:
            if k in seen:
                raise ValidationError("kinematic tree contains a cycle")
            seen.add(k)
            k = int(parents[k])


def _as_pose_array(model: BodyModel, pose: PoseParams | np.ndarray) -> np.ndarray:
    arr = pose.axis_angle if isinstance(pose, PoseParams) else np.asarray(pose, dtype=np.float64)
    k = model.num_pose_joints
    if arr.shape != (k, 3):
        raise ValidationError(f"pose must be ({k}, 3), got {arr.shape}")
    return arr


def _as_shape_array(model: BodyModel, shape: ShapeParams | np.ndarray) -> np.ndarray:
    arr = shape.coeffs if isinstance(shape, ShapeParams) else np.asarray(shape, dtype=np.float64).reshape(-1)
    if arr.shape != (model.num_shape_coeffs,):
        raise ValidationError(
            f"shape must have {model.num_shape_coeffs} coefficients, got {arr.shape[0]}"
        )
    return arr


def _topo_order(parents: np.ndarray, root: int) -> list[int]:
    order = [root]
    children: dict[int, list[int]] = {}
    for k in range(parents.shape[0]):
        if k != root:
            children.setdefault(int(parents[k]), []).append(k)
    i = 0
    while i < len(order):
        order.extend(children.get(order[i], ()))
        i += 1
    return order


@dataclass
class _ForwardState:
    """Intermediate quantities shared by forward() and the Jacobians."""

    v_shaped: np.ndarray        # (N, 3)
    v_posed: np.ndarray         # (N, 3)
    joints: np.ndarray          # (J, 3) shaped rest joints
    rot: np.ndarray             # (J, 3, 3) local rotations (root = identity)
    drot: np.ndarray | None     # (K, 3, 3, 3) dR/domega for non-root joints
    g_rot: np.ndarray           # (J, 3, 3) world rotations
    g_trans: np.ndarray         # (J, 3) world translations
    skin_rot: np.ndarray        # (J, 3, 3) skinning rotations
    skin_trans: np.ndarray      # (J, 3) skinning translations
    order: list[int] = field(default_factory=list)


def _forward_state(
    model: BodyModel, pose: np.ndarray, shape: np.ndarray, want_drot: bool
) -> _ForwardState:
    v_shaped = model.template_vertices + model.shape_dirs @ shape
    joints = model.joint_regressor @ v_shaped

    j = model.num_joints
    root = model.root_joint
    non_root = [k for k in range(j) if k != root]

    if want_drot:
        rot_nr, drot = rodrigues_with_jacobian(pose)
    else:
        rot_nr, drot = rodrigues(pose), None
    rot = np.broadcast_to(np.eye(3), (j, 3, 3)).copy()
    rot[non_root] = rot_nr

    v_posed = v_shaped
    if model.pose_dirs is not None:
        feat = (rot[non_root] - np.eye(3)).reshape(-1)
        v_posed = v_shaped + model.pose_dirs @ feat

    # World transforms, with translations carried as displacements from the
    # rest joints so that the identity pose stays exactly at rest.
    order = _topo_order(model.parents, root)
    eye = np.eye(3)
    g_rot = np.empty((j, 3, 3))
    disp = np.zeros((j, 3))
    g_rot[root] = rot[root]
    for k in order[1:]:
        p = int(model.parents[k])
        g_rot[k] = g_rot[p] @ rot[k]
        disp[k] = disp[p] + (g_rot[p] - eye) @ (joints[k] - joints[p])
    g_trans = disp + joints

    # Skinning transform maps rest-space points: x -> G_rot x + (G_t - G_rot j_k)
    skin_rot = g_rot
    skin_trans = disp + joints - np.einsum("kab,kb->ka", g_rot, joints)
    return _ForwardState(
        v_shaped=v_shaped,
        v_posed=v_posed,
        joints=joints,
        rot=rot,
        drot=drot,
        g_rot=g_rot,
        g_trans=g_trans,
        skin_rot=skin_rot,
        skin_trans=skin_trans,
        order=order,
    )


def forward(
    model: BodyModel,
    pose: PoseParams | np.ndarray,
    shape: ShapeParams | np.ndarray,
) -> Mesh:
    """Evaluate the model: blendshapes, then linear blend skinning.

    With zero pose and shape the template is returned exactly; the root
    joint never moves (no global transform is applied here).
    """
    pose_arr = _as_pose_array(model, pose)
    shape_arr = _as_shape_array(model, shape)
    st = _forward_state(model, pose_arr, shape_arr, want_drot=False)
    vertices = _skin(model.skin_weights, st)
    return Mesh(vertices=vertices, faces=model.faces)


def _skin(w: np.ndarray, st: _ForwardState) -> np.ndarray:
    # v + sum_k w_k ((R_k - I) v + t_k): identical to plain LBS for weight
    # rows summing to one, but exactly the identity at zero pose.
    delta_rot = st.skin_rot - np.eye(3)
    moved = np.einsum("nk,kab,nb->na", w, delta_rot, st.v_posed, optimize=True)
    return st.v_posed + moved + w @ st.skin_trans


def forward_with_jacobians(
    model: BodyModel,
    pose: PoseParams | np.ndarray,
    shape: ShapeParams | np.ndarray,
) -> tuple[Mesh, np.ndarray, np.ndarray]:
    """forward() plus analytic Jacobians.

    Returns (mesh, d_pose, d_shape) where d_pose has shape (N, 3, 3K)
    (pose components ordered row-major over the K non-root joints) and
    d_shape has shape (N, 3, S).
    """
    pose_arr = _as_pose_array(model, pose)
    shape_arr = _as_shape_array(model, shape)
    st = _forward_state(model, pose_arr, shape_arr, want_drot=True)

    j = model.num_joints
    k = model.num_pose_joints
    root = model.root_joint
    non_root = [q for q in range(j) if q != root]
    joint_of_param = {q: idx for idx, q in enumerate(non_root)}
    w = model.skin_weights
    parents = model.parents

    mesh_vertices = _skin(w, st)
    delta_rot = st.skin_rot - np.eye(3)

    # --- shape Jacobian -------------------------------------------------
    s = model.num_shape_coeffs
    d_vshape = model.shape_dirs                      # (N, 3, S)
    d_joints = np.einsum("jn,nas->jas", model.joint_regressor, d_vshape)  # (J, 3, S)
    dg_trans = np.empty((j, 3, s))
    dg_trans[root] = d_joints[root]
    for q in st.order[1:]:
        p = int(parents[q])
        dg_trans[q] = dg_trans[p] + np.einsum("ab,bs->as", st.g_rot[p], d_joints[q] - d_joints[p])
    dskin_trans = dg_trans - np.einsum("kab,kbs->kas", st.g_rot, d_joints)
    d_shape_jac = (
        d_vshape
        + np.einsum("nk,kab,nbs->nas", w, delta_rot, d_vshape, optimize=True)
        + np.einsum("nk,kas->nas", w, dskin_trans, optimize=True)
    )

    # --- pose Jacobian --------------------------------------------------
    d = 3 * k
    assert st.drot is not None
    # dG rotation blocks per parameter, propagated down the tree.
    dg_rot = np.zeros((j, d, 3, 3))
    for q in st.order[1:]:
        p = int(parents[q])
        dg_rot[q] = np.einsum("dab,bc->dac", dg_rot[p], st.rot[q])
        if q != root:
            idx = joint_of_param[q]
            sl = slice(3 * idx, 3 * idx + 3)
            # d(local rotation)/d(own params), premultiplied by parent world rot
            dg_rot[q, sl] += np.einsum("ab,bci->iac", st.g_rot[p], st.drot[idx])
    # Translations of G depend on theta only through parent rotations.
    dg_t = np.zeros((j, d, 3))
    for q in st.order[1:]:
        p = int(parents[q])
        local_t = st.joints[q] - st.joints[p]
        dg_t[q] = dg_t[p] + dg_rot[p] @ local_t
    dskin_t = dg_t - np.einsum("kdab,kb->kda", dg_rot, st.joints)

    d_pose_jac = np.einsum("nk,kdab,nb->nad", w, dg_rot, st.v_posed, optimize=True)
    d_pose_jac += np.einsum("nk,kda->nad", w, dskin_t, optimize=True)

    if model.pose_dirs is not None:
        # v_posed feels theta through the flattened rotation features.
        dfeat = np.zeros((9 * k, d))
        for idx in range(k):
            block = st.drot[idx].reshape(9, 3)  # d vec(R_idx) / d omega_idx
            dfeat[9 * idx : 9 * idx + 9, 3 * idx : 3 * idx + 3] = block
        dv_posed = np.einsum("naf,fd->nad", model.pose_dirs, dfeat)
        d_pose_jac += dv_posed
        d_pose_jac += np.einsum("nk,kab,nbd->nad", w, delta_rot, dv_posed, optimize=True)

    return Mesh(vertices=mesh_vertices, faces=model.faces), d_pose_jac, d_shape_jac


def regress_joints(model: BodyModel, mesh: Mesh | np.ndarray) -> Joints:
    """Joint positions as the regressor applied to mesh vertices."""
    vertices = mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh, dtype=np.float64)
    if vertices.shape != (model.num_vertices, 3):
        raise ValidationError(
            f"mesh has {vertices.shape} vertices, model expects ({model.num_vertices}, 3)"
        )
    return Joints(positions=model.joint_regressor @ vertices)
