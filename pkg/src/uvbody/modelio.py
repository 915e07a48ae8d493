"""Model directory format: manifest.json plus raw little-endian arrays.

Layout of a model directory::

    manifest.json       counts (N, F, J, S, K, P), root_joint, endianness,
                        presence flags for the optional arrays
    template.f32        N x 3
    shape_dirs.f32      N x 3 x S
    pose_dirs.f32       N x 3 x 9K        (optional)
    joint_regressor.f32 J x N
    skin_weights.f32    N x J
    faces.u32           F x 3
    parents.u32         J
    part_labels.u32     F
    mirror_perm.u32     N                 (optional)
    uv_coords.f32       M x 2
    uv_faces.u32        F x 3
    uv_to_vertex.u32    M

Any disagreement between the manifest and a file size is a load error, as
is any violated model invariant.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .bodymodel import BodyModel
from .errors import LoadError, ValidationError
from .fileio import read_f32, read_json, read_u32, write_f32, write_json, write_u32
from .uvmap import UVLayout, validate_layout

_MANIFEST_KEYS = ("N", "F", "M", "J", "S", "K", "P", "root_joint", "endianness")

# float32 storage cannot hold rows summing to 1 at the in-memory 1e-9
# tolerance, so loading checks at storage precision and renormalizes.
_ROW_SUM_STORAGE_TOL = 1e-5


def _renormalized_rows(path: Path, array: np.ndarray) -> np.ndarray:
    sums = array.sum(axis=1)
    if np.any(array < 0):
        raise LoadError(f"{path}: negative weights")
    if np.max(np.abs(sums - 1.0)) > _ROW_SUM_STORAGE_TOL:
        raise LoadError(f"{path}: rows must sum to 1 within {_ROW_SUM_STORAGE_TOL}")
    return array / sums[:, None]


def save_model(model: BodyModel, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "N": model.num_vertices,
        "F": model.faces.shape[0],
        "M": model.uv_layout.num_uv_vertices,
        "J": model.num_joints,
        "S": model.num_shape_coeffs,
        "K": model.num_pose_joints,
        "P": model.num_parts,
        "root_joint": model.root_joint,
        "endianness": "little",
        "has_pose_dirs": model.pose_dirs is not None,
        "has_mirror_perm": model.mirror_perm is not None,
    }
    write_json(path / "manifest.json", manifest)
    write_f32(path / "template.f32", model.template_vertices)
    write_f32(path / "shape_dirs.f32", model.shape_dirs)
    write_f32(path / "joint_regressor.f32", model.joint_regressor)
    write_f32(path / "skin_weights.f32", model.skin_weights)
    write_u32(path / "faces.u32", model.faces)
    write_u32(path / "parents.u32", model.parents)
    write_u32(path / "part_labels.u32", model.part_labels)
    if model.pose_dirs is not None:
        write_f32(path / "pose_dirs.f32", model.pose_dirs)
    if model.mirror_perm is not None:
        write_u32(path / "mirror_perm.u32", model.mirror_perm)
    write_f32(path / "uv_coords.f32", model.uv_layout.uv_coords)
    write_u32(path / "uv_faces.u32", model.uv_layout.uv_faces)
    write_u32(path / "uv_to_vertex.u32", model.uv_layout.uv_to_vertex)


def load_model(path: str | Path, check_layout_overlap: bool = True) -> BodyModel:
    """Load and fully validate a model directory.

    Every invariant violation is a hard error, never a warning: row sums,
    tree structure, involution, index ranges and the UV layout checks all
    reject the model.
    """
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise LoadError(f"{manifest_path}: missing manifest")
    manifest = read_json(manifest_path)
    missing = [k for k in _MANIFEST_KEYS if k not in manifest]
    if missing:
        raise LoadError(f"{manifest_path}: missing keys {missing}")
    if manifest["endianness"] != "little":
        raise LoadError(f"{manifest_path}: unsupported endianness {manifest['endianness']!r}")

    n = int(manifest["N"])
    f = int(manifest["F"])
    m = int(manifest["M"])
    j = int(manifest["J"])
    s = int(manifest["S"])
    k = int(manifest["K"])
    p = int(manifest["P"])
    if k != j - 1:
        raise LoadError(f"{manifest_path}: K must equal J - 1")

    template = read_f32(path / "template.f32", (n, 3))
    shape_dirs = read_f32(path / "shape_dirs.f32", (n, 3, s))
    regressor = _renormalized_rows(path / "joint_regressor.f32", read_f32(path / "joint_regressor.f32", (j, n)))
    skin = _renormalized_rows(path / "skin_weights.f32", read_f32(path / "skin_weights.f32", (n, j)))
    faces = read_u32(path / "faces.u32", (f, 3))
    parents = read_u32(path / "parents.u32", (j,))
    part_labels = read_u32(path / "part_labels.u32", (f,))
    pose_dirs = None
    if manifest.get("has_pose_dirs"):
        pose_dirs = read_f32(path / "pose_dirs.f32", (n, 3, 9 * k))
    mirror = None
    if manifest.get("has_mirror_perm"):
        mirror = read_u32(path / "mirror_perm.u32", (n,))

    uv_coords = read_f32(path / "uv_coords.f32", (m, 2))
    uv_faces = read_u32(path / "uv_faces.u32", (f, 3))
    uv_to_vertex = read_u32(path / "uv_to_vertex.u32", (m,))

    try:
        layout = UVLayout(uv_coords=uv_coords, uv_faces=uv_faces, uv_to_vertex=uv_to_vertex)
        if check_layout_overlap:
            validate_layout(layout)
        model = BodyModel(
            template_vertices=template,
            faces=faces,
            shape_dirs=shape_dirs,
            joint_regressor=regressor,
            skin_weights=skin,
            parents=parents,
            uv_layout=layout,
            part_labels=part_labels,
            root_joint=int(manifest["root_joint"]),
            pose_dirs=pose_dirs,
            mirror_perm=mirror,
            num_parts=p,
        )
    except ValidationError as exc:
        raise LoadError(f"{path}: {exc}") from exc
    if np.any(part_labels >= p):
        raise LoadError(f"{path}: part label out of declared range P={p}")
    return model
