"""UV position maps: rasterize vertices into UV space and sample them back.

Conventions (used consistently by rendering and resampling):
  * texel (i, j) samples the UV point ((j + 0.5) / W, (i + 0.5) / H),
    with the v axis increasing downward (v -> row i);
  * a texel center exactly on an edge shared by two UV triangles belongs
    to the face with the lower index;
  * the inside test uses exact 64-bit barycentric coordinates with zero
    tolerance.

The texel coverage (validity mask) and the barycentric weights depend only
on the layout and the resolution, never on vertex positions, so they are
computed once per (layout, resolution) and cached on the layout. Rendering
is then a linear gather and resampling a linear scatter, which keeps both
operations exactly linear in the vertex positions.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, sparse

from .errors import DegenerateInputError, LoadError, ValidationError

_UVPM_MAGIC = b"UVPM"
_UVPM_VERSION = 1
_MIN_RESOLUTION = 8


@dataclass
class UVLayout:
    """UV coordinates, UV faces and the uv-vertex -> 3D-vertex map.

    Seam vertices are duplicated in UV space, so M >= N and uv_to_vertex
    is many-to-one but must cover every 3D vertex.
    """

    uv_coords: np.ndarray    # (M, 2) in [0, 1]
    uv_faces: np.ndarray     # (F, 3) indices into uv_coords
    uv_to_vertex: np.ndarray  # (M,) indices into the 3D vertex array
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.uv_coords = np.ascontiguousarray(self.uv_coords, dtype=np.float64)
        self.uv_faces = np.ascontiguousarray(self.uv_faces, dtype=np.int64)
        self.uv_to_vertex = np.ascontiguousarray(self.uv_to_vertex, dtype=np.int64)
        if self.uv_coords.ndim != 2 or self.uv_coords.shape[1] != 2:
            raise ValidationError("uv_coords must be (M, 2)")
        if self.uv_faces.ndim != 2 or self.uv_faces.shape[1] != 3:
            raise ValidationError("uv_faces must be (F, 3)")
        if self.uv_to_vertex.shape != (self.uv_coords.shape[0],):
            raise ValidationError("uv_to_vertex must have one entry per uv vertex")
        if self.uv_faces.size and (self.uv_faces.min() < 0 or self.uv_faces.max() >= self.uv_coords.shape[0]):
            raise ValidationError("uv face index out of range")
        if np.any(self.uv_coords < -1e-12) or np.any(self.uv_coords > 1.0 + 1e-12):
            raise ValidationError("uv coordinates must lie in [0, 1]")

    @property
    def num_uv_vertices(self) -> int:
        return self.uv_coords.shape[0]

    @property
    def num_faces(self) -> int:
        return self.uv_faces.shape[0]

    def triangle_areas(self) -> np.ndarray:
        """Unsigned UV-space triangle areas."""
        tri = self.uv_coords[self.uv_faces]
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def raster_grid(self, resolution: int) -> "RasterGrid":
        key = ("grid", int(resolution))
        grid = self._cache.get(key)
        if grid is None:
            grid = _build_raster_grid(self, int(resolution))
            self._cache[key] = grid
        return grid

    def sampler(self, resolution: int) -> "Sampler":
        key = ("sampler", int(resolution))
        smp = self._cache.get(key)
        if smp is None:
            smp = _build_sampler(self, self.raster_grid(int(resolution)))
            self._cache[key] = smp
        return smp


@dataclass(frozen=True)
class PositionMap:
    """H x W grid of 3D positions plus the texel validity mask.

    Positions on invalid texels are exactly zero; the validity mask is a
    function of (layout, resolution) only.
    """

    positions: np.ndarray  # (H, W, 3) float64
    valid: np.ndarray      # (H, W) bool

    def __post_init__(self) -> None:
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        val = np.ascontiguousarray(self.valid, dtype=bool)
        if pos.ndim != 3 or pos.shape[2] != 3 or pos.shape[0] != pos.shape[1]:
            raise ValidationError(f"positions must be (H, H, 3), got {pos.shape}")
        if val.shape != pos.shape[:2]:
            raise ValidationError("valid mask shape mismatch")
        if not val.all() and np.any(pos[~val] != 0.0):
            raise ValidationError("positions must be exactly zero on invalid texels")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "valid", val)

    @property
    def resolution(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class RasterGrid:
    """Fixed rasterization of a layout at one resolution."""

    resolution: int
    valid: np.ndarray      # (H, W) bool
    tex_rows: np.ndarray   # (T,) row of each covered texel
    tex_cols: np.ndarray   # (T,)
    face: np.ndarray       # (T,) covering face index (lowest wins on edges)
    bary: np.ndarray       # (T, 3) barycentric weights of the texel center
    vert_idx: np.ndarray   # (T, 3) 3D vertex index per triangle corner


def _build_raster_grid(layout: UVLayout, resolution: int) -> RasterGrid:
    if resolution < _MIN_RESOLUTION:
        raise ValidationError(f"resolution must be >= {_MIN_RESOLUTION}")
    r = resolution
    areas = layout.triangle_areas()
    if np.any(areas <= 1e-12):
        bad = int(np.argmin(areas))
        raise DegenerateInputError(f"degenerate uv triangle {bad} (area {areas[bad]:.3e})")

    assigned = np.zeros((r, r), dtype=bool)
    face_of = np.full((r, r), -1, dtype=np.int64)
    bary_of = np.zeros((r, r, 3), dtype=np.float64)

    tri_uv = layout.uv_coords[layout.uv_faces]  # (F, 3, 2)
    for f in range(layout.num_faces):
        a, b, c = tri_uv[f]
        # Texel centers covered by the triangle's bbox.
        umin, vmin = np.minimum(np.minimum(a, b), c)
        umax, vmax = np.maximum(np.maximum(a, b), c)
        j0 = max(int(np.ceil(umin * r - 0.5)), 0)
        j1 = min(int(np.floor(umax * r - 0.5)), r - 1)
        i0 = max(int(np.ceil(vmin * r - 0.5)), 0)
        i1 = min(int(np.floor(vmax * r - 0.5)), r - 1)
        if j1 < j0 or i1 < i0:
            continue
        jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1))
        pu = (jj + 0.5) / r
        pv = (ii + 0.5) / r

        det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        wa = ((b[0] - pu) * (c[1] - pv) - (b[1] - pv) * (c[0] - pu)) / det
        wb = ((c[0] - pu) * (a[1] - pv) - (c[1] - pv) * (a[0] - pu)) / det
        wc = 1.0 - wa - wb
        inside = (wa >= 0.0) & (wb >= 0.0) & (wc >= 0.0)
        if not inside.any():
            continue
        fresh = inside & ~assigned[i0 : i1 + 1, j0 : j1 + 1]
        if not fresh.any():
            continue
        sub_i = ii[fresh]
        sub_j = jj[fresh]
        assigned[sub_i, sub_j] = True
        face_of[sub_i, sub_j] = f
        bary_of[sub_i, sub_j, 0] = wa[fresh]
        bary_of[sub_i, sub_j, 1] = wb[fresh]
        bary_of[sub_i, sub_j, 2] = wc[fresh]

    rows, cols = np.nonzero(assigned)
    faces = face_of[rows, cols]
    bary = bary_of[rows, cols]
    vert_idx = layout.uv_to_vertex[layout.uv_faces[faces]]
    return RasterGrid(
        resolution=r,
        valid=assigned,
        tex_rows=rows,
        tex_cols=cols,
        face=faces,
        bary=bary,
        vert_idx=vert_idx,
    )


def render_position_map(layout: UVLayout, vertices: np.ndarray, resolution: int) -> PositionMap:
    """Rasterize per-vertex 3D positions into a UV position map.

    Each covered texel holds the barycentric interpolation of the three
    vertex positions of its covering triangle; uncovered texels are zero.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise ValidationError("vertices must be (N, 3)")
    if not np.all(np.isfinite(vertices)):
        raise ValidationError("vertices contain non-finite entries")
    grid = layout.raster_grid(resolution)
    r = grid.resolution
    out = np.zeros((r, r, 3), dtype=np.float64)
    tri = vertices[grid.vert_idx]  # (T, 3, 3)
    out[grid.tex_rows, grid.tex_cols] = np.einsum("tk,tkc->tc", grid.bary, tri)
    return PositionMap(positions=out, valid=grid.valid.copy())


@dataclass(frozen=True)
class Sampler:
    """Validity-aware bilinear sampling of a position map back to vertices."""

    resolution: int
    matrix: sparse.csr_matrix      # (N, H*W), rows sum to 1
    unreachable: np.ndarray        # 3D vertices with no reachable uv copy
    num_vertices: int
    valid: np.ndarray


def _build_sampler(layout: UVLayout, grid: RasterGrid) -> Sampler:
    r = grid.resolution
    valid = grid.valid
    m = layout.num_uv_vertices
    n = int(layout.uv_to_vertex.max()) + 1

    x = layout.uv_coords[:, 0] * r - 0.5
    y = layout.uv_coords[:, 1] * r - 0.5
    j0 = np.floor(x).astype(np.int64)
    i0 = np.floor(y).astype(np.int64)
    fx = x - j0
    fy = y - i0

    # 4 neighbors with bilinear weights; out-of-bounds and invalid texels
    # get zero weight, the rest is renormalized.
    nj = np.stack([j0, j0 + 1, j0, j0 + 1], axis=1)
    ni = np.stack([i0, i0, i0 + 1, i0 + 1], axis=1)
    wgt = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1
    )
    inb = (nj >= 0) & (nj < r) & (ni >= 0) & (ni < r)
    njc = np.clip(nj, 0, r - 1)
    nic = np.clip(ni, 0, r - 1)
    ok = inb & valid[nic, njc]
    wgt = np.where(ok, wgt, 0.0)
    wsum = wgt.sum(axis=1)
    reachable_uv = wsum > 0.0

    # Seam fallback: nearest valid texel by euclidean distance transform.
    fallback_tex = None
    if not np.all(reachable_uv):
        _, (near_i, near_j) = ndimage.distance_transform_edt(~valid, return_indices=True)
        ri = np.clip(np.rint(y).astype(np.int64), 0, r - 1)
        rj = np.clip(np.rint(x).astype(np.int64), 0, r - 1)
        fallback_tex = near_i[ri, rj] * r + near_j[ri, rj]

    # Per-3D-vertex averaging over its reachable uv copies (fallback copies
    # are used only when no copy is reachable).
    uv_owner = layout.uv_to_vertex
    n_reach = np.bincount(uv_owner[reachable_uv], minlength=n)
    unreachable = np.nonzero(n_reach == 0)[0]

    rows_list = []
    cols_list = []
    vals_list = []
    if np.any(reachable_uv):
        uvs = np.nonzero(reachable_uv)[0]
        share = 1.0 / n_reach[uv_owner[uvs]]
        w4 = wgt[uvs] / wsum[uvs, None] * share[:, None]
        tex4 = nic[uvs] * r + njc[uvs]
        keep = w4 > 0.0
        rows_list.append(np.repeat(uv_owner[uvs], 4)[keep.ravel()])
        cols_list.append(tex4.ravel()[keep.ravel()])
        vals_list.append(w4.ravel()[keep.ravel()])
    if unreachable.size:
        assert fallback_tex is not None
        bad_uv = np.nonzero(~reachable_uv)[0]
        owners = uv_owner[bad_uv]
        sel = n_reach[owners] == 0
        bad_uv = bad_uv[sel]
        owners = owners[sel]
        n_bad = np.bincount(owners, minlength=n)
        rows_list.append(owners)
        cols_list.append(fallback_tex[bad_uv])
        vals_list.append(1.0 / n_bad[owners])

    rows = np.concatenate(rows_list) if rows_list else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols_list) if cols_list else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals_list) if vals_list else np.empty(0, dtype=np.float64)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(n, r * r))
    return Sampler(
        resolution=r,
        matrix=mat,
        unreachable=unreachable,
        num_vertices=n,
        valid=valid,
    )


def resample_vertices(
    layout: UVLayout,
    pmap: PositionMap,
    return_unreachable: bool = False,
):
    """Recover per-vertex 3D positions from a position map.

    Each uv vertex bilinearly samples the map with invalid texels excluded
    (weights renormalized); a 3D vertex takes the mean over its reachable
    uv copies. Vertices whose uv copies all fall in invalid neighborhoods
    are filled from the nearest valid texel and reported when
    ``return_unreachable`` is set.
    """
    smp = layout.sampler(pmap.resolution)
    if not np.array_equal(smp.valid, pmap.valid):
        raise ValidationError("position map validity mask does not match the layout")
    if smp.matrix.shape[0] and smp.matrix.getnnz() == 0:
        raise DegenerateInputError("position map has no valid texels")
    flat = pmap.positions.reshape(-1, 3)
    vertices = smp.matrix @ flat
    if return_unreachable:
        return vertices, smp.unreachable.copy()
    return vertices


def resample_matrix(layout: UVLayout, resolution: int) -> sparse.csr_matrix:
    """The (N, H*W) linear operator applied by :func:`resample_vertices`."""
    return layout.sampler(resolution).matrix


# ---------------------------------------------------------------------------
# UVPM file format: 16-byte header (magic, version, padding), u32 H, u32 W,
# H*W*3 little-endian f32 positions, H*W u8 validity.
# ---------------------------------------------------------------------------

def save_uvpm(path: str | Path, pmap: PositionMap, sidecar: dict | None = None) -> None:
    path = Path(path)
    r = pmap.resolution
    header = _UVPM_MAGIC + struct.pack("<I", _UVPM_VERSION) + b"\x00" * 8
    with open(path, "wb") as f:
        f.write(header)
        f.write(struct.pack("<II", r, r))
        f.write(pmap.positions.astype("<f4").tobytes())
        f.write(pmap.valid.astype(np.uint8).tobytes())
    if sidecar is not None:
        from .fileio import write_json

        write_json(path.with_suffix(path.suffix + ".json"), sidecar)


def load_uvpm(path: str | Path) -> PositionMap:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 24 or blob[:4] != _UVPM_MAGIC:
        raise LoadError(f"{path}: not a UVPM file")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != _UVPM_VERSION:
        raise LoadError(f"{path}: unsupported UVPM version {version}")
    h, w = struct.unpack_from("<II", blob, 16)
    if h != w:
        raise LoadError(f"{path}: position maps must be square, got {h}x{w}")
    pos_bytes = h * w * 3 * 4
    expected = 24 + pos_bytes + h * w
    if len(blob) != expected:
        raise LoadError(f"{path}: size mismatch (expected {expected} bytes, got {len(blob)})")
    positions = np.frombuffer(blob, dtype="<f4", count=h * w * 3, offset=24).reshape(h, w, 3)
    valid = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=24 + pos_bytes)
    valid = valid.reshape(h, w).astype(bool)
    positions = positions.astype(np.float64)
    positions[~valid] = 0.0
    return PositionMap(positions=positions, valid=valid)


def export_png16(path: str | Path, pmap: PositionMap) -> dict:
    """Lossy 16-bit-per-channel PNG export for visualization.

    Returns the scale record (per-channel min/max) that a viewer needs to
    undo the quantization; callers typically store it in the sidecar.
    """
    import cv2

    pos = pmap.positions
    valid = pmap.valid
    vmin = np.zeros(3)
    vmax = np.ones(3)
    if valid.any():
        vmin = pos[valid].min(axis=0)
        vmax = pos[valid].max(axis=0)
    span = np.where(vmax - vmin > 0, vmax - vmin, 1.0)
    scaled = np.zeros_like(pos)
    scaled[valid] = (pos[valid] - vmin) / span * 65535.0
    img = np.clip(np.rint(scaled), 0, 65535).astype(np.uint16)
    # x,y,z -> R,G,B; OpenCV writes BGR.
    cv2.imwrite(str(path), img[:, :, ::-1])
    return {"vmin": vmin.tolist(), "vmax": vmax.tolist(), "lossy": True}


def validate_layout(layout: UVLayout, overlap_resolution: int = 512) -> None:
    """Check layout invariants, including an overlap scan in UV space.

    Overlap detection rasterizes at ``overlap_resolution`` and flags any
    texel center strictly interior to more than one triangle, which catches
    overlaps larger than a texel while permitting shared edges.
    """
    areas = layout.triangle_areas()
    if np.any(areas <= 1e-12):
        bad = int(np.argmin(areas))
        raise ValidationError(f"uv triangle {bad} is degenerate (area {areas[bad]:.3e})")

    r = overlap_resolution
    count = np.zeros((r, r), dtype=np.int32)
    tri_uv = layout.uv_coords[layout.uv_faces]
    eps = 1e-9
    for f in range(layout.num_faces):
        a, b, c = tri_uv[f]
        umin, vmin = np.minimum(np.minimum(a, b), c)
        umax, vmax = np.maximum(np.maximum(a, b), c)
        j0 = max(int(np.ceil(umin * r - 0.5)), 0)
        j1 = min(int(np.floor(umax * r - 0.5)), r - 1)
        i0 = max(int(np.ceil(vmin * r - 0.5)), 0)
        i1 = min(int(np.floor(vmax * r - 0.5)), r - 1)
        if j1 < j0 or i1 < i0:
            continue
        jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1))
        pu = (jj + 0.5) / r
        pv = (ii + 0.5) / r
        det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        wa = ((b[0] - pu) * (c[1] - pv) - (b[1] - pv) * (c[0] - pu)) / det
        wb = ((c[0] - pu) * (a[1] - pv) - (c[1] - pv) * (a[0] - pu)) / det
        wc = 1.0 - wa - wb
        interior = (wa > eps) & (wb > eps) & (wc > eps)
        count[i0 : i1 + 1, j0 : j1 + 1] += interior
    if np.any(count > 1):
        n_bad = int(np.count_nonzero(count > 1))
        raise ValidationError(f"uv triangles overlap ({n_bad} doubly covered texels at {r})")
