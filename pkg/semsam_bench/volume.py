"""3D volumes and label maps: NIfTI-1 I/O, RAS reorientation, windowing,
multi-planar reconstruction and frame extraction.
"""

import gzip
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import nibabel as nib
import numpy as np
from nibabel.orientations import (
    aff2axcodes, apply_orientation, axcodes2ornt, inv_ornt_aff, io_orientation, ornt_transform
)
from scipy import ndimage

from .config import WindowSpec
from .errors import ArtifactIOError, FormatError, ValidationError
from .logging import LogCategory, get_logger, performance_monitor
from .models import OrientationMode, SliceDirection

logger = get_logger("volume")

# NIfTI datatype codes accepted on load: uint8, int16, float32
SUPPORTED_DATATYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352

# axes within this angle of a world axis reorient by permutation and flips
OBLIQUE_COS_LIMIT = float(np.cos(np.pi / 4)) - 1e-9

OPPOSITE_CODE = {"R": "L", "L": "R", "A": "P", "P": "A", "S": "I", "I": "S"}

# patient axis each direction slices along
SLICE_AXIS_CODE = {
    SliceDirection.AXIAL: "S",
    SliceDirection.CORONAL: "A",
    SliceDirection.SAGITTAL: "R",
}

# standard viewing layout as (rows top->bottom, columns left->right, slice order)
STANDARD_VIEW_CODES = {
    SliceDirection.AXIAL: ("P", "L", "S"),
    SliceDirection.CORONAL: ("I", "L", "A"),
    SliceDirection.SAGITTAL: ("I", "P", "R"),
}

# world axes of resample_mpr output, slice axis last
MPR_AXES = {
    SliceDirection.AXIAL: (0, 1, 2),
    SliceDirection.CORONAL: (0, 2, 1),
    SliceDirection.SAGITTAL: (1, 2, 0),
}


def _check_affine(affine: np.ndarray) -> np.ndarray:
    affine = np.asarray(affine, dtype=np.float64)
    if affine.shape != (4, 4):
        raise ValidationError(f"affine must be 4x4, got {affine.shape}", field_name="affine")
    if not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
        raise ValidationError("affine bottom row must be [0, 0, 0, 1]", field_name="affine")
    if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
        raise ValidationError("affine 3x3 block is singular", field_name="affine")
    return affine


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar grid with a voxel-to-RAS+ world affine (mm)."""
    voxels: np.ndarray
    affine: np.ndarray

    def __post_init__(self):
        voxels = np.asarray(self.voxels, dtype=np.float32)
        if voxels.ndim != 3 or min(voxels.shape) < 1:
            raise ValidationError(f"volume must be a non-empty 3-D grid, got shape {voxels.shape}",
                                  field_name="voxels")
        object.__setattr__(self, "voxels", voxels)
        object.__setattr__(self, "affine", _check_affine(self.affine))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.voxels.shape)

    @property
    def grid(self) -> np.ndarray:
        return self.voxels

    def with_grid(self, grid: np.ndarray, affine: np.ndarray) -> 'Volume':
        return Volume(voxels=grid, affine=affine)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Integer structure labels (0 = background) plus label names."""
    labels: np.ndarray
    affine: np.ndarray
    names: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise ValidationError(f"label map must be a non-empty 3-D grid, got shape {labels.shape}",
                                  field_name="labels")
        if labels.dtype.kind == "f":
            if not np.all(np.isfinite(labels)) or not np.array_equal(labels, np.round(labels)):
                raise ValidationError("label map holds non-integer values", field_name="labels")
        object.__setattr__(self, "labels", labels.astype(np.int32))
        object.__setattr__(self, "affine", _check_affine(self.affine))
        object.__setattr__(self, "names", {int(k): str(v) for k, v in self.names.items() if int(k) != 0})

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.labels.shape)

    @property
    def grid(self) -> np.ndarray:
        return self.labels

    def with_grid(self, grid: np.ndarray, affine: np.ndarray) -> 'LabelMap':
        return LabelMap(labels=grid, affine=affine, names=self.names)

    def name_of(self, label_id: int) -> str:
        return self.names.get(label_id, f"structure {label_id}")

    def matches(self, volume: Volume) -> bool:
        """Same dims and affine as ``volume``."""
        return self.dims == volume.dims and np.allclose(self.affine, volume.affine, atol=1e-6)

    @classmethod
    def from_volume(cls, volume: Volume, names: Dict[int, str]) -> 'LabelMap':
        return cls(labels=volume.voxels, affine=volume.affine, names=names)


Image = Union[Volume, LabelMap]


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}", path=str(path), cause=e)
    if path.suffix == ".gz":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise FormatError(f"cannot decompress {path}: {e}", path=str(path), cause=e)
    return raw


@performance_monitor("parse_nifti", "volume")
def parse_nifti(path: Union[str, Path]) -> Volume:
    """Read an uncompressed (or gzip-wrapped) single-file NIfTI-1 volume.

    Voxels come back as float32 with ``scl_slope``/``scl_inter`` applied; a
    zero or non-finite slope counts as 1. The affine is the sform.

    Raises:
        FormatError: bad magic, unsupported datatype, sform_code 0, or a data
            section shorter than the header promises.
    """
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < NIFTI_HEADER_SIZE:
        raise FormatError(f"truncated header at offset {len(raw)}", path=str(path), offset=len(raw))

    stream = io.BytesIO(raw)
    try:
        header = nib.Nifti1Header.from_fileobj(stream, check=False)
    except Exception as e:
        raise FormatError(f"unreadable NIfTI header: {e}", path=str(path), offset=0, cause=e)

    magic = bytes(header["magic"].item()).rstrip(b"\x00")
    if magic != b"n+1":
        raise FormatError(f"bad magic {magic!r} at offset 344", path=str(path), offset=344)
    datatype = int(header["datatype"])
    if datatype not in SUPPORTED_DATATYPES:
        raise FormatError(f"unsupported datatype {datatype}", path=str(path), offset=70)
    if int(header["sform_code"]) <= 0:
        raise FormatError("sform_code is 0 (qform-only files are not accepted)", path=str(path), offset=254)

    dim = [int(d) for d in header["dim"]]
    if not 3 <= dim[0] <= 7 or any(d != 1 for d in dim[4:dim[0] + 1]):
        raise FormatError(f"expected a 3-D volume, got dim {dim[:dim[0] + 1] if 0 < dim[0] <= 7 else dim}",
                          path=str(path), offset=40)
    shape = tuple(dim[1:4])
    if min(shape) < 1:
        raise FormatError(f"empty volume {shape}", path=str(path), offset=42)

    offset = int(header["vox_offset"])
    dtype = header.get_data_dtype()
    expected = offset + int(np.prod(shape)) * dtype.itemsize
    if len(raw) < expected:
        raise FormatError(f"truncated data section at offset {len(raw)} (expected {expected} bytes)",
                          path=str(path), offset=len(raw))

    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset)
    data = data.reshape(shape, order="F").astype(np.float64)

    slope = float(header["scl_slope"])
    inter = float(header["scl_inter"])
    if slope == 0 or not np.isfinite(slope):
        slope = 1.0
    if not np.isfinite(inter):
        inter = 0.0

    volume = Volume(voxels=(data * slope + inter).astype(np.float32), affine=header.get_sform())
    logger.log_artifact("Loaded NIfTI volume", "nifti", str(path),
                        dims=list(volume.dims), datatype=datatype, axcodes="".join(axis_codes(volume)))
    return volume


def load_labelmap(path: Union[str, Path], names: Dict[int, str]) -> LabelMap:
    """Parse a NIfTI label map; voxel values must be integers after scaling."""
    return LabelMap.from_volume(parse_nifti(path), names)


def load_label_names(path: Union[str, Path]) -> Dict[int, str]:
    """Read ``{"<label id>": "<structure name>"}`` JSON."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}", path=str(path), cause=e)
    except json.JSONDecodeError as e:
        raise FormatError(f"parse error: {e.msg} at offset {e.pos}", path=str(path), offset=e.pos, cause=e)
    if not isinstance(data, dict):
        raise ValidationError("label names must be a JSON object", field_name="names")
    try:
        return {int(k): str(v) for k, v in data.items()}
    except ValueError as e:
        raise ValidationError(f"label ids must be integers: {e}", field_name="names")


def write_nifti(
    image: Image,
    path: Union[str, Path],
    dtype: str = "float32",
    endianness: str = "<",
    slope: float = 1.0,
    inter: float = 0.0
) -> None:
    """Debug writer: single-file NIfTI-1 with sform_code 1 and no qform.

    Stored values are ``(grid - inter) / slope`` cast to ``dtype``.
    """
    path = Path(path)
    header = nib.Nifti1Header(endianness=endianness)
    header.set_data_dtype(np.dtype(dtype))
    header.set_data_shape(image.dims)
    header.set_sform(image.affine, code=1)
    header["scl_slope"] = slope
    header["scl_inter"] = inter
    header["vox_offset"] = NIFTI_VOX_OFFSET

    stored = (np.asarray(image.grid, dtype=np.float64) - inter) / slope
    if np.dtype(dtype).kind != "f":
        stored = np.round(stored)
    payload = stored.astype(header.get_data_dtype()).tobytes(order="F")

    buffer = io.BytesIO()
    header.write_to(buffer)
    if buffer.tell() < NIFTI_VOX_OFFSET:
        buffer.write(b"\x00" * (NIFTI_VOX_OFFSET - buffer.tell()))
    buffer.write(payload)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(buffer.getvalue())
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)


def axis_codes(image: Image) -> Tuple[str, str, str]:
    """Direction each storage axis grows towards, e.g. ``('R', 'A', 'S')``."""
    return tuple(aff2axcodes(image.affine))


def _reorient(image: Image, target_codes: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    current = io_orientation(image.affine)
    transform = ornt_transform(current, axcodes2ornt(tuple(target_codes)))
    grid = apply_orientation(image.grid, transform)
    affine = image.affine @ inv_ornt_aff(transform, image.dims)
    return np.ascontiguousarray(grid), affine


def check_not_oblique(image: Image) -> None:
    """Raise unless every voxel axis lies within 45 degrees of a world axis."""
    columns = image.affine[:3, :3]
    unit = columns / np.linalg.norm(columns, axis=0)
    worst = float(np.abs(unit).max(axis=0).min())
    if worst < OBLIQUE_COS_LIMIT:
        raise ValidationError(
            f"oblique affine (axis {np.degrees(np.arccos(worst)):.1f} degrees off the nearest world axis); "
            "resample with resample_mpr first",
            field_name="affine")


def reorient_to_ras(image: Image, ras_most_origin: bool = False) -> Image:
    """Permute and flip voxel axes so they grow towards +R, +A, +S.

    With ``ras_most_origin`` all three axes are flipped instead, so index
    [0, 0, 0] holds the right-anterior-superior corner. No resampling happens;
    label maps go through the same transform as their volume.

    Raises:
        ValidationError: the affine is oblique beyond 45 degrees.
    """
    check_not_oblique(image)
    target = ("L", "P", "I") if ras_most_origin else ("R", "A", "S")
    grid, affine = _reorient(image, target)
    return image.with_grid(grid, affine)


def apply_window(image: Image, w: WindowSpec) -> np.ndarray:
    """Clip to the window and map linearly onto 0..255 (round half up).

    Constant volumes map to all zeros.
    """
    values = np.asarray(image.grid, dtype=np.float64)
    if values.max() == values.min():
        return np.zeros(values.shape, dtype=np.uint8)
    if w.kind == "percentile":
        low, high = np.percentile(values, [w.low, w.high])
    else:
        low, high = w.level - w.width / 2.0, w.level + w.width / 2.0
    if high <= low:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = (np.clip(values, low, high) - low) / (high - low) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


@performance_monitor("resample_mpr", "volume")
def resample_mpr(
    image: Image,
    target_direction: SliceDirection,
    spacing: Sequence[float],
    order: Optional[int] = None
) -> Image:
    """Resample onto a world-axis-aligned grid whose last axis slices along
    ``target_direction``.

    Output axes are (R, A, S) for axial, (R, S, A) for coronal and (A, S, R)
    for sagittal; ``spacing`` is given in that order (mm). Values come from
    trilinear interpolation (``order=1``, the default for volumes) or nearest
    neighbor (``order=0``, the default for label maps). Points outside the
    source grid are 0.

    Raises:
        ValidationError: a spacing entry is not positive.
    """
    spacing = np.asarray(spacing, dtype=np.float64)
    if spacing.shape != (3,) or not np.all(spacing > 0) or not np.all(np.isfinite(spacing)):
        raise ValidationError(f"spacing must be three positive numbers, got {spacing.tolist()}",
                              field_name="spacing")
    if order is None:
        order = 0 if isinstance(image, LabelMap) else 1

    dims = np.asarray(image.dims)
    corners = np.array([[i, j, k, 1.0] for i in (0, dims[0] - 1) for j in (0, dims[1] - 1)
                        for k in (0, dims[2] - 1)])
    world = (image.affine @ corners.T)[:3]
    lower, upper = world.min(axis=1), world.max(axis=1)

    axes = MPR_AXES[target_direction]
    counts = [int(np.floor((upper[a] - lower[a]) / s + 1e-6)) + 1 for a, s in zip(axes, spacing)]
    out_affine = np.eye(4)
    out_affine[:3, :3] = 0.0
    for j, (a, s) in enumerate(zip(axes, spacing)):
        out_affine[a, j] = s
    out_affine[:3, 3] = lower

    to_source = np.linalg.inv(image.affine) @ out_affine
    source = np.asarray(image.grid, dtype=np.float64)
    out = np.zeros(counts, dtype=np.float64)
    ii, jj = np.meshgrid(np.arange(counts[0]), np.arange(counts[1]), indexing="ij")
    tol = 1e-6
    for k in range(counts[2]):
        points = np.stack([ii.ravel(), jj.ravel(), np.full(ii.size, k), np.ones(ii.size)])
        coords = (to_source @ points)[:3]
        inside = np.all((coords >= -tol) & (coords <= (dims - 1)[:, None] + tol), axis=0)
        plane = np.zeros(ii.size)
        if inside.any():
            clipped = np.clip(coords[:, inside], 0, (dims - 1)[:, None])
            plane[inside] = ndimage.map_coordinates(source, clipped, order=order, mode="nearest",
                                                    prefilter=False)
        out[:, :, k] = plane.reshape(ii.shape)

    logger.debug("Resampled image", LogCategory.VOLUME,
                 {"direction": target_direction.value, "dims": counts, "order": order})
    if isinstance(image, LabelMap):
        return LabelMap(labels=np.rint(out).astype(np.int32), affine=out_affine, names=image.names)
    return Volume(voxels=out.astype(np.float32), affine=out_affine)


@dataclass(frozen=True)
class FrameLayout:
    """Where frame rows, columns and slice order point in patient space.

    ``codes`` are the axis codes (rows top->bottom, columns left->right,
    slice order), e.g. ``('P', 'L', 'S')`` for a standard axial view.
    """
    slice_direction: SliceDirection
    orientation_mode: OrientationMode
    codes: Tuple[str, str, str]


def layout_codes(
    direction: SliceDirection,
    mode: OrientationMode,
    storage_codes: Tuple[str, str, str] = ("L", "P", "I")
) -> Tuple[str, str, str]:
    """Layout codes for a direction and mode given the storage axis codes.

    RAS storage keeps the two in-plane storage axes in array order.
    """
    if mode == OrientationMode.STANDARD_VIEW:
        return STANDARD_VIEW_CODES[direction]
    slice_code = SLICE_AXIS_CODE[direction]
    slice_axis = next(i for i, c in enumerate(storage_codes) if c in (slice_code, OPPOSITE_CODE[slice_code]))
    rows, cols = [storage_codes[i] for i in range(3) if i != slice_axis]
    return rows, cols, storage_codes[slice_axis]


def frame_layout(image: Image, mode: OrientationMode, direction: SliceDirection) -> FrameLayout:
    """Layout of frames cut from ``image`` along ``direction``.

    Raises:
        ValidationError: the image is oblique.
    """
    check_not_oblique(image)
    return FrameLayout(direction, mode, layout_codes(direction, mode, axis_codes(image)))


def frame_stack(grid: np.ndarray, affine: np.ndarray, layout: FrameLayout) -> np.ndarray:
    """Reorder a storage grid to (rows, columns, slices) for ``layout``."""
    transform = ornt_transform(io_orientation(affine), axcodes2ornt(layout.codes))
    return np.ascontiguousarray(apply_orientation(grid, transform))


def unstack(stack: np.ndarray, affine: np.ndarray, layout: FrameLayout) -> np.ndarray:
    """Inverse of :func:`frame_stack`."""
    transform = ornt_transform(axcodes2ornt(layout.codes), io_orientation(affine))
    return np.ascontiguousarray(apply_orientation(stack, transform))


@dataclass(frozen=True, eq=False)
class RenderFrame:
    """One grayscale slice as displayed."""
    slice_direction: SliceDirection
    orientation_mode: OrientationMode
    index: int
    pixels: np.ndarray
    codes: Tuple[str, str, str]

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 2:
            raise ValidationError("frame pixels must be a 2-D uint8 grid", field_name="pixels")


def extract_frames(
    volume: Volume,
    mode: OrientationMode,
    direction: SliceDirection,
    w: WindowSpec
) -> List[RenderFrame]:
    """Window the volume and cut it into frames along ``direction``.

    Standard view applies the radiological table; RAS storage keeps the raw
    array order. One frame per slice.
    """
    layout = frame_layout(volume, mode, direction)
    stack = frame_stack(apply_window(volume, w), volume.affine, layout)
    return [
        RenderFrame(direction, mode, i, np.ascontiguousarray(stack[:, :, i]), layout.codes)
        for i in range(stack.shape[2])
    ]


def label_frames(labelmap: LabelMap, layout: FrameLayout) -> np.ndarray:
    """Label grid reordered to (rows, columns, slices) for ``layout``."""
    return frame_stack(labelmap.labels, labelmap.affine, layout)


def select_slice(labelmap: LabelMap, layout: FrameLayout) -> int:
    """Frame index showing the most distinct labels (lowest index on ties)."""
    stack = label_frames(labelmap, layout)
    counts = [np.unique(stack[:, :, i][stack[:, :, i] != 0]).size for i in range(stack.shape[2])]
    return int(np.argmax(counts))


def isolate_slice(labelmap: LabelMap, layout: FrameLayout, index: int) -> LabelMap:
    """Copy of ``labelmap`` with every voxel outside frame ``index`` cleared."""
    stack = label_frames(labelmap, layout)
    keep = np.zeros_like(stack)
    keep[:, :, index] = stack[:, :, index]
    return replace(labelmap, labels=unstack(keep, labelmap.affine, layout))
