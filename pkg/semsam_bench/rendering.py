"""Visual-prompt overlays (points, boxes, mask tints, letters) and PNG output."""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from .config import RenderStyle
from .errors import ArtifactIOError, ValidationError
from .logging import LogCategory, get_logger
from .volume import RenderFrame

logger = get_logger("rendering")

PALETTE: List[Tuple[str, Tuple[int, int, int]]] = [
    ("red", (230, 25, 75)),
    ("green", (60, 180, 75)),
    ("blue", (0, 130, 200)),
    ("orange", (245, 130, 48)),
    ("purple", (145, 30, 180)),
    ("cyan", (70, 240, 240)),
]
LETTERS = "ABCDEF"

_GLYPHS = {
    "A": [" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"],
    "B": ["#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "],
    "C": [" ####", "#    ", "#    ", "#    ", "#    ", "#    ", " ####"],
    "D": ["#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "],
    "E": ["#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"],
    "F": ["#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "],
}
FONT_5X7 = {letter: np.array([[c == "#" for c in row] for row in rows]) for letter, rows in _GLYPHS.items()}


def color_name(index: int) -> str:
    return PALETTE[index][0]


@dataclass(eq=False)
class OverlaySpec:
    """One prompt in frame pixel coordinates (x = column, y = row).

    ``center`` for points, ``box`` = (x0, y0, x1, y1) inclusive for boxes,
    ``mask`` a boolean frame-sized bitmap for tints.
    """
    kind: str
    color_index: int
    letter: Optional[str] = None
    center: Optional[Tuple[int, int]] = None
    box: Optional[Tuple[int, int, int, int]] = None
    mask: Optional[np.ndarray] = None
    clamped: bool = False

    def __post_init__(self):
        if self.kind not in ("point", "bbox", "mask"):
            raise ValidationError(f"unknown overlay kind {self.kind!r}", field_name="kind")
        if not 0 <= self.color_index < len(PALETTE):
            raise ValidationError(f"color index {self.color_index} outside palette", field_name="color_index")
        if self.letter is not None and self.letter not in LETTERS:
            raise ValidationError(f"letter must be one of {LETTERS}", field_name="letter")
        needed = {"point": self.center, "bbox": self.box, "mask": self.mask}[self.kind]
        if needed is None:
            raise ValidationError(f"{self.kind} overlay is missing its geometry", field_name="geometry")

    @property
    def color(self) -> Tuple[int, int, int]:
        return PALETTE[self.color_index][1]

    def extent(self) -> Tuple[int, int, int, int]:
        """(x0, y0, x1, y1) of the prompt itself, letter excluded."""
        if self.kind == "bbox":
            return self.box
        if self.kind == "point":
            x, y = self.center
            return x, y, x, y
        rows, cols = np.nonzero(self.mask)
        return int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())

    def geometry(self) -> Dict[str, object]:
        """JSON-ready geometry record."""
        if self.kind == "point":
            return {"center": list(self.center), "clamped": self.clamped}
        if self.kind == "bbox":
            return {"box": list(self.box), "clamped": self.clamped}
        return {"box": list(self.extent()), "pixels": int(self.mask.sum()), "clamped": self.clamped}


def clamp_overlay(spec: OverlaySpec, height: int, width: int) -> OverlaySpec:
    """Clamp geometry into a ``height`` x ``width`` frame, flagging changes."""
    def clip_x(x):
        return int(min(max(x, 0), width - 1))

    def clip_y(y):
        return int(min(max(y, 0), height - 1))

    if spec.kind == "point":
        center = (clip_x(spec.center[0]), clip_y(spec.center[1]))
        return replace(spec, center=center, clamped=spec.clamped or center != tuple(spec.center))
    if spec.kind == "bbox":
        x0, y0, x1, y1 = spec.box
        box = (clip_x(min(x0, x1)), clip_y(min(y0, y1)), clip_x(max(x0, x1)), clip_y(max(y0, y1)))
        return replace(spec, box=box, clamped=spec.clamped or box != tuple(spec.box))
    if spec.mask.shape != (height, width):
        mask = np.zeros((height, width), dtype=bool)
        h, w = min(height, spec.mask.shape[0]), min(width, spec.mask.shape[1])
        mask[:h, :w] = spec.mask[:h, :w]
        return replace(spec, mask=mask, clamped=True)
    return spec


def overlay_for_label(
    label_slice: np.ndarray,
    label_id: int,
    kind: str,
    color_index: int,
    letter: Optional[str] = None
) -> Optional[OverlaySpec]:
    """Prompt geometry of one label on one frame; ``None`` when absent."""
    present = label_slice == label_id
    if not present.any():
        return None
    rows, cols = np.nonzero(present)
    if kind == "point":
        center = (int(np.floor(cols.mean() + 0.5)), int(np.floor(rows.mean() + 0.5)))
        return OverlaySpec("point", color_index, letter, center=center)
    if kind == "bbox":
        box = (int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max()))
        return OverlaySpec("bbox", color_index, letter, box=box)
    return OverlaySpec("mask", color_index, letter, mask=present)


def blend_tint(base: np.ndarray, color: Sequence[int], alpha: float) -> np.ndarray:
    """``base * (1 - alpha) + color * alpha``, rounded half up."""
    mixed = np.asarray(base, dtype=np.float64) * (1.0 - alpha) + np.asarray(color, dtype=np.float64) * alpha
    return np.floor(mixed + 0.5).astype(np.uint8)


def _letter_origin(spec: OverlaySpec, style: RenderStyle, height: int, width: int) -> Tuple[int, int]:
    glyph_h, glyph_w = 7 * style.font_scale, 5 * style.font_scale
    x0, y0, x1, y1 = spec.extent()
    if spec.kind == "point":
        x, y = x1 + style.radius + 2, y0 - glyph_h // 2
    else:
        x, y = x0, y0 - glyph_h - 2
        if y < 0:
            y = y1 + 3
    x = min(max(x, 0), max(width - glyph_w, 0))
    y = min(max(y, 0), max(height - glyph_h, 0))
    return x, y


def draw_letter(pixels: np.ndarray, letter: str, x: int, y: int, color: Sequence[int], scale: int) -> None:
    """Stamp a scaled 5x7 glyph with its top-left corner at (x, y)."""
    glyph = np.kron(FONT_5X7[letter], np.ones((scale, scale), dtype=bool))
    h = min(glyph.shape[0], pixels.shape[0] - y)
    w = min(glyph.shape[1], pixels.shape[1] - x)
    if h <= 0 or w <= 0:
        return
    region = pixels[y:y + h, x:x + w]
    region[glyph[:h, :w]] = color


def render_frame(
    frame: Union[RenderFrame, np.ndarray],
    overlays: Sequence[OverlaySpec] = (),
    background: str = "image",
    style: Optional[RenderStyle] = None
) -> np.ndarray:
    """Composite overlays onto a frame; returns an (H, W, 3) uint8 grid.

    Draw order: mask tints, boxes, points, letters. ``background="white"``
    replaces the image with white and keeps the overlays in place.
    """
    style = style or RenderStyle()
    gray = frame.pixels if isinstance(frame, RenderFrame) else np.asarray(frame, dtype=np.uint8)
    height, width = gray.shape
    if background == "white":
        pixels = np.full((height, width, 3), 255, dtype=np.uint8)
    elif background == "image":
        pixels = np.repeat(gray[:, :, None], 3, axis=2)
    else:
        raise ValidationError(f"background must be 'image' or 'white', got {background!r}",
                              field_name="background")

    specs = [clamp_overlay(spec, height, width) for spec in overlays]
    for spec in specs:
        if spec.clamped:
            logger.debug("Overlay clamped to frame", LogCategory.RENDER,
                         {"kind": spec.kind, "letter": spec.letter})

    for spec in specs:
        if spec.kind == "mask":
            pixels[spec.mask] = blend_tint(pixels[spec.mask], spec.color, style.alpha)

    canvas = Image.fromarray(pixels)
    draw = ImageDraw.Draw(canvas)
    for spec in specs:
        if spec.kind == "bbox":
            draw.rectangle(spec.box, outline=spec.color, width=style.stroke)
    for spec in specs:
        if spec.kind == "point":
            x, y = spec.center
            r = style.radius
            draw.ellipse((x - r, y - r, x + r, y + r), fill=spec.color, outline=spec.color)
    pixels = np.array(canvas)

    for spec in specs:
        if spec.letter is not None:
            x, y = _letter_origin(spec, style, height, width)
            draw_letter(pixels, spec.letter, x, y, spec.color, style.font_scale)
    return pixels


def write_png(pixels: np.ndarray, path: Union[str, Path]) -> None:
    """Write an 8-bit RGB PNG (grayscale input is replicated to RGB)."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = np.repeat(pixels[:, :, None], 3, axis=2)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValidationError(f"expected an (H, W, 3) uint8 grid, got {pixels.dtype} {pixels.shape}",
                              field_name="pixels")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.ascontiguousarray(pixels)).save(path, format="PNG")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)


def read_png(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as image:
        return np.array(image.convert("RGB"))


@dataclass
class MediaManifest:
    """Frame order per media reference, written as ``media_manifest.json``."""
    entries: Dict[str, List[str]] = field(default_factory=dict)

    def add(self, media_ref: str, files: List[str]) -> None:
        self.entries[media_ref] = list(files)

    def __contains__(self, media_ref: str) -> bool:
        return media_ref in self.entries

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps({"media": self.entries}, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
        except OSError as e:
            raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path), cause=e)


def media_file_names(media_ref: str, count: int) -> List[str]:
    if count == 1:
        return [f"{media_ref}.png"]
    return [f"{media_ref}/frame_{i:04d}.png" for i in range(count)]


def render_media(
    frames: Sequence[RenderFrame],
    overlays_per_frame: Sequence[Sequence[OverlaySpec]],
    background: str,
    out_dir: Union[str, Path],
    media_ref: str,
    style: Optional[RenderStyle] = None
) -> List[str]:
    """Render a frame sequence under ``out_dir``.

    A single frame becomes ``<media_ref>.png``; a sequence becomes
    ``<media_ref>/frame_0000.png`` onwards. Returns paths relative to
    ``out_dir`` in frame order.
    """
    out_dir = Path(out_dir)
    if len(frames) != len(overlays_per_frame):
        raise ValidationError("one overlay list per frame is required", field_name="overlays_per_frame")
    names = media_file_names(media_ref, len(frames))
    for frame, overlays, name in zip(frames, overlays_per_frame, names):
        write_png(render_frame(frame, overlays, background, style), out_dir / name)
    logger.log_artifact("Rendered media", "png", str(out_dir / media_ref), frames=len(frames),
                        background=background)
    return names
