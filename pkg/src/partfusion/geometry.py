"""Axis-aligned boxes and the head-to-body extrapolation used across the library."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "BBox",
    "BodyExtrapolation",
    "DEFAULT_BODY_EXTRAPOLATION",
    "GeometryError",
    "body_from_head",
    "iou",
]


class GeometryError(ValueError):
    """Raised for degenerate geometry (non-positive box width or height)."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, top-left corner plus size, in pixels.

    Boxes may extend outside the image; nothing in the geometry layer clips.
    """

    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center_x(self) -> float:
        return self.x + self.w / 2.0

    def require_valid(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise GeometryError(f"degenerate box: w={self.w}, h={self.h}")


@dataclass(frozen=True)
class BodyExtrapolation:
    """Affine head-to-body crop rule.

    The body box is centered on the head's horizontal center, keeps the head's
    top edge, and scales width/height by fixed factors. Offsets are expressed
    in head-widths / head-heights so the rule is scale-equivariant.
    """

    width_scale: float = 3.0
    height_scale: float = 6.0
    x_offset: float = 0.0  # shift of the body center, in head widths
    y_offset: float = 0.0  # shift of the body top, in head heights


DEFAULT_BODY_EXTRAPOLATION = BodyExtrapolation()


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]. Symmetric."""
    a.require_valid()
    b.require_valid()
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def body_from_head(head: BBox, cfg: BodyExtrapolation = DEFAULT_BODY_EXTRAPOLATION) -> BBox:
    """Extrapolate a full-body box from a head box.

    Deterministic and scale-equivariant: scaling the head coordinates by s
    scales the output by s. The result is never clipped to the image; callers
    that clip must record having done so.
    """
    head.require_valid()
    w = cfg.width_scale * head.w
    h = cfg.height_scale * head.h
    cx = head.center_x + cfg.x_offset * head.w
    y = head.y + cfg.y_offset * head.h
    return BBox(cx - w / 2.0, y, w, h)
