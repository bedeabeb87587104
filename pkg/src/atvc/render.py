"""Orthographic 2-D rasterizer for symbolic scenes.

Shapes are drawn as flat silhouettes: cube -> square, sphere -> circle,
cylinder -> vertical capsule. Metal objects get a fixed lighter highlight
wedge; rubber is flat fill. Painter's algorithm: ground objects by depth
rank, then stacked objects, so a carried object overlaps its base from
above. Rendering is a pure function of the scene.
"""

from __future__ import annotations

import numpy as np

from .scenes import Geometry, Scene, SceneObject

BACKGROUND = (190, 190, 190)

COLOR_RGB = {
    "gray": (87, 87, 87),
    "red": (173, 35, 35),
    "blue": (42, 75, 215),
    "green": (29, 105, 20),
    "brown": (129, 74, 25),
    "purple": (129, 38, 192),
    "cyan": (41, 208, 208),
    "yellow": (255, 238, 51),
}

HIGHLIGHT_LIFT = 70


def _silhouette(obj: SceneObject, geom: Geometry, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    cy, cx = geom.center(obj.cell, obj.z)
    h = geom.half_extent(obj.size)
    dy = yy - cy
    dx = xx - cx
    if obj.shape == "cube":
        return (np.abs(dy) <= h) & (np.abs(dx) <= h)
    if obj.shape == "sphere":
        return dy * dy + dx * dx <= h * h
    # vertical capsule: rectangle capped by half-discs
    w = max(2, h - 2)
    span = h - w
    body = (np.abs(dx) <= w) & (np.abs(dy) <= span)
    top = dx * dx + (dy + span) ** 2 <= w * w
    bottom = dx * dx + (dy - span) ** 2 <= w * w
    return body | top | bottom


def render(scene: Scene) -> np.ndarray:
    """Rasterize to an (H, W, 3) uint8 image."""
    size = scene.image_size
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    yy, xx = np.mgrid[0:size, 0:size]
    geom = scene.geometry
    for obj in sorted(scene.objects, key=lambda o: (o.z, o.depth_rank)):
        mask = _silhouette(obj, geom, yy, xx)
        fill = np.array(COLOR_RGB[obj.color], dtype=np.uint8)
        img[mask] = fill
        if obj.material == "metal":
            cy, cx = geom.center(obj.cell, obj.z)
            h = geom.half_extent(obj.size)
            gleam = mask & (yy <= cy - h // 3) & (xx <= cx)
            lifted = np.minimum(fill.astype(np.int16) + HIGHLIGHT_LIFT, 255)
            img[gleam] = lifted.astype(np.uint8)
    return img
