"""Symbolic scenes on a placement grid.

Objects live on a square grid of cells; a second z level holds objects
stacked by put-on-top / put-under actions. Everything downstream (render,
rules, annotations) derives from these records, so re-creations have exact
ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

SHAPES = ("cube", "sphere", "cylinder")
SIZES = ("small", "large")
COLORS = ("gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow")
MATERIALS = ("rubber", "metal")
ACTIONS = ("put_on_top", "put_under", "exchange_color", "exchange_position")

ACTION_PHRASES = {
    "put_on_top": "put on top",
    "put_under": "put under",
    "exchange_color": "exchange color",
    "exchange_position": "exchange position",
}

# border strip (in pixels) that no object bbox may touch
BORDER_MARGIN = 2

GROUND_Z3D = 0.70
STACKED_Z3D = 1.75


class SceneGenError(RuntimeError):
    pass


@dataclass(frozen=True)
class Geometry:
    """Pixel layout of the placement grid for a given image size."""

    image_size: int = 64
    grid: int = 4

    @property
    def margin(self) -> int:
        return self.image_size // 16

    @property
    def cell(self) -> int:
        return (self.image_size - 2 * self.margin) // self.grid

    def center(self, cell_rc: tuple[int, int], z: int = 0) -> tuple[int, int]:
        """(row, col) pixel center of a cell; raised objects sit higher."""
        r, c = cell_rc
        cy = self.margin + self.cell * r + self.cell // 2 - z * self.raise_offset
        cx = self.margin + self.cell * c + self.cell // 2
        return cy, cx

    @property
    def raise_offset(self) -> int:
        return max(3, (self.cell * 4) // 14)

    def half_extent(self, size: str) -> int:
        base = 5 if size == "large" else 3
        return max(2, (self.cell * base) // 14)


@dataclass
class SceneObject:
    index: int
    shape: str
    size: str
    color: str
    material: str
    cell: tuple[int, int]
    depth_rank: int
    z: int = 0  # 0 on the ground, 1 stacked on the object below

    @property
    def descriptor(self) -> str:
        return f"{self.size} {self.color} {self.material} {self.shape}"

    def bbox(self, geom: Geometry) -> tuple[int, int, int, int]:
        """Pixel rectangle [x0, y0, x1, y1], inclusive corners."""
        cy, cx = geom.center(self.cell, self.z)
        h = geom.half_extent(self.size)
        w = max(2, h - 2) if self.shape == "cylinder" else h
        return (cx - w, cy - h, cx + w, cy + h)


def parse_descriptor(text: str) -> dict[str, str]:
    """Invert ``SceneObject.descriptor``; raises ValueError on bad input."""
    parts = text.split()
    if (
        len(parts) != 4
        or parts[0] not in SIZES
        or parts[1] not in COLORS
        or parts[2] not in MATERIALS
        or parts[3] not in SHAPES
    ):
        raise ValueError(f"not an object descriptor: {text!r}")
    return {"size": parts[0], "color": parts[1], "material": parts[2], "shape": parts[3]}


ALL_DESCRIPTORS = tuple(
    f"{s} {c} {m} {sh}" for s, c, m, sh in product(SIZES, COLORS, MATERIALS, SHAPES)
)


@dataclass
class Scene:
    scene_id: str
    objects: list[SceneObject]
    image_size: int = 64
    rng_seed: int = field(default=0, compare=False)  # provenance, not identity
    grid: int = 4

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.image_size, self.grid)

    def matching(self, descriptor: str) -> list[SceneObject]:
        want = parse_descriptor(descriptor)
        return [
            o
            for o in self.objects
            if o.shape == want["shape"]
            and o.size == want["size"]
            and o.color == want["color"]
            and o.material == want["material"]
        ]

    def validate(self) -> None:
        geom = self.geometry
        ground = [o.cell for o in self.objects if o.z == 0]
        if len(set(ground)) != len(ground):
            raise SceneGenError(f"scene {self.scene_id}: ground cells not unique")
        for o in self.objects:
            if o.z == 1:
                below = [b for b in self.objects if b is not o and b.cell == o.cell]
                if not below:
                    raise SceneGenError(
                        f"scene {self.scene_id}: stacked object {o.index} has no base"
                    )
            x0, y0, x1, y1 = o.bbox(geom)
            lim = self.image_size - 1 - BORDER_MARGIN
            if x0 < BORDER_MARGIN or y0 < BORDER_MARGIN or x1 > lim or y1 > lim:
                raise SceneGenError(
                    f"scene {self.scene_id}: object {o.index} bbox {o.bbox(geom)} "
                    f"touches the {BORDER_MARGIN}px border margin"
                )

    def copy(self) -> "Scene":
        return Scene(
            scene_id=self.scene_id,
            objects=[replace(o) for o in self.objects],
            image_size=self.image_size,
            rng_seed=self.rng_seed,
            grid=self.grid,
        )


@dataclass(frozen=True)
class GenConfig:
    image_size: int = 64
    grid: int = 4
    min_objects: int = 3
    max_objects: int = 6
    allow_ambiguous: bool = False
    allow_duplicates: bool = False


def sample_scene(seed: int, config: GenConfig = GenConfig(), scene_id: str | None = None) -> Scene:
    """Deterministically sample a valid scene from a seed.

    Object descriptors are pairwise distinct unless ``allow_duplicates`` is
    set, so the default generator always admits the full query complement.
    """
    if config.grid * config.grid < config.max_objects:
        raise SceneGenError(
            f"seed {seed}: {config.grid}x{config.grid} grid cannot hold "
            f"{config.max_objects} objects"
        )
    rng = np.random.default_rng(seed)
    count = int(rng.integers(config.min_objects, config.max_objects + 1))
    cell_ids = rng.choice(config.grid * config.grid, size=count, replace=False)
    if config.allow_duplicates:
        combo_ids = rng.integers(0, len(ALL_DESCRIPTORS), size=count)
    else:
        combo_ids = rng.choice(len(ALL_DESCRIPTORS), size=count, replace=False)
    objects = []
    for i in range(count):
        fields = parse_descriptor(ALL_DESCRIPTORS[int(combo_ids[i])])
        objects.append(
            SceneObject(
                index=i,
                shape=fields["shape"],
                size=fields["size"],
                color=fields["color"],
                material=fields["material"],
                cell=(int(cell_ids[i]) // config.grid, int(cell_ids[i]) % config.grid),
                depth_rank=i,
            )
        )
    scene = Scene(
        scene_id=scene_id or f"{seed % 10**8:08d}",
        objects=objects,
        image_size=config.image_size,
        rng_seed=seed,
        grid=config.grid,
    )
    scene.validate()
    return scene
