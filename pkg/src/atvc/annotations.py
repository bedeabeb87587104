"""Dataset annotation files plus PNG output.

One JSON file describes the whole dataset: header, vocabularies, the
input images with their symbolic objects, the ten questions per image,
and per-question recreation entries. Re-creation entries list full
records only for objects the action touched; untouched objects appear as
empty dicts. Questions whose answer is cannot/forbidden keep a matching
entry with an empty object list and no recreation file.

Key names and nesting (including the header's historical spellings
"vertion" and the mixed data_created/date_created) are part of the file
format and round-trip verbatim. All timestamps are fixed so identical
seeds produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

from PIL import Image

from .render import render
from .rules import ANSWER_CAN, ANSWER_TYPE_CODES, ANSWER_TYPE_FROM_CODE, QueryRecord, _touched_indices, classify_query, parse_question
from .scenes import (
    COLORS,
    GROUND_Z3D,
    MATERIALS,
    SHAPES,
    SIZES,
    STACKED_Z3D,
    Scene,
    SceneObject,
)

CATEGORY_ORDER = ("cube", "cylinder", "sphere")
ACTION_ORDER = ("put on top", "put under", "exchange position", "exchange color")
FIXED_DATE = "1970-01-01 00:00:00"


class AnnotationError(RuntimeError):
    pass


def _object_entry(obj: SceneObject, scene: Scene) -> dict:
    r, c = obj.cell
    return {
        "index": obj.index,
        "category_id": CATEGORY_ORDER.index(obj.shape),
        "size_id": SIZES.index(obj.size),
        "color_id": COLORS.index(obj.color),
        "bbox": list(obj.bbox(scene.geometry)),
        "3d_coords": [float(c), float(r), STACKED_Z3D if obj.z else GROUND_Z3D],
        "material_id": MATERIALS.index(obj.material),
    }


def _save_png(img, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(img).save(path)
    except OSError as e:
        raise AnnotationError(f"cannot write image {path}: {e}") from e


def write_annotations(
    scenes: list[Scene], queries: list[list[QueryRecord]], out_dir
) -> Path:
    """Write images/, recreations/ and annotations.json under ``out_dir``."""
    out_dir = Path(out_dir)
    images, questions, recreations = [], [], []
    for i, (scene, qs) in enumerate(zip(scenes, queries)):
        _save_png(render(scene), out_dir / "images" / f"{scene.scene_id}.png")
        images.append(
            {
                "image_idx": f"{i + 1:07d}",
                "image_filename": f"{scene.scene_id}.png",
                "id": scene.scene_id,
                "object_number": len(scene.objects),
                "data_created": FIXED_DATE,
                "objects": [_object_entry(o, scene) for o in scene.objects],
            }
        )
        ques, actions = [], []
        for q_i, q in enumerate(qs):
            ques.append(
                {
                    "ques_id": q_i,
                    "ques_idx": q_i + 1,
                    "id": q.query_id,
                    "type": ANSWER_TYPE_CODES[q.answer_type],
                    "Q": [q.question_text],
                    "A": [q.answer_text],
                }
            )
            entry = {
                "actions_id": q_i,
                "actions_idx": q_i + 1,
                "rec_filename": "",
                "object_number": 0,
                "date_created": FIXED_DATE,
                "objects": [],
            }
            if q.answer_type == ANSWER_CAN:
                rec = q.recreated_scene
                _save_png(render(rec), out_dir / "recreations" / f"{q.query_id}.png")
                touched = set(_touched_indices(scene, rec))
                entry["rec_filename"] = f"{q.query_id}.png"
                entry["object_number"] = len(rec.objects)
                entry["objects"] = [
                    _object_entry(o, rec) if o.index in touched else {}
                    for o in rec.objects
                ]
            actions.append(entry)
        questions.append(
            {
                "question_idx": f"{i + 1:07d}",
                "question_id": scene.scene_id,
                "question_number": len(qs),
                "ques": ques,
            }
        )
        recreations.append(
            {
                "rec_idx": f"{i + 1:07d}",
                "rec_id": scene.scene_id,
                "rec_num": len(qs),
                "actions": actions,
            }
        )
    doc = {
        "contributor": "synthetic grid-scene generator",
        "data_created": "1970",
        "url": "local",
        "description": "rule-governed scene re-creation dataset",
        "vertion": "1.0",
        "licenses": {"id": "1", "url": "none", "name": "Creative Commons Attribution (CC-BY 4.0)"},
        "categories": [", ".join(CATEGORY_ORDER)],
        "sizes": [", ".join(SIZES)],
        "colors": [", ".join(COLORS)],
        "material": [", ".join(MATERIALS)],
        "actions": [", ".join(ACTION_ORDER)],
        "images": images,
        "questions": questions,
        "recreations": recreations,
    }
    path = out_dir / "annotations.json"
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=1)
            f.write("\n")
    except OSError as e:
        raise AnnotationError(f"cannot write {path}: {e}") from e
    return path


def _scene_from_entry(entry: dict, image_size: int, grid: int) -> Scene:
    objects = []
    for rec in entry["objects"]:
        col, row, z3d = rec["3d_coords"]
        objects.append(
            SceneObject(
                index=rec["index"],
                shape=CATEGORY_ORDER[rec["category_id"]],
                size=SIZES[rec["size_id"]],
                color=COLORS[rec["color_id"]],
                material=MATERIALS[rec["material_id"]],
                cell=(int(row), int(col)),
                depth_rank=rec["index"],
                z=1 if z3d > 1.0 else 0,
            )
        )
    return Scene(entry["id"], objects, image_size=image_size, grid=grid)


def load_annotations(out_dir, image_size: int = 64, grid: int = 4):
    """Load annotations.json back into (scenes, queries) lists."""
    out_dir = Path(out_dir)
    path = out_dir / "annotations.json"
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise AnnotationError(f"cannot read {path}: {e}") from e
    scenes, queries = [], []
    rec_by_id = {r["rec_id"]: r for r in doc["recreations"]}
    for img_entry, q_entry in zip(doc["images"], doc["questions"]):
        scene = _scene_from_entry(img_entry, image_size, grid)
        scenes.append(scene)
        actions = rec_by_id[img_entry["id"]]["actions"]
        qs = []
        for ques, act in zip(q_entry["ques"], actions):
            answer_type = ANSWER_TYPE_FROM_CODE[ques["type"]]
            action, a, b = parse_question(ques["Q"][0])
            _, missing, reason = classify_query(scene, action, (a, b))
            record = QueryRecord(
                query_id=ques["id"],
                action=action,
                operands=(a, b),
                question_text=ques["Q"][0],
                answer_type=answer_type,
                explanation_conjuncts=missing,
                forbidden_reason=reason,
            )
            if answer_type == ANSWER_CAN:
                rec_scene = scene.copy()
                rec_scene.scene_id = ques["id"]
                for obj_rec in act["objects"]:
                    if not obj_rec:
                        continue
                    col, row, z3d = obj_rec["3d_coords"]
                    target = rec_scene.objects[obj_rec["index"]]
                    target.cell = (int(row), int(col))
                    target.z = 1 if z3d > 1.0 else 0
                    target.color = COLORS[obj_rec["color_id"]]
                record.recreated_scene = rec_scene
            qs.append(record)
        queries.append(qs)
    return scenes, queries
