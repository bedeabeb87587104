"""The can / cannot / forbidden rule engine and query generator.

Two actions are categorically forbidden: sliding anything under another
object when the thing being moved is a sphere, and stacking anything on
top of a sphere. Forbidden-ness is decided from the operand descriptors
alone (the rule applies even when the objects are absent); absence then
drives the extra explanation conjuncts. Otherwise a query is "cannot"
exactly when an operand matches nothing in the scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenes import (
    ACTIONS,
    ALL_DESCRIPTORS,
    GenConfig,
    Scene,
    SceneGenError,
    parse_descriptor,
)

ANSWER_CAN = "can"
ANSWER_CANNOT = "cannot"
ANSWER_FORBIDDEN = "forbidden"

REASON_SPHERE_UNDER = "sphere_under"
REASON_ON_TOP_OF_SPHERE = "on_top_of_sphere"

ANSWER_TYPE_CODES = {ANSWER_CANNOT: 0, ANSWER_CAN: 1, ANSWER_FORBIDDEN: 2}
ANSWER_TYPE_FROM_CODE = {v: k for k, v in ANSWER_TYPE_CODES.items()}

REASON_PHRASES = {
    REASON_SPHERE_UNDER: "you cannot put the sphere under an object",
    REASON_ON_TOP_OF_SPHERE: "you cannot put an object on top of the sphere",
}


class RuleError(RuntimeError):
    pass


@dataclass
class QueryRecord:
    query_id: str
    action: str
    operands: tuple[str, str]
    question_text: str
    answer_type: str
    explanation_conjuncts: tuple[str, ...] = ()
    forbidden_reason: str | None = None
    recreated_scene: Scene | None = None

    @property
    def answer_text(self) -> str:
        return render_answer(
            self.answer_type, self.explanation_conjuncts, self.forbidden_reason
        )


def question_text(action: str, a: str, b: str) -> str:
    if action == "put_on_top":
        return f"Please put the {a} on top of the {b}."
    if action == "put_under":
        return f"Please put the {a} under the {b}."
    if action == "exchange_color":
        return f"Please exchange the color of the {a} and the {b}."
    if action == "exchange_position":
        return f"Please exchange the position of the {a} and the {b}."
    raise ValueError(f"unknown action {action!r}")


def parse_question(text: str) -> tuple[str, str, str]:
    """Invert ``question_text``. Raises ValueError for off-template input."""
    t = text.strip()
    if t.endswith("."):
        t = t[:-1]
    words = t.lower().split()
    if words[:3] == ["please", "put", "the"]:
        rest = words[3:]
        for marker, action, skip in (
            (("on", "top", "of", "the"), "put_on_top", 4),
            (("under", "the"), "put_under", 2),
        ):
            for i in range(1, len(rest)):
                if tuple(rest[i : i + len(marker)]) == marker:
                    a = " ".join(rest[:i])
                    b = " ".join(rest[i + skip :])
                    parse_descriptor(a), parse_descriptor(b)
                    return action, a, b
        raise ValueError(f"not a template question: {text!r}")
    for head, action in (
        (["please", "exchange", "the", "color", "of", "the"], "exchange_color"),
        (["please", "exchange", "the", "position", "of", "the"], "exchange_position"),
    ):
        if words[: len(head)] == head:
            rest = words[len(head) :]
            for i in range(1, len(rest)):
                if rest[i] == "and" and i + 1 < len(rest) and rest[i + 1] == "the":
                    a = " ".join(rest[:i])
                    b = " ".join(rest[i + 2 :])
                    parse_descriptor(a), parse_descriptor(b)
                    return action, a, b
    raise ValueError(f"not a template question: {text!r}")


def render_answer(answer_type: str, conjuncts: tuple[str, ...], reason: str | None) -> str:
    if answer_type == ANSWER_CAN:
        return "No problem."
    missing = " and ".join(f"no {c}" for c in conjuncts)
    if answer_type == ANSWER_CANNOT:
        return f"This action cannot be done. Because there is {missing}."
    if answer_type == ANSWER_FORBIDDEN:
        base = f"This action is forbidden. Because {REASON_PHRASES[reason]}"
        if conjuncts:
            return f"{base}, and there is {missing}."
        return f"{base}."
    raise ValueError(f"unknown answer type {answer_type!r}")


def classify_query(scene: Scene, action: str, operands: tuple[str, str]):
    """Return (answer_type, conjuncts-in-operand-order, forbidden_reason)."""
    a, b = operands
    fa, fb = parse_descriptor(a), parse_descriptor(b)
    reason = None
    if action == "put_under" and fa["shape"] == "sphere":
        reason = REASON_SPHERE_UNDER
    elif action == "put_on_top" and fb["shape"] == "sphere":
        reason = REASON_ON_TOP_OF_SPHERE
    missing = tuple(d for d in (a, b) if not scene.matching(d))
    if reason is not None:
        return ANSWER_FORBIDDEN, missing, reason
    if missing:
        return ANSWER_CANNOT, missing, None
    return ANSWER_CAN, (), None


def apply_action(scene: Scene, query: QueryRecord) -> Scene:
    """Execute a can-query, returning the re-created scene.

    Color exchange recolors every object matching each descriptor; position
    exchange moves exactly one object per descriptor (lowest index when
    several match). Stacking moves the first operand onto / under the
    second operand's cell.
    """
    if query.answer_type != ANSWER_CAN:
        raise RuleError(f"cannot apply a {query.answer_type!r} query")
    out = scene.copy()
    out.scene_id = query.query_id
    a, b = query.operands
    match_a = out.matching(a)
    match_b = out.matching(b)
    if not match_a or not match_b:
        raise RuleError(f"operands not present for {query.query_id}")
    def riders_of(obj):
        if obj.z != 0:
            return []
        return [r for r in out.objects if r is not obj and r.z == 1 and r.cell == obj.cell]

    if query.action == "exchange_color":
        color_a = parse_descriptor(a)["color"]
        color_b = parse_descriptor(b)["color"]
        for o in match_a:
            o.color = color_b
        for o in match_b:
            o.color = color_a
    elif query.action == "exchange_position":
        oa = min(match_a, key=lambda o: o.index)
        ob = min(match_b, key=lambda o: o.index)
        riders_a, riders_b = riders_of(oa), riders_of(ob)
        oa.cell, ob.cell = ob.cell, oa.cell
        oa.z, ob.z = ob.z, oa.z
        for r in riders_a:
            r.cell = oa.cell
        for r in riders_b:
            r.cell = ob.cell
    elif query.action in ("put_on_top", "put_under"):
        mover = min(match_a, key=lambda o: o.index)
        base = min(match_b, key=lambda o: o.index)
        if mover is base:
            raise RuleError(f"operands resolve to the same object in {query.query_id}")
        riders = riders_of(mover)
        mover.cell = base.cell
        if query.action == "put_on_top":
            mover.z = 1
        else:
            mover.z = 0
            if base.z == 0:
                base.z = 1
        for r in riders:
            r.cell = mover.cell
    else:
        raise ValueError(f"unknown action {query.action!r}")
    out.validate()
    return out


def _touched_indices(before: Scene, after: Scene) -> list[int]:
    touched = []
    for o0, o1 in zip(before.objects, after.objects):
        if (o0.cell, o0.z, o0.color) != (o1.cell, o1.z, o1.color):
            touched.append(o1.index)
    return touched


TARGET_SPLIT = (6, 2, 2)  # can / cannot / forbidden per scene
_MAX_TRIES = 200


def enumerate_queries(
    scene: Scene, rng: np.random.Generator, config: GenConfig = GenConfig()
) -> list[QueryRecord]:
    """Emit ten queries targeting a 6/2/2 can/cannot/forbidden split.

    If a forbidden slot cannot be built the slot degrades to cannot, then
    to can (in that order); with the default generator settings the
    degradation never fires. Raises when fewer than ten distinct valid
    queries exist.
    """
    n_can, n_cannot, n_forbidden = TARGET_SPLIT
    drafts: list[tuple[str, tuple[str, str]]] = []
    seen: set[tuple[str, str, str]] = set()

    def take(action: str, operands: tuple[str, str]) -> bool:
        key = (action, *operands)
        if key in seen:
            return False
        seen.add(key)
        drafts.append((action, operands))
        return True

    # -- forbidden slots: prefer present spheres / present partners
    for _ in range(n_forbidden):
        if not _draft_forbidden(scene, rng, take):
            n_cannot += 1  # degrade: forbidden -> cannot
    # -- cannot slots
    for _ in range(n_cannot):
        if not _draft_cannot(scene, rng, take):
            n_can += 1  # degrade: cannot -> can
    # -- can slots
    can_pool = _can_candidates(scene, config)
    rng.shuffle(can_pool)
    for action, operands in can_pool:
        if n_can == 0:
            break
        if take(action, operands):
            n_can -= 1
    if n_can > 0 or len(drafts) < sum(TARGET_SPLIT):
        raise SceneGenError(
            f"scene {scene.scene_id} admits fewer than {sum(TARGET_SPLIT)} distinct queries"
        )

    order = rng.permutation(len(drafts))
    records = []
    for slot, draft_idx in enumerate(order):
        action, operands = drafts[int(draft_idx)]
        answer_type, missing, reason = classify_query(scene, action, operands)
        record = QueryRecord(
            query_id=f"{scene.scene_id}_{slot}_{slot + 1:02d}",
            action=action,
            operands=operands,
            question_text=question_text(action, *operands),
            answer_type=answer_type,
            explanation_conjuncts=missing,
            forbidden_reason=reason,
        )
        if answer_type == ANSWER_CAN:
            record.recreated_scene = apply_action(scene, record)
        records.append(record)
    return records


def _unique_descriptors(scene: Scene) -> list[str]:
    return [o.descriptor for o in scene.objects if len(scene.matching(o.descriptor)) == 1]


def _can_candidates(scene: Scene, config: GenConfig) -> list[tuple[str, tuple[str, str]]]:
    if config.allow_ambiguous:
        pool = sorted({o.descriptor for o in scene.objects})
    else:
        pool = _unique_descriptors(scene)
    out = []
    for a in pool:
        for b in pool:
            if a == b:
                continue
            fa, fb = parse_descriptor(a), parse_descriptor(b)
            for action in ACTIONS:
                if action == "put_under" and fa["shape"] == "sphere":
                    continue
                if action == "put_on_top" and fb["shape"] == "sphere":
                    continue
                if action == "exchange_color" and fa["color"] == fb["color"]:
                    continue
                out.append((action, (a, b)))
    return out


def _draft_forbidden(scene: Scene, rng: np.random.Generator, take) -> bool:
    spheres_present = sorted(
        {o.descriptor for o in scene.objects if o.shape == "sphere"}
    )
    others_present = sorted({o.descriptor for o in scene.objects})
    sphere_pool = [d for d in ALL_DESCRIPTORS if d.endswith("sphere")]
    for _ in range(_MAX_TRIES):
        sphere = (
            spheres_present[int(rng.integers(len(spheres_present)))]
            if spheres_present and rng.random() < 0.75
            else sphere_pool[int(rng.integers(len(sphere_pool)))]
        )
        partner = (
            others_present[int(rng.integers(len(others_present)))]
            if others_present and rng.random() < 0.75
            else ALL_DESCRIPTORS[int(rng.integers(len(ALL_DESCRIPTORS)))]
        )
        if partner == sphere:
            continue
        if rng.random() < 0.5:
            action, operands = "put_under", (sphere, partner)
        else:
            action, operands = "put_on_top", (partner, sphere)
        if take(action, operands):
            return True
    return False


def _draft_cannot(scene: Scene, rng: np.random.Generator, take) -> bool:
    for _ in range(_MAX_TRIES):
        action = ACTIONS[int(rng.integers(len(ACTIONS)))]
        a = ALL_DESCRIPTORS[int(rng.integers(len(ALL_DESCRIPTORS)))]
        b = ALL_DESCRIPTORS[int(rng.integers(len(ALL_DESCRIPTORS)))]
        if a == b:
            continue
        answer_type, _, _ = classify_query(scene, action, (a, b))
        if answer_type != ANSWER_CANNOT:
            continue
        if take(action, (a, b)):
            return True
    return False
