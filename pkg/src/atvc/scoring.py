"""Pair scoring and report aggregation.

Per-pair: answer-type correctness, explanation overlap (Jaccard feeds the
full-match score, exact-set equality feeds the accuracy columns), image
metrics for pairs with a ground-truth re-creation, and the A/B/C
re-creation rank. The full-match (FM) score of a pair is the mean of its
available components: (type, explanation) for rejected pairs,
(answer, rank) for executable ones.

Aggregate: per-category accuracies, a count-weighted overall score where
a rejected category contributes the mean of its type and explanation
accuracies, rank percentages with HR score %A + 0.5 * %B, and metric means.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import fsim, psnr, ssim
from .render import render
from .rules import ANSWER_CAN, QueryRecord, _touched_indices
from .scenes import Scene
from .textcodec import (
    CanonicalAnswer,
    answers_equal,
    canonicalize_answer,
    explanation_score,
)

RANK_SCORES = {"A": 1.0, "B": 0.5, "C": 0.0}

# mean per-channel distance below which a region counts as reproduced
AUTO_RANK_THRESHOLD = 30.0


class ManifestError(RuntimeError):
    pass


def gold_answer(record: QueryRecord) -> CanonicalAnswer:
    return CanonicalAnswer(
        record.answer_type,
        frozenset(record.explanation_conjuncts),
        record.forbidden_reason,
    )


@dataclass
class PairResult:
    query_id: str
    gold: CanonicalAnswer
    pred: CanonicalAnswer
    type_correct: int
    exp_score: float
    exp_exact: int
    psnr: float | None = None
    ssim: float | None = None
    fsim: float | None = None
    hr_rank: str | None = None

    @property
    def rejected(self) -> bool:
        return self.gold.answer_type != ANSWER_CAN

    @property
    def fm(self) -> float:
        if self.rejected:
            return (self.type_correct + self.exp_score) / 2.0
        parts = [float(self.type_correct and self.exp_exact)]
        if self.hr_rank is not None:
            parts.append(RANK_SCORES[self.hr_rank])
        return sum(parts) / len(parts)


def score_pair(
    gold_record: QueryRecord,
    pred_answer: str,
    pred_image: np.ndarray | None = None,
    hr_rank: str | None = None,
    gold_image: np.ndarray | None = None,
) -> PairResult:
    gold = gold_answer(gold_record)
    pred = canonicalize_answer(pred_answer)
    result = PairResult(
        query_id=gold_record.query_id,
        gold=gold,
        pred=pred,
        type_correct=int(pred.answer_type == gold.answer_type),
        exp_score=explanation_score(pred, gold),
        exp_exact=int(answers_equal(pred, gold)),
        hr_rank=hr_rank,
    )
    if gold_record.answer_type == ANSWER_CAN:
        if pred_image is None or gold_image is None:
            raise ValueError(
                f"{gold_record.query_id}: executable pairs need pred and gold images"
            )
        result.psnr = psnr(pred_image, gold_image)
        result.ssim = ssim(pred_image, gold_image)
        result.fsim = fsim(pred_image, gold_image)
    return result


@dataclass
class EvalReport:
    can_num: int
    can_acc: float
    cannot_num: int
    cannot_type_acc: float
    cannot_exp_acc: float
    forbidden_num: int
    forbidden_type_acc: float
    forbidden_exp_acc: float
    score: float
    mean_psnr: float | None
    mean_ssim: float | None
    mean_fsim: float | None
    hr_percent: dict[str, float]
    hr_score: float | None
    mean_fm: float
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {k: v for k, v in self.__dict__.items()}
        return json.dumps(doc, indent=1)

    def to_table(self) -> str:
        def pct(x):
            return "-" if x is None else f"{100 * x:.1f}"

        def val(x, fmt="{:.4f}"):
            return "-" if x is None else fmt.format(x)

        lines = [
            "PSNR    SSIM    FSIM    | HR  A     B     C     Score  | FM",
            f"{val(self.mean_psnr, '{:.1f}'):7s} {val(self.mean_ssim):7s} "
            f"{val(self.mean_fsim):7s} |     "
            f"{pct(self.hr_percent.get('A')):5s} {pct(self.hr_percent.get('B')):5s} "
            f"{pct(self.hr_percent.get('C')):5s} "
            f"{pct(self.hr_score):6s} | {pct(self.mean_fm)}",
            "",
            "Can:       Num   Acc.   | Cannot:    Num   Type   Exp    "
            "| Forbidden: Num   Type   Exp    | Score",
            f"           {self.can_num:<5d} {pct(self.can_acc):6s} "
            f"|            {self.cannot_num:<5d} {pct(self.cannot_type_acc):6s} "
            f"{pct(self.cannot_exp_acc):6s} "
            f"|            {self.forbidden_num:<5d} {pct(self.forbidden_type_acc):6s} "
            f"{pct(self.forbidden_exp_acc):6s} | {pct(self.score)}",
        ]
        return "\n".join(lines)


def _mean(xs):
    xs = list(xs)
    return sum(xs) / len(xs) if xs else None


def aggregate(results: list[PairResult]) -> EvalReport:
    if not results:
        raise ValueError("aggregate: no results")
    can = [r for r in results if r.gold.answer_type == ANSWER_CAN]
    cannot = [r for r in results if r.gold.answer_type == "cannot"]
    forbidden = [r for r in results if r.gold.answer_type == "forbidden"]

    can_acc = _mean(r.exp_exact for r in can) or 0.0
    cannot_type = _mean(r.type_correct for r in cannot) or 0.0
    cannot_exp = _mean(r.exp_exact for r in cannot) or 0.0
    forb_type = _mean(r.type_correct for r in forbidden) or 0.0
    forb_exp = _mean(r.exp_exact for r in forbidden) or 0.0

    score = weighted_score(
        (len(can), can_acc),
        (len(cannot), cannot_type, cannot_exp),
        (len(forbidden), forb_type, forb_exp),
    )
    ranked = [r for r in results if r.hr_rank is not None]
    hr_percent = {}
    hr_score = None
    if ranked:
        for rank in ("A", "B", "C"):
            hr_percent[rank] = sum(r.hr_rank == rank for r in ranked) / len(ranked)
        hr_score = hr_percent["A"] + 0.5 * hr_percent["B"]
    return EvalReport(
        can_num=len(can),
        can_acc=can_acc,
        cannot_num=len(cannot),
        cannot_type_acc=cannot_type,
        cannot_exp_acc=cannot_exp,
        forbidden_num=len(forbidden),
        forbidden_type_acc=forb_type,
        forbidden_exp_acc=forb_exp,
        score=score,
        mean_psnr=_mean(r.psnr for r in results if r.psnr is not None),
        mean_ssim=_mean(r.ssim for r in results if r.ssim is not None),
        mean_fsim=_mean(r.fsim for r in results if r.fsim is not None),
        hr_percent=hr_percent,
        hr_score=hr_score,
        mean_fm=_mean(r.fm for r in results) or 0.0,
    )


def weighted_score(can: tuple, cannot: tuple, forbidden: tuple) -> float:
    """Count-weighted overall score.

    ``can`` is (num, acc); the rejected categories are (num, type_acc,
    exp_acc) and contribute the mean of their two accuracies. This is the
    documented aggregation; it reproduces the printed real-world-table
    arithmetic within input rounding.
    """
    n_can, can_acc = can
    n_cannot, cannot_type, cannot_exp = cannot
    n_forb, forb_type, forb_exp = forbidden
    total = n_can + n_cannot + n_forb
    if total == 0:
        return 0.0
    acc = (
        n_can * can_acc
        + n_cannot * (cannot_type + cannot_exp) / 2.0
        + n_forb * (forb_type + forb_exp) / 2.0
    )
    return acc / total


def hr_score_from_percentages(pct_a: float, pct_b: float) -> float:
    """HR score from rank percentages (0..100 scale in, 0..100 scale out)."""
    return pct_a + 0.5 * pct_b


# -- automatic A/B/C ranking -----------------------------------------------------


def _region_close(pred, gold, bbox) -> bool:
    x0, y0, x1, y1 = bbox
    p = pred[y0 : y1 + 1, x0 : x1 + 1].astype(np.float64)
    g = gold[y0 : y1 + 1, x0 : x1 + 1].astype(np.float64)
    return float(np.mean(np.abs(p - g))) < AUTO_RANK_THRESHOLD


def auto_rank(
    pred_image: np.ndarray, gold_record: QueryRecord, input_scene: Scene
) -> str:
    """Machine proxy for the human A/B/C re-creation rank.

    A: action regions correct (targets match the gold render, vacated
    source regions erased) and every untouched object intact.
    B: action correct but some untouched object was corrupted.
    C: the action itself is wrong.
    """
    gold_scene = gold_record.recreated_scene
    if gold_scene is None:
        raise ValueError(f"{gold_record.query_id}: no ground-truth re-creation")
    gold_img = render(gold_scene)
    if pred_image.shape != gold_img.shape:
        raise ValueError(
            f"auto_rank: image shape {pred_image.shape} vs gold {gold_img.shape}"
        )
    geom = gold_scene.geometry
    touched = set(_touched_indices(input_scene, gold_scene))
    action_ok = True
    untouched_ok = True
    for obj in gold_scene.objects:
        ok = _region_close(pred_image, gold_img, obj.bbox(geom))
        if obj.index in touched:
            # the vacated source region must be erased too
            old = input_scene.objects[obj.index]
            if old.cell != obj.cell or old.z != obj.z:
                ok = ok and _region_close(pred_image, gold_img, old.bbox(geom))
            action_ok = action_ok and ok
        else:
            untouched_ok = untouched_ok and ok
    if not action_ok:
        return "C"
    return "A" if untouched_ok else "B"


# -- human-evaluation manifest -----------------------------------------------------


def export_hr_manifest(rows: list[dict], path) -> Path:
    """Write a line-delimited JSON manifest for human ranking.

    Each row carries query_id, input_image, question, pred_image,
    gold_image, pred_answer, gold_answer and a null rank to fill in.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    required = (
        "query_id",
        "input_image",
        "question",
        "pred_image",
        "gold_image",
        "pred_answer",
        "gold_answer",
    )
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            missing = [k for k in required if k not in row]
            if missing:
                raise ManifestError(f"manifest row lacks fields: {missing}")
            out = dict(row)
            out.setdefault("rank", None)
            f.write(json.dumps(out) + "\n")
    return path


def import_hr_ranks(path, expected_ids: set[str]) -> dict[str, str]:
    """Read ranks back from a filled manifest; strict on ids and rank values."""
    path = Path(path)
    ranks: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"line {lineno}: invalid JSON ({e})") from e
            qid = row.get("query_id")
            if qid not in expected_ids:
                raise ManifestError(f"line {lineno}: unknown query_id {qid!r}")
            rank = row.get("rank")
            if rank not in RANK_SCORES:
                raise ManifestError(
                    f"line {lineno}: invalid rank {rank!r} (expected A, B or C)"
                )
            ranks[qid] = rank
    return ranks
