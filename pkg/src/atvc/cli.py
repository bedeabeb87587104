"""Command-line entry point: gen, train1, train2, eval, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import config as cfgmod
from .annotations import write_annotations
from .checkpoint import CheckpointError
from .pipeline import (
    EchoPredictor,
    ModelPredictor,
    build_training_sequences,
    dataset_arrays,
    evaluate_pairs,
    stage1_training_images,
)
from .rules import enumerate_queries
from .scenes import GenConfig, sample_scene
from .scoring import aggregate, export_hr_manifest
from .seqmodel import TransformerConfig, load_stage2, train_stage2
from .textcodec import Vocabulary
from .vqae import VQConfig, load_stage1, train_stage1


def _load_config(path) -> dict:
    return cfgmod.load_config(path) if path else {}


def _scoped(values: dict, prefix: str) -> dict:
    out = {}
    for key, val in values.items():
        if key.startswith(prefix + "."):
            out[key[len(prefix) + 1 :]] = val
        elif "." not in key:
            out.setdefault(key, val)
    return out


def cmd_gen(args) -> int:
    values = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(values.get("seed", 0))
    gen_cfg = GenConfig(
        image_size=args.image_size or int(values.get("image_size", 64)),
        allow_ambiguous=args.allow_ambiguous or bool(values.get("allow_ambiguous", False)),
    )
    scenes, queries = [], []
    for i in range(args.scenes):
        scene = sample_scene(seed + i, gen_cfg, scene_id=f"{seed + i:08d}")
        scenes.append(scene)
        queries.append(enumerate_queries(scene, np.random.default_rng(seed + i), gen_cfg))
    out = Path(args.out)
    write_annotations(scenes, queries, out)
    cfgmod.write_run_meta(
        out / "run_meta.json",
        seed,
        {"command": "gen", "scenes": args.scenes, "image_size": gen_cfg.image_size,
         "allow_ambiguous": gen_cfg.allow_ambiguous},
    )
    print(f"wrote {args.scenes} scenes ({sum(len(q) for q in queries)} pairs) to {out}")
    return 0


def cmd_train1(args) -> int:
    values = _load_config(args.config)
    vq_values = _scoped(values, "stage1")
    if args.seed is not None:
        vq_values["seed"] = args.seed
    config = VQConfig.from_dict(vq_values)
    images = stage1_training_images(args.data)
    ckpt = train_stage1(images, config, args.out)
    cfgmod.write_run_meta(Path(args.out) / "stage1.meta.json", config.seed, vq_values)
    print(f"stage-1 checkpoint at {ckpt}")
    return 0


def cmd_train2(args) -> int:
    values = _load_config(args.config)
    seq_values = _scoped(values, "stage2")
    if args.seed is not None:
        seq_values["seed"] = args.seed
    vq = load_stage1(args.stage1)
    vocab = Vocabulary.default()
    seq_values["text_vocab"] = len(vocab)
    seq_values["image_vocab"] = vq.config.codebook_size
    seq_values["grid"] = vq.config.grid
    config = TransformerConfig.from_dict(seq_values)
    sequences = build_training_sequences(
        args.data, vq, vocab, config, limit=args.limit
    )
    ckpt = train_stage2(sequences, config, args.out)
    vocab.save(Path(args.out) / "vocab.txt")
    cfgmod.write_run_meta(Path(args.out) / "stage2.meta.json", config.seed, seq_values)
    print(f"stage-2 checkpoint at {ckpt} ({len(sequences)} training pairs)")
    return 0


def cmd_eval(args) -> int:
    values = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.oracle:
        _, _, _, recreations = dataset_arrays(args.data)
        predictor = EchoPredictor(recreations)
    else:
        vq = load_stage1(args.stage1)
        seq = load_stage2(args.stage2)
        vocab_path = Path(args.stage2) / "vocab.txt"
        vocab = Vocabulary.load(vocab_path) if vocab_path.exists() else Vocabulary.default()
        predictor = ModelPredictor(vq, seq, vocab)
    rank_mode = "none" if args.no_auto_rank else "auto"
    results, manifest_rows = evaluate_pairs(
        args.data, predictor, limit=args.limit, rank_mode=rank_mode
    )
    pred_dir = out / "pred"
    for row in manifest_rows:
        arr = row.pop("pred_image_array", None)
        if arr is not None:
            pred_dir.mkdir(parents=True, exist_ok=True)
            Image.fromarray(arr).save(pred_dir / f"{row['query_id']}.png")
    report = aggregate(results)
    report.extras = cfgmod.run_meta(args.seed or 0, values)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.to_table() + "\n")
    export_hr_manifest(manifest_rows, out / "hr_manifest.jsonl")
    print(report.to_table())
    print(f"report written to {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_state, create_app

    values = _load_config(args.config)
    state = build_state(
        data_dir=args.data,
        stage1_dir=args.stage1,
        stage2_dir=args.stage2,
        predictor_kind=args.predictor,
        single_turn=args.single_turn or bool(values.get("single_turn", False)),
    )
    app = create_app(state)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atvc",
        description="Rule-governed scene re-creation: data, training, eval, chat service.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene dataset")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--allow-ambiguous", action="store_true")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train1", help="train the stage-1 image auto-encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train1)

    p = sub.add_parser("train2", help="train the stage-2 sequence model")
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--limit", type=int, default=None, help="cap training pairs")
    p.set_defaults(func=cmd_train2)

    p = sub.add_parser("eval", help="score predictions over a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", default=None)
    p.add_argument("--stage2", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--oracle", action="store_true", help="echo gold answers (scorer check)")
    p.add_argument("--no-auto-rank", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the chat inference service")
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", default=None)
    p.add_argument("--stage2", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--predictor", choices=("model", "oracle"), default="model")
    p.add_argument("--single-turn", action="store_true")
    p.set_defaults(func=cmd_serve)
    return parser


_PREREQ_HINTS = (
    ("stage-1", "atvc train1"),
    ("stage-2", "atvc train2"),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as e:
        hint = next((cmd for key, cmd in _PREREQ_HINTS if key in str(e)), None)
        suffix = f" (run `{hint}` first)" if hint else ""
        print(f"error: {e}{suffix}", file=sys.stderr)
        return 2
    except Exception as e:  # surface everything as a clean nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
