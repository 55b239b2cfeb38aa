"""Command-line entry point: ``cdvg <subcommand> ...``.

Exit codes: 0 ok, 1 contract violation, 2 I/O failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .errors import ContractViolation, NumericalFailure

log = logging.getLogger("cdvg")

EXIT_OK, EXIT_CONTRACT, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_THRESHOLD = 0.85


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "data_ratio", None) is not None:
        overrides["data__data_ratio"] = args.data_ratio
    if getattr(args, "mask_ratio", None) is not None:
        overrides["data__mask_ratio"] = args.mask_ratio
    if getattr(args, "deterministic", False):
        overrides["deterministic"] = True
    if getattr(args, "corpus", None):
        overrides["data__corpus"] = args.corpus
    return cfg.with_overrides(**overrides) if overrides else cfg


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")


# -- data commands -------------------------------------------------------------

def cmd_generate(args) -> int:
    from .data import generate_scenes, split_dataset, write_corpus

    cfg = _config(args)
    out = Path(args.out or cfg.data.corpus)
    samples = generate_scenes(cfg.data.scenes, cfg.seed, cfg.data.image_size, cfg.data.optical_fraction)
    splits = split_dataset(samples, cfg.seed)
    write_corpus(out, samples, splits, {"seed": cfg.seed, "image_size": cfg.data.image_size})
    _emit({"corpus": str(out), "scenes": len(samples), **{k: len(v) for k, v in splits.items()}})
    return EXIT_OK


def _corpus_dir(args) -> Path:
    return Path(args.corpus or _config(args).data.corpus)


def cmd_clean(args) -> int:
    from .data.corpus import ANNOTATIONS, read_jsonl
    from .data.pipeline import clean_annotations

    root = _corpus_dir(args)
    kept, removed = clean_annotations(read_jsonl(root / ANNOTATIONS))
    out = Path(args.out or root / "annotations.clean.jsonl")
    with open(out, "w", encoding="utf-8") as fh:
        for rec in kept:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    _emit({"kept": len(kept), "removed": [{"id": r.id, "reason": r.reason} for r in removed], "out": str(out)})
    return EXIT_OK


def cmd_augment(args) -> int:
    from .data import augment_geometric, load_corpus, split_dataset, write_corpus

    root = _corpus_dir(args)
    ops = [o for o in args.ops.split(",") if o]
    loaded = load_corpus(root)
    out_samples = list(loaded.samples)
    for s in loaded.samples:
        for op in ops:
            out_samples.append(augment_geometric(s, op).with_(id=f"{s.id}_{op}"))
    out = Path(args.out or root.with_name(root.name + "_aug"))
    cfg = _config(args)
    write_corpus(out, out_samples, split_dataset(out_samples, cfg.seed), {"augmented_from": str(root), "ops": ops})
    _emit({"corpus": str(out), "samples": len(out_samples)})
    return EXIT_OK


def cmd_verify(args) -> int:
    from .data import load_corpus, verify_direction

    loaded = load_corpus(_corpus_dir(args))
    checks = [verify_direction(s) for s in loaded.samples]
    bad = [c for c in checks if not c.ok]
    _emit({"checked": len(checks), "conflicts": [
        {"id": c.id, "expected": c.expected, "found": c.found} for c in bad]})
    return EXIT_OK if not bad else EXIT_CONTRACT


def cmd_split(args) -> int:
    from .data import load_corpus, split_dataset
    from .data.corpus import write_split_files

    root = _corpus_dir(args)
    cfg = _config(args)
    splits = split_dataset(load_corpus(root).samples, cfg.seed)
    write_split_files(Path(args.out) if args.out else root, splits)
    _emit({k: len(v) for k, v in splits.items()})
    return EXIT_OK


# -- model commands ----------------------------------------------------------------

def _load_split(root: Path, name: str):
    from .data import load_corpus, read_split

    loaded = load_corpus(root, read_split(root, name))
    for sid, reason in loaded.skipped:
        log.warning("skipping %s: %s", sid, reason)
    return loaded.samples


def cmd_train(args) -> int:
    from .data.corpus import read_jsonl
    from .plotting import plot_training_log
    from .train import train

    cfg = _config(args)
    root = Path(cfg.data.corpus)
    train_samples = _load_split(root, "train")
    val_samples = _load_split(root, "val") if cfg.val_every else None
    out = Path(args.out or "model.ckpt")
    log_path = out.with_suffix(".log.jsonl")
    result = train(cfg, train_samples, val_samples, log_path=log_path)
    save_checkpoint(out, result.model, cfg, result.steps)
    plot_training_log([r for r in read_jsonl(log_path) if "loss_total" in r], out.with_suffix(".loss.png"))
    _emit({"checkpoint": str(out), "steps": result.steps, "seconds": round(result.seconds, 2),
           "validation": result.validation})
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate
    from .plotting import plot_eval_report

    model, ckpt_cfg, _ = load_checkpoint(args.checkpoint)
    cfg = _config(args) if (args.config or args.corpus) else ckpt_cfg
    mask = args.mask_ratio if args.mask_ratio is not None else cfg.data.mask_ratio
    samples = _load_split(Path(args.corpus or cfg.data.corpus), args.split)
    if not samples:
        raise ContractViolation(f"split {args.split!r} has no loadable samples")
    report = evaluate(model, samples, mask, seed=args.seed if args.seed is not None else cfg.seed)
    line = report.to_json()
    sys.stdout.write(line + "\n")
    if args.out:
        out = Path(args.out)
        out.write_text(line + "\n", encoding="utf-8")
        plot_eval_report(report, out.with_suffix(".png"), f"{args.split} (mask {mask:g})")
    return EXIT_OK


def cmd_ground(args) -> int:
    from .data.corpus import read_image

    model, _, _ = load_checkpoint(args.checkpoint)
    image = read_image(args.image)
    h, w = image.shape[:2]
    if h % 16 or w % 16:
        raise ContractViolation(f"image size {h}x{w} is not divisible by 16")
    _emit(model.ground(image, args.text).to_json())
    return EXIT_OK


def cmd_annotate(args) -> int:
    from .evaluation import annotate_images

    model, _, _ = load_checkpoint(args.checkpoint)
    pool = [line.strip() for line in Path(args.pool).read_text(encoding="utf-8").splitlines() if line.strip()]
    root = Path(args.images)
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in (".ppm", ".pgm", ".pnm"))
    threshold = DEFAULT_THRESHOLD if args.threshold is None else args.threshold
    records = annotate_images(model, paths, pool, threshold, root,
                              on_skip=lambda p, why: log.warning("skipping %s: %s", p, why))
    lines = "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path")
    common.add_argument("--corpus", help="corpus directory (overrides data.corpus)")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, seeded run")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cdvg", description="Cross-domain visual grounding toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="write a synthetic corpus").set_defaults(func=cmd_generate)
    sub.add_parser("clean", parents=[common], help="drop invalid boxes").set_defaults(func=cmd_clean)
    a = sub.add_parser("augment", parents=[common], help="add flipped/rotated copies")
    a.add_argument("--ops", default="hflip,vflip,rot180")
    a.set_defaults(func=cmd_augment)
    sub.add_parser("verify", parents=[common], help="check caption directions").set_defaults(func=cmd_verify)
    sub.add_parser("split", parents=[common], help="stratified 8:1:1 split").set_defaults(func=cmd_split)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--data-ratio", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--split", default="test")
    e.add_argument("--mask-ratio", type=float)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("ground", parents=[common], help="ground one query")
    g.add_argument("checkpoint")
    g.add_argument("image")
    g.add_argument("text")
    g.set_defaults(func=cmd_ground)

    n = sub.add_parser("annotate", parents=[common], help="zero-shot annotation")
    n.add_argument("checkpoint")
    n.add_argument("images", help="directory of .ppm/.pgm images")
    n.add_argument("pool", help="text file, one candidate caption per line")
    n.add_argument("--threshold", type=float, help=f"score cut-off (default {DEFAULT_THRESHOLD})")
    n.set_defaults(func=cmd_annotate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ContractViolation as exc:
        log.error("contract violation: %s", exc)
        return EXIT_CONTRACT
    except NumericalFailure as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
