"""Command-line interface.

Verbs: synth, augment, train, index, search, eval, gridsearch, serve.
All randomness flows from config seeds; outputs are JSON on stdout and a
machine-readable error object on stderr for failures.  Exit codes: 0 ok,
1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .augmentation import (
    augment_full_page,
    augment_in_place,
    generate_synthetic_corpus,
    read_ground_truth,
    write_ground_truth,
)
from .config import ENV_CONFIG, ProjectConfig, load_config
from .dtp import dtp_proposals
from .embedder import (
    TrainingCrop,
    embed_cfg_to_json,
    load_model,
    save_model,
    train,
)
from .errors import ConfigError, WordspotError
from .evaluation import (
    GroundTruth,
    evaluate_queries,
    grid_search,
    proposal_recall,
    qbe_queries,
    qbs_queries,
    report_to_csv,
    report_to_json,
)
from .geometry import Box, MatchConfig, label_proposals
from .image_ops import load_gray, save_gray
from .index import (
    QueryConfig,
    build_index,
    filter_raw_page,
    index_page_raw,
    load_index,
    query_by_example,
    query_by_string,
    save_index,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # route argparse failures through our exit-code convention
    def error(self, message):
        raise _UsageError(message)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _hit_row(hit, rank: int) -> dict:
    b = hit.box
    return {
        "page_id": hit.page_id,
        "box": [
            int(round(b.x0)),
            int(round(b.y0)),
            int(round(b.w)),
            int(round(b.h)),
        ],
        "similarity": hit.similarity,
        "rank": rank,
    }


def _load_corpus(corpus_dir: str | Path):
    """Pages and ground truth from a directory of image + sidecar pairs.

    Returns a sorted list of (page_id, image_path, image, gts); pages
    without a sidecar come back with empty gts.
    """
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise ConfigError(f"corpus directory not found: {corpus_dir}")
    pages = []
    images = sorted(
        p for p in corpus_dir.iterdir() if p.suffix.lower() in (".png", ".pgm")
    )
    for img_path in images:
        sidecar = img_path.with_suffix(".json")
        gts = []
        if sidecar.exists():
            _, gts = read_ground_truth(sidecar)
        pages.append((img_path.stem, img_path, load_gray(img_path), gts))
    if not pages:
        raise ConfigError(f"no page images in {corpus_dir}")
    return pages


def _gts_flat(pages) -> list[GroundTruth]:
    out = []
    for page_id, _path, _img, gts in pages:
        for box, label in gts:
            out.append(GroundTruth(page_id=page_id, box=box, label=label))
    return out


# ---------------------------------------------------------------------------
# Verbs


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = generate_synthetic_corpus(cfg.synth_config())
    total = 0
    for p, (page, gts) in enumerate(corpus):
        name = f"page_{p:03d}"
        save_gray(out_dir / f"{name}.png", page)
        write_ground_truth(out_dir / f"{name}.json", f"{name}.png", gts)
        total += len(gts)
    _emit({"pages": len(corpus), "words": total, "out": str(out_dir)})
    return 0


def cmd_augment(args) -> int:
    cfg = load_config(args.config)
    pages = _load_corpus(args.pages)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.mode == "inplace":
        for i, (page_id, _path, img, gts) in enumerate(pages):
            aug = augment_in_place(img, gts, cfg.augment_config(seed=cfg.seed + i))
            save_gray(out_dir / f"{page_id}.png", aug)
            write_ground_truth(out_dir / f"{page_id}.json", f"{page_id}.png", gts)
        _emit({"mode": "inplace", "pages": len(pages), "out": str(out_dir)})
        return 0
    # fullpage: bank = every gt crop from the input corpus
    bank = []
    for _page_id, _path, img, gts in pages:
        for box, label in gts:
            x0, y0 = int(round(box.x0)), int(round(box.y0))
            x1, y1 = int(round(box.x1)), int(round(box.y1))
            bank.append((img[y0:y1, x0:x1].copy(), label))
    if not bank:
        raise ConfigError("no ground-truth words to build a word bank from")
    synth = cfg.synth_config()
    count = args.count if args.count is not None else synth.pages
    total = 0
    for p in range(count):
        page, gts = augment_full_page(
            bank,
            synth.canvas_w,
            synth.canvas_h,
            cfg.augment_config(seed=cfg.seed + p),
            max_words=synth.words_per_page,
        )
        name = f"aug_{p:03d}"
        save_gray(out_dir / f"{name}.png", page)
        write_ground_truth(out_dir / f"{name}.json", f"{name}.png", gts)
        total += len(gts)
    _emit({"mode": "fullpage", "pages": count, "words": total, "out": str(out_dir)})
    return 0


def build_training_crops(pages, dtp_cfg, match_cfg: MatchConfig | None = None):
    """Crops for the trainer: gt words, well-overlapping proposals as extra
    positives, and low-overlap proposals as background."""
    match_cfg = match_cfg or MatchConfig()
    crops = []
    for _page_id, _path, img, gts in pages:
        for box, label in gts:
            crops.append(TrainingCrop(image=img, box=box, label=label, is_word=True))
        proposals = dtp_proposals(img, dtp_cfg)
        if not proposals or not gts:
            continue
        positives, negatives = label_proposals(proposals, gts, match_cfg)
        for prop_idx, gt_idx in positives:
            crops.append(
                TrainingCrop(
                    image=img,
                    box=proposals[prop_idx],
                    label=gts[gt_idx][1],
                    is_word=True,
                )
            )
        for prop_idx in negatives:
            crops.append(
                TrainingCrop(image=img, box=proposals[prop_idx], label=None, is_word=False)
            )
    return crops


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.embedding:
        cfg.doc["embedding"]["kind"] = args.embedding
    if args.loss:
        cfg.doc["train"]["loss"] = args.loss
    if args.iters is not None:
        cfg.doc["train"]["max_iters"] = args.iters
    pages = _load_corpus(args.corpus)
    crops = build_training_crops(pages, cfg.dtp_config())

    def log(it, stats):
        # one line per validation point keeps long runs readable
        if "val_map" in stats:
            _emit({"iter": it, **{k: round(v, 6) for k, v in stats.items()}})

    model = train(
        crops,
        cfg.net_config(),
        cfg.embed_config(),
        cfg.train_config(),
        log_fn=log,
    )
    save_model(model, args.out)
    _emit({"model": str(args.out), "crops": len(crops)})
    return 0


def cmd_index(args) -> int:
    cfg = load_config(args.config)
    model = load_model(args.model)
    pages = _load_corpus(args.pages)
    errors: list[tuple[str, str]] = []
    built = build_index(
        [(img, page_id) for page_id, _path, img, _gts in pages],
        model,
        cfg.dtp_config(),
        cfg.query_config(),
        long_side=cfg.long_side,
        image_paths={page_id: str(path.resolve()) for page_id, path, _i, _g in pages},
        errors_out=errors,
    )
    save_index(
        built,
        args.out,
        embed_cfg_doc=embed_cfg_to_json(model.embed_cfg),
        query_cfg=cfg.query_config(),
        long_side=cfg.long_side,
    )
    _emit(
        {
            "index": str(args.out),
            "pages": len(built),
            "proposals": sum(len(p.proposals) for p in built),
            "errors": [{"page_id": pid, "message": msg} for pid, msg in errors],
        }
    )
    return 0


def _parse_qbe(spec_str: str):
    try:
        page_id, coords = spec_str.rsplit(":", 1)
        x, y, w, h = (int(v) for v in coords.split(","))
    except ValueError:
        raise _UsageError(f"--qbe expects page:x,y,w,h, got {spec_str!r}")
    return page_id, Box.from_xywh(x, y, w, h)


def cmd_search(args) -> int:
    if args.k < 1:
        raise _UsageError("--k must be >= 1")
    idx = load_index(args.index)
    if args.qbe:
        if not args.model:
            raise ConfigError("--qbe requires --model for the crop descriptor")
        model = load_model(args.model)
        page_id, box = _parse_qbe(args.qbe)
        hits = query_by_example(idx.pages, page_id, box, model, k=args.k)
    else:
        if not args.query:
            raise _UsageError("provide --query or --qbe")
        if idx.embed_cfg is None:
            raise ConfigError("index header lacks an embedding config")
        hits = query_by_string(idx.pages, args.query, idx.embed_cfg, k=args.k)
    for rank, hit in enumerate(hits, start=1):
        _emit(_hit_row(hit, rank))
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    idx = load_index(args.index)
    pages = _load_corpus(args.gt)
    gts = _gts_flat(pages)
    overlaps = tuple(float(v) for v in args.overlap.split(","))
    ecfg = cfg.eval_config()
    everything = 10**9  # rank the full proposal set when scoring AP

    modes: dict = {}
    if args.mode in ("qbs", "both"):
        if idx.embed_cfg is None:
            raise ConfigError("index header lacks an embedding config")
        queries = qbs_queries(gts, ecfg.stopwords)
        by_t = {}
        for t_o in overlaps:
            by_t[str(t_o)] = evaluate_queries(
                lambda q: query_by_string(idx.pages, q, idx.embed_cfg, k=everything),
                queries,
                queries,
                gts,
                t_o,
            )
        modes["qbs"] = by_t
    if args.mode in ("qbe", "both"):
        if not args.model:
            raise ConfigError("eval --mode qbe requires --model")
        model = load_model(args.model)
        images = {page_id: img for page_id, _path, img, _gts in pages}
        queries = qbe_queries(gts)
        by_t = {}
        for t_o in overlaps:
            by_t[str(t_o)] = evaluate_queries(
                lambda g: query_by_example(
                    idx.pages, g.page_id, g.box, model, k=everything,
                    page_image=images.get(g.page_id),
                ),
                queries,
                [g.label for g in queries],
                gts,
                t_o,
            )
        modes["qbe"] = by_t

    proposals_by_page = {p.page_id: [pr.box for pr in p.proposals] for p in idx.pages}
    recall = {
        str(t_o): proposal_recall(proposals_by_page, gts, t_o) for t_o in overlaps
    }
    report = {
        "config": {
            "index": str(args.index),
            "gt": str(args.gt),
            "mode": args.mode,
            "overlaps": list(overlaps),
        },
        "modes": modes,
        "recall": recall,
    }
    report_to_json(report, args.json)
    report_to_csv(report, args.csv)
    _emit(
        {
            "map": {
                mode: {t: res["map"] for t, res in by_t.items()}
                for mode, by_t in modes.items()
            },
            "recall": recall,
            "json": str(args.json),
            "csv": str(args.csv),
        }
    )
    return 0


def cmd_gridsearch(args) -> int:
    if args.config is None:
        raise ConfigError(
            f"gridsearch needs --config (or ${ENV_CONFIG}) to write thresholds back"
        )
    cfg = load_config(args.config)
    model = load_model(args.model)
    pages = _load_corpus(args.val)
    gts = _gts_flat(pages)
    ecfg = cfg.eval_config()
    raws = [
        index_page_raw(
            img, page_id, model, cfg.dtp_config(), cfg.long_side, str(path.resolve())
        )
        for page_id, path, img, _gts in pages
    ]
    queries = qbs_queries(gts, ecfg.stopwords)
    embed_doc_cfg = model.embed_cfg
    everything = 10**9

    def eval_point(t_s: float, t_nms: float) -> float:
        q = QueryConfig(t_s=t_s, t_nms=t_nms, k=cfg.query_config().k)
        filtered = [filter_raw_page(raw, q) for raw in raws]
        maps = []
        for t_o in ecfg.overlap_thresholds:
            res = evaluate_queries(
                lambda s: query_by_string(filtered, s, embed_doc_cfg, k=everything),
                queries,
                queries,
                gts,
                t_o,
            )
            maps.append(res["map"])
        return float(np.mean(maps))

    best = grid_search(eval_point, ecfg.grid_t_s, ecfg.grid_t_nms)
    cfg.doc["query"]["t_s"] = best.t_s
    cfg.doc["query"]["t_nms"] = best.t_nms
    cfg.save(args.config)
    _emit({"t_s": best.t_s, "t_nms": best.t_nms, "map": best.map, "config": str(args.config)})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        raise _UsageError(f"--addr expects host:port, got {args.addr!r}")
    app = create_app(args.index, model_path=args.model, ui_dir=args.ui)
    uvicorn.run(app, host=host, port=int(port), log_level="warning")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="wordspot", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", default=None, help=f"config JSON (or ${ENV_CONFIG})")
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, help="generate a synthetic glyph corpus")
    p.add_argument("--out", required=True)

    p = add("augment", cmd_augment, help="augment an annotated corpus")
    p.add_argument("--mode", choices=("inplace", "fullpage"), required=True)
    p.add_argument("--pages", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None, help="fullpage: pages to emit")

    p = add("train", cmd_train, help="train descriptor + wordness model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--loss", choices=("cosine", "cosemb", "bce"), default=None)
    p.add_argument("--embedding", choices=("dctow", "phoc"), default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("index", cmd_index, help="build a searchable index")
    p.add_argument("--pages", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = add("search", cmd_search, help="query an index")
    p.add_argument("--index", required=True)
    p.add_argument("--query", default=None)
    p.add_argument("--qbe", default=None, help="page:x,y,w,h crop query")
    p.add_argument("--model", default=None, help="model checkpoint (needed for --qbe)")
    p.add_argument("--k", type=int, default=25)

    p = add("eval", cmd_eval, help="retrieval metrics against ground truth")
    p.add_argument("--index", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", choices=("qbs", "qbe", "both"), default="qbs")
    p.add_argument("--overlap", default="0.25,0.5")
    p.add_argument("--model", default=None)
    p.add_argument("--json", default="eval_report.json")
    p.add_argument("--csv", default="eval_report.csv")

    p = add("gridsearch", cmd_gridsearch, help="tune t_s/t_nms on validation pages")
    p.add_argument("--val", required=True)
    p.add_argument("--model", required=True)

    p = add("serve", cmd_serve, help="HTTP API + static UI over an index")
    p.add_argument("--index", required=True)
    p.add_argument("--addr", default="127.0.0.1:8000")
    p.add_argument("--model", default=None)
    p.add_argument("--ui", default=None, help="static UI directory")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as e:
        print(json.dumps({"error": "UsageError", "message": str(e)}), file=sys.stderr)
        return 1
    except (WordspotError, OSError, ValueError, KeyError) as e:
        print(
            json.dumps({"error": type(e).__name__, "message": str(e)}),
            file=sys.stderr,
        )
        return 1
    except Exception as e:  # anything else is an internal failure
        print(
            json.dumps({"error": type(e).__name__, "message": str(e)}),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
