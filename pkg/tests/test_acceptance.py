"""Release acceptance checks for the word-search engine.

Every test prints one [PASS]/[FAIL] line naming the guarantee it verifies,
with the measured values, so a full run doubles as a release report.  The
heavyweight synthetic end-to-end run sits last.
"""

import contextlib
import io
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

import wordspot
from wordspot.augmentation import read_ground_truth
from wordspot.cli import main
from wordspot.config import DEFAULT_VOCABULARY, load_config
from wordspot.dtp import dtp_proposals
from wordspot.embedder import (
    AdamState,
    DenseNet,
    EmbedNetConfig,
    embed_cfg_to_json,
    load_model,
    save_model,
)
from wordspot.embeddings import (
    DIGITS_AND_LOWERCASE,
    DctowConfig,
    PhocConfig,
    dctow,
    embed_label,
    phoc,
)
from wordspot.errors import CorruptIndex, CorruptModel, VersionMismatch
from wordspot.evaluation import (
    GroundTruth,
    ap_from_relevance,
    evaluate_queries,
    proposal_recall,
    qbs_queries,
)
from wordspot.geometry import (
    Box,
    MatchConfig,
    anchor_grid,
    decode_box,
    encode_box,
    iou,
    label_proposals,
    match_and_sample,
    nms,
)
from wordspot.image_ops import load_gray
from wordspot.index import (
    PageIndex,
    Proposal,
    QueryConfig,
    load_index,
    query_by_string,
    save_index,
)
from wordspot.losses import (
    LossWeights,
    MarginConfig,
    bce_embedding_loss,
    cosine_embedding_loss,
    cosine_loss,
    logistic_score_loss,
    sigmoid,
    smooth_l1,
    total_loss,
)

ALPHA = DIGITS_AND_LOWERCASE


def report(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def random_words(n, rng, max_len=10):
    words = []
    for _ in range(n):
        m = int(rng.integers(1, max_len + 1))
        words.append("".join(ALPHA[i] for i in rng.integers(0, len(ALPHA), size=m)))
    return words


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


# -- independent references -------------------------------------------------


def phoc_oracle(word, levels=(1, 2, 3, 4, 5)):
    """Interval-overlap construction in exact rational arithmetic."""
    K = len(ALPHA)
    vec = np.zeros(K * sum(levels))
    m = len(word)
    offset = 0
    for lv in levels:
        for r in range(lv):
            r0, r1 = Fraction(r, lv), Fraction(r + 1, lv)
            for k, ch in enumerate(word):
                o0, o1 = Fraction(k, m), Fraction(k + 1, m)
                overlap = min(o1, r1) - max(o0, r0)
                if overlap >= (o1 - o0) / 2:
                    vec[(offset + r) * K + ALPHA.index(ch)] = 1.0
        offset += lv
    return vec


def dctow_oracle(word, r=3):
    """Direct O(m^2) orthonormal DCT-II summation."""
    K = len(ALPHA)
    m = len(word)
    out = np.zeros(r * K)
    for f in range(min(r, m)):
        s = math.sqrt(1.0 / m) if f == 0 else math.sqrt(2.0 / m)
        for n, ch in enumerate(word):
            out[f * K + ALPHA.index(ch)] += s * math.cos(
                math.pi * (2 * n + 1) * f / (2 * m)
            )
    return out


def nms_oracle(boxes, scores, t):
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(iou(boxes[i], boxes[kj]) <= t for kj in kept):
            kept.append(i)
    return kept


def labels_oracle(proposals, gts, cfg):
    pos, neg = [], []
    for i, p in enumerate(proposals):
        overlaps = [iou(p, g) for g, _ in gts]
        best = max(overlaps)
        if best > cfg.pos_iou:
            pos.append((i, overlaps.index(best)))
        elif best < cfg.neg_iou:
            neg.append(i)
    return pos, neg


def random_box(rng, span=200.0):
    x0 = rng.uniform(0, span)
    y0 = rng.uniform(0, span)
    return Box.from_xywh(x0, y0, rng.uniform(2, 80), rng.uniform(2, 40))


def fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x, dtype=np.float64)
    for i in range(x.size):
        xp = x.copy(); xp.flat[i] += h
        xm = x.copy(); xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_rel_err(analytic, numeric):
    """Worst relative error over coordinates; near-zero pairs compare
    absolutely so roundoff in the difference quotient cannot dominate."""
    worst = 0.0
    for a, n in zip(np.ravel(analytic), np.ravel(numeric)):
        if abs(a) + abs(n) < 1e-6:
            if abs(a - n) >= 1e-7:
                worst = max(worst, 1.0)
            continue
        worst = max(worst, abs(a - n) / max(abs(a), abs(n)))
    return worst


# -- shared small pipeline (determinism + persistence) ----------------------

SMALL_VOCAB = ["ant", "bee", "cat", "dog", "elk", "fox"]
MILD_MORPH = [["dilate", 1], ["dilate", 3], ["erode", 1], ["erode", 3]]


def small_config_doc():
    return {
        "synth": {
            "vocabulary": SMALL_VOCAB,
            "pages": 2,
            "words_per_page": 14,
            "canvas_w": 700,
            "canvas_h": 420,
        },
        "augment": {"word_gap": 28, "row_gap": 14, "morph_elements": MILD_MORPH},
        "train": {"max_iters": 350, "eval_every": 175, "hidden_dims": [64, 64]},
        "query": {"t_s": 0.3, "t_nms": 0.4, "k": 25},
        "seed": 7,
    }


@pytest.fixture(scope="module")
def small_ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_small")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(small_config_doc()))
    corpus, model, index = root / "corpus", root / "model.wspt", root / "index.wsix"
    for argv in (
        ["synth", "--config", str(cfg), "--out", str(corpus)],
        ["train", "--config", str(cfg), "--corpus", str(corpus), "--out", str(model)],
        ["index", "--config", str(cfg), "--pages", str(corpus),
         "--model", str(model), "--out", str(index)],
    ):
        code, _, err = run_cli(argv)
        assert code == 0, err
    return {"root": root, "cfg": cfg, "corpus": corpus, "model": model, "index": index}


# -- criteria ---------------------------------------------------------------


def test_embedding_dimensions(capsys):
    rng = np.random.default_rng(11)
    words = random_words(1000, rng)
    phoc_dims = {phoc(w, PhocConfig()).dim for w in words}
    dctow_dims = {dctow(w, DctowConfig()).dim for w in words}
    ok = phoc_dims == {540} and dctow_dims == {108}
    report(capsys, "embedding dimensions", ok,
           f"phoc dims {phoc_dims}, dctow dims {dctow_dims} over 1000 words")


def test_embedding_oracle_equivalence(capsys):
    rng = np.random.default_rng(12)
    words = random_words(1000, rng)
    t0 = time.perf_counter()
    worst = 0.0
    for w in words:
        worst = max(worst, float(np.max(np.abs(phoc(w, PhocConfig()).values - phoc_oracle(w)))))
        worst = max(worst, float(np.max(np.abs(dctow(w, DctowConfig()).values - dctow_oracle(w)))))
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and dt < 5.0
    report(capsys, "embedding oracle equivalence", ok,
           f"max abs diff {worst:.2e} over 1000 words in {dt:.2f}s")


def test_geometry_matches_brute_force(capsys):
    rng = np.random.default_rng(13)
    nms_bad = 0
    for _ in range(500):
        n = int(rng.integers(1, 25))
        boxes = [random_box(rng) for _ in range(n)]
        scores = np.round(rng.uniform(0, 1, size=n), 2).tolist()  # force ties
        t = float(rng.choice([0.1, 0.3, 0.5, 0.7]))
        if nms(boxes, scores, t) != nms_oracle(boxes, scores, t):
            nms_bad += 1

    match_bad = 0
    cfg = MatchConfig()
    for trial in range(500):
        gts = [(random_box(rng), "w") for _ in range(int(rng.integers(1, 6)))]
        proposals = []
        for g, _ in gts:  # slightly jittered copies guarantee positives
            proposals.append(Box(g.x_c + g.w * rng.uniform(-0.02, 0.02),
                                 g.y_c + g.h * rng.uniform(-0.02, 0.02),
                                 g.w * rng.uniform(0.95, 1.05),
                                 g.h * rng.uniform(0.95, 1.05)))
        proposals += [random_box(rng) for _ in range(int(rng.integers(1, 15)))]
        pos, neg = label_proposals(proposals, gts, cfg)
        if (pos, neg) != labels_oracle(proposals, gts, cfg):
            match_bad += 1
            continue
        sample = match_and_sample(proposals, gts, cfg, rng_seed=trial)
        pairs = [(p, g) for p, g, _ in sample.positives]
        if not (set(pairs) <= set(pos) and set(sample.negatives) <= set(neg)):
            match_bad += 1
        if any(t != encode_box(proposals[p], gts[g][0]) for p, g, t in sample.positives):
            match_bad += 1

    worst_rt = 0.0
    for _ in range(500):
        anchor, gt = random_box(rng), random_box(rng)
        back = decode_box(anchor, encode_box(anchor, gt))
        rel = max(abs(back.x_c - gt.x_c) / gt.w, abs(back.y_c - gt.y_c) / gt.h,
                  abs(back.w - gt.w) / gt.w, abs(back.h - gt.h) / gt.h)
        worst_rt = max(worst_rt, rel)

    ok = nms_bad == 0 and match_bad == 0 and worst_rt < 1e-9
    report(capsys, "geometry brute-force equivalence", ok,
           f"nms mismatches {nms_bad}/500, matcher mismatches {match_bad}/500, "
           f"encode/decode max rel err {worst_rt:.2e}")


def test_anchor_count(capsys):
    n = len(anchor_grid(1720, 1720))
    ok = n == 693_375
    report(capsys, "anchor count 1720x1720", ok, f"{n} anchors (expected 693375)")


def test_gradient_checks(capsys):
    rng = np.random.default_rng(17)
    t0 = time.perf_counter()
    worst = {}

    errs = []
    for _ in range(100):
        x = rng.normal(size=6)
        t = rng.normal(size=6)
        d = x - t  # nudge coordinates off the piecewise boundary
        d[np.abs(np.abs(d) - 1.0) < 1e-3] += 5e-3
        x = t + d
        _, g = smooth_l1(x, t)
        errs.append(max_rel_err(g, fd_gradient(lambda v: smooth_l1(v, t)[0], x)))
    worst["smooth_l1"] = max(errs)

    errs = []
    for _ in range(100):
        z = float(rng.uniform(-8, 8))
        y = bool(rng.integers(2))
        _, g = logistic_score_loss(z, y)
        num = fd_gradient(lambda v: logistic_score_loss(float(v[0]), y)[0], np.array([z]))
        errs.append(max_rel_err(np.array([g]), num))
    worst["logistic"] = max(errs)

    margin = MarginConfig()
    errs = []
    trials = 0
    while trials < 100:
        v, u = rng.normal(size=8), rng.normal(size=8)
        y = int(rng.integers(2))
        cos = float(np.dot(v, u) / (np.linalg.norm(v) * np.linalg.norm(u)))
        if abs(cos - margin.gamma) < 1e-3:  # hinge kink: subgradient, skip
            continue
        trials += 1
        _, g = cosine_embedding_loss(v, u, y, margin)
        errs.append(max_rel_err(g, fd_gradient(
            lambda w: cosine_embedding_loss(w, u, y, margin)[0], v)))
    worst["cosine_embedding"] = max(errs)

    errs = []
    for _ in range(100):
        v, u = rng.normal(size=8), rng.normal(size=8)
        _, g = cosine_loss(v, u)
        errs.append(max_rel_err(g, fd_gradient(lambda w: cosine_loss(w, u)[0], v)))
    worst["cosine"] = max(errs)

    errs = []
    for _ in range(100):
        z = rng.normal(size=8) * 2
        t = rng.integers(0, 2, size=8).astype(float)
        _, g = bce_embedding_loss(z, t)
        errs.append(max_rel_err(g, fd_gradient(lambda w: bce_embedding_loss(w, t)[0], z)))
    worst["bce"] = max(errs)

    errs = []
    for trial in range(100):
        net = DenseNet(EmbedNetConfig(input_dim=6, hidden_dims=(8,), out_dim=4, seed=trial))
        x = rng.normal(size=(3, 6))
        targets = rng.normal(size=(3, 4))
        targets /= np.linalg.norm(targets, axis=1, keepdims=True)
        y = rng.integers(0, 2, size=3).astype(float)

        def total(xb=x):
            emb, _ = net.embed_forward(xb, train=True)
            logits = net.score_logits(xb)
            val = sum(cosine_loss(emb[i], targets[i])[0] for i in range(3))
            val += sum(logistic_score_loss(float(logits[i]), bool(y[i]))[0] for i in range(3))
            return val

        emb, cache = net.embed_forward(x, train=True)
        logits = net.score_logits(x)
        demb = np.stack([cosine_loss(emb[i], targets[i])[1] for i in range(3)])
        dlog = sigmoid(logits) - y
        grads = net.embed_backward(cache, demb=demb)
        grads.update(net.score_backward(x, dlog))
        for _ in range(4):  # spot-check random coordinates of the full net
            name = list(grads)[int(rng.integers(len(grads)))]
            idx = int(rng.integers(net.params[name].size))
            h = 1e-6
            orig = net.params[name].flat[idx]
            net.params[name].flat[idx] = orig + h
            lp = total()
            net.params[name].flat[idx] = orig - h
            lm = total()
            net.params[name].flat[idx] = orig
            errs.append(max_rel_err(np.array([grads[name].flat[idx]]),
                                    np.array([(lp - lm) / (2 * h)])))
    worst["network"] = max(errs)

    dt = time.perf_counter() - t0
    peak = max(worst.values())
    ok = peak < 1e-4 and dt < 30.0
    report(capsys, "gradient checks", ok,
           "max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f"; {dt:.1f}s")


def test_combined_loss_arithmetic(capsys):
    v = total_loss(1.0, 1.0, 1.0, 1.0, 1.0, LossWeights())
    ok = v == 3.22
    report(capsys, "combined loss arithmetic", ok, f"unit parts -> {v!r}")


def test_learning_rate_schedule(capsys):
    adam = AdamState()
    params = {"p": np.zeros(1)}
    grads = {"p": np.zeros(1)}
    lr_10k = lr_20k = None
    for _ in range(20000):
        adam.step(params, grads)
        if adam.step_count == 10000:
            lr_10k = adam.lr
        if adam.step_count == 20000:
            lr_20k = adam.lr
    ok = lr_10k == 1e-4 and lr_20k == 1e-5
    report(capsys, "learning-rate schedule", ok,
           f"lr after 10000 steps {lr_10k!r}, after 20000 {lr_20k!r}")


def test_ranking_metric_correctness(capsys):
    ap = ap_from_relevance([True, False, True], 2)
    ap_ok = abs(ap - 5 / 6) < 1e-12

    # perfect index: gt boxes as proposals, descriptors = text embeddings
    embed_cfg = DctowConfig()
    rng = np.random.default_rng(23)
    gts, pages = [], []
    for p in range(3):
        page_id = f"page_{p:03d}"
        props = []
        for i in range(8):
            label = DEFAULT_VOCABULARY[int(rng.integers(30))]
            box = Box.from_xywh(20 + 85 * i, 40 + 30 * p, 60, 16)
            gts.append(GroundTruth(page_id, box, label))
            vec = embed_label(label, embed_cfg).values
            props.append(Proposal(box, 0.9, (vec / np.linalg.norm(vec)).astype(np.float32)))
        pages.append(PageIndex(page_id=page_id, image_path="", width=800, height=200,
                               scale=1.0, n_dtp=8, n_total=8, proposals=props))
    queries = qbs_queries(gts)
    maps = {}
    for t_o in (0.25, 0.5):
        res = evaluate_queries(
            lambda q: query_by_string(pages, q, embed_cfg, k=50),
            queries, queries, gts, t_o)
        maps[t_o] = res["map"]
    ok = ap_ok and maps[0.25] == 1.0 and maps[0.5] == 1.0
    report(capsys, "ranking metric correctness", ok,
           f"AP(1,0,1 of 2) = {ap:.12f}, oracle-index MAP {maps[0.25]} @ 0.25, "
           f"{maps[0.5]} @ 0.5")


def test_artifact_determinism(capsys, small_ws, tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(small_config_doc()))

    corpus_b = tmp_path / "corpus"
    assert run_cli(["synth", "--config", str(cfg), "--out", str(corpus_b)])[0] == 0
    synth_same = all(
        (corpus_b / p.name).read_bytes() == p.read_bytes()
        for p in sorted(small_ws["corpus"].iterdir())
    )

    model_b = tmp_path / "model.wspt"
    assert run_cli(["train", "--config", str(cfg), "--corpus", str(small_ws["corpus"]),
                    "--out", str(model_b)])[0] == 0
    train_same = model_b.read_bytes() == small_ws["model"].read_bytes()

    index_b = tmp_path / "index.wsix"
    assert run_cli(["index", "--config", str(cfg), "--pages", str(small_ws["corpus"]),
                    "--model", str(model_b), "--out", str(index_b)])[0] == 0
    index_same = index_b.read_bytes() == small_ws["index"].read_bytes()

    out1 = run_cli(["search", "--index", str(small_ws["index"]), "--query", "cat"])[1]
    out2 = run_cli(["search", "--index", str(index_b), "--query", "cat"])[1]
    search_same = out1 == out2 and out1 != ""

    ok = synth_same and train_same and index_same and search_same
    report(capsys, "artifact determinism", ok,
           f"synth {synth_same}, train {train_same}, index {index_same}, "
           f"search {search_same}")


def test_persistence_round_trip(capsys, small_ws, tmp_path):
    model = load_model(small_ws["model"])
    m2 = tmp_path / "m2.wspt"
    save_model(model, m2)
    model_bytes_ok = m2.read_bytes() == small_ws["model"].read_bytes()
    model2 = load_model(m2)
    model_state_ok = all(
        np.array_equal(a1, a2)
        for (_, a1), (_, a2) in zip(model.net.state_items(), model2.net.state_items())
    ) and model.embed_cfg == model2.embed_cfg

    loaded = load_index(small_ws["index"])
    i2 = tmp_path / "i2.wsix"
    save_index(loaded.pages, i2, embed_cfg_doc=embed_cfg_to_json(loaded.embed_cfg),
               query_cfg=loaded.query_cfg, long_side=loaded.long_side)
    index_bytes_ok = i2.read_bytes() == small_ws["index"].read_bytes()
    index_deep_ok = load_index(i2).pages == loaded.pages

    raw_model = small_ws["model"].read_bytes()
    raw_index = small_ws["index"].read_bytes()
    rejects = []

    def expect(exc, fn):
        try:
            fn()
            rejects.append(False)
        except exc:
            rejects.append(True)
        except Exception:
            rejects.append(False)

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + raw_model[4:])
    expect(VersionMismatch, lambda: load_model(bad))
    bad.write_bytes(raw_model[: len(raw_model) // 2])
    expect(CorruptModel, lambda: load_model(bad))
    bad.write_bytes(b"XXXX" + raw_index[4:])
    expect(VersionMismatch, lambda: load_index(bad))
    bad.write_bytes(raw_index[: len(raw_index) // 2])
    expect((CorruptIndex, VersionMismatch), lambda: load_index(bad))
    flipped = bytearray(raw_index)
    flipped[-20] ^= 0xFF
    bad.write_bytes(bytes(flipped))
    expect(CorruptIndex, lambda: load_index(bad))

    ok = (model_bytes_ok and model_state_ok and index_bytes_ok and index_deep_ok
          and all(rejects))
    report(capsys, "persistence round-trip", ok,
           f"model bytes {model_bytes_ok} state {model_state_ok}, index bytes "
           f"{index_bytes_ok} deep {index_deep_ok}, corrupt rejects {rejects}")


def test_engine_standalone(capsys):
    src = Path(wordspot.__file__).parent
    offenders = [p.name for p in src.rglob("*.py") if "frontend" in p.read_text()]
    ok = offenders == []
    report(capsys, "engine standalone", ok,
           f"engine sources referencing the browser console: {offenders or 'none'}")


def test_synthetic_end_to_end(capsys, tmp_path):
    def doc(pages, seed):
        return {
            "synth": {"pages": pages, "words_per_page": 40,
                      "canvas_w": 760, "canvas_h": 560},
            "augment": {"word_gap": 28, "row_gap": 14, "margin": 20,
                        "morph_elements": MILD_MORPH},
            "train": {"max_iters": 3500, "eval_every": 500, "hidden_dims": [128, 128]},
            "eval": {"grid_t_s": [0.5, 0.7, 0.9], "grid_t_nms": [0.25, 0.4]},
            "seed": seed,
        }

    t0 = time.perf_counter()
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(doc(20, 0)))
    for name, pages, seed in (("train", 20, 0), ("val", 3, 55), ("test", 5, 202)):
        c = tmp_path / f"cfg_{name}.json"
        c.write_text(json.dumps(doc(pages, seed)))
        code, _, err = run_cli(["synth", "--config", str(c), "--out", str(tmp_path / name)])
        assert code == 0, err

    model = tmp_path / "model.wspt"
    code, _, err = run_cli(["train", "--config", str(cfg),
                            "--corpus", str(tmp_path / "train"), "--out", str(model)])
    assert code == 0, err
    assert json.loads(cfg.read_text())["train"]["max_iters"] <= 5000

    code, _, err = run_cli(["gridsearch", "--config", str(cfg),
                            "--val", str(tmp_path / "val"), "--model", str(model)])
    assert code == 0, err

    index = tmp_path / "index.wsix"
    code, out, err = run_cli(["index", "--config", str(cfg),
                              "--pages", str(tmp_path / "test"),
                              "--model", str(model), "--out", str(index)])
    assert code == 0, err
    retained = json.loads(out.splitlines()[-1])["proposals"]

    code, out, err = run_cli(
        ["eval", "--config", str(cfg), "--index", str(index),
         "--gt", str(tmp_path / "test"), "--mode", "both", "--model", str(model),
         "--json", str(tmp_path / "r.json"), "--csv", str(tmp_path / "r.csv")])
    assert code == 0, err
    summary = json.loads(out.splitlines()[-1])

    # proposer recall on the raw proposals, before any score filtering
    loaded = load_config(str(cfg))
    props, gts = {}, []
    for sidecar in sorted((tmp_path / "test").glob("*.json")):
        if sidecar.name.startswith("cfg_"):
            continue
        page_png, words = read_ground_truth(sidecar)
        img = load_gray(tmp_path / "test" / page_png)
        props[sidecar.stem] = dtp_proposals(img, loaded.dtp_config())
        gts += [GroundTruth(sidecar.stem, b, lab) for b, lab in words]
    recall = proposal_recall(props, gts, 0.5)

    elapsed = time.perf_counter() - t0
    qbs_25 = summary["map"]["qbs"]["0.25"]
    qbs_50 = summary["map"]["qbs"]["0.5"]
    qbe_25 = summary["map"]["qbe"]["0.25"]
    ratio = retained / len(gts)
    ok = (recall >= 0.99 and qbs_25 >= 0.95 and qbs_50 >= 0.90 and qbe_25 >= 0.90
          and 1.0 <= ratio <= 6.0 and elapsed < 600.0)
    report(capsys, "synthetic end-to-end quality", ok,
           f"50 classes, 20 train + 5 test pages: proposer recall {recall:.3f} @ 0.5, "
           f"text-query MAP {qbs_25:.3f} @ 0.25 / {qbs_50:.3f} @ 0.5, "
           f"crop-query MAP {qbe_25:.3f} @ 0.25, retained/gt {ratio:.2f}, "
           f"{elapsed:.0f}s")
