import numpy as np
import pytest

from wordspot.augmentation import (
    AugmentConfig,
    SyntheticCorpusConfig,
    generate_synthetic_corpus,
)
from wordspot.embedder import (
    EmbedNetConfig,
    TrainConfig,
    TrainingCrop,
    embed_cfg_to_json,
    train,
)
from wordspot.embeddings import DctowConfig, embed_label
from wordspot.errors import (
    CorruptIndex,
    DegenerateBox,
    EmptyLabel,
    UnknownPage,
    VersionMismatch,
)
from wordspot.geometry import Box, iou
from wordspot.index import (
    Hit,
    PageIndex,
    Proposal,
    QueryConfig,
    build_index,
    load_index,
    query_by_example,
    query_by_string,
    save_index,
)

VOCAB = ("ant", "bee", "cat", "dog", "elk", "fox")
MILD_MORPH = (("dilate", 1), ("dilate", 3), ("erode", 1), ("erode", 3))


@pytest.fixture(scope="module")
def corpus_pages():
    cfg = SyntheticCorpusConfig(
        vocabulary=VOCAB,
        pages=4,
        words_per_page=18,
        canvas_w=700,
        canvas_h=420,
        augment=AugmentConfig(word_gap=28, row_gap=14, morph_elements=MILD_MORPH),
        seed=42,
    )
    return [(img, f"page_{i:03d}", gts) for i, (img, gts) in enumerate(generate_synthetic_corpus(cfg))]


@pytest.fixture(scope="module")
def model(corpus_pages):
    crops = []
    for img, _, gts in corpus_pages[:3]:
        for box, label in gts:
            crops.append(TrainingCrop(img, box, label, True))
        rng = np.random.default_rng(0)
        for _ in range(12):
            x = float(rng.uniform(0, img.shape[1] - 40))
            y = float(rng.uniform(0, img.shape[0] - 18))
            crops.append(TrainingCrop(img, Box.from_xywh(x, y, 36, 14), "", False))
    return train(
        crops,
        EmbedNetConfig(hidden_dims=(64, 64), out_dim=108, seed=0),
        DctowConfig(),
        TrainConfig(max_iters=400, eval_every=200, seed=0),
    )


@pytest.fixture(scope="module")
def built(corpus_pages, model):
    pages = [(img, pid) for img, pid, _ in corpus_pages]
    q = QueryConfig(t_s=0.3, t_nms=0.4, k=25)
    return build_index(pages, model, q=q), q


def grid_fixture_pages(dim=8, per_page=50, seed=0):
    """Hand-built two-page index: spaced boxes (no NMS interference) with
    random unit descriptors."""
    rng = np.random.default_rng(seed)
    pages = []
    for pid in ("pa", "pb"):
        props = []
        for i in range(per_page):
            r, c = divmod(i, 10)
            box = Box.from_xywh(10 + 30 * c, 10 + 25 * r, 20, 14)
            d = rng.normal(0, 1, dim)
            d = (d / np.linalg.norm(d)).astype(np.float32)
            props.append(Proposal(box, float(rng.uniform(0.5, 1.0)), d))
        pages.append(
            PageIndex(
                page_id=pid, image_path="", width=400, height=200, scale=1.0,
                n_dtp=per_page, n_total=per_page, proposals=props,
            )
        )
    return pages


class TestBuildIndex:
    def test_blank_page_zero_proposals(self, model):
        blank = np.full((200, 300), 255, dtype=np.uint8)
        out = build_index([(blank, "blank")], model)
        assert len(out) == 1
        assert out[0].page_id == "blank"
        assert out[0].proposals == []

    def test_ts_one_keeps_nothing(self, corpus_pages, model):
        img, pid, _ = corpus_pages[0]
        out = build_index([(img, pid)], model, q=QueryConfig(t_s=1.0))
        assert out[0].proposals == []
        assert out[0].n_dtp > 0

    def test_proposal_invariants(self, built):
        pages, q = built
        total = 0
        for page in pages:
            for p in page.proposals:
                total += 1
                assert abs(np.linalg.norm(p.descriptor.astype(np.float64)) - 1.0) < 1e-6
                assert 0.0 < p.wordness < 1.0
                assert p.wordness > q.t_s
                assert p.box.x0 >= 0 and p.box.y0 >= 0
                assert p.box.x1 <= page.width and p.box.y1 <= page.height
        assert total > 0

    def test_canonical_proposal_order(self, built):
        pages, _ = built
        for page in pages:
            keys = [(p.box.y0, p.box.x0, p.box.w, p.box.h) for p in page.proposals]
            assert keys == sorted(keys)

    def test_sorted_by_page_id_regardless_of_input_order(self, corpus_pages, model):
        imgs = [(img, pid) for img, pid, _ in corpus_pages[:2]]
        a = build_index(imgs, model)
        b = build_index(list(reversed(imgs)), model)
        assert [p.page_id for p in a] == [p.page_id for p in b]
        assert a == b

    def test_per_page_errors_reported_not_fatal(self, corpus_pages, model):
        img, pid, _ = corpus_pages[0]
        errors = []
        out = build_index(
            [(img, pid), (None, "broken")], model, errors_out=errors
        )
        assert [p.page_id for p in out] == [pid]
        assert len(errors) == 1
        assert errors[0][0] == "broken"

    def test_errors_raise_without_sink(self, model):
        with pytest.raises(Exception):
            build_index([(None, "broken")], model)


class TestQueryByString:
    def test_empty_label_rejected(self, built, model):
        pages, _ = built
        with pytest.raises(EmptyLabel):
            query_by_string(pages, "!!!", model.embed_cfg)

    def test_top_hit_is_instance_of_query(self, corpus_pages, built, model):
        pages, _ = built
        gts = {pid: g for _, pid, g in corpus_pages}
        for word in ("ant", "cat"):
            hits = query_by_string(pages, word, model.embed_cfg, k=5)
            assert hits
            top = hits[0]
            assert top.similarity >= 0.95
            page_gts = gts[top.page_id]
            assert any(
                label == word and iou(box, top.box) >= 0.25
                for box, label in page_gts
            )

    def test_k_truncates_without_padding(self, built, model):
        pages, _ = built
        all_hits = query_by_string(pages, "bee", model.embed_cfg, k=10**9)
        assert len(query_by_string(pages, "bee", model.embed_cfg, k=3)) == 3
        huge = query_by_string(pages, "bee", model.embed_cfg, k=len(all_hits) + 500)
        assert len(huge) == len(all_hits)

    def test_similarities_sorted_and_bounded(self, built, model):
        pages, _ = built
        hits = query_by_string(pages, "dog", model.embed_cfg, k=50)
        sims = [h.similarity for h in hits]
        assert sims == sorted(sims, reverse=True)
        assert all(-1.0 <= s <= 1.0 + 1e-12 for s in sims)

    def test_within_page_zero_overlap(self, built, model):
        pages, _ = built
        hits = query_by_string(pages, "elk", model.embed_cfg, k=10**9)
        by_page = {}
        for h in hits:
            by_page.setdefault(h.page_id, []).append(h.box)
        for boxes in by_page.values():
            for i, a in enumerate(boxes):
                for b in boxes[i + 1 :]:
                    assert iou(a, b) == 0.0

    def test_page_order_invariance(self, built, model):
        pages, _ = built
        fwd = query_by_string(pages, "fox", model.embed_cfg, k=40)
        rev = query_by_string(list(reversed(list(pages))), "fox", model.embed_cfg, k=40)
        assert fwd == rev

    def test_brute_force_oracle_100_proposals(self):
        pages = grid_fixture_pages(per_page=50, seed=3)
        rng = np.random.default_rng(9)
        qv = rng.normal(0, 1, 8)
        qv /= np.linalg.norm(qv)

        import math

        expect = []
        for page in pages:
            for p in page.proposals:
                sim = math.fsum(float(a) * float(b) for a, b in zip(p.descriptor, qv))
                expect.append(Hit(page.page_id, p.box, sim))
        expect.sort(
            key=lambda h: (-h.similarity, h.page_id, h.box.y0, h.box.x0, h.box.w, h.box.h)
        )

        from wordspot.index import _rank

        got = _rank(pages, qv, k=100)
        assert len(got) == 100
        # reduction order differs from BLAS by ~1 ulp, so compare to 1e-12
        for g, e in zip(got, expect[:100]):
            assert (g.page_id, g.box) == (e.page_id, e.box)
            assert g.similarity == pytest.approx(e.similarity, abs=1e-12)


class TestQueryByExample:
    def test_unknown_page(self, built, model):
        pages, _ = built
        with pytest.raises(UnknownPage):
            query_by_example(pages, "nope", Box.from_xywh(0, 0, 10, 10), model)

    def test_degenerate_clip(self, corpus_pages, built, model):
        pages, _ = built
        img, pid, _ = corpus_pages[0]
        off = Box.from_xywh(pages[0].width + 50, 10, 20, 10)
        with pytest.raises(DegenerateBox):
            query_by_example(pages, pages[0].page_id, off, model, page_image=img)

    def test_gt_crop_retrieves_same_word(self, corpus_pages, built, model):
        pages, _ = built
        images = {pid: img for img, pid, _ in corpus_pages}
        img, pid, gts = corpus_pages[0]
        qbox, qlabel = gts[0]
        hits = query_by_example(
            pages, pid, qbox, model, k=10, page_image=images[pid]
        )
        assert hits
        # the hit that is not the query region itself must still be the word
        others = [
            h for h in hits
            if h.page_id != pid or iou(h.box, qbox) == 0.0
        ]
        assert others
        top = others[0]
        page_gts = {p: g for _, p, g in corpus_pages}[top.page_id]
        assert any(
            label == qlabel and iou(box, top.box) >= 0.25
            for box, label in page_gts
        )

    def test_identical_crop_identical_ranking(self, corpus_pages, built, model):
        pages, _ = built
        img, pid, gts = corpus_pages[1]
        qbox, _ = gts[2]
        a = query_by_example(pages, pid, qbox, model, k=20, page_image=img)
        b = query_by_example(pages, pid, qbox, model, k=20, page_image=img)
        assert a == b


class TestPersistence:
    def test_roundtrip_deep_equality(self, built, model, tmp_path):
        pages, q = built
        p = tmp_path / "idx.bin"
        save_index(
            pages, p,
            embed_cfg_doc=embed_cfg_to_json(model.embed_cfg),
            query_cfg=q,
            long_side=None,
        )
        loaded = load_index(p)
        assert list(loaded) == list(pages)
        assert loaded.query_cfg == q
        assert loaded.embed_cfg == model.embed_cfg
        # descriptors bit-exact
        assert loaded[0].proposals[0].descriptor.dtype == np.float32

    def test_save_deterministic_bytes(self, built, tmp_path):
        pages, q = built
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_index(pages, a, query_cfg=q)
        save_index(pages, b, query_cfg=q)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_index_valid(self, tmp_path):
        p = tmp_path / "empty.bin"
        save_index([], p)
        loaded = load_index(p)
        assert list(loaded) == []
        assert loaded.embed_cfg is None

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "idx.bin"
        save_index(grid_fixture_pages(), p)
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) // 2])
        with pytest.raises((CorruptIndex, VersionMismatch)):
            load_index(p)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "idx.bin"
        save_index([], p)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"XXXX"
        p.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            load_index(p)

    def test_future_version_rejected(self, tmp_path):
        p = tmp_path / "idx.bin"
        save_index([], p)
        raw = bytearray(p.read_bytes())
        raw[4:8] = (7).to_bytes(4, "little")
        p.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            load_index(p)

    def test_flipped_payload_byte_rejected(self, tmp_path):
        p = tmp_path / "idx.bin"
        save_index(grid_fixture_pages(), p)
        raw = bytearray(p.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        p.write_bytes(bytes(raw))
        with pytest.raises(CorruptIndex):
            load_index(p)

    def test_queries_identical_after_roundtrip(self, built, model, tmp_path):
        pages, q = built
        p = tmp_path / "idx.bin"
        save_index(pages, p, embed_cfg_doc=embed_cfg_to_json(model.embed_cfg), query_cfg=q)
        loaded = load_index(p)
        before = query_by_string(pages, "cat", model.embed_cfg, k=30)
        after = query_by_string(list(loaded), "cat", loaded.embed_cfg, k=30)
        assert before == after


class TestQueryConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            QueryConfig(t_s=1.5)
        with pytest.raises(ValueError):
            QueryConfig(t_nms=-0.1)
        with pytest.raises(ValueError):
            QueryConfig(k=0)
