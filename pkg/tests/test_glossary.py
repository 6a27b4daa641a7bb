import numpy as np
import pytest

from proctext.errors import GlossaryError
from proctext.glossary import (
    EmbeddingTable,
    Glossary,
    WordClass,
    WordKind,
    cluster_terms,
    load_embeddings,
    load_glossary,
    save_glossary,
)


def test_lookup_and_surface_forms(small_glossary):
    assert small_glossary.lookup(WordKind.VERB, "翻炒") == "fry"
    assert small_glossary.lookup(WordKind.INGREDIENT, "马铃薯") == "potato"
    assert small_glossary.lookup(WordKind.VERB, "没有") is None
    assert small_glossary.surface_forms(WordKind.INGREDIENT, "salt") == frozenset({"盐", "食盐"})


def test_find_terms_prefers_longest_match(small_glossary):
    hits = small_glossary.find_terms("加入食盐")
    assert [(h[1], h[3]) for h in hits] == [("加入", "add"), ("食盐", "salt")]


def test_find_terms_longer_form_wins_across_kinds(small_glossary):
    # 食用油 (3 chars, oil) must beat 食盐's sibling start and the bare 油
    hits = small_glossary.find_terms("放入食用油")
    assert [(h[1], h[3]) for h in hits] == [("放入", "add"), ("食用油", "oil")]


def test_find_terms_same_length_verb_beats_ingredient():
    glossary = Glossary(
        [
            WordClass("steam_v", WordKind.VERB, "蒸", frozenset({"蒸"})),
            WordClass("steam_i", WordKind.INGREDIENT, "蒸", frozenset({"蒸"})),
        ]
    )
    hits = glossary.find_terms("蒸")
    assert len(hits) == 1
    assert hits[0][2] is WordKind.VERB


def test_find_terms_consumes_matched_span(small_glossary):
    # the 油 inside 食用油 must not be reported again
    hits = small_glossary.find_terms("食用油")
    assert len(hits) == 1


def test_glossary_round_trip(tmp_path, small_glossary):
    path = tmp_path / "glossary.json"
    save_glossary(small_glossary, path)
    loaded = load_glossary(path)
    assert loaded.to_records() == small_glossary.to_records()


def test_load_glossary_rejects_non_array(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"class_id": "x"}', encoding="utf-8")
    with pytest.raises(GlossaryError):
        load_glossary(path)


def test_word_class_requires_canonical_in_forms():
    with pytest.raises(GlossaryError):
        WordClass("x", WordKind.VERB, "炒", frozenset({"翻炒"}))


def test_embedding_table_missing_tokens():
    table = EmbeddingTable(dimension=2, vectors={"x": np.array([1.0, 0.0])})
    assert "x" in table
    assert table.get("y") is None
    assert np.array_equal(table.vector("y"), np.zeros(2))
    missing: set = set()
    mean = table.mean_vector(["x", "y"], missing=missing)
    assert missing == {"y"}
    # the absent token contributes a zero vector but still divides
    assert np.allclose(mean, [0.5, 0.0])


def test_load_embeddings_round_trip(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("2 3\nfoo 1 2 3\nbar -1 0.5 0\n", encoding="utf-8")
    table = load_embeddings(path)
    assert table.dimension == 3
    assert np.allclose(table.vector("bar"), [-1.0, 0.5, 0.0])


def test_load_embeddings_rejects_count_mismatch(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("3 2\nfoo 1 2\n", encoding="utf-8")
    with pytest.raises(GlossaryError):
        load_embeddings(path)


def test_load_embeddings_rejects_bad_width(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("1 3\nfoo 1 2\n", encoding="utf-8")
    with pytest.raises(GlossaryError):
        load_embeddings(path)


def test_cluster_terms_separates_planted_blobs():
    rng = np.random.default_rng(3)
    vectors = {}
    left = [f"l{i}" for i in range(8)]
    right = [f"r{i}" for i in range(8)]
    for term in left:
        vectors[term] = np.array([0.0, 0.0]) + rng.normal(scale=0.05, size=2)
    for term in right:
        vectors[term] = np.array([10.0, 10.0]) + rng.normal(scale=0.05, size=2)
    table = EmbeddingTable(dimension=2, vectors=vectors)
    clusters = cluster_terms(left + right, table, k=2, seed=0)
    groups = {frozenset(c) for c in clusters}
    assert groups == {frozenset(left), frozenset(right)}


def test_cluster_terms_is_deterministic():
    rng = np.random.default_rng(9)
    terms = [f"t{i}" for i in range(12)]
    table = EmbeddingTable(
        dimension=3, vectors={t: rng.normal(size=3) for t in terms}
    )
    first = cluster_terms(terms, table, k=3, seed=42)
    second = cluster_terms(terms, table, k=3, seed=42)
    assert first == second


def test_cluster_terms_rejects_unknown_terms():
    table = EmbeddingTable(dimension=2, vectors={"x": np.ones(2)})
    with pytest.raises(GlossaryError):
        cluster_terms(["x", "y"], table, k=1, seed=0)
