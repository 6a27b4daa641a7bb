import numpy as np
import pytest

from proctext.glossary import EmbeddingTable, Glossary, WordClass, WordKind
from proctext.synthetic import make_demo_fixture


@pytest.fixture(scope="session")
def demo_paths(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    return make_demo_fixture(out)


@pytest.fixture()
def small_glossary():
    return Glossary(
        [
            WordClass("cut", WordKind.VERB, "切", frozenset({"切", "切成"})),
            WordClass("fry", WordKind.VERB, "炒", frozenset({"炒", "翻炒"})),
            WordClass("add", WordKind.VERB, "加入", frozenset({"加入", "放入"})),
            WordClass("potato", WordKind.INGREDIENT, "土豆", frozenset({"土豆", "马铃薯"})),
            WordClass("salt", WordKind.INGREDIENT, "盐", frozenset({"盐", "食盐"})),
            WordClass("oil", WordKind.INGREDIENT, "油", frozenset({"油", "食用油"})),
            WordClass("wok", WordKind.TOOL, "锅", frozenset({"锅"})),
        ]
    )


@pytest.fixture()
def tiny_embeddings():
    # orthogonal-ish axes so hand cosine computations stay simple
    return EmbeddingTable(
        dimension=3,
        vectors={
            "a": np.array([1.0, 0.0, 0.0]),
            "b": np.array([0.0, 1.0, 0.0]),
            "c": np.array([0.0, 0.0, 1.0]),
            "d": np.array([1.0, 1.0, 0.0]),
        },
    )
