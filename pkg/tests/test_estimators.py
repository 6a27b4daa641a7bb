import pytest
from sklearn.base import clone

from proctext.causal import OrderConstraintMiner
from proctext.errors import CausalError, MiningError
from proctext.mining import PivotActionMiner
from proctext.parsing import ProtoAction, RecipeActionParser, RecipeText
from proctext.synthetic import make_pivot_sequences, sequence_of


def test_parser_params_round_trip(small_glossary):
    parser = RecipeActionParser(glossary=small_glossary, carry_forward=True)
    params = parser.get_params()
    assert params["carry_forward"] is True
    assert params["glossary"] is small_glossary
    copy = clone(parser)
    assert copy.get_params()["carry_forward"] is True
    parser.set_params(carry_forward=False)
    assert parser.get_params()["carry_forward"] is False


def test_parser_transform_and_validation(small_glossary):
    parser = RecipeActionParser(glossary=small_glossary)
    recipes = [RecipeText(recipe_id="r1", dish="x", steps=("切土豆", "加入盐"))]
    sequences = parser.fit_transform(recipes)
    assert [p.verb_class for p in sequences[0].protos()] == ["cut", "add"]
    with pytest.raises(TypeError):
        RecipeActionParser().fit()
    with pytest.raises(TypeError):
        parser.transform(["not a recipe"])


def test_miner_params_and_unfitted_access():
    miner = PivotActionMiner(freq_ratio=4.0)
    assert miner.get_params() == {
        "freq_ratio": 4.0,
        "remove_ceiling": 0.01,
        "insert_floor": 0.1,
    }
    copy = clone(miner)
    assert copy.get_params()["freq_ratio"] == 4.0
    miner.set_params(insert_floor=0.2)
    assert miner.insert_floor == 0.2
    with pytest.raises(MiningError):
        miner.pivot_set(("a", "b"))


def test_miner_label_validation():
    base, target, _ = make_pivot_sequences(n=10)
    miner = PivotActionMiner()
    X = list(base) + list(target)
    with pytest.raises(ValueError):
        miner.fit(X, None)
    with pytest.raises(ValueError):
        miner.fit(X, ["base"] * (len(X) - 1))
    with pytest.raises(ValueError):
        miner.fit(X, ["base"] * (len(X) - 1) + ["other"])


def test_constraint_miner_params_and_fit():
    miner = OrderConstraintMiner(effect_threshold=0.2, min_support=2)
    params = miner.get_params()
    assert params["effect_threshold"] == 0.2
    assert params["min_support"] == 2
    copy = clone(miner)
    assert copy.get_params() == params
    with pytest.raises(CausalError):
        miner.fit([sequence_of("r", [ProtoAction.make("act")])])
    assert not hasattr(miner, "constraints_")
