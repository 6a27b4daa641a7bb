"""Input validation helpers shared by the estimator classes."""

from __future__ import annotations

from typing import Any, Sequence

from proctext.glossary import Glossary


def check_glossary(value: Any) -> Glossary:
    if not isinstance(value, Glossary):
        raise TypeError(f"expected a Glossary, got {type(value).__name__}")
    return value


def check_recipe_texts(X: Any) -> list:
    from proctext.parsing import RecipeText

    items = list(X)
    for i, item in enumerate(items):
        if not isinstance(item, RecipeText):
            raise TypeError(f"X[{i}]: expected RecipeText, got {type(item).__name__}")
    return items


def check_sequences(X: Any) -> list:
    from proctext.parsing import ProtoActionSequence

    items = list(X)
    for i, item in enumerate(items):
        if not isinstance(item, ProtoActionSequence):
            raise TypeError(
                f"X[{i}]: expected ProtoActionSequence, got {type(item).__name__}"
            )
    return items


def check_dish_labels(y: Any, n: int, allowed: Sequence[str] = ("base", "target")) -> list[str]:
    if y is None:
        raise ValueError(f"y is required: one label per sequence from {sorted(allowed)}")
    labels = [str(v) for v in y]
    if len(labels) != n:
        raise ValueError(f"y has {len(labels)} labels for {n} sequences")
    bad = sorted({v for v in labels if v not in allowed})
    if bad:
        raise ValueError(f"unknown dish labels {bad}; expected one of {sorted(allowed)}")
    return labels
