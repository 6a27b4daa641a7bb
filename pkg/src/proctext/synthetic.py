"""Synthetic corpora and causal benchmarks with known ground truth.

Everything here is generated from seeds and simple planted structure, so
tests can compare mined pivots, estimated effects, and mined ordering
constraints against values that are known by construction. The demo
fixture writes a complete miniature input set (corpus, glossary,
embeddings, pairs, instances, annotation votes, config) for an
end-to-end pipeline run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import random
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from proctext.causal import CausalUnit
from proctext.mining import RESULTS_HEADER, MiningConfig, categorize, pair_frequencies
from proctext.parsing import (
    ActionInstance,
    ProtoAction,
    ProtoActionSequence,
    RecipeText,
    parse_recipe,
)


def sequence_of(recipe_id: str, actions: Sequence[ProtoAction]) -> ProtoActionSequence:
    """Wrap bare canonical actions into a sequence with synthetic clauses."""
    rows = []
    for index, proto in enumerate(actions):
        surface = " ".join(
            [proto.verb_class, *proto.ingredient_classes, *proto.tool_classes]
        )
        instance = ActionInstance(
            verb_surface=proto.verb_class,
            verb_class=proto.verb_class,
            ingredient_classes=frozenset(proto.ingredient_classes),
            tool_classes=frozenset(proto.tool_classes),
            clause_text=surface,
            step_index=index,
            order_index=index,
        )
        rows.append((instance, proto))
    return ProtoActionSequence(recipe_id=recipe_id, actions=tuple(rows))


def make_pivot_sequences(
    n: int = 200, seed: int = 7
) -> tuple[list[ProtoActionSequence], list[ProtoActionSequence], dict[str, ProtoAction]]:
    """Two recipe sets with four planted actions at known document rates.

    Per planted action, (base rate, target rate) and the bucket the miner
    must put it in under default thresholds:

      drop_garnish    (0.50, 0.00) -> remove
      add_spice_mix   (0.02, 0.60) -> insert
      rest_overnight  (0.40, 0.05) -> manual check
      stir_briefly    (0.30, 0.25) -> discard

    A shared backbone action appears everywhere and three noise actions
    appear at matched rates on both sides, all landing in discard.
    """
    planted = {
        "remove": ProtoAction.make("drop_garnish", ["herb_mix"]),
        "insert": ProtoAction.make("add_spice_mix", ["spice_mix"]),
        "manual": ProtoAction.make("rest_overnight"),
        "discard": ProtoAction.make("stir_briefly", tool_classes=["spoon"]),
    }
    rates = {
        "remove": (0.50, 0.00),
        "insert": (0.02, 0.60),
        "manual": (0.40, 0.05),
        "discard": (0.30, 0.25),
    }
    backbone = ProtoAction.make("combine_all")
    noise = [ProtoAction.make(f"noise_step_{i}") for i in range(3)]
    rng = random.Random(seed)

    def build_side(prefix: str, rate_index: int) -> list[ProtoActionSequence]:
        members: dict[str, set[int]] = {}
        for name in planted:
            count = round(rates[name][rate_index] * n)
            members[name] = set(rng.sample(range(n), count))
        noise_members = [set(rng.sample(range(n), n // 4)) for _ in noise]
        sequences = []
        for i in range(n):
            actions = [backbone]
            for name, action in sorted(planted.items()):
                if i in members[name]:
                    actions.append(action)
            for action, chosen in zip(noise, noise_members):
                if i in chosen:
                    actions.append(action)
            sequences.append(sequence_of(f"{prefix}{i:04d}", actions))
        return sequences

    base = build_side("b", 0)
    target = build_side("t", 1)
    return base, target, planted


def make_confounded_units(
    n: int = 2000, seed: int = 11
) -> tuple[list[CausalUnit], dict[str, float]]:
    """Binary-confounder benchmark with recorded potential outcomes.

    A hidden binary trait drives both treatment take-up (0.8 vs 0.2) and
    the base outcome rate (0.6 vs 0.1); treatment adds 0.2 everywhere.
    The trait is observed as the single covariate, so matching on it
    removes the confounding that inflates the naive group difference.
    """
    rng = random.Random(seed)
    units = []
    effects = []
    naive_treated = []
    naive_control = []
    for i in range(n):
        trait = 1 if rng.random() < 0.5 else 0
        treated = 1 if rng.random() < (0.8 if trait else 0.2) else 0
        p0 = 0.6 if trait else 0.1
        y0 = 1 if rng.random() < p0 else 0
        y1 = 1 if rng.random() < p0 + 0.2 else 0
        outcome = y1 if treated else y0
        effects.append(y1 - y0)
        (naive_treated if treated else naive_control).append(outcome)
        units.append(
            CausalUnit(
                recipe_id=f"r{i:05d}",
                treatment=treated,
                outcome=outcome,
                covariates=(trait,),
            )
        )
    oracle = {
        "true_ate": sum(effects) / n,
        "naive": sum(naive_treated) / len(naive_treated)
        - sum(naive_control) / len(naive_control),
    }
    return units, oracle


def make_independence_units(n: int = 2000, seed: int = 12) -> list[CausalUnit]:
    """Units where treatment and outcome are independent fair coins."""
    rng = random.Random(seed)
    return [
        CausalUnit(
            recipe_id=f"r{i:05d}",
            treatment=1 if rng.random() < 0.5 else 0,
            outcome=1 if rng.random() < 0.5 else 0,
            covariates=(),
        )
        for i in range(n)
    ]


def make_chain_sequences() -> tuple[
    list[ProtoActionSequence], ProtoAction, frozenset[ProtoAction], frozenset[ProtoAction]
]:
    """Deterministic corpus where one action has one pred and one succ.

    60 recipes run preheat -> add_sauce -> plate_up, 60 run
    add_sauce -> plate_up, and 80 contain only an unrelated action. For
    the add_sauce pivot this makes preheat a precondition signal (effect
    rate 1 among its carriers vs 3/7 baseline) and plate_up a consequence
    signal, while the unrelated action shows a negative effect both ways.
    """
    pred = ProtoAction.make("preheat", tool_classes=["pan"])
    pivot = ProtoAction.make("add_sauce", ["sauce"])
    succ = ProtoAction.make("plate_up")
    unrelated = ProtoAction.make("wash_hands")
    sequences = []
    for i in range(60):
        sequences.append(sequence_of(f"c{i:04d}", [pred, pivot, succ]))
    for i in range(60, 120):
        sequences.append(sequence_of(f"c{i:04d}", [pivot, succ]))
    for i in range(120, 200):
        sequences.append(sequence_of(f"c{i:04d}", [unrelated]))
    return sequences, pivot, frozenset({pred}), frozenset({succ})


# ---------------------------------------------------------------------------
# Demo fixture: a miniature shredded-potato corpus in Chinese.


_GLOSSARY_RECORDS = [
    {"class_id": "xi", "kind": "verb", "canonical": "洗净", "surface_forms": ["洗净", "清洗"]},
    {"class_id": "qie", "kind": "verb", "canonical": "切成", "surface_forms": ["切成"]},
    {"class_id": "yure", "kind": "verb", "canonical": "预热", "surface_forms": ["预热", "烧热"]},
    {"class_id": "chao", "kind": "verb", "canonical": "翻炒", "surface_forms": ["翻炒", "煸炒"]},
    {"class_id": "jia", "kind": "verb", "canonical": "加入", "surface_forms": ["加入", "放入"]},
    {"class_id": "lin", "kind": "verb", "canonical": "淋上", "surface_forms": ["淋上", "淋入"]},
    {"class_id": "sa", "kind": "verb", "canonical": "撒上", "surface_forms": ["撒上", "撒入"]},
    {"class_id": "yanzhi", "kind": "verb", "canonical": "腌制", "surface_forms": ["腌制"]},
    {
        "class_id": "zhuangpan",
        "kind": "verb",
        "canonical": "装盘",
        "surface_forms": ["装盘", "盛出"],
    },
    {
        "class_id": "tudou",
        "kind": "ingredient",
        "canonical": "土豆",
        "surface_forms": ["土豆", "马铃薯"],
    },
    {
        "class_id": "lajiao",
        "kind": "ingredient",
        "canonical": "辣椒",
        "surface_forms": ["辣椒", "红椒"],
    },
    {"class_id": "cu", "kind": "ingredient", "canonical": "醋", "surface_forms": ["醋", "香醋"]},
    {"class_id": "conghua", "kind": "ingredient", "canonical": "葱花", "surface_forms": ["葱花"]},
    {
        "class_id": "shiyan",
        "kind": "ingredient",
        "canonical": "盐",
        "surface_forms": ["盐", "食盐"],
    },
    {"class_id": "zhima", "kind": "ingredient", "canonical": "芝麻", "surface_forms": ["芝麻"]},
    {
        "class_id": "you",
        "kind": "ingredient",
        "canonical": "油",
        "surface_forms": ["油", "食用油"],
    },
    {"class_id": "guo", "kind": "tool", "canonical": "炒锅", "surface_forms": ["炒锅", "锅"]},
    {"class_id": "dao", "kind": "tool", "canonical": "刀", "surface_forms": ["刀"]},
]

BASE_DISH = "土豆丝"
TARGET_DISH = "酸辣土豆丝"


def _demo_base_recipes() -> list[RecipeText]:
    recipes = []
    for i in range(1, 25):
        steps = []
        steps.append("土豆洗净" if i % 3 else "马铃薯清洗干净")
        steps.append("土豆切成细丝")
        if i <= 12:
            steps.append("腌制土豆十分钟")
        steps.append("预热炒锅，放入油" if i % 2 else "烧热锅，放入食用油")
        steps.append("翻炒土豆" if i % 4 else "煸炒马铃薯")
        steps.append("加入盐" if i % 2 else "加入食盐")
        if i <= 20:
            steps.append("撒上葱花")
        if i == 21:
            steps.append("淋上香醋")
        steps.append("装盘" if i % 5 else "盛出")
        recipes.append(
            RecipeText(
                recipe_id=f"b{i:03d}",
                dish=BASE_DISH,
                steps=tuple(steps),
                title=f"家常{BASE_DISH}{i}",
            )
        )
    return recipes


def _demo_target_recipes() -> list[RecipeText]:
    recipes = []
    for i in range(1, 19):
        # heating stays the first clause so precondition mining has a
        # clean covariate-free anchor
        steps = ["预热炒锅，放入油" if i % 2 else "烧热锅，放入食用油"]
        steps.append("翻炒土豆" if i % 3 else "煸炒土豆")
        steps.append("加入辣椒" if i % 4 else "加入红椒")
        steps.append("淋上醋" if i % 2 else "淋上香醋")
        steps.append("加入盐")
        if i >= 17:
            steps.append("撒上芝麻")
        steps.append("装盘")
        recipes.append(
            RecipeText(
                recipe_id=f"t{i:03d}",
                dish=TARGET_DISH,
                steps=tuple(steps),
                title=f"{TARGET_DISH}做法{i}",
            )
        )
    for i in range(19, 24):
        steps = ["预热炒锅", "放入油", "翻炒土豆"]
        if i <= 20:
            steps.append("淋上醋")
        steps.extend(["加入盐", "装盘"])
        recipes.append(
            RecipeText(
                recipe_id=f"t{i:03d}",
                dish=TARGET_DISH,
                steps=tuple(steps),
                title=f"{TARGET_DISH}做法{i}",
            )
        )
    for i in range(24, 27):
        steps = ["土豆洗净", "土豆切成丝"]
        if i == 24:
            steps.append("腌制土豆")
        steps.extend(["加入盐", "装盘"])
        recipes.append(
            RecipeText(
                recipe_id=f"t{i:03d}",
                dish=TARGET_DISH,
                steps=tuple(steps),
                title=f"凉拌{TARGET_DISH}{i}",
            )
        )
    return recipes


def _demo_generated(base: RecipeText, mode: str) -> RecipeText:
    """Simulated rewrite of a base recipe toward the target dish."""
    steps = list(base.steps)
    if mode != "identity":
        steps = [s for s in steps if "葱花" not in s]
        if mode == "full":
            steps = [s for s in steps if "腌制" not in s]
        fry_at = next(i for i, s in enumerate(steps) if "炒" in s and "锅" not in s)
        if mode in ("full", "no_marinate", "keep_vinegar"):
            steps.insert(fry_at + 1, "加入辣椒")
            if "淋上香醋" not in base.steps:
                steps.insert(fry_at + 2, "淋上醋")
        elif mode == "chili_only":
            steps.insert(fry_at + 1, "加入辣椒")
        elif mode == "chili_first":
            steps.insert(0, "加入辣椒")
            steps.insert(fry_at + 2, "淋上醋")
    return RecipeText(
        recipe_id=f"{base.recipe_id}-gen",
        dish=TARGET_DISH,
        steps=tuple(steps),
        title=base.title,
    )


_DEMO_INSTANCE_MODES = [
    ("b001", "full"),
    ("b002", "full"),
    ("b003", "full"),
    ("b013", "no_marinate"),
    ("b021", "keep_vinegar"),
    ("b014", "chili_only"),
    ("b017", "chili_first"),
    ("b015", "identity"),
    ("b016", "identity"),
]


def _token_vector(token: str, dimension: int) -> np.ndarray:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    return np.round(rng.standard_normal(dimension), 6)


def _write_embeddings(path: Path, texts: Sequence[str], dimension: int = 8) -> None:
    chars = sorted({ch for text in texts for ch in text if not ch.isspace()})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(chars)} {dimension}\n")
        for ch in chars:
            values = " ".join(f"{v:.6f}" for v in _token_vector(ch, dimension))
            fh.write(f"{ch} {values}\n")


def make_demo_fixture(out_dir, seed: int = 5) -> dict[str, Path]:
    """Write a complete miniature input set for an end-to-end run.

    The corpus rewrites plain shredded potato into the hot-and-sour
    version: sprinkling scallions disappears, adding chili and drizzling
    vinegar appear, marinating needs a vote (cast here as remove), and
    sprinkling sesame needs a vote that stays split (discarded).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = _demo_base_recipes()
    target = _demo_target_recipes()

    paths = {
        "corpus": out_dir / "corpus.jsonl",
        "glossary": out_dir / "glossary.json",
        "embeddings": out_dir / "embeddings.txt",
        "pairs": out_dir / "pairs.json",
        "instances": out_dir / "instances.jsonl",
        "annotations": out_dir / "annotations.csv",
        "config": out_dir / "config.json",
    }

    with open(paths["corpus"], "w", encoding="utf-8") as fh:
        for recipe in base + target:
            fh.write(json.dumps(recipe.to_json(), ensure_ascii=False, sort_keys=True) + "\n")

    with open(paths["glossary"], "w", encoding="utf-8") as fh:
        json.dump(_GLOSSARY_RECORDS, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")

    pairs = [
        {
            "base_dish": BASE_DISH,
            "target_dish": TARGET_DISH,
            "change_kind": "add",
            "added_ingredient": {"name": "辣椒", "class_id": "lajiao"},
        }
    ]
    with open(paths["pairs"], "w", encoding="utf-8") as fh:
        json.dump(pairs, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")

    by_id = {r.recipe_id: r for r in base}
    with open(paths["instances"], "w", encoding="utf-8") as fh:
        for index, (recipe_id, mode) in enumerate(_DEMO_INSTANCE_MODES):
            recipe = by_id[recipe_id]
            record = {
                "pair_id": f"000:{recipe_id}",
                "dish_pair": [BASE_DISH, TARGET_DISH],
                "base_recipe": recipe.to_json(),
                "generated_recipe": _demo_generated(recipe, mode).to_json(),
            }
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")

    # vote ids must line up with the queue the mine stage exports, so
    # rebuild its manual-check list the same way it will
    from proctext.glossary import load_glossary

    glossary = load_glossary(paths["glossary"])
    base_seqs = [parse_recipe(r, glossary) for r in base]
    target_seqs = [parse_recipe(r, glossary) for r in target]
    categorization = categorize(pair_frequencies(base_seqs, target_seqs), MiningConfig())
    manual = sorted(categorization.manual_check)
    votes = []
    for index, action in enumerate(manual):
        action_id = f"p000a{index:04d}"
        if action.verb_class == "yanzhi":
            votes.extend((action_id, f"ann{k}", "does_not_occur") for k in (1, 2, 3))
        elif action.verb_class == "sa":
            votes.append((action_id, "ann1", "sometimes_occur"))
            votes.append((action_id, "ann2", "always_occur"))
            votes.append((action_id, "ann3", "rarely_occur"))
    with open(paths["annotations"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        writer.writerows(votes)

    texts = [s for r in base + target for s in r.steps]
    texts.extend(s for _, mode in _DEMO_INSTANCE_MODES for s in ("加入辣椒", "淋上醋"))
    _write_embeddings(paths["embeddings"], texts)

    config = {
        "corpus": "corpus.jsonl",
        "glossary": "glossary.json",
        "pairs": "pairs.json",
        "embeddings": "embeddings.txt",
        "instances": "instances.jsonl",
        "annotations": "annotations.csv",
        "seed": seed,
        "causal": {"min_support": 2},
    }
    with open(paths["config"], "w", encoding="utf-8") as fh:
        json.dump(config, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        description="write the demo fixture files for an end-to-end run"
    )
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--seed", type=int, default=5)
    args = parser.parse_args(argv)
    paths = make_demo_fixture(args.out_dir, seed=args.seed)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
