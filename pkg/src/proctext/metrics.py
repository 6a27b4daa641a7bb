"""Scoring of generated counterfactual recipes.

Surface level: does the generated text mention the ingredient the rewrite
was supposed to introduce (coverage), and how much of the base recipe's
wording survives (BLEU against the base, plus an embedding-similarity F1).

Action level: parse base and generated recipes, diff their proto-action
multisets into inserted and removed actions, and score that change set
against the mined pivot actions with precision/recall/F1. Matching is
directional (inserted changes against insert pivots, removed against
remove pivots) and one-to-one. The hard variant requires exact
proto-action equality; the soft variant additionally admits pairs whose
representative phrases are similar enough, weighted by the similarity.
Inserted matches must also satisfy the mined order constraints.

Human preference ratings aggregate with best-worst scaling: per model, the
percentage of ratings naming it best minus the percentage naming it worst.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from proctext.causal import OrderConstraintSet
from proctext.errors import MetricError
from proctext.glossary import EmbeddingTable, Glossary, WordKind
from proctext.mining import PivotActionSet
from proctext.parsing import (
    ProtoAction,
    ProtoActionSequence,
    RecipeText,
    parse_recipe,
)

RATINGS_HEADER = ("item_id", "rater_id", "best_model", "worst_model")


class ChangeKind(str, Enum):
    ADD = "add"
    REPLACE = "replace"


@dataclass(frozen=True)
class IngredientRef:
    """An ingredient by display name, optionally tied to a glossary class."""

    name: str
    class_id: Optional[str] = None

    def __post_init__(self):
        if not self.name:
            raise MetricError("ingredient name must be non-empty")

    def to_json(self) -> dict:
        return {"name": self.name, "class_id": self.class_id}

    @classmethod
    def from_json(cls, record: Mapping) -> "IngredientRef":
        return cls(name=record["name"], class_id=record.get("class_id"))


@dataclass(frozen=True)
class DishPair:
    """A base dish and a target dish differing in one principal ingredient."""

    base_dish: str
    target_dish: str
    change_kind: ChangeKind
    added_ingredient: IngredientRef
    removed_ingredient: Optional[IngredientRef] = None

    def __post_init__(self):
        if not self.base_dish or not self.target_dish:
            raise MetricError("dish names must be non-empty")
        if self.change_kind is ChangeKind.REPLACE and self.removed_ingredient is None:
            raise MetricError(
                f"{self.base_dish}->{self.target_dish}: replace pairs need the "
                "ingredient being replaced"
            )
        if self.change_kind is ChangeKind.ADD and self.removed_ingredient is not None:
            raise MetricError(
                f"{self.base_dish}->{self.target_dish}: add pairs must not name "
                "a removed ingredient"
            )

    @property
    def key(self) -> tuple[str, str]:
        return (self.base_dish, self.target_dish)

    def to_json(self) -> dict:
        return {
            "base_dish": self.base_dish,
            "target_dish": self.target_dish,
            "change_kind": self.change_kind.value,
            "added_ingredient": self.added_ingredient.to_json(),
            "removed_ingredient": (
                None if self.removed_ingredient is None else self.removed_ingredient.to_json()
            ),
        }

    @classmethod
    def from_json(cls, record: Mapping) -> "DishPair":
        removed = record.get("removed_ingredient")
        return cls(
            base_dish=record["base_dish"],
            target_dish=record["target_dish"],
            change_kind=ChangeKind(record["change_kind"]),
            added_ingredient=IngredientRef.from_json(record["added_ingredient"]),
            removed_ingredient=None if removed is None else IngredientRef.from_json(removed),
        )


def load_pairs(path) -> list[DishPair]:
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise MetricError(f"{path}: dish pair file must hold a JSON array")
    pairs = [DishPair.from_json(r) for r in records]
    seen = set()
    for pair in pairs:
        if pair.key in seen:
            raise MetricError(f"duplicate dish pair {pair.key}")
        seen.add(pair.key)
    return pairs


def save_pairs(pairs: Sequence[DishPair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([p.to_json() for p in pairs], fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class EvalInstance:
    """One base recipe to rewrite, plus a candidate rewrite once generated."""

    pair_id: str
    pair: DishPair
    base_recipe: RecipeText
    generated_recipe: Optional[RecipeText] = None

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "dish_pair": list(self.pair.key),
            "base_recipe": self.base_recipe.to_json(),
            "generated_recipe": (
                None if self.generated_recipe is None else self.generated_recipe.to_json()
            ),
        }


def write_instances(instances: Iterable[EvalInstance], path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for instance in instances:
            fh.write(json.dumps(instance.to_json(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
            count += 1
    return count


def read_instances(path, pairs: Sequence[DishPair]) -> list[EvalInstance]:
    by_key = {p.key: p for p in pairs}
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                key = tuple(record["dish_pair"])
                if key not in by_key:
                    raise MetricError(f"unknown dish pair {key}")
                generated = record.get("generated_recipe")
                instances.append(
                    EvalInstance(
                        pair_id=record["pair_id"],
                        pair=by_key[key],
                        base_recipe=RecipeText.from_json(record["base_recipe"]),
                        generated_recipe=(
                            None if generated is None else RecipeText.from_json(generated)
                        ),
                    )
                )
            except (json.JSONDecodeError, KeyError, MetricError) as exc:
                raise MetricError(f"{path}:{lineno}: bad instance record ({exc})") from exc
    return instances


@dataclass(frozen=True)
class MetricConfig:
    """Evaluation knobs.

    soft_threshold is the minimum phrase cosine similarity for a soft
    action match; bleu_max_n the highest n-gram order; smoothing either
    "add_one" (add one to numerator and denominator of every order above
    unigrams) or "none"; expand_surface_forms widens ingredient coverage
    from the single display name to all glossary surface forms of its
    class.
    """

    soft_threshold: float = 0.9
    bleu_max_n: int = 4
    smoothing: str = "add_one"
    expand_surface_forms: bool = False

    def __post_init__(self):
        if not 0 < self.soft_threshold <= 1:
            raise MetricError(f"soft_threshold must lie in (0, 1], got {self.soft_threshold}")
        if self.bleu_max_n < 1:
            raise MetricError(f"bleu_max_n must be positive, got {self.bleu_max_n}")
        if self.smoothing not in ("add_one", "none"):
            raise MetricError(f"unknown smoothing {self.smoothing!r}")

    def to_json(self) -> dict:
        return {
            "soft_threshold": self.soft_threshold,
            "bleu_max_n": self.bleu_max_n,
            "smoothing": self.smoothing,
            "expand_surface_forms": self.expand_surface_forms,
        }


_CJK_RANGES = (
    (0x3000, 0x303F),
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xF900, 0xFAFF),
    (0xFF00, 0xFFEF),
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def tokenize_mixed(text: str) -> list[str]:
    """CJK characters as single tokens, everything else split on whitespace."""
    tokens: list[str] = []
    word: list[str] = []
    for ch in text:
        if _is_cjk(ch):
            if word:
                tokens.append("".join(word))
                word = []
            tokens.append(ch)
        elif ch.isspace():
            if word:
                tokens.append("".join(word))
                word = []
        else:
            word.append(ch)
    if word:
        tokens.append("".join(word))
    return tokens


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidate: Sequence[str],
    reference: Sequence[str],
    config: Optional[MetricConfig] = None,
) -> float:
    """Modified n-gram precision BLEU with brevity penalty.

    Precision of order n uses clipped counts over a denominator floored at
    one. With "add_one" smoothing, orders above the unigram add one to
    numerator and denominator; a zero unigram numerator short-circuits to
    zero either way. Uniform weights 1/max_n.
    """
    cfg = config or MetricConfig()
    if not candidate or not reference:
        raise MetricError("bleu needs non-empty candidate and reference token lists")
    max_n = cfg.bleu_max_n
    weight = 1.0 / max_n
    numerators = []
    denominators = []
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        numerators.append(
            sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        )
        denominators.append(max(1, sum(cand_counts.values())))
    if numerators[0] == 0:
        return 0.0
    log_terms = []
    for order, (num, den) in enumerate(zip(numerators, denominators)):
        if cfg.smoothing == "add_one" and order > 0:
            num, den = num + 1, den + 1
        if num == 0:
            return 0.0
        log_terms.append(weight * math.log(num / den))
    c, r = len(candidate), len(reference)
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(math.fsum(log_terms))


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return vectors / safe


def embed_sim_score(
    candidate: Sequence[str],
    reference: Sequence[str],
    embeddings: EmbeddingTable,
) -> float:
    """Greedy embedding-matching F1 between two token lists.

    Each candidate token takes its best cosine against the reference
    tokens and vice versa; the two directional means form an F1. Tokens
    without a vector count as zeros, and negative cosines floor at zero,
    keeping the score in [0, 1].
    """
    if not candidate or not reference:
        return 0.0
    cand = _unit_rows(np.array([embeddings.vector(t) for t in candidate]))
    ref = _unit_rows(np.array([embeddings.vector(t) for t in reference]))
    sims = np.clip(cand @ ref.T, 0.0, None)
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ChangedAction:
    """One inserted or removed action occurrence with its source phrase."""

    action: ProtoAction
    phrase: str
    position: int


@dataclass(frozen=True)
class ChangeSet:
    """Multiset difference between a base and a generated action sequence."""

    inserted: tuple[ChangedAction, ...]
    removed: tuple[ChangedAction, ...]
    generated: ProtoActionSequence

    def __len__(self) -> int:
        return len(self.inserted) + len(self.removed)


def diff_actions(base: ProtoActionSequence, generated: ProtoActionSequence) -> ChangeSet:
    """Inserted and removed proto-actions by multiset difference.

    An action occurring k more times in the generated sequence than in the
    base is inserted k times; the last k occurrences are taken as the
    inserted ones (earlier occurrences stand in for the base's). Removal
    is symmetric on the base side.
    """

    def surplus_occurrences(
        source: ProtoActionSequence, other_counts: Counter
    ) -> list[ChangedAction]:
        counts = Counter(source.protos())
        changed = []
        for proto in counts:
            extra = counts[proto] - other_counts.get(proto, 0)
            if extra <= 0:
                continue
            occurrences = [inst for inst, p in source.actions if p == proto]
            for inst in occurrences[-extra:]:
                changed.append(ChangedAction(proto, inst.clause_text, inst.order_index))
        changed.sort(key=lambda ca: ca.position)
        return changed

    base_counts = Counter(base.protos())
    gen_counts = Counter(generated.protos())
    return ChangeSet(
        inserted=tuple(surplus_occurrences(generated, base_counts)),
        removed=tuple(surplus_occurrences(base, gen_counts)),
        generated=generated,
    )


def check_order(
    action: ProtoAction,
    position: int,
    generated: ProtoActionSequence,
    constraints: Optional[OrderConstraintSet],
) -> bool:
    """Does placing ``action`` at ``position`` respect its mined constraints?

    Every required predecessor that occurs in the generated sequence must
    have an occurrence strictly before the position, every required
    successor one strictly after. Constraint actions absent from the
    sequence are vacuously satisfied, as are actions with no recorded
    constraints.
    """
    if constraints is None or not constraints.has(action):
        return True
    protos = generated.protos()
    for pred in constraints.preds(action):
        positions = [i for i, p in enumerate(protos) if p == pred]
        if positions and min(positions) >= position:
            return False
    for succ in constraints.succs(action):
        positions = [i for i, p in enumerate(protos) if p == succ]
        if positions and max(positions) <= position:
            return False
    return True


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MatchScores:
    """Precision/recall/F1 of a change set against a pivot set."""

    precision: float
    recall: float
    f1: float
    f1_insert: float
    f1_remove: float
    matched_insert: float
    matched_remove: float
    order_checked: int = 0
    order_valid: int = 0
    flags: tuple[str, ...] = ()

    @property
    def order_accuracy(self) -> Optional[float]:
        if self.order_checked == 0:
            return None
        return self.order_valid / self.order_checked

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "f1_insert": self.f1_insert,
            "f1_remove": self.f1_remove,
            "matched_insert": self.matched_insert,
            "matched_remove": self.matched_remove,
            "order_checked": self.order_checked,
            "order_valid": self.order_valid,
            "flags": list(self.flags),
        }


def _assemble_scores(
    matched_insert: float,
    matched_remove: float,
    n_change_insert: int,
    n_change_remove: int,
    n_pivot_insert: int,
    n_pivot_remove: int,
    order_checked: int,
    order_valid: int,
) -> MatchScores:
    flags = []
    n_c = n_change_insert + n_change_remove
    n_p = n_pivot_insert + n_pivot_remove
    if n_c == 0:
        flags.append("empty_changes")
    if n_p == 0:
        flags.append("empty_pivots")
    matched = matched_insert + matched_remove
    precision = matched / n_c if n_c else 0.0
    recall = matched / n_p if n_p else 0.0
    p_ins = matched_insert / n_change_insert if n_change_insert else 0.0
    r_ins = matched_insert / n_pivot_insert if n_pivot_insert else 0.0
    p_rem = matched_remove / n_change_remove if n_change_remove else 0.0
    r_rem = matched_remove / n_pivot_remove if n_pivot_remove else 0.0
    return MatchScores(
        precision=precision,
        recall=recall,
        f1=_f1(precision, recall),
        f1_insert=_f1(p_ins, r_ins),
        f1_remove=_f1(p_rem, r_rem),
        matched_insert=matched_insert,
        matched_remove=matched_remove,
        order_checked=order_checked,
        order_valid=order_valid,
        flags=tuple(flags),
    )


def hard_prf(
    changes: ChangeSet,
    pivots: PivotActionSet,
    constraints: Optional[OrderConstraintSet] = None,
) -> MatchScores:
    """Exact-equality matching between changes and pivots.

    Directional and one-to-one: each insert pivot can be claimed by one
    inserted occurrence of the same proto-action that passes the order
    check, each remove pivot by one removed occurrence. Precision divides
    by the full change multiset, recall by the pivot count.
    """
    order_checked = 0
    order_valid = 0
    matched_insert = 0
    for pivot in set(pivots.insert):
        occurrences = [ca for ca in changes.inserted if ca.action == pivot]
        if not occurrences:
            continue
        valid = [
            ca
            for ca in occurrences
            if check_order(pivot, ca.position, changes.generated, constraints)
        ]
        order_checked += len(occurrences)
        order_valid += len(valid)
        if valid:
            matched_insert += 1
    matched_remove = sum(
        1
        for pivot in set(pivots.remove)
        if any(ca.action == pivot for ca in changes.removed)
    )
    return _assemble_scores(
        matched_insert,
        matched_remove,
        len(changes.inserted),
        len(changes.removed),
        len(set(pivots.insert)),
        len(set(pivots.remove)),
        order_checked,
        order_valid,
    )


def greedy_weight_matching(
    weights: Sequence[Sequence[float]], threshold: float = 0.0
) -> tuple[float, list[tuple[int, int, float]]]:
    """One-to-one matching by descending weight, keeping weights above threshold.

    Deterministic: ties in weight break on the lower row index, then the
    lower column index. Returns the total matched weight and the matched
    (row, column, weight) triples.
    """
    candidates = [
        (w, i, j)
        for i, row in enumerate(weights)
        for j, w in enumerate(row)
        if w > threshold
    ]
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_rows: set[int] = set()
    used_cols: set[int] = set()
    pairs: list[tuple[int, int, float]] = []
    for w, i, j in candidates:
        if i in used_rows or j in used_cols:
            continue
        used_rows.add(i)
        used_cols.add(j)
        pairs.append((i, j, w))
    return math.fsum(w for _, _, w in pairs), pairs


def _phrase_vector(
    phrase: str, embeddings: EmbeddingTable, missing: Optional[set[str]] = None
) -> np.ndarray:
    return embeddings.mean_vector(tokenize_mixed(phrase), missing=missing)


def _cosine(x: np.ndarray, y: np.ndarray) -> float:
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(x @ y) / (nx * ny)


def soft_match(
    changes: ChangeSet,
    pivots: PivotActionSet,
    constraints: Optional[OrderConstraintSet],
    embeddings: EmbeddingTable,
    config: Optional[MetricConfig] = None,
) -> MatchScores:
    """Similarity-weighted matching on top of the hard intersection.

    Hard matches enter first at weight one. Remaining change occurrences
    and pivots on the same side may then pair when the cosine of their
    mean phrase vectors exceeds the soft threshold, added greedily in
    descending similarity, one-to-one, at the similarity as weight.
    Inserted soft matches must pass the order check of the pivot they
    match; pivots without a recorded phrase never soft-match and are
    flagged.
    """
    cfg = config or MetricConfig()
    flags: list[str] = []

    def side_weight(
        occurrences: Sequence[ChangedAction],
        side_pivots: Sequence[ProtoAction],
        ordered: bool,
    ) -> float:
        used_occ: set[int] = set()
        used_piv: set[int] = set()
        weight = 0.0
        # exact matches first, at weight one
        for pi, pivot in enumerate(side_pivots):
            for oi, ca in enumerate(occurrences):
                if oi in used_occ or ca.action != pivot:
                    continue
                if ordered and not check_order(
                    pivot, ca.position, changes.generated, constraints
                ):
                    continue
                used_occ.add(oi)
                used_piv.add(pi)
                weight += 1.0
                break
        # similarity matches among the leftovers
        rows: list[tuple[int, np.ndarray]] = [
            (oi, _phrase_vector(ca.phrase, embeddings))
            for oi, ca in enumerate(occurrences)
            if oi not in used_occ
        ]
        cols: list[tuple[int, Optional[np.ndarray]]] = []
        for pi, pivot in enumerate(side_pivots):
            if pi in used_piv:
                continue
            phrase = pivots.phrase(pivot)
            if not phrase:
                if "missing_pivot_phrase" not in flags:
                    flags.append("missing_pivot_phrase")
                cols.append((pi, None))
            else:
                cols.append((pi, _phrase_vector(phrase, embeddings)))
        matrix = []
        for oi, ovec in rows:
            row = []
            for pi, pvec in cols:
                if pvec is None:
                    row.append(0.0)
                    continue
                sim = _cosine(ovec, pvec)
                if ordered and sim > cfg.soft_threshold:
                    ca = occurrences[oi]
                    pivot = side_pivots[pi]
                    if not check_order(pivot, ca.position, changes.generated, constraints):
                        sim = 0.0
                row.append(sim)
            matrix.append(row)
        extra, _ = greedy_weight_matching(matrix, threshold=cfg.soft_threshold)
        return weight + extra

    insert_pivots = sorted(set(pivots.insert))
    remove_pivots = sorted(set(pivots.remove))
    matched_insert = side_weight(changes.inserted, insert_pivots, ordered=True)
    matched_remove = side_weight(changes.removed, remove_pivots, ordered=False)
    scores = _assemble_scores(
        matched_insert,
        matched_remove,
        len(changes.inserted),
        len(changes.removed),
        len(insert_pivots),
        len(remove_pivots),
        order_checked=0,
        order_valid=0,
    )
    return MatchScores(
        precision=scores.precision,
        recall=scores.recall,
        f1=scores.f1,
        f1_insert=scores.f1_insert,
        f1_remove=scores.f1_remove,
        matched_insert=scores.matched_insert,
        matched_remove=scores.matched_remove,
        order_checked=0,
        order_valid=0,
        flags=tuple(list(scores.flags) + flags),
    )


@dataclass(frozen=True)
class CoverageResult:
    """Ingredient coverage split by the pair's change kind."""

    add: Optional[float]
    replace: Optional[float]
    n_add: int
    n_replace: int

    def to_json(self) -> dict:
        return {
            "add": self.add,
            "replace": self.replace,
            "n_add": self.n_add,
            "n_replace": self.n_replace,
        }


def _mentions(text: str, ingredient: IngredientRef, glossary, expand: bool) -> bool:
    if ingredient.name in text:
        return True
    if expand and glossary is not None and ingredient.class_id is not None:
        if glossary.has_class(WordKind.INGREDIENT, ingredient.class_id):
            return any(
                form in text
                for form in glossary.surface_forms(WordKind.INGREDIENT, ingredient.class_id)
            )
    return False


def coverage_of_ingredients(
    instances: Sequence[EvalInstance],
    glossary: Optional[Glossary] = None,
    expand_surface_forms: bool = False,
) -> CoverageResult:
    """Fraction of generated recipes that mention the pair's new ingredient.

    Membership is a substring test on the generated text, against the
    ingredient's display name by default, or against every glossary
    surface form of its class when expansion is on. Computed separately
    over add-kind and replace-kind instances; a kind with no instances
    reports no value.
    """
    if not instances:
        raise MetricError("coverage needs at least one instance")
    hits = {ChangeKind.ADD: 0, ChangeKind.REPLACE: 0}
    totals = {ChangeKind.ADD: 0, ChangeKind.REPLACE: 0}
    for instance in instances:
        if instance.generated_recipe is None:
            raise MetricError(f"instance {instance.pair_id!r} has no generated recipe")
        kind = instance.pair.change_kind
        totals[kind] += 1
        text = instance.generated_recipe.text()
        if _mentions(text, instance.pair.added_ingredient, glossary, expand_surface_forms):
            hits[kind] += 1
    return CoverageResult(
        add=(hits[ChangeKind.ADD] / totals[ChangeKind.ADD]) if totals[ChangeKind.ADD] else None,
        replace=(
            hits[ChangeKind.REPLACE] / totals[ChangeKind.REPLACE]
            if totals[ChangeKind.REPLACE]
            else None
        ),
        n_add=totals[ChangeKind.ADD],
        n_replace=totals[ChangeKind.REPLACE],
    )


@dataclass(frozen=True)
class InstanceScores:
    pair_id: str
    bleu: float
    embed_sim: float
    hard: MatchScores
    soft: MatchScores
    n_inserted: int
    n_removed: int
    added_covered: bool

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "bleu": self.bleu,
            "embed_sim": self.embed_sim,
            "hard": self.hard.to_json(),
            "soft": self.soft.to_json(),
            "n_inserted": self.n_inserted,
            "n_removed": self.n_removed,
            "added_covered": self.added_covered,
        }


@dataclass(frozen=True)
class EvalReport:
    instances: tuple[InstanceScores, ...]
    aggregate: Mapping[str, Optional[float]]
    flags: Mapping[str, int]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "aggregate": dict(self.aggregate),
            "flags": dict(self.flags),
            "instances": [row.to_json() for row in self.instances],
            "provenance": dict(self.provenance),
        }


PivotsByPair = Union[PivotActionSet, Mapping[tuple[str, str], PivotActionSet]]
ConstraintsByPair = Union[OrderConstraintSet, Mapping[tuple[str, str], OrderConstraintSet]]


def _resolve(artifact, key, what: str):
    if artifact is None:
        return None
    if isinstance(artifact, Mapping):
        if key not in artifact:
            raise MetricError(f"no {what} recorded for dish pair {key}")
        return artifact[key]
    return artifact


def evaluate(
    instances: Sequence[EvalInstance],
    pivots: PivotsByPair,
    constraints: Optional[ConstraintsByPair],
    glossary: Glossary,
    embeddings: EmbeddingTable,
    config: Optional[MetricConfig] = None,
    carry_forward: bool = False,
) -> EvalReport:
    """Score every instance and aggregate by means over instances.

    ``pivots`` and ``constraints`` may be single artifacts (applied to all
    instances) or mappings keyed by (base_dish, target_dish). Aggregation
    ignores undefined values; the order accuracy pools its counts over all
    instances.
    """
    cfg = config or MetricConfig()
    if not instances:
        raise MetricError("nothing to evaluate")
    rows: list[InstanceScores] = []
    flag_counts: Counter = Counter()
    for instance in instances:
        if instance.generated_recipe is None:
            raise MetricError(f"instance {instance.pair_id!r} has no generated recipe")
        pair_pivots = _resolve(pivots, instance.pair.key, "pivot actions")
        pair_constraints = _resolve(constraints, instance.pair.key, "order constraints")
        base_tokens = tokenize_mixed(instance.base_recipe.text())
        gen_tokens = tokenize_mixed(instance.generated_recipe.text())
        base_seq = parse_recipe(instance.base_recipe, glossary, carry_forward=carry_forward)
        gen_seq = parse_recipe(
            instance.generated_recipe, glossary, carry_forward=carry_forward
        )
        changes = diff_actions(base_seq, gen_seq)
        hard = hard_prf(changes, pair_pivots, pair_constraints)
        soft = soft_match(changes, pair_pivots, pair_constraints, embeddings, cfg)
        for flag in hard.flags:
            flag_counts[f"hard_{flag}"] += 1
        for flag in soft.flags:
            flag_counts[f"soft_{flag}"] += 1
        rows.append(
            InstanceScores(
                pair_id=instance.pair_id,
                bleu=bleu(gen_tokens, base_tokens, cfg),
                embed_sim=embed_sim_score(gen_tokens, base_tokens, embeddings),
                hard=hard,
                soft=soft,
                n_inserted=len(changes.inserted),
                n_removed=len(changes.removed),
                added_covered=_mentions(
                    instance.generated_recipe.text(),
                    instance.pair.added_ingredient,
                    glossary,
                    cfg.expand_surface_forms,
                ),
            )
        )

    coverage = coverage_of_ingredients(instances, glossary, cfg.expand_surface_forms)

    def mean_of(values: Sequence[float]) -> Optional[float]:
        return float(np.mean(values)) if values else None

    order_checked = sum(r.hard.order_checked for r in rows)
    order_valid = sum(r.hard.order_valid for r in rows)
    aggregate: dict[str, Optional[float]] = {
        "coi_add": coverage.add,
        "coi_replace": coverage.replace,
        "bleu": mean_of([r.bleu for r in rows]),
        "embed_sim": mean_of([r.embed_sim for r in rows]),
        "hard_precision": mean_of([r.hard.precision for r in rows]),
        "hard_recall": mean_of([r.hard.recall for r in rows]),
        "hard_f1": mean_of([r.hard.f1 for r in rows]),
        "hard_f1_insert": mean_of([r.hard.f1_insert for r in rows]),
        "hard_f1_remove": mean_of([r.hard.f1_remove for r in rows]),
        "soft_precision": mean_of([r.soft.precision for r in rows]),
        "soft_recall": mean_of([r.soft.recall for r in rows]),
        "soft_f1": mean_of([r.soft.f1 for r in rows]),
        "soft_f1_insert": mean_of([r.soft.f1_insert for r in rows]),
        "soft_f1_remove": mean_of([r.soft.f1_remove for r in rows]),
        "order_accuracy": (order_valid / order_checked) if order_checked else None,
    }
    provenance = {
        "config": cfg.to_json(),
        "n_instances": len(rows),
        "n_add_instances": coverage.n_add,
        "n_replace_instances": coverage.n_replace,
        # basename only: reports must not depend on where inputs lived
        "embedding_source": Path(embeddings.source).name if embeddings.source else "",
        "embedding_dimension": embeddings.dimension,
        "soft_order_check_applied": True,
        "carry_forward": carry_forward,
    }
    return EvalReport(
        instances=tuple(rows),
        aggregate=aggregate,
        flags=dict(sorted(flag_counts.items())),
        provenance=provenance,
    )


_REPORT_SECTIONS = (
    ("surface metrics", ("coi_add", "coi_replace", "bleu", "embed_sim")),
    (
        "action metrics (hard)",
        ("hard_precision", "hard_recall", "hard_f1", "hard_f1_insert", "hard_f1_remove"),
    ),
    (
        "action metrics (soft)",
        ("soft_precision", "soft_recall", "soft_f1", "soft_f1_insert", "soft_f1_remove"),
    ),
    ("order", ("order_accuracy",)),
)


def render_report_text(report_json: Mapping) -> str:
    """Aligned plain-text table of a report's aggregate block."""
    aggregate = report_json.get("aggregate", {})
    flags = report_json.get("flags", {})
    n = report_json.get("provenance", {}).get("n_instances", len(report_json.get("instances", ())))
    width = max(len(k) for _, keys in _REPORT_SECTIONS for k in keys)
    lines = [f"evaluation report over {n} instances", ""]
    for title, keys in _REPORT_SECTIONS:
        lines.append(title)
        for key in keys:
            value = aggregate.get(key)
            shown = "   n/a" if value is None else f"{value:.4f}"
            lines.append(f"  {key.ljust(width)}  {shown}")
        lines.append("")
    if flags:
        lines.append("flags")
        for key in sorted(flags):
            lines.append(f"  {key}: {flags[key]}")
        lines.append("")
    return "\n".join(lines)


@dataclass(frozen=True)
class Rating:
    """One best-worst judgment over the compared models."""

    item_id: str
    rater_id: str
    best: str
    worst: str

    def __post_init__(self):
        if self.best == self.worst:
            raise MetricError(
                f"rating on {self.item_id!r} names {self.best!r} as both best and worst"
            )


def read_ratings(path) -> list[Rating]:
    ratings = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RATINGS_HEADER:
            raise MetricError(f"ratings file {path} has header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise MetricError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            ratings.append(Rating(*row))
    return ratings


def bws_score(ratings: Sequence[Rating]) -> dict[str, float]:
    """Best-worst scaling: 100 * (best picks - worst picks) / total ratings."""
    if not ratings:
        raise MetricError("best-worst scaling needs at least one rating")
    best_counts: Counter = Counter(r.best for r in ratings)
    worst_counts: Counter = Counter(r.worst for r in ratings)
    total = len(ratings)
    models = sorted(set(best_counts) | set(worst_counts))
    return {m: 100.0 * (best_counts[m] - worst_counts[m]) / total for m in models}


class CounterfactualEvaluator:
    """Bundles the artifacts needed to score instances repeatedly."""

    def __init__(
        self,
        glossary: Glossary,
        embeddings: EmbeddingTable,
        pivots: PivotsByPair,
        constraints: Optional[ConstraintsByPair] = None,
        config: Optional[MetricConfig] = None,
        carry_forward: bool = False,
    ):
        self.glossary = glossary
        self.embeddings = embeddings
        self.pivots = pivots
        self.constraints = constraints
        self.config = config or MetricConfig()
        self.carry_forward = carry_forward

    def evaluate(self, instances: Sequence[EvalInstance]) -> EvalReport:
        return evaluate(
            instances,
            self.pivots,
            self.constraints,
            self.glossary,
            self.embeddings,
            self.config,
            self.carry_forward,
        )
