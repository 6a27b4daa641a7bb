"""Pivot action mining between a pair of dishes.

Given parsed recipes of a base dish and a target dish, every action is
scored by its document frequency on each side (fraction of recipes
containing it at least once). Actions much more frequent on one side are
candidates to remove or insert when rewriting a base recipe into the
target dish; imbalanced actions that miss the rate thresholds go to a
human annotation queue, and a majority vote over the returned labels
finalizes the pivot set.

Rates are proportions, not occurrence counts, and the ratio tests use
strict inequalities with multiplication (base_rate > ratio * target_rate)
so a zero rate needs no special case.
"""

from __future__ import annotations

import csv
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from sklearn.base import BaseEstimator

from proctext.errors import MiningError
from proctext.parsing import ProtoAction, ProtoActionSequence
from proctext.validation import check_dish_labels, check_sequences

QUEUE_HEADER = ("action_id", "phrase_1", "phrase_2", "phrase_3", "flag")
RESULTS_HEADER = ("action_id", "annotator_id", "label")


class VoteLabel(str, Enum):
    DOES_NOT_OCCUR = "does_not_occur"
    RARELY_OCCUR = "rarely_occur"
    SOMETIMES_OCCUR = "sometimes_occur"
    ALWAYS_OCCUR = "always_occur"


@dataclass(frozen=True)
class MiningConfig:
    """Thresholds for the frequency-ratio categorization.

    freq_ratio is the imbalance factor between the two dishes' rates;
    remove_ceiling is the highest target-side rate an auto-remove action
    may have; insert_floor is the lowest target-side rate an auto-insert
    action must exceed.
    """

    freq_ratio: float = 5.0
    remove_ceiling: float = 0.01
    insert_floor: float = 0.1
    min_votes: int = 3

    def __post_init__(self):
        if not self.freq_ratio > 1:
            raise MiningError(f"freq_ratio must exceed 1, got {self.freq_ratio}")
        for name in ("remove_ceiling", "insert_floor"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise MiningError(f"{name} must lie in (0, 1), got {value}")
        if not self.remove_ceiling < self.insert_floor:
            raise MiningError(
                f"remove_ceiling ({self.remove_ceiling}) must be below "
                f"insert_floor ({self.insert_floor})"
            )
        if self.min_votes < 1:
            raise MiningError(f"min_votes must be positive, got {self.min_votes}")

    def to_json(self) -> dict:
        return {
            "freq_ratio": self.freq_ratio,
            "remove_ceiling": self.remove_ceiling,
            "insert_floor": self.insert_floor,
            "min_votes": self.min_votes,
        }


@dataclass(frozen=True)
class ActionFrequency:
    action: ProtoAction
    base_rate: float
    target_rate: float
    base_recipes: int
    target_recipes: int

    def __post_init__(self):
        for name in ("base_rate", "target_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise MiningError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class PivotCategorization:
    """Disjoint outcome sets of the threshold tests; anything else was discarded."""

    remove: tuple[ProtoAction, ...]
    insert: tuple[ProtoAction, ...]
    manual_check: tuple[ProtoAction, ...]

    def __post_init__(self):
        groups = (set(self.remove), set(self.insert), set(self.manual_check))
        total = len(self.remove) + len(self.insert) + len(self.manual_check)
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise MiningError("remove/insert/manual_check sets must be disjoint")


@dataclass(frozen=True)
class PivotActionSet:
    """Finalized remove and insert actions for one dish pair.

    ``phrases`` keeps one representative clause per action (its most
    frequent realization in the pair's recipes) for similarity-based
    matching at evaluation time.
    """

    dish_pair: tuple[str, str]
    remove: tuple[ProtoAction, ...]
    insert: tuple[ProtoAction, ...]
    phrases: Mapping[str, str] = field(default_factory=dict)
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.remove) & set(self.insert):
            raise MiningError("remove and insert sets must be disjoint")

    def phrase(self, action: ProtoAction) -> str:
        return self.phrases.get(action.key(), "")

    def to_json(self) -> dict:
        return {
            "dish_pair": list(self.dish_pair),
            "remove": [a.to_json() for a in self.remove],
            "insert": [a.to_json() for a in self.insert],
            "phrases": dict(sorted(self.phrases.items())),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_json(cls, record: Mapping) -> "PivotActionSet":
        pair = record["dish_pair"]
        return cls(
            dish_pair=(str(pair[0]), str(pair[1])),
            remove=tuple(ProtoAction.from_json(a) for a in record["remove"]),
            insert=tuple(ProtoAction.from_json(a) for a in record["insert"]),
            phrases=dict(record.get("phrases", {})),
            provenance=dict(record.get("provenance", {})),
        )


def save_pivots(pivots: PivotActionSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pivots.to_json(), fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def load_pivots(path) -> PivotActionSet:
    with open(path, encoding="utf-8") as fh:
        return PivotActionSet.from_json(json.load(fh))


def count_documents(recipes: Sequence[ProtoActionSequence]) -> Counter:
    """Number of recipes containing each proto-action at least once."""
    counts: Counter = Counter()
    for seq in recipes:
        counts.update(set(seq.protos()))
    return counts


def action_frequency(recipes: Sequence[ProtoActionSequence], action: ProtoAction) -> float:
    """Fraction of recipes containing at least one instance of the action."""
    if not recipes:
        raise MiningError("cannot compute a frequency over zero recipes")
    hits = sum(1 for seq in recipes if action in seq.protos())
    return hits / len(recipes)


def pair_frequencies(
    base_recipes: Sequence[ProtoActionSequence],
    target_recipes: Sequence[ProtoActionSequence],
) -> list[ActionFrequency]:
    """Frequency table over every action seen in either dish of the pair."""
    if not base_recipes or not target_recipes:
        raise MiningError("both dishes need at least one recipe")
    base_counts = count_documents(base_recipes)
    target_counts = count_documents(target_recipes)
    n_b, n_t = len(base_recipes), len(target_recipes)
    actions = sorted(set(base_counts) | set(target_counts))
    return [
        ActionFrequency(
            action=a,
            base_rate=base_counts.get(a, 0) / n_b,
            target_rate=target_counts.get(a, 0) / n_t,
            base_recipes=n_b,
            target_recipes=n_t,
        )
        for a in actions
    ]


def categorize(
    frequencies: Sequence[ActionFrequency], config: Optional[MiningConfig] = None
) -> PivotCategorization:
    """Sort actions into remove/insert/manual-check by rate imbalance.

    An action is removed when the base rate dwarfs the target rate and the
    target rate sits under the remove ceiling; inserted when the target
    rate dwarfs the base rate and clears the insert floor; queued for a
    manual check when one rate dwarfs the other but the threshold test
    fails; discarded otherwise. All comparisons are strict.
    """
    cfg = config or MiningConfig()
    remove: list[ProtoAction] = []
    insert: list[ProtoAction] = []
    manual: list[ProtoAction] = []
    for freq in frequencies:
        f_b, f_t = freq.base_rate, freq.target_rate
        base_heavy = f_b > cfg.freq_ratio * f_t
        target_heavy = f_t > cfg.freq_ratio * f_b
        if base_heavy and f_t < cfg.remove_ceiling:
            remove.append(freq.action)
        elif target_heavy and f_t > cfg.insert_floor:
            insert.append(freq.action)
        elif base_heavy or target_heavy:
            manual.append(freq.action)
    return PivotCategorization(
        remove=tuple(remove), insert=tuple(insert), manual_check=tuple(manual)
    )


def representative_phrases(
    actions: Iterable[ProtoAction], recipes: Sequence[ProtoActionSequence]
) -> dict[str, str]:
    """Most frequent clause realization of each action; ties break lexicographically."""
    wanted = set(actions)
    realizations: dict[ProtoAction, Counter] = {a: Counter() for a in wanted}
    for seq in recipes:
        for inst, proto in seq.actions:
            if proto in wanted:
                realizations[proto][inst.clause_text] += 1
    phrases: dict[str, str] = {}
    for action, counter in realizations.items():
        if counter:
            top = max(counter.values())
            phrases[action.key()] = min(c for c, n in counter.items() if n == top)
    return phrases


@dataclass(frozen=True)
class QueueEntry:
    """One row of the annotation queue: an action and three sample phrases."""

    action_id: str
    action: ProtoAction
    phrases: tuple[str, str, str]
    flag: str = ""


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotator's vote on one queued action."""

    action_id: str
    annotator_id: str
    label: VoteLabel


def _occurrence_phrases(
    action: ProtoAction, recipes: Sequence[ProtoActionSequence]
) -> list[str]:
    phrases = []
    for seq in recipes:
        for inst, proto in seq.actions:
            if proto == action:
                phrases.append(inst.clause_text)
    return phrases


def export_annotation_queue(
    categorization: PivotCategorization,
    target_recipes: Sequence[ProtoActionSequence],
    queue_path,
    companion_path,
    base_recipes: Sequence[ProtoActionSequence] = (),
    seed: int = 0,
    id_prefix: str = "act",
) -> int:
    """Write the manual-check actions as a CSV queue plus an id-to-action map.

    Each queued action gets three sample phrases drawn from target-dish
    recipes, falling back to base-dish recipes when the target side has no
    occurrence; the flag column records the fallback ("base_sampled") and
    duplication when fewer than three distinct phrases exist
    ("duplicated_samples"). Deterministic for a fixed seed.
    """
    rng = random.Random(seed)
    entries: list[QueueEntry] = []
    for index, action in enumerate(sorted(categorization.manual_check)):
        flags = []
        pool = sorted(set(_occurrence_phrases(action, target_recipes)))
        if not pool:
            pool = sorted(set(_occurrence_phrases(action, base_recipes)))
            if not pool:
                raise MiningError(
                    f"queued action {action.key()!r} never occurs in either dish"
                )
            flags.append("base_sampled")
        if len(pool) >= 3:
            samples = tuple(rng.sample(pool, 3))
        else:
            samples = tuple(rng.choices(pool, k=3))
            flags.append("duplicated_samples")
        entries.append(
            QueueEntry(
                action_id=f"{id_prefix}{index:04d}",
                action=action,
                phrases=samples,  # type: ignore[arg-type]
                flag=";".join(flags),
            )
        )

    with open(queue_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(QUEUE_HEADER)
        for entry in entries:
            writer.writerow([entry.action_id, *entry.phrases, entry.flag])
    with open(companion_path, "w", encoding="utf-8") as fh:
        json.dump(
            {e.action_id: e.action.to_json() for e in entries},
            fh,
            ensure_ascii=False,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return len(entries)


def read_annotation_queue(queue_path, companion_path) -> list[QueueEntry]:
    with open(companion_path, encoding="utf-8") as fh:
        id_map = {k: ProtoAction.from_json(v) for k, v in json.load(fh).items()}
    entries = []
    with open(queue_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != QUEUE_HEADER:
            raise MiningError(f"queue file {queue_path} has header {header}")
        for row in reader:
            if len(row) != len(QUEUE_HEADER):
                raise MiningError(f"queue row with {len(row)} fields: {row!r}")
            action_id = row[0]
            if action_id not in id_map:
                raise MiningError(f"queue row {action_id!r} missing from companion map")
            entries.append(
                QueueEntry(
                    action_id=action_id,
                    action=id_map[action_id],
                    phrases=(row[1], row[2], row[3]),
                    flag=row[4],
                )
            )
    return entries


def read_annotation_results(path) -> list[AnnotationRecord]:
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RESULTS_HEADER:
            raise MiningError(f"results file {path} has header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise MiningError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                label = VoteLabel(row[2])
            except ValueError as exc:
                raise MiningError(f"{path}:{lineno}: unknown label {row[2]!r}") from exc
            records.append(AnnotationRecord(row[0], row[1], label))
    return records


def collect_votes(
    records: Sequence[AnnotationRecord], id_map: Mapping[str, ProtoAction]
) -> dict[ProtoAction, list[VoteLabel]]:
    votes: dict[ProtoAction, list[VoteLabel]] = {}
    for record in records:
        if record.action_id not in id_map:
            raise MiningError(f"vote for unknown action_id {record.action_id!r}")
        votes.setdefault(id_map[record.action_id], []).append(record.label)
    return votes


def import_annotations(
    categorization: PivotCategorization,
    votes: Mapping[ProtoAction, Sequence[VoteLabel]],
    dish_pair: tuple[str, str],
    config: Optional[MiningConfig] = None,
    phrases: Optional[Mapping[str, str]] = None,
) -> PivotActionSet:
    """Resolve manual-check votes and assemble the final pivot set.

    Automatic remove/insert actions pass through untouched. A voted action
    joins the remove set when strictly more than half its votes say it
    does not occur in the target dish, the insert set when strictly more
    than half say it always occurs, and is dropped otherwise. Unvoted
    manual-check actions are dropped and counted in provenance.
    """
    cfg = config or MiningConfig()
    manual = set(categorization.manual_check)
    for action in votes:
        if action not in manual:
            raise MiningError(f"votes supplied for non-queued action {action.key()!r}")
    remove = list(categorization.remove)
    insert = list(categorization.insert)
    vote_counts: dict[str, dict[str, int]] = {}
    resolved = {"remove": 0, "insert": 0, "discarded": 0, "unvoted": 0}
    for action in sorted(manual):
        ballot = list(votes.get(action, ()))
        if not ballot:
            resolved["unvoted"] += 1
            continue
        if len(ballot) < cfg.min_votes:
            raise MiningError(
                f"action {action.key()!r} has {len(ballot)} votes, "
                f"needs at least {cfg.min_votes}"
            )
        tally = Counter(label.value for label in ballot)
        vote_counts[action.key()] = dict(sorted(tally.items()))
        n = len(ballot)
        if 2 * tally[VoteLabel.DOES_NOT_OCCUR.value] > n:
            remove.append(action)
            resolved["remove"] += 1
        elif 2 * tally[VoteLabel.ALWAYS_OCCUR.value] > n:
            insert.append(action)
            resolved["insert"] += 1
        else:
            resolved["discarded"] += 1
    provenance = {
        "config": cfg.to_json(),
        "vote_counts": vote_counts,
        "auto_remove": len(categorization.remove),
        "auto_insert": len(categorization.insert),
        "voted_remove": resolved["remove"],
        "voted_insert": resolved["insert"],
        "voted_discarded": resolved["discarded"],
        "unvoted": resolved["unvoted"],
    }
    return PivotActionSet(
        dish_pair=dish_pair,
        remove=tuple(sorted(remove)),
        insert=tuple(sorted(insert)),
        phrases=dict(phrases or {}),
        provenance=provenance,
    )


class PivotActionMiner(BaseEstimator):
    """Estimator facade over the frequency categorization.

    fit() takes parsed recipe sequences X and a label per sequence in
    y ("base" or "target") and exposes the frequency table and the
    categorization as fitted attributes.
    """

    def __init__(self, freq_ratio=5.0, remove_ceiling=0.01, insert_floor=0.1):
        self.freq_ratio = freq_ratio
        self.remove_ceiling = remove_ceiling
        self.insert_floor = insert_floor

    def _config(self) -> MiningConfig:
        return MiningConfig(
            freq_ratio=self.freq_ratio,
            remove_ceiling=self.remove_ceiling,
            insert_floor=self.insert_floor,
        )

    def fit(self, X, y):
        sequences = check_sequences(X)
        labels = check_dish_labels(y, len(sequences))
        base = [s for s, lab in zip(sequences, labels) if lab == "base"]
        target = [s for s, lab in zip(sequences, labels) if lab == "target"]
        config = self._config()
        self.frequencies_ = pair_frequencies(base, target)
        self.categorization_ = categorize(self.frequencies_, config)
        self.n_features_in_ = 0
        return self

    def pivot_set(
        self,
        dish_pair: tuple[str, str],
        votes: Optional[Mapping[ProtoAction, Sequence[VoteLabel]]] = None,
        phrases: Optional[Mapping[str, str]] = None,
    ) -> PivotActionSet:
        if not hasattr(self, "categorization_"):
            raise MiningError("miner is not fitted; call fit first")
        return import_annotations(
            self.categorization_, votes or {}, dish_pair, self._config(), phrases
        )
