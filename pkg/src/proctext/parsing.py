"""Recipe text to canonical action sequences.

A recipe step is split into clauses, each clause is searched for glossary
words, and every clause containing a glossary verb becomes one action
anchored on its leftmost verb. Dropping surface text and sorting the class
sets turns an action instance into a canonical proto-action, so two actions
phrased differently but built from the same word classes compare equal.

The default extractor is rule based (glossary matching inside clauses).
Pre-parsed dependency annotations in CoNLL-U form can be supplied instead,
in which case only noun dependents of the anchor verb contribute ingredient
and tool classes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from proctext.errors import ParseError
from proctext.glossary import Glossary, WordKind
from proctext.validation import check_glossary, check_recipe_texts

CLAUSE_SEPARATORS = "，。；！？、,;."


@dataclass(frozen=True)
class RecipeText:
    """One recipe: an id, an optional dish label, and ordered steps."""

    recipe_id: str
    dish: Optional[str]
    steps: tuple[str, ...]
    title: str = ""

    def __post_init__(self):
        if not self.recipe_id:
            raise ParseError("recipe with empty recipe_id")
        if not self.steps:
            raise ParseError(f"recipe {self.recipe_id!r}: steps must be non-empty")
        for i, step in enumerate(self.steps):
            if not step.strip():
                raise ParseError(f"recipe {self.recipe_id!r}: step {i} is empty")

    def text(self) -> str:
        return "\n".join(self.steps)

    def to_json(self) -> dict:
        return {
            "recipe_id": self.recipe_id,
            "dish": self.dish,
            "title": self.title,
            "steps": list(self.steps),
        }

    @classmethod
    def from_json(cls, record: Mapping) -> "RecipeText":
        try:
            steps = record["steps"]
            recipe_id = record["recipe_id"]
        except KeyError as exc:
            raise ParseError(f"recipe record missing key {exc}") from exc
        if not isinstance(steps, list) or not all(isinstance(s, str) for s in steps):
            raise ParseError(f"recipe {recipe_id!r}: steps must be a list of strings")
        dish = record.get("dish")
        if dish is not None and not isinstance(dish, str):
            raise ParseError(f"recipe {recipe_id!r}: dish must be a string or null")
        return cls(
            recipe_id=str(recipe_id),
            dish=dish,
            steps=tuple(steps),
            title=str(record.get("title", "")),
        )


@dataclass(frozen=True, order=True)
class ProtoAction:
    """Canonical action: a verb class with sorted ingredient and tool classes."""

    verb_class: str
    ingredient_classes: tuple[str, ...] = ()
    tool_classes: tuple[str, ...] = ()

    @classmethod
    def make(
        cls,
        verb_class: str,
        ingredient_classes: Iterable[str] = (),
        tool_classes: Iterable[str] = (),
    ) -> "ProtoAction":
        return cls(
            verb_class=verb_class,
            ingredient_classes=tuple(sorted(set(ingredient_classes))),
            tool_classes=tuple(sorted(set(tool_classes))),
        )

    def key(self) -> str:
        """Unique canonical string, usable as a map key in artifacts."""
        return "|".join(
            (self.verb_class, ",".join(self.ingredient_classes), ",".join(self.tool_classes))
        )

    def to_json(self) -> dict:
        return {
            "verb": self.verb_class,
            "ingredients": list(self.ingredient_classes),
            "tools": list(self.tool_classes),
        }

    @classmethod
    def from_json(cls, record: Mapping) -> "ProtoAction":
        return cls.make(record["verb"], record.get("ingredients", ()), record.get("tools", ()))


@dataclass(frozen=True)
class ActionInstance:
    """One extracted action occurrence, with its surface phrase and position."""

    verb_surface: str
    verb_class: str
    ingredient_classes: frozenset[str]
    tool_classes: frozenset[str]
    clause_text: str
    step_index: int
    order_index: int


def to_proto(instance: ActionInstance) -> ProtoAction:
    """Drop surface text and position, keeping only the canonical class triple."""
    return ProtoAction.make(
        instance.verb_class, instance.ingredient_classes, instance.tool_classes
    )


@dataclass(frozen=True)
class ProtoActionSequence:
    """A recipe's actions in extraction order, paired with their proto forms."""

    recipe_id: str
    actions: tuple[tuple[ActionInstance, ProtoAction], ...]

    def __post_init__(self):
        for expected, (instance, _) in enumerate(self.actions):
            if instance.order_index != expected:
                raise ParseError(
                    f"recipe {self.recipe_id!r}: action order_index {instance.order_index} "
                    f"at position {expected}"
                )

    def __len__(self) -> int:
        return len(self.actions)

    def protos(self) -> tuple[ProtoAction, ...]:
        return tuple(proto for _, proto in self.actions)

    def instances(self) -> tuple[ActionInstance, ...]:
        return tuple(instance for instance, _ in self.actions)

    def to_json(self) -> dict:
        return {
            "recipe_id": self.recipe_id,
            "actions": [
                {
                    **proto.to_json(),
                    "verb_surface": inst.verb_surface,
                    "clause": inst.clause_text,
                    "step_index": inst.step_index,
                    "order_index": inst.order_index,
                }
                for inst, proto in self.actions
            ],
        }

    @classmethod
    def from_json(cls, record: Mapping) -> "ProtoActionSequence":
        actions = []
        for entry in record["actions"]:
            proto = ProtoAction.from_json(entry)
            inst = ActionInstance(
                verb_surface=entry["verb_surface"],
                verb_class=proto.verb_class,
                ingredient_classes=frozenset(entry.get("ingredients", ())),
                tool_classes=frozenset(entry.get("tools", ())),
                clause_text=entry["clause"],
                step_index=entry["step_index"],
                order_index=entry["order_index"],
            )
            actions.append((inst, proto))
        return cls(recipe_id=record["recipe_id"], actions=tuple(actions))


def segment_clauses(step_text: str) -> list[str]:
    """Split a step on clause punctuation, preserving order.

    Separators are the Chinese and ASCII clause marks in
    ``CLAUSE_SEPARATORS``. Empty segments are dropped, everything else is
    kept verbatim, so joining the clauses reproduces the input minus its
    separators.
    """
    clauses: list[str] = []
    current: list[str] = []
    for ch in step_text:
        if ch in CLAUSE_SEPARATORS:
            if current:
                clauses.append("".join(current))
                current = []
        else:
            current.append(ch)
    if current:
        clauses.append("".join(current))
    return clauses


@dataclass(frozen=True)
class ParseToken:
    """One token of a pre-parsed clause (CoNLL-U subset)."""

    token_id: int
    form: str
    upos: str
    head: int


_NOUN_TAGS = frozenset({"NOUN", "PROPN", "_", ""})


def load_conllu(path) -> dict[str, list[list[ParseToken]]]:
    """Read dependency annotations keyed by recipe id and clause index.

    Each sentence must carry ``# recipe_id = ...`` and ``# clause_index =
    ...`` comments; clause indices must run 0..n-1 per recipe. Only the ID,
    FORM, UPOS, and HEAD columns are used.
    """
    sentences: dict[str, dict[int, list[ParseToken]]] = {}
    recipe_id: Optional[str] = None
    clause_index: Optional[int] = None
    tokens: list[ParseToken] = []

    def flush(lineno: int) -> None:
        nonlocal recipe_id, clause_index, tokens
        if not tokens and recipe_id is None:
            return
        if recipe_id is None or clause_index is None:
            raise ParseError(f"{path}:{lineno}: sentence missing recipe_id or clause_index")
        per_recipe = sentences.setdefault(recipe_id, {})
        if clause_index in per_recipe:
            raise ParseError(
                f"{path}:{lineno}: duplicate clause_index {clause_index} for {recipe_id!r}"
            )
        per_recipe[clause_index] = tokens
        recipe_id, clause_index, tokens = None, None, []

    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read annotation file {path}: {exc}") from exc
    lineno = 0
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                flush(lineno)
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    key, value = key.strip(), value.strip()
                    if key == "recipe_id":
                        recipe_id = value
                    elif key == "clause_index":
                        try:
                            clause_index = int(value)
                        except ValueError as exc:
                            raise ParseError(
                                f"{path}:{lineno}: clause_index must be an integer"
                            ) from exc
                continue
            cols = line.split("\t")
            if len(cols) < 7:
                raise ParseError(f"{path}:{lineno}: expected at least 7 tab-separated columns")
            if "-" in cols[0] or "." in cols[0]:
                continue  # multiword and empty nodes carry no dependency info we use
            try:
                tokens.append(
                    ParseToken(
                        token_id=int(cols[0]),
                        form=cols[1],
                        upos=cols[3],
                        head=int(cols[6]),
                    )
                )
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: malformed token line") from exc
        flush(lineno + 1)

    result: dict[str, list[list[ParseToken]]] = {}
    for rid, clauses in sentences.items():
        indices = sorted(clauses)
        if indices != list(range(len(indices))):
            raise ParseError(f"{path}: clause indices for {rid!r} are not contiguous from 0")
        result[rid] = [clauses[i] for i in indices]
    return result


def _action_from_scan(
    clause: str, glossary: Glossary
) -> Optional[tuple[str, str, set[str], set[str]]]:
    hits = glossary.find_terms(clause)
    verb: Optional[tuple[str, str]] = None
    ingredients: set[str] = set()
    tools: set[str] = set()
    for _, form, kind, class_id in hits:
        if kind is WordKind.VERB:
            if verb is None:
                verb = (form, class_id)
        elif kind is WordKind.INGREDIENT:
            ingredients.add(class_id)
        else:
            tools.add(class_id)
    if verb is None:
        return None
    return verb[0], verb[1], ingredients, tools


def _action_from_parse(
    tokens: Sequence[ParseToken], glossary: Glossary
) -> Optional[tuple[str, str, set[str], set[str]]]:
    anchor: Optional[ParseToken] = None
    for token in tokens:
        if glossary.lookup(WordKind.VERB, token.form) is not None:
            anchor = token
            break
    if anchor is None:
        return None
    verb_class = glossary.lookup(WordKind.VERB, anchor.form)
    assert verb_class is not None
    ingredients: set[str] = set()
    tools: set[str] = set()
    for token in tokens:
        if token.head != anchor.token_id or token.upos not in _NOUN_TAGS:
            continue
        ing = glossary.lookup(WordKind.INGREDIENT, token.form)
        if ing is not None:
            ingredients.add(ing)
            continue
        tool = glossary.lookup(WordKind.TOOL, token.form)
        if tool is not None:
            tools.add(tool)
    return anchor.form, verb_class, ingredients, tools


def extract_actions(
    recipe: RecipeText,
    glossary: Glossary,
    parses: Optional[Sequence[Sequence[ParseToken]]] = None,
    carry_forward: bool = False,
) -> list[ActionInstance]:
    """Extract one action per clause that contains a glossary verb.

    The action anchors on the leftmost glossary verb of the clause; later
    verbs in the same clause are ignored. Without annotations, every
    glossary ingredient and tool in the clause joins the action. With
    ``parses`` (one parsed token list per clause, across all steps), only
    noun dependents of the anchor verb join. Clauses without a glossary
    verb yield nothing.

    ``carry_forward`` attaches the most recent preceding non-empty
    ingredient set to actions that mention no ingredient, a repair for the
    object omission common in informal Chinese recipes. Off by default.
    """
    clause_records: list[tuple[int, str]] = []
    for step_index, step in enumerate(recipe.steps):
        for clause in segment_clauses(step):
            clause_records.append((step_index, clause))
    if parses is not None and len(parses) != len(clause_records):
        raise ParseError(
            f"recipe {recipe.recipe_id!r}: {len(parses)} parsed clauses for "
            f"{len(clause_records)} text clauses"
        )

    actions: list[ActionInstance] = []
    last_ingredients: frozenset[str] = frozenset()
    for clause_index, (step_index, clause) in enumerate(clause_records):
        if parses is not None:
            found = _action_from_parse(parses[clause_index], glossary)
        else:
            found = _action_from_scan(clause, glossary)
        if found is None:
            continue
        verb_surface, verb_class, ingredients, tools = found
        ingredient_set = frozenset(ingredients)
        if carry_forward and not ingredient_set:
            ingredient_set = last_ingredients
        elif ingredient_set:
            last_ingredients = ingredient_set
        actions.append(
            ActionInstance(
                verb_surface=verb_surface,
                verb_class=verb_class,
                ingredient_classes=ingredient_set,
                tool_classes=frozenset(tools),
                clause_text=clause,
                step_index=step_index,
                order_index=len(actions),
            )
        )
    return actions


def parse_recipe(
    recipe: RecipeText,
    glossary: Glossary,
    parses: Optional[Sequence[Sequence[ParseToken]]] = None,
    carry_forward: bool = False,
) -> ProtoActionSequence:
    """Segment, extract, and canonicalize a recipe into a proto-action sequence."""
    instances = extract_actions(recipe, glossary, parses=parses, carry_forward=carry_forward)
    return ProtoActionSequence(
        recipe_id=recipe.recipe_id,
        actions=tuple((inst, to_proto(inst)) for inst in instances),
    )


def write_sequences_jsonl(sequences: Iterable[ProtoActionSequence], path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(json.dumps(seq.to_json(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
            count += 1
    return count


def read_sequences_jsonl(path) -> list[ProtoActionSequence]:
    sequences = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                sequences.append(ProtoActionSequence.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed sequence record ({exc})") from exc
    return sequences


class RecipeActionParser(TransformerMixin, BaseEstimator):
    """Stateless transformer from recipe texts to proto-action sequences.

    Parameters
    ----------
    glossary : Glossary
        Word-class glossary used for matching.
    carry_forward : bool, default False
        Repair ingredient omission by carrying the most recent ingredient
        set onto ingredient-less actions.
    """

    def __init__(self, glossary=None, carry_forward=False):
        self.glossary = glossary
        self.carry_forward = carry_forward

    def fit(self, X=None, y=None):
        check_glossary(self.glossary)
        self.n_features_in_ = 0
        return self

    def transform(self, X) -> list[ProtoActionSequence]:
        glossary = check_glossary(self.glossary)
        recipes = check_recipe_texts(X)
        return [
            parse_recipe(recipe, glossary, carry_forward=self.carry_forward)
            for recipe in recipes
        ]
