"""Word-class glossary and static embedding table.

The glossary normalizes the many surface forms of verbs, ingredients, and
cooking tools into classes. It is an authored input artifact: the toolkit
loads it, indexes it, and offers a K-means helper for authoring new classes,
but never mines classes at runtime.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from proctext.errors import GlossaryError


class WordKind(str, Enum):
    VERB = "verb"
    INGREDIENT = "ingredient"
    TOOL = "tool"


@dataclass(frozen=True)
class WordClass:
    """One class of interchangeable surface forms.

    ``surface_forms`` always contains ``canonical``; forms are stored
    verbatim, matching happens at lookup time.
    """

    class_id: str
    kind: WordKind
    canonical: str
    surface_forms: frozenset[str]

    def __post_init__(self):
        if not self.class_id:
            raise GlossaryError("word class with empty class_id")
        if not self.canonical:
            raise GlossaryError(f"class {self.class_id!r}: empty canonical form")
        if not self.surface_forms or self.canonical not in self.surface_forms:
            raise GlossaryError(
                f"class {self.class_id!r}: surface_forms must be non-empty "
                "and contain the canonical form"
            )


class Glossary:
    """Immutable lookup structure over word classes.

    The index maps ``(kind, surface form)`` to exactly one class id; a
    surface form listed under two classes of the same kind is rejected at
    construction time.
    """

    def __init__(self, classes: Iterable[WordClass]):
        self._classes: dict[tuple[WordKind, str], WordClass] = {}
        self._index: dict[tuple[WordKind, str], str] = {}
        for cls in classes:
            key = (cls.kind, cls.class_id)
            if key in self._classes:
                raise GlossaryError(
                    f"duplicate class_id {cls.class_id!r} for kind {cls.kind.value}"
                )
            self._classes[key] = cls
            for form in cls.surface_forms:
                form_key = (cls.kind, form)
                other = self._index.get(form_key)
                if other is not None:
                    raise GlossaryError(
                        f"surface form {form!r} appears in two {cls.kind.value} "
                        f"classes: {other!r} and {cls.class_id!r}"
                    )
                self._index[form_key] = cls.class_id
        # Longest-first form lists drive the longest-match text scan.
        self._forms_by_length: dict[WordKind, list[str]] = {k: [] for k in WordKind}
        for kind, form in self._index:
            self._forms_by_length[kind].append(form)
        for forms in self._forms_by_length.values():
            forms.sort(key=lambda f: (-len(f), f))

    def __len__(self) -> int:
        return len(self._classes)

    def __iter__(self) -> Iterator[WordClass]:
        return iter(sorted(self._classes.values(), key=lambda c: (c.kind.value, c.class_id)))

    def lookup(self, kind: WordKind, token: str) -> Optional[str]:
        """Return the class id containing ``token`` for ``kind``, or None."""
        return self._index.get((kind, token))

    def word_class(self, kind: WordKind, class_id: str) -> WordClass:
        try:
            return self._classes[(kind, class_id)]
        except KeyError:
            raise GlossaryError(f"unknown {kind.value} class {class_id!r}") from None

    def has_class(self, kind: WordKind, class_id: str) -> bool:
        return (kind, class_id) in self._classes

    def surface_forms(self, kind: WordKind, class_id: str) -> frozenset[str]:
        return self.word_class(kind, class_id).surface_forms

    def find_terms(self, text: str) -> list[tuple[int, str, WordKind, str]]:
        """Scan ``text`` for glossary forms, longest match first.

        Returns ``(position, surface form, kind, class_id)`` tuples in text
        order. The scan consumes matched spans left to right, so a short form
        inside a longer one is not reported separately. When forms of equal
        length from different kinds start at the same position, verbs win
        over ingredients, ingredients over tools.
        """
        kind_priority = {WordKind.VERB: 0, WordKind.INGREDIENT: 1, WordKind.TOOL: 2}
        hits: list[tuple[int, str, WordKind, str]] = []
        i = 0
        n = len(text)
        while i < n:
            best: Optional[tuple[int, int, str, WordKind]] = None
            for kind in WordKind:
                for form in self._forms_by_length[kind]:
                    if text.startswith(form, i):
                        cand = (-len(form), kind_priority[kind], form, kind)
                        if best is None or cand < best:
                            best = cand
                        break  # forms are longest-first within a kind
            if best is None:
                i += 1
                continue
            _, _, form, kind = best
            hits.append((i, form, kind, self._index[(kind, form)]))
            i += len(form)
        return hits

    def to_records(self) -> list[dict]:
        return [
            {
                "class_id": cls.class_id,
                "kind": cls.kind.value,
                "canonical": cls.canonical,
                "surface_forms": sorted(cls.surface_forms),
            }
            for cls in self
        ]


def _class_from_record(record: Mapping, where: str) -> WordClass:
    try:
        kind = WordKind(record["kind"])
        class_id = record["class_id"]
        canonical = record["canonical"]
        forms = record["surface_forms"]
    except (KeyError, ValueError) as exc:
        raise GlossaryError(f"{where}: malformed glossary record ({exc})") from exc
    if not isinstance(forms, list) or not all(isinstance(f, str) for f in forms):
        raise GlossaryError(f"{where}: surface_forms must be a list of strings")
    return WordClass(
        class_id=str(class_id),
        kind=kind,
        canonical=str(canonical),
        surface_forms=frozenset(forms) | {str(canonical)},
    )


def load_glossary(path) -> Glossary:
    """Load a glossary from its JSON file format.

    The file is a UTF-8 JSON array of objects with keys ``class_id``,
    ``kind`` (verb|ingredient|tool), ``canonical``, and ``surface_forms``.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise GlossaryError(f"cannot read glossary file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise GlossaryError(f"glossary file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise GlossaryError(f"glossary file {path}: top level must be an array")
    classes = [_class_from_record(rec, f"{path}[{i}]") for i, rec in enumerate(data)]
    return Glossary(classes)


def save_glossary(glossary: Glossary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(glossary.to_records(), fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class EmbeddingTable:
    """Static token embeddings used by the similarity metrics.

    Tokens missing from the table contribute zero vectors; callers collect
    the missing tokens so coverage gaps show up in diagnostics instead of
    being silently dropped.
    """

    dimension: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    source: str = ""

    def __post_init__(self):
        if self.dimension <= 0:
            raise GlossaryError("embedding dimension must be positive")
        for token, vec in self.vectors.items():
            if vec.shape != (self.dimension,):
                raise GlossaryError(
                    f"token {token!r}: vector length {vec.shape} != dimension {self.dimension}"
                )
            if not np.all(np.isfinite(vec)):
                raise GlossaryError(f"token {token!r}: vector has non-finite values")

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def get(self, token: str) -> Optional[np.ndarray]:
        return self.vectors.get(token)

    def vector(self, token: str) -> np.ndarray:
        """Vector for ``token``, zero if missing."""
        vec = self.vectors.get(token)
        if vec is None:
            return np.zeros(self.dimension)
        return vec

    def mean_vector(self, tokens: Sequence[str], missing: Optional[set[str]] = None) -> np.ndarray:
        """Mean of the token vectors; missing tokens count as zero vectors."""
        if not tokens:
            return np.zeros(self.dimension)
        total = np.zeros(self.dimension)
        for token in tokens:
            vec = self.vectors.get(token)
            if vec is None:
                if missing is not None:
                    missing.add(token)
            else:
                total += vec
        return total / len(tokens)


def load_embeddings(path) -> EmbeddingTable:
    """Load a word2vec-style text embedding file.

    First line: ``<count> <dimension>``. Then one line per token:
    the token, a space, and ``dimension`` space-separated floats.
    """
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise GlossaryError(f"cannot read embeddings file {path}: {exc}") from exc
    with fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise GlossaryError(f"{path}: header must be '<count> <dimension>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise GlossaryError(f"{path}: non-integer header") from exc
        vectors: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != dim + 1:
                raise GlossaryError(
                    f"{path}:{lineno}: expected token plus {dim} values, got {len(parts) - 1}"
                )
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=float)
            except ValueError as exc:
                raise GlossaryError(f"{path}:{lineno}: non-numeric value") from exc
            vectors[parts[0]] = vec
    if len(vectors) != count:
        raise GlossaryError(f"{path}: header declares {count} tokens, file has {len(vectors)}")
    return EmbeddingTable(dimension=dim, vectors=vectors, source=str(path))


def cluster_terms(
    terms: Sequence[str],
    embeddings: EmbeddingTable,
    k: int,
    seed: int,
    max_iter: int = 300,
) -> list[list[str]]:
    """Partition ``terms`` into ``k`` clusters by K-means on their vectors.

    A glossary-authoring aid, not a runtime dependency. Deterministic for a
    fixed seed: initial centroids are ``k`` distinct terms drawn without
    replacement from a seeded generator, then plain Lloyd iterations run
    until assignments stabilize. An emptied cluster is restarted on the
    point currently farthest from its assigned centroid (lowest index wins
    ties), so all ``k`` clusters come back non-empty.
    """
    if not 1 <= k <= len(terms):
        raise GlossaryError(f"k={k} out of range for {len(terms)} terms")
    missing = [t for t in terms if t not in embeddings]
    if missing:
        raise GlossaryError(f"terms without embeddings: {missing}")
    points = np.stack([embeddings.vector(t) for t in terms])
    rng = np.random.default_rng(seed)
    centroids = points[rng.choice(len(terms), size=k, replace=False)].copy()
    assign = np.full(len(terms), -1)
    for _ in range(max_iter):
        dists = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
        new_assign = np.argmin(dists, axis=1)
        for j in range(k):
            if not np.any(new_assign == j):
                point_dist = dists[np.arange(len(terms)), new_assign]
                grab = int(np.argmax(point_dist))
                new_assign[grab] = j
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            centroids[j] = points[assign == j].mean(axis=0)
    clusters: list[list[str]] = [[] for _ in range(k)]
    for term, j in zip(terms, assign):
        clusters[j].append(term)
    return clusters
