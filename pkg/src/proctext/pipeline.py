"""Corpus ingestion, splitting, and the staged artifact pipeline.

A run chains parse -> mine -> constraints -> evaluate -> report over one
output directory. Every stage persists its artifact atomically (written to
a ``.partial`` file, then renamed), records input hashes and configuration
in ``provenance.json``, and can be skipped on a resumed run when its
artifact already exists. All randomness derives from one master seed,
fanned out per use through a hash, so identical inputs and seed give
byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from proctext.causal import CausalConfig, OrderConstraintSet, order_constraints
from proctext.errors import ProctextError, PipelineError
from proctext.glossary import load_embeddings, load_glossary
from proctext.metrics import (
    DishPair,
    EvalInstance,
    MetricConfig,
    evaluate,
    load_pairs,
    read_instances,
    render_report_text,
)
from proctext.mining import (
    MiningConfig,
    PivotActionSet,
    categorize,
    collect_votes,
    export_annotation_queue,
    import_annotations,
    pair_frequencies,
    read_annotation_queue,
    read_annotation_results,
    representative_phrases,
)
from proctext.parsing import ProtoActionSequence, RecipeText, parse_recipe

TOOLKIT_VERSION = "0.1.0"
STAGES = ("parse", "mine", "constraints", "evaluate", "report")
ARTIFACT_NAMES = {
    "parse": "parsed.jsonl",
    "mine": "pivots.json",
    "constraints": "constraints.json",
    "evaluate": "report.json",
    "report": "report.txt",
}


@dataclass(frozen=True)
class CorpusStats:
    n_recipes: int
    n_dishes: int
    mean_recipes_per_dish: float
    mean_recipe_chars: float

    def to_json(self) -> dict:
        return {
            "n_recipes": self.n_recipes,
            "n_dishes": self.n_dishes,
            "mean_recipes_per_dish": self.mean_recipes_per_dish,
            "mean_recipe_chars": self.mean_recipe_chars,
        }


@dataclass(frozen=True)
class Corpus:
    """Recipes indexed by id and grouped by dish label.

    Recipes without a dish label are held but belong to no dish group.
    ``load_errors`` carries the line-level problems a lenient load skipped.
    """

    recipes: Mapping[str, RecipeText]
    by_dish: Mapping[str, tuple[str, ...]]
    load_errors: tuple[str, ...] = ()

    @classmethod
    def from_recipes(
        cls, recipes: Sequence[RecipeText], load_errors: Sequence[str] = ()
    ) -> "Corpus":
        by_id: dict[str, RecipeText] = {}
        groups: dict[str, list[str]] = {}
        for recipe in recipes:
            if recipe.recipe_id in by_id:
                raise PipelineError("load", f"duplicate recipe_id {recipe.recipe_id!r}")
            by_id[recipe.recipe_id] = recipe
            if recipe.dish is not None:
                groups.setdefault(recipe.dish, []).append(recipe.recipe_id)
        return cls(
            recipes=by_id,
            by_dish={dish: tuple(ids) for dish, ids in groups.items()},
            load_errors=tuple(load_errors),
        )

    def __len__(self) -> int:
        return len(self.recipes)

    def dish_recipes(self, dish: str) -> list[RecipeText]:
        return [self.recipes[rid] for rid in self.by_dish.get(dish, ())]

    @property
    def stats(self) -> CorpusStats:
        n = len(self.recipes)
        dishes = len(self.by_dish)
        labeled = sum(len(ids) for ids in self.by_dish.values())
        chars = [len("".join(r.steps)) for r in self.recipes.values()]
        return CorpusStats(
            n_recipes=n,
            n_dishes=dishes,
            mean_recipes_per_dish=labeled / dishes if dishes else 0.0,
            mean_recipe_chars=sum(chars) / n if n else 0.0,
        )


def load_corpus(path, strict: bool = False) -> Corpus:
    """Read a JSONL recipe corpus.

    Lenient mode skips malformed lines and duplicate ids, collecting one
    message per problem into the corpus's load_errors; strict mode raises
    on the first problem instead.
    """
    recipes: list[RecipeText] = []
    seen: set[str] = set()
    errors: list[str] = []

    def problem(lineno: int, message: str) -> None:
        text = f"line {lineno}: {message}"
        if strict:
            raise PipelineError("load", f"{path}: {text}")
        errors.append(text)

    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise PipelineError("load", f"cannot read corpus {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                problem(lineno, f"invalid JSON ({exc})")
                continue
            try:
                recipe = RecipeText.from_json(record)
            except ProctextError as exc:
                problem(lineno, str(exc))
                continue
            if recipe.recipe_id in seen:
                problem(lineno, f"duplicate recipe_id {recipe.recipe_id!r}")
                continue
            seen.add(recipe.recipe_id)
            recipes.append(recipe)
    return Corpus.from_recipes(recipes, errors)


@dataclass(frozen=True)
class SplitSpec:
    """Dish pairs to evaluate on, sample size per pair, and the seed."""

    pairs: tuple[DishPair, ...]
    eval_sample_size: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.eval_sample_size < 1:
            raise PipelineError("split", "eval_sample_size must be at least 1")
        bases = {p.base_dish for p in self.pairs}
        targets = {p.target_dish for p in self.pairs}
        mixed = bases & targets
        if mixed:
            raise PipelineError(
                "split", f"dishes used as both base and target: {sorted(mixed)}"
            )


@dataclass(frozen=True)
class SplitResult:
    finetune: Corpus
    instances: tuple[EvalInstance, ...]
    undersampled: Mapping[str, int] = field(default_factory=dict)


def split(corpus: Corpus, spec: SplitSpec) -> SplitResult:
    """Carve the corpus into a finetuning part and evaluation instances.

    Every recipe of every dish named by any pair is excluded from the
    finetuning corpus, whether sampled or not, so evaluation dishes can
    never leak. Per pair, a seeded sample of base-dish recipes becomes
    instance skeletons (no generated recipe yet); base dishes with fewer
    recipes than the sample size contribute all of them and are flagged.
    """
    excluded: set[str] = set()
    for pair in spec.pairs:
        for dish in pair.key:
            if dish not in corpus.by_dish:
                raise PipelineError("split", f"dish {dish!r} has no recipes in the corpus")
            excluded.add(dish)

    kept = [r for r in corpus.recipes.values() if r.dish not in excluded]
    finetune = Corpus.from_recipes(sorted(kept, key=lambda r: r.recipe_id))

    instances: list[EvalInstance] = []
    undersampled: dict[str, int] = {}
    for index, pair in enumerate(spec.pairs):
        candidates = sorted(corpus.by_dish[pair.base_dish])
        k = min(spec.eval_sample_size, len(candidates))
        if k < spec.eval_sample_size:
            undersampled[f"{pair.base_dish}->{pair.target_dish}"] = len(candidates)
        rng = random.Random(f"{spec.seed}|{index}|{pair.base_dish}|{pair.target_dish}")
        for recipe_id in sorted(rng.sample(candidates, k)):
            instances.append(
                EvalInstance(
                    pair_id=f"{index:03d}:{recipe_id}",
                    pair=pair,
                    base_recipe=corpus.recipes[recipe_id],
                )
            )
    return SplitResult(
        finetune=finetune, instances=tuple(instances), undersampled=undersampled
    )


def stage_seed(master: int, stage: str) -> int:
    """Independent per-stage seed derived from the master seed by hashing."""
    digest = hashlib.sha256(f"{master}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def map_titles(titles: Sequence[str], dishes: Sequence[str]) -> dict[str, Optional[str]]:
    """Exact-then-suffix mapping of recipe titles onto known dish names.

    A title maps to the dish it equals, else to the longest dish name it
    ends with, else to nothing. Experimental helper; anything fancier
    (shared-ingredient or flavor criteria) is out of scope.
    """
    dish_set = set(dishes)
    by_length = sorted(dish_set, key=lambda d: (-len(d), d))
    mapping: dict[str, Optional[str]] = {}
    for title in titles:
        if title in dish_set:
            mapping[title] = title
            continue
        mapping[title] = next((d for d in by_length if title.endswith(d)), None)
    return mapping


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs: input paths, thresholds, stages, seed."""

    corpus: Path
    glossary: Path
    pairs: Path
    embeddings: Optional[Path] = None
    instances: Optional[Path] = None
    annotations: Optional[Path] = None
    seed: int = 0
    strict: bool = False
    carry_forward: bool = False
    stages: tuple[str, ...] = STAGES
    mining: MiningConfig = field(default_factory=MiningConfig)
    causal: CausalConfig = field(default_factory=CausalConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self):
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ProctextError(f"config: unknown stages {unknown}")
        if not self.stages:
            raise ProctextError("config: no stages requested")

    def to_json(self) -> dict:
        return {
            "corpus": self.corpus.name,
            "glossary": self.glossary.name,
            "pairs": self.pairs.name,
            "embeddings": None if self.embeddings is None else self.embeddings.name,
            "instances": None if self.instances is None else self.instances.name,
            "annotations": None if self.annotations is None else self.annotations.name,
            "seed": self.seed,
            "strict": self.strict,
            "carry_forward": self.carry_forward,
            "stages": list(self.stages),
            "mining": self.mining.to_json(),
            "causal": self.causal.to_json(),
            "metrics": self.metrics.to_json(),
        }


def load_pipeline_config(path, overrides: Optional[Mapping] = None) -> PipelineConfig:
    """Read a config JSON file, apply overrides, resolve relative paths.

    Paths in the file resolve against the file's directory; override paths
    are taken as given. Threshold sections ("mining", "causal", "metrics")
    hold keyword arguments for the corresponding config types.
    """
    base_dir = Path(path).parent
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ProctextError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ProctextError(f"config: {path} is not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ProctextError(f"config: {path} must hold a JSON object")

    overridden = {k: v for k, v in (overrides or {}).items() if v is not None}
    merged = dict(raw)
    merged.update(overridden)

    def path_of(key: str, required: bool) -> Optional[Path]:
        value = merged.get(key)
        if value is None:
            if required:
                raise ProctextError(f"config: missing required input {key!r}")
            return None
        p = Path(value)
        if not p.is_absolute() and key not in overridden:
            p = base_dir / p
        return p

    try:
        mining = MiningConfig(**merged.get("mining", {}))
        causal = CausalConfig(**merged.get("causal", {}))
        metrics = MetricConfig(**merged.get("metrics", {}))
    except TypeError as exc:
        raise ProctextError(f"config: bad threshold section ({exc})") from exc

    return PipelineConfig(
        corpus=path_of("corpus", required=True),
        glossary=path_of("glossary", required=True),
        pairs=path_of("pairs", required=True),
        embeddings=path_of("embeddings", required=False),
        instances=path_of("instances", required=False),
        annotations=path_of("annotations", required=False),
        seed=int(merged.get("seed", 0)),
        strict=bool(merged.get("strict", False)),
        carry_forward=bool(merged.get("carry_forward", False)),
        stages=tuple(merged.get("stages", STAGES)),
        mining=mining,
        causal=causal,
        metrics=metrics,
    )


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_atomic(path: Path, data: bytes) -> None:
    partial = path.with_name(path.name + ".partial")
    partial.write_bytes(data)
    os.replace(partial, path)


def _dump_json(value) -> bytes:
    return (json.dumps(value, ensure_ascii=False, indent=2, sort_keys=True) + "\n").encode(
        "utf-8"
    )


@dataclass
class PipelineResult:
    out_dir: Path
    stages_run: tuple[str, ...]
    artifacts: dict[str, Path]


class _Run:
    """Mutable state threaded through one pipeline invocation."""

    def __init__(self, config: PipelineConfig, out_dir: Path):
        self.config = config
        self.out_dir = out_dir
        self.pairs: Optional[list[DishPair]] = None
        self.sequences: Optional[dict[str, list[ProtoActionSequence]]] = None
        self.pivot_sets: Optional[list[PivotActionSet]] = None
        self.constraint_sets: Optional[list[tuple[tuple[str, str], OrderConstraintSet]]] = None
        self.provenance: dict[str, dict] = {}

    def artifact(self, stage: str) -> Path:
        return self.out_dir / ARTIFACT_NAMES[stage]

    def record(self, stage: str, inputs: Sequence[Path], config: Mapping) -> None:
        self.provenance[stage] = {
            "inputs": {p.name: _sha256_file(p) for p in sorted(inputs, key=lambda x: x.name)},
            "config": dict(config),
            "seed": self.config.seed,
            "version": TOOLKIT_VERSION,
        }
        _write_atomic(self.out_dir / "provenance.json", _dump_json(self.provenance))

    def need_pairs(self) -> list[DishPair]:
        if self.pairs is None:
            self.pairs = load_pairs(self.config.pairs)
        return self.pairs

    def need_sequences(self) -> dict[str, list[ProtoActionSequence]]:
        if self.sequences is None:
            self.sequences = _read_parsed(self.artifact("parse"))
        return self.sequences

    def need_pivots(self) -> list[PivotActionSet]:
        if self.pivot_sets is None:
            with open(self.artifact("mine"), encoding="utf-8") as fh:
                self.pivot_sets = [PivotActionSet.from_json(r) for r in json.load(fh)]
        return self.pivot_sets

    def need_constraints(self) -> list[tuple[tuple[str, str], OrderConstraintSet]]:
        if self.constraint_sets is None:
            with open(self.artifact("constraints"), encoding="utf-8") as fh:
                records = json.load(fh)
            self.constraint_sets = [
                (
                    (r["dish_pair"][0], r["dish_pair"][1]),
                    OrderConstraintSet.from_json(r["constraints"]),
                )
                for r in records
            ]
        return self.constraint_sets


def _write_parsed(path: Path, sequences: Mapping[str, Sequence[ProtoActionSequence]]) -> None:
    lines = []
    for dish in sorted(sequences):
        for seq in sorted(sequences[dish], key=lambda s: s.recipe_id):
            record = {"dish": dish, **seq.to_json()}
            lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    _write_atomic(path, ("\n".join(lines) + "\n").encode("utf-8") if lines else b"")


def _read_parsed(path: Path) -> dict[str, list[ProtoActionSequence]]:
    sequences: dict[str, list[ProtoActionSequence]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            sequences.setdefault(record["dish"], []).append(
                ProtoActionSequence.from_json(record)
            )
    return sequences


def _stage_parse(run: _Run) -> None:
    cfg = run.config
    pairs = run.need_pairs()
    glossary = load_glossary(cfg.glossary)
    corpus = load_corpus(cfg.corpus, strict=cfg.strict)
    dishes = sorted({d for pair in pairs for d in pair.key})
    sequences: dict[str, list[ProtoActionSequence]] = {}
    for dish in dishes:
        recipes = corpus.dish_recipes(dish)
        if not recipes:
            raise PipelineError("parse", f"dish {dish!r} has no recipes in the corpus")
        sequences[dish] = [
            parse_recipe(r, glossary, carry_forward=cfg.carry_forward)
            for r in sorted(recipes, key=lambda r: r.recipe_id)
        ]
    _write_parsed(run.artifact("parse"), sequences)
    run.sequences = sequences
    run.record(
        "parse",
        [cfg.corpus, cfg.glossary, cfg.pairs],
        {"strict": cfg.strict, "carry_forward": cfg.carry_forward},
    )


def _stage_mine(run: _Run) -> None:
    cfg = run.config
    pairs = run.need_pairs()
    sequences = run.need_sequences()
    votes_records = (
        read_annotation_results(cfg.annotations) if cfg.annotations is not None else []
    )
    pivot_sets: list[PivotActionSet] = []
    inputs = [run.artifact("parse"), cfg.pairs]
    if cfg.annotations is not None:
        inputs.append(cfg.annotations)
    for index, pair in enumerate(pairs):
        base_seqs = sequences.get(pair.base_dish, [])
        target_seqs = sequences.get(pair.target_dish, [])
        frequencies = pair_frequencies(base_seqs, target_seqs)
        categorization = categorize(frequencies, cfg.mining)
        interesting = (
            list(categorization.remove)
            + list(categorization.insert)
            + list(categorization.manual_check)
        )
        phrases = representative_phrases(interesting, list(base_seqs) + list(target_seqs))
        queue_path = run.out_dir / f"queue-{index:03d}.csv"
        companion_path = run.out_dir / f"queue-{index:03d}.actions.json"
        export_annotation_queue(
            categorization,
            target_seqs,
            queue_path,
            companion_path,
            base_recipes=base_seqs,
            seed=stage_seed(cfg.seed, f"queue:{index}"),
            id_prefix=f"p{index:03d}a",
        )
        entries = read_annotation_queue(queue_path, companion_path)
        id_map = {e.action_id: e.action for e in entries}
        relevant = [r for r in votes_records if r.action_id in id_map]
        votes = collect_votes(relevant, id_map)
        pivot_sets.append(
            import_annotations(categorization, votes, pair.key, cfg.mining, phrases)
        )
    _write_atomic(
        run.artifact("mine"), _dump_json([ps.to_json() for ps in pivot_sets])
    )
    run.pivot_sets = pivot_sets
    run.record("mine", inputs, {"mining": cfg.mining.to_json()})


def _stage_constraints(run: _Run) -> None:
    cfg = run.config
    sequences = run.need_sequences()
    pivot_sets = run.need_pivots()
    records = []
    constraint_sets = []
    for pivots in pivot_sets:
        target_seqs = sequences.get(pivots.dish_pair[1], [])
        constraints = order_constraints(pivots, target_seqs, cfg.causal)
        constraint_sets.append((pivots.dish_pair, constraints))
        records.append(
            {"dish_pair": list(pivots.dish_pair), "constraints": constraints.to_json()}
        )
    _write_atomic(run.artifact("constraints"), _dump_json(records))
    run.constraint_sets = constraint_sets
    run.record(
        "constraints",
        [run.artifact("parse"), run.artifact("mine")],
        {"causal": cfg.causal.to_json()},
    )


def _stage_evaluate(run: _Run) -> None:
    cfg = run.config
    if cfg.instances is None:
        raise PipelineError("evaluate", "config names no instances file")
    if cfg.embeddings is None:
        raise PipelineError("evaluate", "config names no embeddings file")
    pairs = run.need_pairs()
    glossary = load_glossary(cfg.glossary)
    embeddings = load_embeddings(cfg.embeddings)
    instances = read_instances(cfg.instances, pairs)
    pivots_by_pair = {ps.dish_pair: ps for ps in run.need_pivots()}
    constraints_by_pair = dict(run.need_constraints())
    report = evaluate(
        instances,
        pivots_by_pair,
        constraints_by_pair,
        glossary,
        embeddings,
        cfg.metrics,
        carry_forward=cfg.carry_forward,
    )
    report_json = report.to_json()
    report_json["provenance"].update(
        {
            "inputs": {
                p.name: _sha256_file(p)
                for p in [
                    cfg.instances,
                    cfg.embeddings,
                    cfg.glossary,
                    run.artifact("mine"),
                    run.artifact("constraints"),
                ]
            },
            "seed": cfg.seed,
            "version": TOOLKIT_VERSION,
        }
    )
    _write_atomic(run.artifact("evaluate"), _dump_json(report_json))
    run.record(
        "evaluate",
        [
            cfg.instances,
            cfg.embeddings,
            cfg.glossary,
            run.artifact("mine"),
            run.artifact("constraints"),
        ],
        {"metrics": cfg.metrics.to_json()},
    )


def _stage_report(run: _Run) -> None:
    with open(run.artifact("evaluate"), encoding="utf-8") as fh:
        report_json = json.load(fh)
    _write_atomic(run.artifact("report"), render_report_text(report_json).encode("utf-8"))
    run.record("report", [run.artifact("evaluate")], {})


_STAGE_FUNCTIONS = {
    "parse": _stage_parse,
    "mine": _stage_mine,
    "constraints": _stage_constraints,
    "evaluate": _stage_evaluate,
    "report": _stage_report,
}


def run_pipeline(
    config,
    out_dir,
    resume: bool = False,
    stages: Optional[Sequence[str]] = None,
) -> PipelineResult:
    """Execute the requested stages in dependency order.

    ``config`` is a PipelineConfig or a path to a config JSON file. Stages
    upstream of a requested stage run implicitly when their artifact is
    missing and are reused from disk otherwise; with ``resume``, requested
    stages with existing artifacts are skipped too. Any error inside a
    stage surfaces as a PipelineError naming the stage.
    """
    if not isinstance(config, PipelineConfig):
        config = load_pipeline_config(config)
    requested = tuple(stages) if stages is not None else config.stages
    unknown = [s for s in requested if s not in STAGES]
    if unknown:
        raise ProctextError(f"config: unknown stages {unknown}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    run = _Run(config, out_dir)
    provenance_path = out_dir / "provenance.json"
    if provenance_path.exists():
        try:
            with open(provenance_path, encoding="utf-8") as fh:
                run.provenance = json.load(fh)
        except (OSError, json.JSONDecodeError):
            run.provenance = {}

    last = max(STAGES.index(s) for s in requested)
    stages_run: list[str] = []
    artifacts: dict[str, Path] = {}
    for stage in STAGES[: last + 1]:
        artifact = run.artifact(stage)
        if artifact.exists() and (stage not in requested or resume):
            artifacts[stage] = artifact
            continue
        try:
            _STAGE_FUNCTIONS[stage](run)
        except PipelineError:
            raise
        except ProctextError as exc:
            raise PipelineError(stage, str(exc)) from exc
        except OSError as exc:
            raise PipelineError(stage, f"I/O failure: {exc}") from exc
        stages_run.append(stage)
        artifacts[stage] = artifact
    return PipelineResult(
        out_dir=out_dir, stages_run=tuple(stages_run), artifacts=artifacts
    )
