import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proctext.cli import main as cli_main
from proctext.errors import PipelineError, ProctextError
from proctext.metrics import ChangeKind, DishPair, IngredientRef
from proctext.parsing import RecipeText
from proctext.pipeline import (
    ARTIFACT_NAMES,
    STAGES,
    Corpus,
    PipelineConfig,
    SplitSpec,
    load_corpus,
    load_pipeline_config,
    map_titles,
    run_pipeline,
    split,
    stage_seed,
)

FIXTURES = Path(__file__).parent / "fixtures"


def recipe(recipe_id, dish, steps=("加盐",)):
    return RecipeText(recipe_id=recipe_id, dish=dish, steps=tuple(steps))


def add_pair(base, target):
    return DishPair(
        base_dish=base,
        target_dish=target,
        change_kind=ChangeKind.ADD,
        added_ingredient=IngredientRef(name="辣椒"),
    )


def test_load_corpus_lenient_collects_errors(tmp_path):
    path = tmp_path / "corpus.jsonl"
    lines = [
        json.dumps({"recipe_id": "r1", "dish": "a", "steps": ["加盐"]}),
        "{not json",
        json.dumps({"recipe_id": "r2", "dish": "a", "steps": []}),
        json.dumps({"recipe_id": "r1", "dish": "b", "steps": ["加盐"]}),
        json.dumps({"recipe_id": "r3", "dish": "b", "steps": ["切土豆"]}),
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    corpus = load_corpus(path)
    assert sorted(corpus.recipes) == ["r1", "r3"]
    assert len(corpus.load_errors) == 3
    assert any("line 2" in e for e in corpus.load_errors)
    assert any("duplicate" in e for e in corpus.load_errors)


def test_load_corpus_strict_raises(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text("{not json\n", encoding="utf-8")
    with pytest.raises(PipelineError):
        load_corpus(path, strict=True)
    with pytest.raises(PipelineError):
        load_corpus(tmp_path / "missing.jsonl")


def test_corpus_from_recipes_rejects_duplicates():
    with pytest.raises(PipelineError):
        Corpus.from_recipes([recipe("r1", "a"), recipe("r1", "b")])


def test_corpus_stats():
    corpus = Corpus.from_recipes(
        [recipe("r1", "a", ["加盐"]), recipe("r2", "a", ["切土豆丝"]), recipe("r3", "b")]
    )
    stats = corpus.stats
    assert stats.n_recipes == 3
    assert stats.n_dishes == 2
    assert stats.mean_recipes_per_dish == pytest.approx(1.5)
    assert stats.mean_recipe_chars == pytest.approx((2 + 4 + 2) / 3)


def small_corpus():
    recipes = [recipe(f"a{i}", "dishA") for i in range(6)]
    recipes += [recipe(f"b{i}", "dishB") for i in range(3)]
    recipes += [recipe(f"c{i}", "dishC") for i in range(4)]
    return Corpus.from_recipes(recipes)


def test_split_excludes_every_pair_dish_recipe():
    corpus = small_corpus()
    spec = SplitSpec(pairs=(add_pair("dishA", "dishB"),), eval_sample_size=2, seed=3)
    result = split(corpus, spec)
    finetune_ids = set(result.finetune.recipes)
    assert finetune_ids == {f"c{i}" for i in range(4)}
    assert len(result.instances) == 2
    assert all(inst.pair_id.startswith("000:") for inst in result.instances)
    assert all(inst.generated_recipe is None for inst in result.instances)
    assert result.undersampled == {}


def test_split_undersampled_and_deterministic():
    corpus = small_corpus()
    spec = SplitSpec(pairs=(add_pair("dishB", "dishC"),), eval_sample_size=10, seed=1)
    first = split(corpus, spec)
    second = split(corpus, spec)
    assert first.undersampled == {"dishB->dishC": 3}
    assert len(first.instances) == 3
    assert [i.pair_id for i in first.instances] == [i.pair_id for i in second.instances]
    shifted = split(corpus, SplitSpec(pairs=spec.pairs, eval_sample_size=2, seed=2))
    assert len(shifted.instances) == 2


def test_split_missing_dish_raises():
    with pytest.raises(PipelineError):
        split(small_corpus(), SplitSpec(pairs=(add_pair("dishA", "nope"),)))


def test_split_spec_validation():
    with pytest.raises(PipelineError):
        SplitSpec(pairs=(add_pair("a", "b"),), eval_sample_size=0)
    with pytest.raises(PipelineError):
        SplitSpec(pairs=(add_pair("a", "b"), add_pair("b", "c")))


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_split_never_leaks_pair_dishes(data):
    n_dishes = data.draw(st.integers(min_value=2, max_value=6))
    dishes = [f"d{i}" for i in range(n_dishes)]
    assignments = data.draw(
        st.lists(st.sampled_from(dishes), min_size=n_dishes, max_size=25)
    )
    # every dish gets at least one recipe so pair selection cannot fail
    assignments.extend(dishes)
    corpus = Corpus.from_recipes(
        [recipe(f"r{i}", dish) for i, dish in enumerate(assignments)]
    )
    bases = dishes[: n_dishes // 2]
    targets = dishes[n_dishes // 2 :]
    n_pairs = data.draw(st.integers(min_value=1, max_value=min(len(bases), len(targets))))
    pairs = tuple(add_pair(bases[i], targets[i]) for i in range(n_pairs))
    size = data.draw(st.integers(min_value=1, max_value=8))
    seed = data.draw(st.integers(min_value=0, max_value=10))
    result = split(corpus, SplitSpec(pairs=pairs, eval_sample_size=size, seed=seed))
    pair_dishes = {d for p in pairs for d in p.key}
    finetune_dishes = {r.dish for r in result.finetune.recipes.values()}
    assert finetune_dishes.isdisjoint(pair_dishes)
    finetune_ids = set(result.finetune.recipes)
    eval_ids = {inst.base_recipe.recipe_id for inst in result.instances}
    assert finetune_ids.isdisjoint(eval_ids)
    for dish in pair_dishes:
        for rid in corpus.by_dish[dish]:
            assert rid not in finetune_ids


def test_stage_seed_stable_and_distinct():
    assert stage_seed(0, "parse") == stage_seed(0, "parse")
    seeds = {stage_seed(0, stage) for stage in STAGES}
    assert len(seeds) == len(STAGES)
    assert stage_seed(1, "parse") != stage_seed(0, "parse")


def test_map_titles_exact_then_longest_suffix():
    titles = ["酸辣土豆丝", "外婆家的土豆丝", "凉拌土豆", "红烧肉"]
    dishes = ["土豆丝", "酸辣土豆丝", "土豆"]
    mapping = map_titles(titles, dishes)
    assert mapping["酸辣土豆丝"] == "酸辣土豆丝"
    assert mapping["外婆家的土豆丝"] == "土豆丝"
    assert mapping["凉拌土豆"] == "土豆"
    assert mapping["红烧肉"] is None


def test_load_pipeline_config_resolves_and_overrides(tmp_path, demo_paths):
    config_dir = tmp_path / "cfg"
    config_dir.mkdir()
    (config_dir / "corpus.jsonl").write_text("", encoding="utf-8")
    (config_dir / "glossary.json").write_text("[]", encoding="utf-8")
    (config_dir / "pairs.json").write_text("[]", encoding="utf-8")
    config_path = config_dir / "config.json"
    config_path.write_text(
        json.dumps(
            {
                "corpus": "corpus.jsonl",
                "glossary": "glossary.json",
                "pairs": "pairs.json",
                "seed": 9,
                "mining": {"freq_ratio": 4.0},
            }
        ),
        encoding="utf-8",
    )
    config = load_pipeline_config(config_path)
    assert config.corpus == config_dir / "corpus.jsonl"
    assert config.seed == 9
    assert config.mining.freq_ratio == 4.0
    # overrides are taken verbatim, not re-anchored to the config directory
    override_corpus = str(demo_paths["corpus"])
    config = load_pipeline_config(
        config_path, {"corpus": override_corpus, "seed": 2, "glossary": None}
    )
    assert config.corpus == Path(override_corpus)
    assert config.glossary == config_dir / "glossary.json"
    assert config.seed == 2


def test_load_pipeline_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope", encoding="utf-8")
    with pytest.raises(ProctextError):
        load_pipeline_config(bad)
    with pytest.raises(ProctextError):
        load_pipeline_config(tmp_path / "absent.json")
    listy = tmp_path / "list.json"
    listy.write_text("[]", encoding="utf-8")
    with pytest.raises(ProctextError):
        load_pipeline_config(listy)
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"corpus": "c.jsonl"}), encoding="utf-8")
    with pytest.raises(ProctextError):
        load_pipeline_config(missing)
    badsection = tmp_path / "badsection.json"
    badsection.write_text(
        json.dumps(
            {
                "corpus": "c",
                "glossary": "g",
                "pairs": "p",
                "mining": {"no_such_knob": 1},
            }
        ),
        encoding="utf-8",
    )
    with pytest.raises(ProctextError):
        load_pipeline_config(badsection)


def test_pipeline_config_rejects_unknown_stage(demo_paths):
    with pytest.raises(ProctextError):
        PipelineConfig(
            corpus=demo_paths["corpus"],
            glossary=demo_paths["glossary"],
            pairs=demo_paths["pairs"],
            stages=("parse", "bogus"),
        )


@pytest.fixture(scope="module")
def demo_run(demo_paths, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("run")
    result = run_pipeline(demo_paths["config"], out_dir)
    return result


def test_run_pipeline_produces_all_artifacts(demo_run):
    assert demo_run.stages_run == STAGES
    for stage in STAGES:
        assert demo_run.artifacts[stage].name == ARTIFACT_NAMES[stage]
        assert demo_run.artifacts[stage].is_file()
    assert (demo_run.out_dir / "provenance.json").is_file()
    assert (demo_run.out_dir / "queue-000.csv").is_file()
    assert (demo_run.out_dir / "queue-000.actions.json").is_file()
    # no stray .partial files survive atomic writes
    assert not list(demo_run.out_dir.glob("*.partial"))


def test_run_pipeline_report_values_are_sane(demo_run):
    report = json.loads(demo_run.artifacts["evaluate"].read_text(encoding="utf-8"))
    agg = report["aggregate"]
    assert 0.0 <= agg["hard_f1"] <= 1.0
    assert 0.0 <= agg["bleu"] <= 1.0
    assert agg["coi_replace"] is None
    assert len(report["instances"]) == 9
    text = demo_run.artifacts["report"].read_text(encoding="utf-8")
    assert "hard_f1" in text and "order_accuracy" in text


def test_run_pipeline_provenance_covers_every_stage(demo_run):
    provenance = json.loads(
        (demo_run.out_dir / "provenance.json").read_text(encoding="utf-8")
    )
    assert set(provenance) == set(STAGES)
    for stage, block in provenance.items():
        assert block["version"], stage
        assert block["seed"] == 5
        assert all(len(digest) == 64 for digest in block["inputs"].values())


def test_run_pipeline_matches_golden_report(demo_run):
    golden = json.loads((FIXTURES / "golden_report.json").read_text(encoding="utf-8"))
    got = json.loads(demo_run.artifacts["evaluate"].read_text(encoding="utf-8"))
    assert got == golden


def test_run_pipeline_deterministic_bytes(demo_paths, tmp_path):
    first = run_pipeline(demo_paths["config"], tmp_path / "one")
    second = run_pipeline(demo_paths["config"], tmp_path / "two")
    names = sorted(p.name for p in (tmp_path / "one").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "two").iterdir())
    for name in names:
        a = (tmp_path / "one" / name).read_bytes()
        b = (tmp_path / "two" / name).read_bytes()
        assert a == b, name
    assert first.stages_run == second.stages_run


def test_run_pipeline_resume_reuses_artifacts(demo_paths, tmp_path):
    out = tmp_path / "out"
    run_pipeline(demo_paths["config"], out, stages=["mine"])
    assert (out / ARTIFACT_NAMES["mine"]).is_file()
    assert not (out / ARTIFACT_NAMES["constraints"]).exists()
    again = run_pipeline(demo_paths["config"], out, resume=True)
    assert again.stages_run == ("constraints", "evaluate", "report")
    fresh = run_pipeline(demo_paths["config"], out, stages=["mine"])
    assert fresh.stages_run == ("mine",)


def test_run_pipeline_rejects_unknown_stage(demo_paths, tmp_path):
    with pytest.raises(ProctextError):
        run_pipeline(demo_paths["config"], tmp_path, stages=["polish"])


def test_evaluate_stage_requires_instances_and_embeddings(demo_paths, tmp_path):
    config = PipelineConfig(
        corpus=demo_paths["corpus"],
        glossary=demo_paths["glossary"],
        pairs=demo_paths["pairs"],
        annotations=demo_paths["annotations"],
    )
    with pytest.raises(PipelineError) as err:
        run_pipeline(config, tmp_path / "a", stages=["evaluate"])
    assert "instances" in str(err.value)
    config_with_instances = PipelineConfig(
        corpus=demo_paths["corpus"],
        glossary=demo_paths["glossary"],
        pairs=demo_paths["pairs"],
        instances=demo_paths["instances"],
        annotations=demo_paths["annotations"],
    )
    with pytest.raises(PipelineError) as err:
        run_pipeline(config_with_instances, tmp_path / "b", stages=["evaluate"])
    assert "embeddings" in str(err.value)


def test_cli_map_titles(tmp_path, capsys):
    titles = tmp_path / "titles.txt"
    titles.write_text("外婆家的土豆丝\n红烧肉\n", encoding="utf-8")
    dishes = tmp_path / "dishes.txt"
    dishes.write_text("土豆丝\n", encoding="utf-8")
    code = cli_main(["map-titles", "--titles", str(titles), "--dishes", str(dishes)])
    assert code == 0
    mapping = json.loads(capsys.readouterr().out)
    assert mapping == {"外婆家的土豆丝": "土豆丝", "红烧肉": None}


def test_cli_full_run_exit_zero(demo_paths, tmp_path, capsys):
    out_dir = tmp_path / "run"
    code = cli_main(
        [
            "report",
            "--config",
            str(demo_paths["config"]),
            "--out-dir",
            str(out_dir),
        ]
    )
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert any(line.startswith("report: wrote") for line in lines)
    assert (out_dir / ARTIFACT_NAMES["report"]).is_file()
    code = cli_main(
        [
            "report",
            "--config",
            str(demo_paths["config"]),
            "--out-dir",
            str(out_dir),
            "--resume",
        ]
    )
    assert code == 0
    assert "reused" in capsys.readouterr().out


def test_cli_flag_only_run(demo_paths, tmp_path, capsys):
    code = cli_main(
        [
            "parse",
            "--corpus",
            str(demo_paths["corpus"]),
            "--glossary",
            str(demo_paths["glossary"]),
            "--pairs",
            str(demo_paths["pairs"]),
            "--out-dir",
            str(tmp_path / "run"),
        ]
    )
    assert code == 0
    assert (tmp_path / "run" / ARTIFACT_NAMES["parse"]).is_file()
    capsys.readouterr()


def test_cli_missing_required_flags_exit_one(tmp_path, capsys):
    code = cli_main(["parse", "--out-dir", str(tmp_path)])
    assert code == 1
    assert "required" in capsys.readouterr().err


def test_cli_stage_failure_exit_two(demo_paths, tmp_path, capsys):
    code = cli_main(
        [
            "evaluate",
            "--corpus",
            str(demo_paths["corpus"]),
            "--glossary",
            str(demo_paths["glossary"]),
            "--pairs",
            str(demo_paths["pairs"]),
            "--out-dir",
            str(tmp_path / "run"),
        ]
    )
    assert code == 2
    assert "evaluate" in capsys.readouterr().err


def test_cli_unknown_command_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli_main(["polish"])
    assert exc.value.code == 1
    capsys.readouterr()
