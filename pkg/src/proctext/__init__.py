"""Corpus analysis and evaluation toolkit for counterfactual procedure rewriting.

The toolkit turns recipe-style procedural texts into canonical action
sequences, mines the actions that distinguish one dish from another, learns
ordering constraints between actions from corpus statistics, and scores
candidate rewrites of a recipe at the surface level (ingredient coverage,
preservation) and at the action level (hard and soft precision/recall/F1
with order verification).
"""

from proctext.errors import (
    CausalError,
    GlossaryError,
    MetricError,
    MiningError,
    ParseError,
    PipelineError,
    ProctextError,
)
from proctext.glossary import EmbeddingTable, Glossary, WordClass, WordKind, load_glossary
from proctext.parsing import (
    ActionInstance,
    ProtoAction,
    ProtoActionSequence,
    RecipeActionParser,
    RecipeText,
    parse_recipe,
)
from proctext.mining import (
    AnnotationRecord,
    MiningConfig,
    PivotActionMiner,
    PivotActionSet,
    PivotCategorization,
    VoteLabel,
)
from proctext.causal import (
    CausalConfig,
    CausalEstimate,
    CausalUnit,
    OrderConstraintMiner,
    OrderConstraintSet,
)
from proctext.metrics import (
    ChangeSet,
    CounterfactualEvaluator,
    DishPair,
    EvalInstance,
    EvalReport,
    MetricConfig,
    bws_score,
)
from proctext.pipeline import Corpus, SplitSpec, load_corpus, run_pipeline, split

__version__ = "0.1.0"

__all__ = [
    "ActionInstance",
    "AnnotationRecord",
    "CausalConfig",
    "CausalError",
    "CausalEstimate",
    "CausalUnit",
    "ChangeSet",
    "Corpus",
    "CounterfactualEvaluator",
    "DishPair",
    "EmbeddingTable",
    "EvalInstance",
    "EvalReport",
    "Glossary",
    "GlossaryError",
    "MetricConfig",
    "MetricError",
    "MiningConfig",
    "MiningError",
    "OrderConstraintMiner",
    "OrderConstraintSet",
    "ParseError",
    "PipelineError",
    "PivotActionMiner",
    "PivotActionSet",
    "PivotCategorization",
    "ProctextError",
    "ProtoAction",
    "ProtoActionSequence",
    "RecipeActionParser",
    "RecipeText",
    "SplitSpec",
    "VoteLabel",
    "WordClass",
    "WordKind",
    "bws_score",
    "load_corpus",
    "load_glossary",
    "parse_recipe",
    "run_pipeline",
    "split",
    "__version__",
]
