"""Ordering constraints between actions via matched treatment-effect estimates.

For a pivot action that must be inserted into a rewritten recipe, the
question is where: which actions must come before it, which after. Each
candidate ordering claim "cause tends to precede effect" is tested on the
target dish's recipes. A recipe becomes one unit: treated when the cause
occurs before the effect's first occurrence (or the effect is absent while
the cause is present), with the outcome recording whether the effect
follows. Actions occurring before both serve as confounder covariates. A
logistic model of treatment on the covariates yields propensity scores,
treated units are matched to the nearest control within a caliper, and the
mean matched outcome difference estimates the effect of the ordering.

Equidistant nearest controls are averaged rather than tie-broken to a
single unit: with no covariates at all every control is equidistant, and
averaging is what makes the estimate collapse to the plain difference of
group outcome means in that degenerate case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from proctext.errors import CausalError
from proctext.mining import PivotActionSet
from proctext.parsing import ProtoAction, ProtoActionSequence
from proctext.validation import check_sequences


@dataclass(frozen=True)
class CausalConfig:
    """Estimation thresholds and logistic-regression hyperparameters."""

    effect_threshold: float = 0.1
    min_support: int = 10
    caliper: float = 0.05
    lr_iters: int = 1500
    lr_rate: float = 0.5
    lr_l2: float = 0.01

    def __post_init__(self):
        if not self.effect_threshold > 0:
            raise CausalError(f"effect_threshold must be positive, got {self.effect_threshold}")
        if not self.caliper > 0:
            raise CausalError(f"caliper must be positive, got {self.caliper}")
        if self.min_support < 1:
            raise CausalError(f"min_support must be at least 1, got {self.min_support}")
        if self.lr_iters < 0 or self.lr_rate <= 0 or self.lr_l2 < 0:
            raise CausalError("invalid logistic-regression hyperparameters")

    def to_json(self) -> dict:
        return {
            "effect_threshold": self.effect_threshold,
            "min_support": self.min_support,
            "caliper": self.caliper,
            "lr_iters": self.lr_iters,
            "lr_rate": self.lr_rate,
            "lr_l2": self.lr_l2,
        }


@dataclass(frozen=True)
class CausalUnit:
    """One recipe reduced to (treatment, outcome, confounder presence vector)."""

    recipe_id: str
    treatment: bool
    outcome: bool
    covariates: tuple[int, ...] = ()


@dataclass(frozen=True)
class UnitTable:
    """Units for one (cause, effect) pair with the frozen covariate vocabulary."""

    cause: ProtoAction
    effect: ProtoAction
    vocabulary: tuple[ProtoAction, ...]
    units: tuple[CausalUnit, ...]


@dataclass(frozen=True)
class CausalEstimate:
    cause: Optional[ProtoAction]
    effect: Optional[ProtoAction]
    ate: float
    n_treated: int
    n_control: int
    n_matched: int
    n_unmatched: int

    def __post_init__(self):
        if not -1.0 <= self.ate <= 1.0:
            raise CausalError(f"estimate {self.ate} outside [-1, 1]")


def _first_index(protos: Sequence[ProtoAction], action: ProtoAction) -> Optional[int]:
    for i, p in enumerate(protos):
        if p == action:
            return i
    return None


def build_units(
    recipes: Sequence[ProtoActionSequence], cause: ProtoAction, effect: ProtoAction
) -> UnitTable:
    """One unit per recipe for the ordering claim cause-then-effect.

    Treatment: the cause occurs, and either the effect is absent or the
    cause's first occurrence comes first. Outcome: some effect occurrence
    follows the cause's first occurrence; with the cause absent, whether
    the effect occurs at all. Covariates: presence of every other action
    that occurs before the first occurrence of whichever of the two
    appears first in the recipe; the vocabulary is the union over all
    recipes, frozen and sorted.
    """
    if cause == effect:
        raise CausalError("cause and effect must differ")
    per_recipe: list[tuple[ProtoActionSequence, Optional[int], Optional[int], set]] = []
    vocabulary: set[ProtoAction] = set()
    for seq in recipes:
        protos = seq.protos()
        first_cause = _first_index(protos, cause)
        first_effect = _first_index(protos, effect)
        firsts = [i for i in (first_cause, first_effect) if i is not None]
        confounders: set[ProtoAction] = set()
        if firsts:
            anchor = min(firsts)
            confounders = set(protos[:anchor]) - {cause, effect}
            vocabulary |= confounders
        per_recipe.append((seq, first_cause, first_effect, confounders))

    vocab = tuple(sorted(vocabulary))
    units = []
    for seq, first_cause, first_effect, confounders in per_recipe:
        protos = seq.protos()
        if first_cause is not None:
            treatment = first_effect is None or first_cause < first_effect
            outcome = any(
                p == effect for p in protos[first_cause + 1 :]
            )
        else:
            treatment = False
            outcome = first_effect is not None
        units.append(
            CausalUnit(
                recipe_id=seq.recipe_id,
                treatment=treatment,
                outcome=outcome,
                covariates=tuple(1 if v in confounders else 0 for v in vocab),
            )
        )
    return UnitTable(cause=cause, effect=effect, vocabulary=vocab, units=tuple(units))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -35.0, 35.0)))


def propensity_scores(
    units: Sequence[CausalUnit], config: Optional[CausalConfig] = None
) -> np.ndarray:
    """P(treated | covariates) from a batch-gradient logistic regression.

    Zero-initialized weights, a fixed iteration count, and an L2 penalty
    on the weights (never the intercept) make the fit deterministic. The
    minimized objective is mean cross-entropy plus 0.5 * lr_l2 * ||w||^2.
    Returned scores are clipped into the open interval (0, 1).
    """
    cfg = config or CausalConfig()
    if not units:
        raise CausalError("no units to score")
    t = np.array([1.0 if u.treatment else 0.0 for u in units])
    if t.min() == t.max():
        raise CausalError("propensity model needs both treated and control units")
    X = np.array([u.covariates for u in units], dtype=float).reshape(len(units), -1)
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(cfg.lr_iters):
        p = _sigmoid(X @ w + b)
        residual = p - t
        w -= cfg.lr_rate * (X.T @ residual / n + cfg.lr_l2 * w)
        b -= cfg.lr_rate * float(residual.mean())
    scores = _sigmoid(X @ w + b)
    return np.clip(scores, 1e-12, 1.0 - 1e-12)


def matched_ate(
    units: Sequence[CausalUnit],
    scores: np.ndarray,
    config: Optional[CausalConfig] = None,
    cause: Optional[ProtoAction] = None,
    effect: Optional[ProtoAction] = None,
) -> CausalEstimate:
    """Nearest-neighbor matching on propensity scores, with replacement.

    Each treated unit is compared against the mean outcome of all controls
    tied at the minimal score distance, provided that distance is within
    the caliper; treated units with no control in reach are dropped and
    counted. The estimate is the mean treated-minus-matched difference.
    """
    cfg = config or CausalConfig()
    if len(scores) != len(units):
        raise CausalError(f"{len(scores)} scores for {len(units)} units")
    treated_idx = [i for i, u in enumerate(units) if u.treatment]
    control_idx = [i for i, u in enumerate(units) if not u.treatment]
    if len(treated_idx) < cfg.min_support or len(control_idx) < cfg.min_support:
        raise CausalError(
            f"support too small: {len(treated_idx)} treated, {len(control_idx)} control, "
            f"need {cfg.min_support} of each"
        )
    scores = np.asarray(scores, dtype=float)
    control_scores = scores[control_idx]
    control_outcomes = np.array([1.0 if units[i].outcome else 0.0 for i in control_idx])

    diffs = []
    n_unmatched = 0
    for i in treated_idx:
        dist = np.abs(control_scores - scores[i])
        d_min = dist.min()
        if d_min > cfg.caliper:
            n_unmatched += 1
            continue
        tied = control_outcomes[dist == d_min]
        diffs.append((1.0 if units[i].outcome else 0.0) - float(tied.mean()))
    if not diffs:
        raise CausalError("no treated unit found a control within the caliper")
    return CausalEstimate(
        cause=cause,
        effect=effect,
        ate=float(np.mean(diffs)),
        n_treated=len(treated_idx),
        n_control=len(control_idx),
        n_matched=len(diffs),
        n_unmatched=n_unmatched,
    )


def estimate_effect(
    recipes: Sequence[ProtoActionSequence],
    cause: ProtoAction,
    effect: ProtoAction,
    config: Optional[CausalConfig] = None,
) -> CausalEstimate:
    """build_units + propensity_scores + matched_ate for one ordered pair."""
    cfg = config or CausalConfig()
    table = build_units(recipes, cause, effect)
    scores = propensity_scores(table.units, cfg)
    return matched_ate(table.units, scores, cfg, cause=cause, effect=effect)


@dataclass(frozen=True)
class EstimateRecord:
    """Outcome of one direction test for one (pivot, other) pair."""

    direction: str  # "pred": other before pivot; "succ": pivot before other
    other: ProtoAction
    ate: Optional[float]
    n_matched: int
    status: str  # "ok", "skipped: ...", or "conflict_dropped"

    def to_json(self) -> dict:
        return {
            "direction": self.direction,
            "other": self.other.to_json(),
            "ate": self.ate,
            "n_matched": self.n_matched,
            "status": self.status,
        }

    @classmethod
    def from_json(cls, record: Mapping) -> "EstimateRecord":
        return cls(
            direction=record["direction"],
            other=ProtoAction.from_json(record["other"]),
            ate=record["ate"],
            n_matched=record["n_matched"],
            status=record["status"],
        )


@dataclass(frozen=True)
class PivotConstraints:
    pivot: ProtoAction
    preds: tuple[ProtoAction, ...]
    succs: tuple[ProtoAction, ...]
    estimates: tuple[EstimateRecord, ...] = ()

    def __post_init__(self):
        if set(self.preds) & set(self.succs):
            raise CausalError(
                f"pivot {self.pivot.key()!r}: preds and succs must be disjoint"
            )

    def to_json(self) -> dict:
        return {
            "pivot": self.pivot.to_json(),
            "preds": [a.to_json() for a in self.preds],
            "succs": [a.to_json() for a in self.succs],
            "estimates": [e.to_json() for e in self.estimates],
        }

    @classmethod
    def from_json(cls, record: Mapping) -> "PivotConstraints":
        return cls(
            pivot=ProtoAction.from_json(record["pivot"]),
            preds=tuple(ProtoAction.from_json(a) for a in record["preds"]),
            succs=tuple(ProtoAction.from_json(a) for a in record["succs"]),
            estimates=tuple(
                EstimateRecord.from_json(e) for e in record.get("estimates", ())
            ),
        )


class OrderConstraintSet:
    """Predecessor and successor sets per pivot action, with lookup helpers."""

    def __init__(self, constraints: Sequence[PivotConstraints] = ()):
        self._by_pivot: dict[ProtoAction, PivotConstraints] = {}
        for pc in constraints:
            if pc.pivot in self._by_pivot:
                raise CausalError(f"duplicate constraints for pivot {pc.pivot.key()!r}")
            self._by_pivot[pc.pivot] = pc

    def __len__(self) -> int:
        return len(self._by_pivot)

    def __iter__(self):
        return iter(sorted(self._by_pivot.values(), key=lambda pc: pc.pivot))

    def has(self, action: ProtoAction) -> bool:
        return action in self._by_pivot

    def constraint_for(self, action: ProtoAction) -> PivotConstraints:
        if action not in self._by_pivot:
            raise CausalError(f"no constraints recorded for {action.key()!r}")
        return self._by_pivot[action]

    def preds(self, action: ProtoAction) -> frozenset[ProtoAction]:
        pc = self._by_pivot.get(action)
        return frozenset(pc.preds) if pc else frozenset()

    def succs(self, action: ProtoAction) -> frozenset[ProtoAction]:
        pc = self._by_pivot.get(action)
        return frozenset(pc.succs) if pc else frozenset()

    def to_json(self) -> list:
        return [pc.to_json() for pc in self]

    @classmethod
    def from_json(cls, records: Sequence[Mapping]) -> "OrderConstraintSet":
        return cls([PivotConstraints.from_json(r) for r in records])

    def __eq__(self, other) -> bool:
        if not isinstance(other, OrderConstraintSet):
            return NotImplemented
        return self._by_pivot == other._by_pivot


def save_constraints(constraints: OrderConstraintSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(constraints.to_json(), fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def load_constraints(path) -> OrderConstraintSet:
    with open(path, encoding="utf-8") as fh:
        return OrderConstraintSet.from_json(json.load(fh))


def _try_estimate(
    recipes: Sequence[ProtoActionSequence],
    cause: ProtoAction,
    effect: ProtoAction,
    config: CausalConfig,
) -> tuple[Optional[CausalEstimate], str]:
    try:
        return estimate_effect(recipes, cause, effect, config), "ok"
    except CausalError as exc:
        return None, f"skipped: {exc}"


def order_constraints(
    pivots: PivotActionSet,
    target_recipes: Sequence[ProtoActionSequence],
    config: Optional[CausalConfig] = None,
) -> OrderConstraintSet:
    """Mine predecessor and successor sets for every insertable pivot action.

    A candidate action joins the predecessors when the effect estimate of
    "candidate before pivot" clears the threshold, the successors when the
    reverse direction does. When both directions clear it, the larger
    estimate wins and the loser is recorded as a dropped conflict. Pairs
    without enough treated or control recipes are skipped with the reason
    kept in the estimate log.
    """
    cfg = config or CausalConfig()
    if not target_recipes:
        raise CausalError("order mining needs at least one target recipe")
    universe: set[ProtoAction] = set()
    for seq in target_recipes:
        universe.update(seq.protos())

    results = []
    for pivot in sorted(pivots.insert):
        preds: list[ProtoAction] = []
        succs: list[ProtoAction] = []
        records: list[EstimateRecord] = []
        for other in sorted(universe - {pivot}):
            as_pred, pred_status = _try_estimate(target_recipes, other, pivot, cfg)
            as_succ, succ_status = _try_estimate(target_recipes, pivot, other, cfg)
            pred_hit = as_pred is not None and as_pred.ate > cfg.effect_threshold
            succ_hit = as_succ is not None and as_succ.ate > cfg.effect_threshold
            if pred_hit and succ_hit:
                # both directions exceed the threshold; keep the stronger one
                if as_succ.ate > as_pred.ate:
                    pred_hit, pred_status = False, "conflict_dropped"
                else:
                    succ_hit, succ_status = False, "conflict_dropped"
            if pred_hit:
                preds.append(other)
            if succ_hit:
                succs.append(other)
            records.append(
                EstimateRecord(
                    direction="pred",
                    other=other,
                    ate=None if as_pred is None else as_pred.ate,
                    n_matched=0 if as_pred is None else as_pred.n_matched,
                    status=pred_status,
                )
            )
            records.append(
                EstimateRecord(
                    direction="succ",
                    other=other,
                    ate=None if as_succ is None else as_succ.ate,
                    n_matched=0 if as_succ is None else as_succ.n_matched,
                    status=succ_status,
                )
            )
        results.append(
            PivotConstraints(
                pivot=pivot,
                preds=tuple(preds),
                succs=tuple(succs),
                estimates=tuple(records),
            )
        )
    return OrderConstraintSet(results)


class OrderConstraintMiner(BaseEstimator):
    """Estimator facade over order_constraints.

    fit() takes target-dish sequences X and the pivot set as a keyword and
    exposes the mined OrderConstraintSet as constraints_.
    """

    def __init__(
        self,
        effect_threshold=0.1,
        min_support=10,
        caliper=0.05,
        lr_iters=1500,
        lr_rate=0.5,
        lr_l2=0.01,
    ):
        self.effect_threshold = effect_threshold
        self.min_support = min_support
        self.caliper = caliper
        self.lr_iters = lr_iters
        self.lr_rate = lr_rate
        self.lr_l2 = lr_l2

    def fit(self, X, y=None, *, pivots: Optional[PivotActionSet] = None):
        if pivots is None:
            raise CausalError("fit requires the pivots keyword argument")
        sequences = check_sequences(X)
        config = CausalConfig(
            effect_threshold=self.effect_threshold,
            min_support=self.min_support,
            caliper=self.caliper,
            lr_iters=self.lr_iters,
            lr_rate=self.lr_rate,
            lr_l2=self.lr_l2,
        )
        self.constraints_ = order_constraints(pivots, sequences, config)
        self.n_features_in_ = 0
        return self
