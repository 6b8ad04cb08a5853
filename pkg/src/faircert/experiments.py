"""Experiment harnesses behind the CLI.

Coverage: repeated draw-and-decide trials against a planted distribution,
reporting per-trial outcomes and the overall certification rate. Attack: a
nearest-neighbor router that serves a fair model near the (augmented)
reference set it expects to be tested on and an unfair model elsewhere,
swept over the distance threshold. Sweep: model quality and gap as the
augmentation degree grows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

from .augmentor import AugmentorConfig, augment_dataset
from .fairness import (
    FairnessMetric,
    FairnessSpec,
    TestReport,
    build_risk_table,
    decide,
    empirical_gap,
)
from .model import (
    Dataset,
    ModelSpec,
    PlantedConfig,
    Sample,
    generate_planted,
    predict,
)
from .prg import derive_key

from . import fixedpoint as fx


@dataclass(frozen=True)
class TrialResult:
    trial: int
    true_gap: Fraction
    report: TestReport


def _gap_for_metric(gaps, metric: FairnessMetric) -> Fraction:
    return {
        FairnessMetric.ORE: gaps.ore,
        FairnessMetric.EO: gaps.eo,
        FairnessMetric.DP: gaps.dp,
    }[metric]


def run_coverage(
    config: PlantedConfig,
    spec: FairnessSpec,
    trials: int,
    *,
    m: int = 0,
    group_counts: tuple[int, ...] | None = None,
) -> list[TrialResult]:
    """Draw a fresh planted instance per trial and run the decision rule."""
    if trials < 1:
        raise ValueError("at least one trial required")
    results = []
    for t in range(trials):
        cfg = replace(config, seed=derive_key(config.seed, f"trial-{t}"))
        dataset, model, gaps = generate_planted(cfg, m, group_counts=group_counts)
        predictions = [predict(model, s) for s in dataset.samples]
        report = decide(spec, build_risk_table(dataset, predictions))
        results.append(
            TrialResult(trial=t, true_gap=_gap_for_metric(gaps, spec.metric), report=report)
        )
    return results


def pass_rate(results: Sequence[TrialResult]) -> Fraction:
    return Fraction(sum(1 for r in results if r.report.passed), len(results))


def write_coverage_csv(fh, results: Sequence[TrialResult]) -> None:
    writer = csv.writer(fh)
    writer.writerow(["trial", "true_gap", "efg", "decision"])
    for r in results:
        writer.writerow(
            [r.trial, f"{float(r.true_gap):.6f}", f"{float(r.report.efg):.6f}",
             "pass" if r.report.passed else "fail"]
        )
    mean_efg = sum(float(r.report.efg) for r in results) / len(results)
    writer.writerow(
        ["summary", f"{float(results[0].true_gap):.6f}", f"{mean_efg:.6f}",
         f"{float(pass_rate(results)):.6f}"]
    )


@dataclass(frozen=True)
class AttackPoint:
    tau: float
    accuracy: Fraction
    efg: Fraction
    routed_unfair_fraction: Fraction


def _squared_distance(a: tuple[int, ...], b: tuple[int, ...]) -> int:
    total = 0
    for x, y in zip(a, b):
        d = x - y
        total += d * d
    return total


def knn_attack_sweep(
    fair_model: ModelSpec,
    unfair_model: ModelSpec,
    reference_features: Sequence[tuple[int, ...]],
    eval_dataset: Dataset,
    taus: Iterable[float],
) -> list[AttackPoint]:
    """Nearest-neighbor (k = 1) routing between two models.

    A query is answered by the fair model when its distance to the closest
    reference point is at most tau, by the unfair model otherwise. Reports
    accuracy, the per-group-risk gap, and the routed-to-unfair fraction on
    the eval set for each tau.
    """
    if not reference_features:
        raise ValueError("reference set must be nonempty")
    nearest_sq = [
        min(_squared_distance(s.features, ref) for ref in reference_features)
        for s in eval_dataset.samples
    ]
    points = []
    for tau in taus:
        if tau < 0 or math.isnan(tau):
            raise ValueError("tau must be nonnegative")
        tau_sq = (tau * fx.ONE) ** 2 if not math.isinf(tau) else math.inf
        predictions = []
        routed_unfair = 0
        for sample, d_sq in zip(eval_dataset.samples, nearest_sq):
            if d_sq <= tau_sq:
                predictions.append(predict(fair_model, sample))
            else:
                predictions.append(predict(unfair_model, sample))
                routed_unfair += 1
        table = build_risk_table(eval_dataset, predictions)
        correct = sum(
            1 for s, p in zip(eval_dataset.samples, predictions) if s.label == p
        )
        points.append(
            AttackPoint(
                tau=tau,
                accuracy=Fraction(correct, len(predictions)),
                efg=empirical_gap(table, FairnessMetric.ORE),
                routed_unfair_fraction=Fraction(routed_unfair, len(predictions)),
            )
        )
    return points


def write_attack_csv(fh, points: Sequence[AttackPoint]) -> None:
    writer = csv.writer(fh)
    writer.writerow(["tau", "accuracy", "efg", "routed_unfair_fraction"])
    for p in points:
        writer.writerow(
            [f"{p.tau:g}", f"{float(p.accuracy):.6f}", f"{float(p.efg):.6f}",
             f"{float(p.routed_unfair_fraction):.6f}"]
        )


@dataclass(frozen=True)
class SweepPoint:
    degree: Fraction
    accuracy: Fraction
    efg: Fraction


def augmentation_sweep(
    config: PlantedConfig,
    m: int,
    base_aug: AugmentorConfig,
    degrees: Sequence[Fraction],
) -> list[SweepPoint]:
    """Evaluate the planted model on increasingly augmented copies of one
    drawn test set. Reported, not asserted: the effect is not monotone."""
    dataset, model, _ = generate_planted(config, m)
    points = []
    for degree in degrees:
        aug = replace(base_aug, degree=degree)
        augmented = augment_dataset(aug, dataset)
        predictions = [predict(model, s) for s in augmented.samples]
        table = build_risk_table(augmented, predictions)
        correct = sum(
            1 for s, p in zip(augmented.samples, predictions) if s.label == p
        )
        points.append(
            SweepPoint(
                degree=degree,
                accuracy=Fraction(correct, len(predictions)),
                efg=empirical_gap(table, FairnessMetric.ORE),
            )
        )
    return points


def write_sweep_csv(fh, points: Sequence[SweepPoint]) -> None:
    writer = csv.writer(fh)
    writer.writerow(["degree", "accuracy", "efg"])
    for p in points:
        writer.writerow(
            [f"{float(p.degree):.6f}", f"{float(p.accuracy):.6f}", f"{float(p.efg):.6f}"]
        )
