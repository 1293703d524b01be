"""End-to-end synthetic experiment: generate, train, probe, classify, score."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .classifier import ALL_COMPONENTS, fit_classifier, kmeans_baseline
from .data import EmbeddingSet, RiskTier
from .diagnostics import ManifoldReport, manifold_report
from .prototypes import class_centroids
from .risk import CostMatrix, EvaluationReport, evaluate_predictions, stratified_split
from .ssv import GlobalStats, RepresentativeSet, fit_global_stats, probe
from .synthetic import SyntheticData, SyntheticSpec, generate_synthetic
from .trainer import TrainConfig, TrainLog, embed, train


@dataclass
class ProbedData:
    ssvs: np.ndarray
    tiers: np.ndarray
    stats: GlobalStats
    reps: RepresentativeSet


def representatives(bank, train_embedded: EmbeddingSet, kind: str = "prototypes") -> RepresentativeSet:
    if kind == "prototypes":
        return RepresentativeSet.from_bank(bank)
    if kind == "centroids":
        return RepresentativeSet.from_centroids(
            class_centroids(train_embedded.vectors, train_embedded.labels, bank.num_classes)
        )
    raise ValueError(f"unknown representative kind {kind!r}")


def probe_sets(head, bank, train_set, eval_sets, kind="prototypes", ridge=None) -> ProbedData:
    train_z = embed(head, train_set)
    stats = fit_global_stats(train_z.vectors, ridge)
    reps = representatives(bank, train_z, kind)
    blocks, tiers = [], []
    for s in eval_sets:
        blocks.append(probe(embed(head, s).vectors, stats, reps))
        tiers.append(np.full(len(s), int(s.risk_tier), dtype=np.int64))
    return ProbedData(np.concatenate(blocks), np.concatenate(tiers), stats, reps)


def classify(ssvs, tiers, components=ALL_COMPONENTS, test_fraction=0.5, seed=0, cost=None,
             method="ssv") -> EvaluationReport:
    """Fit on a stratified train split of the SSVs, report on the held-out part."""
    tr, te = stratified_split(tiers, test_fraction, seed)
    if method == "ssv":
        clf = fit_classifier(ssvs[tr], tiers[tr], seed=seed, components=components)
        pred = clf.predict(ssvs[te])
    elif method == "kmeans":
        pred = kmeans_baseline(ssvs[te][:, list(components)], tiers[te], seed=seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return evaluate_predictions(tiers[te], pred, cost)


@dataclass
class ExperimentResult:
    data: SyntheticData
    train_log: TrainLog
    manifold: ManifoldReport
    probed: ProbedData
    evaluation: EvaluationReport
    head: object
    bank: object

    def component_f1(self, components, seed=0) -> float:
        return classify(self.probed.ssvs, self.probed.tiers, components, seed=seed).macro_f1


def run_experiment(spec: SyntheticSpec | None = None, cfg: TrainConfig | None = None, kind="prototypes",
                   cost: CostMatrix | None = None, classifier_seed: int | None = None) -> ExperimentResult:
    spec = spec or SyntheticSpec()
    cfg = cfg or TrainConfig(seed=spec.seed)
    data = generate_synthetic(spec)
    head, bank, tlog = train(data.train, data.hierarchy, cfg)
    test_z = embed(head, data.id_test)
    manifold = manifold_report(test_z.vectors, test_z.labels, data.hierarchy, bank.prototypes)
    probed = probe_sets(head, bank, data.train, [data.id_test, data.near_ood, data.far_ood], kind)
    seed = spec.seed if classifier_seed is None else classifier_seed
    evaluation = classify(probed.ssvs, probed.tiers, seed=seed, cost=cost)
    return ExperimentResult(data, tlog, manifold, probed, evaluation, head, bank)


def ablation_pair(spec: SyntheticSpec, cfg: TrainConfig | None = None):
    """(with hierarchy loss, without) on identical data and seeds."""
    cfg = cfg or TrainConfig(seed=spec.seed)
    with_h = run_experiment(spec, replace(cfg, hierarchy_loss_enabled=True))
    without = run_experiment(spec, replace(cfg, hierarchy_loss_enabled=False))
    return with_h, without


__all__ = [
    "ExperimentResult",
    "ProbedData",
    "ablation_pair",
    "classify",
    "probe_sets",
    "representatives",
    "run_experiment",
    "RiskTier",
]
