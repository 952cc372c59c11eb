"""Metrics, experiment protocols and dominance diagnostics.

Absolute headline numbers depend on the data; the protocols here report
model rankings and boundary behavior on whatever cascade set they are given,
at desk scale.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .features import Cascade, Network, extract_features, extract_subcascades
from .fitting import (
    DEFAULT_HYPERPARAMS,
    FitOptions,
    Hyperparams,
    fit_model,
)
from .predict import BasicPredictor, ModelDynamics, PartialCascade, ProcessCurve

__all__ = [
    "PredictionRecord",
    "rmsle",
    "sigma_precision",
    "process_precision",
    "stratified_folds",
    "run_experiment",
    "ExperimentReport",
    "dominance_report",
    "LogLinearModel",
]

PROTOCOLS = ("size", "outbreak", "process", "out_of_sample")
SURVIVAL_MODEL_KINDS = ("newer", "weibull", "exponential", "rayleigh", "cox")


@dataclass(frozen=True)
class PredictionRecord:
    cascade_id: str
    truth: float
    predicted: float
    task: str = "size"


def rmsle(records: Iterable[PredictionRecord]) -> float:
    """Root mean squared error of log predictions vs log truth."""
    records = list(records)
    if not records:
        raise DataError("rmsle needs at least one record")
    for r in records:
        if r.truth <= 0 or r.predicted <= 0:
            raise DataError(
                f"rmsle requires positive values, got ({r.predicted}, {r.truth}) "
                f"for cascade {r.cascade_id!r}"
            )
    sq = [(math.log(r.predicted) - math.log(r.truth)) ** 2 for r in records]
    return math.sqrt(sum(sq) / len(sq))


def sigma_precision(records: Iterable[PredictionRecord], sigma: float = 0.2) -> float:
    """Fraction of predictions within truth * (1 +- sigma)."""
    if not (0.0 < sigma < 1.0):
        raise DataError(f"sigma must lie in (0, 1), got {sigma}")
    records = list(records)
    if not records:
        raise DataError("sigma_precision needs at least one record")
    hits = sum(
        1 for r in records
        if r.truth * (1.0 - sigma) <= r.predicted <= r.truth * (1.0 + sigma)
    )
    return hits / len(records)


def process_precision(curve_pred: ProcessCurve, curve_truth: ProcessCurve,
                      sigma: float = 0.2) -> float:
    """Fraction of grid points where the predicted size is within the sigma
    band of the true size. Both curves must share the same grid."""
    if not (0.0 < sigma < 1.0):
        raise DataError(f"sigma must lie in (0, 1), got {sigma}")
    if list(curve_pred.times) != list(curve_truth.times):
        raise DataError("process curves are defined on different time grids")
    hits = sum(
        1 for p, t in zip(curve_pred.sizes, curve_truth.sizes)
        if t * (1.0 - sigma) <= p <= t * (1.0 + sigma)
    )
    return hits / len(curve_pred.times)


# ---------------------------------------------------------------------------
# Protocol machinery
# ---------------------------------------------------------------------------

def stratified_folds(cascades: Sequence[Cascade], n_folds: int, seed: int) -> list[list[int]]:
    """Fold indices stratified by log-size decile to tame power-law variance."""
    if n_folds < 2:
        raise DataError(f"need at least 2 folds, got {n_folds}")
    if len(cascades) < n_folds:
        raise DataError(f"{len(cascades)} cascades cannot fill {n_folds} folds")
    log_sizes = np.log([c.size for c in cascades])
    edges = np.quantile(log_sizes, np.linspace(0.1, 0.9, 9))
    strata = np.searchsorted(edges, log_sizes, side="right")
    rng = np.random.default_rng([seed, 7])
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    cursor = 0
    for s in sorted(set(strata.tolist())):
        members = [i for i in range(len(cascades)) if strata[i] == s]
        rng.shuffle(members)
        for i in members:
            folds[cursor % n_folds].append(i)
            cursor += 1
    if any(not f for f in folds):
        raise DataError("insufficient cascades for a fold")
    return [sorted(f) for f in folds]


class LogLinearModel:
    """Regression of log final size on early-stage cascade features."""

    FEATURES = ("observed_size", "growth_speed", "root_followers",
                "mean_followers", "max_depth", "mean_depth")

    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=float)

    @staticmethod
    def design_row(cascade: Cascade, prefix: int, net: Network) -> np.ndarray:
        events = cascade.events[:prefix]
        t0 = events[0].t
        duration = events[-1].t - t0 + 1.0
        depth = {events[0].user: 0}
        followers = []
        for ev in events:
            followers.append(net.follower_count(ev.user))
            if ev.parent is not None:
                depth[ev.user] = depth[ev.parent] + 1
        depths = [depth[ev.user] for ev in events[1:]]
        row = [
            float(prefix),
            prefix / duration,
            net.follower_count(events[0].user) + 1.0,
            float(np.mean(followers)) + 1.0,
            (max(depths) if depths else 0) + 1.0,
            (float(np.mean(depths)) if depths else 0.0) + 1.0,
        ]
        return np.log(row)

    @classmethod
    def fit(cls, cascades: Sequence[Cascade], prefix: int, net: Network) -> "LogLinearModel":
        usable = [c for c in cascades if c.size > prefix]
        if not usable:
            raise DataError(f"no training cascade is larger than prefix {prefix}")
        rows = np.stack([cls.design_row(c, prefix, net) for c in usable])
        design = np.column_stack([rows, np.ones(len(usable))])
        y = np.log([c.size for c in usable])
        w, *_ = np.linalg.lstsq(design, y, rcond=None)
        return cls(w)

    def predict_final(self, cascade: Cascade, prefix: int, net: Network) -> float:
        row = np.append(self.design_row(cascade, prefix, net), 1.0)
        return max(float(np.exp(row @ self.weights)), float(prefix))


@dataclass
class ExperimentReport:
    protocol: str
    sigma: float
    rows: list[dict]
    notes: list[str]

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        csv_path = outdir / f"{self.protocol}_results.csv"
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "sweep", "n", "rmsle", "precision"])
            for row in self.rows:
                writer.writerow([row["model"], row["sweep"], row["n"],
                                 repr(row["rmsle"]), repr(row["precision"])])
        summary = {
            "protocol": self.protocol,
            "sigma": self.sigma,
            "rows": self.rows,
            "notes": self.notes,
        }
        (outdir / f"{self.protocol}_summary.json").write_text(
            json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )


def _fit_fold_models(kinds, train_cascades, net, hyper, options):
    samples = extract_subcascades(train_cascades)
    feats = extract_features(net, train_cascades)
    fitted = {}
    for kind in kinds:
        if kind == "loglinear":
            continue
        model, _ = fit_model(kind, samples, feats, hyper, options)
        fitted[kind] = ModelDynamics(model, feats)
    return fitted, feats


def _aggregate(records: dict[tuple[str, object], list[PredictionRecord]],
               sigma: float) -> list[dict]:
    rows = []
    for (model, sweep) in sorted(records, key=lambda key: (key[0], str(key[1]))):
        recs = records[(model, sweep)]
        rows.append({
            "model": model,
            "sweep": sweep,
            "n": len(recs),
            "rmsle": rmsle(recs),
            "precision": sigma_precision(recs, sigma),
        })
    return rows


def run_experiment(protocol: str, cascades: Sequence[Cascade], net: Network,
                   models: Sequence[str] = ("newer", "exponential", "rayleigh", "cox"),
                   *, folds: int = 10, prefix_sizes: Sequence[int] = (5, 10, 25),
                   early_fractions: Sequence[float] = (0.1, 0.25, 0.5),
                   sigma: float = 0.2, outbreak_threshold: int = 1000,
                   hidden_fraction: float = 0.1, grid_points: int = 20,
                   seed: int = 0, hyperparams: Hyperparams = DEFAULT_HYPERPARAMS,
                   options: FitOptions | None = None) -> ExperimentReport:
    """Run one evaluation protocol and aggregate RMSLE / sigma-precision
    per model across the protocol's sweep variable."""
    if protocol not in PROTOCOLS:
        raise DataError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    for kind in models:
        if kind not in SURVIVAL_MODEL_KINDS and kind != "loglinear":
            raise DataError(f"unknown model kind {kind!r}")
    opts = options or FitOptions()
    cascades = list(cascades)
    notes: list[str] = []

    if protocol == "size":
        rows = _protocol_size(cascades, net, models, folds, prefix_sizes, sigma,
                              seed, hyperparams, opts)
    elif protocol == "outbreak":
        survival_models = [m for m in models if m != "loglinear"]
        if len(survival_models) < len(models):
            notes.append("loglinear cannot predict outbreak times; skipped")
        rows = _protocol_outbreak(cascades, net, survival_models, folds, prefix_sizes,
                                  sigma, outbreak_threshold, seed, hyperparams, opts)
    elif protocol == "process":
        survival_models = [m for m in models if m != "loglinear"]
        if len(survival_models) < len(models):
            notes.append("loglinear cannot predict process curves; skipped")
        rows = _protocol_process(cascades, net, survival_models, folds, early_fractions,
                                 sigma, grid_points, seed, hyperparams, opts)
    else:
        survival_models = [m for m in models if m != "loglinear"]
        if len(survival_models) < len(models):
            notes.append("loglinear is not an out-of-sample dynamics model; skipped")
        rows = _protocol_out_of_sample(cascades, net, survival_models, prefix_sizes,
                                       sigma, hidden_fraction, seed, hyperparams, opts)
    return ExperimentReport(protocol=protocol, sigma=sigma, rows=rows, notes=notes)


def _protocol_size(cascades, net, models, folds, prefix_sizes, sigma, seed,
                   hyper, opts):
    fold_indices = stratified_folds(cascades, folds, seed)
    records: dict[tuple[str, object], list[PredictionRecord]] = {}
    for fold in fold_indices:
        test_set = set(fold)
        train = [c for i, c in enumerate(cascades) if i not in test_set]
        fitted, _ = _fit_fold_models(models, train, net, hyper, opts)
        loglinear = {}
        if "loglinear" in models:
            for s in prefix_sizes:
                loglinear[s] = LogLinearModel.fit(train, s, net)
        for i in fold:
            cascade = cascades[i]
            for s in prefix_sizes:
                if cascade.size <= s:
                    continue
                pc = PartialCascade.first_events(cascade, s, net.n_nodes)
                truth = float(cascade.size)
                for kind, dyn in fitted.items():
                    pred = BasicPredictor(pc, dyn).final_size()
                    records.setdefault((kind, s), []).append(
                        PredictionRecord(cascade.cascade_id, truth, pred))
                if "loglinear" in models:
                    pred = loglinear[s].predict_final(cascade, s, net)
                    records.setdefault(("loglinear", s), []).append(
                        PredictionRecord(cascade.cascade_id, truth, pred))
    return _aggregate(records, sigma)


def _true_outbreak_time(cascade: Cascade, threshold: int) -> float | None:
    if cascade.size < threshold:
        return None
    return cascade.events[threshold - 1].t


def _protocol_outbreak(cascades, net, models, folds, prefix_sizes, sigma,
                       threshold, seed, hyper, opts):
    eligible = [c for c in cascades if c.size >= threshold]
    if not eligible:
        raise DataError(f"no cascade reaches the outbreak threshold {threshold}")
    horizon = max(c.events[-1].t for c in cascades)
    fold_indices = stratified_folds(cascades, folds, seed)
    records: dict[tuple[str, object], list[PredictionRecord]] = {}
    for fold in fold_indices:
        test_set = set(fold)
        train = [c for i, c in enumerate(cascades) if i not in test_set]
        fitted, _ = _fit_fold_models(models, train, net, hyper, opts)
        for i in fold:
            cascade = cascades[i]
            truth_t = _true_outbreak_time(cascade, threshold)
            if truth_t is None:
                continue
            t0 = cascade.root.t
            for s in prefix_sizes:
                if cascade.size <= s or s >= threshold:
                    continue
                pc = PartialCascade.first_events(cascade, s, net.n_nodes)
                t_max = pc.t_limit + 2.0 * (horizon - t0) + 1.0
                for kind, dyn in fitted.items():
                    pred_t = BasicPredictor(pc, dyn).outbreak_time(threshold, t_max)
                    if pred_t is None:
                        pred_t = t_max  # "never" capped at the search horizon
                    records.setdefault((kind, s), []).append(PredictionRecord(
                        cascade.cascade_id, truth_t - t0 + 1.0, pred_t - t0 + 1.0,
                        task="outbreak"))
    return _aggregate(records, sigma)


def _protocol_process(cascades, net, models, folds, early_fractions, sigma,
                      grid_points, seed, hyper, opts):
    fold_indices = stratified_folds(cascades, folds, seed)
    precisions: dict[tuple[str, object], list[float]] = {}
    records: dict[tuple[str, object], list[PredictionRecord]] = {}
    for fold in fold_indices:
        test_set = set(fold)
        train = [c for i, c in enumerate(cascades) if i not in test_set]
        fitted, _ = _fit_fold_models(models, train, net, hyper, opts)
        for i in fold:
            cascade = cascades[i]
            t0, t_end = cascade.root.t, cascade.events[-1].t
            if t_end <= t0:
                continue
            for frac in early_fractions:
                t_lim = t0 + frac * (t_end - t0)
                pc = PartialCascade.from_cascade(cascade, t_lim, net.n_nodes)
                grid = np.linspace(t_lim, t_end, grid_points).tolist()
                truth_curve = ProcessCurve(
                    times=grid, sizes=[float(cascade.size_at(t)) for t in grid])
                for kind, dyn in fitted.items():
                    pred_curve = BasicPredictor(pc, dyn).process_curve(grid)
                    precisions.setdefault((kind, frac), []).append(
                        process_precision(pred_curve, truth_curve, sigma))
                    for t, p, tr in zip(grid, pred_curve.sizes, truth_curve.sizes):
                        records.setdefault((kind, frac), []).append(PredictionRecord(
                            cascade.cascade_id, tr, p, task="process-point"))
    rows = []
    for key in sorted(records, key=lambda key: (key[0], str(key[1]))):
        kind, frac = key
        rows.append({
            "model": kind,
            "sweep": frac,
            "n": len(precisions[key]),
            "rmsle": rmsle(records[key]),
            "precision": float(np.mean(precisions[key])),
        })
    return rows


def _protocol_out_of_sample(cascades, net, models, prefix_sizes, sigma,
                            hidden_fraction, seed, hyper, opts):
    samples = extract_subcascades(cascades)
    eligible = sorted(u for u, s in samples.items() if s.n >= opts.min_events)
    if len(eligible) < 2:
        raise DataError("too few users with samples to hide any")
    rng = np.random.default_rng([seed, 91])
    n_hidden = max(1, int(round(hidden_fraction * len(eligible))))
    hidden = set(rng.choice(eligible, size=n_hidden, replace=False).tolist())
    visible_samples = {u: s for u, s in samples.items() if u not in hidden}
    feats = extract_features(net, cascades)
    fitted = {}
    for kind in models:
        model, _ = fit_model(kind, visible_samples, feats, hyper, opts)
        fitted[kind] = ModelDynamics(model, feats)
    records: dict[tuple[str, object], list[PredictionRecord]] = {}
    for cascade in cascades:
        for s in prefix_sizes:
            if cascade.size <= s:
                continue
            prefix_users = {e.user for e in cascade.events[:s]}
            if not (prefix_users & hidden):
                continue
            pc = PartialCascade.first_events(cascade, s, net.n_nodes)
            truth = float(cascade.size)
            for kind, dyn in fitted.items():
                pred = BasicPredictor(pc, dyn).final_size()
                records.setdefault((kind, s), []).append(
                    PredictionRecord(cascade.cascade_id, truth, pred))
    if not records:
        raise DataError("no test cascade contains a hidden user in its prefix")
    return _aggregate(records, sigma)


# ---------------------------------------------------------------------------
# Dominance diagnostics
# ---------------------------------------------------------------------------

def dominance_report(cascades: Iterable[Cascade]) -> dict:
    """Descriptive report of how concentrated cascade generation is: per-user
    shares of generated children and the join times of the dominant users."""
    per_cascade = []
    for cascade in sorted(cascades, key=lambda c: c.cascade_id):
        children: dict[str, int] = {}
        join_time = {ev.user: ev.t for ev in cascade.events}
        for ev in cascade.events:
            if ev.parent is not None:
                children[ev.parent] = children.get(ev.parent, 0) + 1
        total = cascade.size - 1
        t0, t_end = cascade.root.t, cascade.events[-1].t
        span = max(t_end - t0, 1.0)
        contributors = sorted(children.items(), key=lambda kv: (-kv[1], kv[0]))
        shares = [c / total for _, c in contributors] if total else []
        cumulative = np.cumsum(shares).tolist() if shares else []
        half_idx = next((i for i, c in enumerate(cumulative) if c >= 0.5), None)
        dominant = [u for u, _ in contributors[: (half_idx + 1)]] if half_idx is not None else []
        dom_times = sorted((join_time[u] - t0) / span for u in dominant)
        top_count = max(1, math.ceil(0.01 * cascade.size))
        share_top_1pct = float(sum(shares[:top_count])) if shares else 0.0
        per_cascade.append({
            "cascade": cascade.cascade_id,
            "size": cascade.size,
            "shares": shares,
            "cumulative": cumulative,
            "top_share": shares[0] if shares else 0.0,
            "share_top_1pct": share_top_1pct,
            "dominant_join_quantiles": (
                [float(np.quantile(dom_times, q)) for q in (0.25, 0.5, 0.75)]
                if dom_times else []
            ),
        })
    agg = {
        "n_cascades": len(per_cascade),
        "mean_top_share": float(np.mean([c["top_share"] for c in per_cascade]))
        if per_cascade else 0.0,
        "mean_share_top_1pct": float(np.mean([c["share_top_1pct"] for c in per_cascade]))
        if per_cascade else 0.0,
    }
    return {"cascades": per_cascade, "aggregate": agg}
