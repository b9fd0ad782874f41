"""End-to-end experiment runner: nested CV decoding for the linear,
CNN and CCA algorithms, marker statistics, TRF analysis and report
writing. Fully reproducible from the config seed; the AAD_JOBS
environment variable caps parallelism across participants.
"""

from __future__ import annotations

import csv
import json
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import cca as cca_mod
from . import cnn as cnn_mod
from .dataset import load_participant, participant_ids
from .harness import (
    Segment,
    chance_level,
    inner_spans,
    make_nested_cv,
    markers_from_reconstruction,
    null_markers,
    segment_indices,
    span_chunks,
    ttest,
    tune_backward,
)
from .linear import BACKWARD_LAGS, build_lag_matrix, reconstruct
from .trf import (
    bonferroni,
    cluster_permutation_test,
    crossval_trf,
    difference_trf,
    export_cluster_json,
    export_trf_csv,
    null_trfs,
)

ALGORITHMS = ("linear", "cnn", "cca")
FEATURES = ("envelope", "onset_envelope")

DEFAULT_SEGMENT_LENGTHS = (0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 30.0)

CSV_COLUMNS = (
    "participant",
    "algorithm",
    "feature",
    "marker_type",
    "segment_length_s",
    "trial",
    "start_s",
    "rho_att",
    "rho_ign",
    "score",
    "decision",
    "truth",
    "correct",
)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    output_dir: str
    seed: int = 0
    algorithms: tuple = ("linear",)
    features: tuple = ("envelope",)
    segment_lengths_s: tuple = DEFAULT_SEGMENT_LENGTHS
    hop_s: float = 1.0
    nonoverlap: bool = False
    marker_segment_s: float = 5.0
    with_markers: bool = True
    participants: tuple | None = None
    inner_folds: int = 5
    # CNN tuning
    cnn_grid: tuple = ((3, 1), (3, 2), (3, 3), (5, 1), (5, 2), (5, 3))
    cnn_max_epochs: int = 100
    cnn_patience: int = 5
    cnn_batch_size: int = 256
    cnn_lr: float = 0.001
    # CCA tuning
    cca_components_grid: tuple = (1, 2, 4, 8)
    cca_shrinkage_grid: tuple = (0.0, 1e-4, 1e-2)
    # TRF analysis
    with_trf: bool = False
    trf_null_shifts: int = 500
    trf_permutations: int = 1000

    def __post_init__(self):
        if not self.algorithms:
            raise ValueError("algorithm list is empty")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
        for f in self.features:
            if f not in FEATURES:
                raise ValueError(f"unknown feature {f!r}; choose from {FEATURES}")
        if not self.features:
            raise ValueError("feature list is empty")


def load_config(path) -> ExperimentConfig:
    """Read a JSON config file; keys mirror ExperimentConfig fields."""
    with open(path) as fh:
        raw = json.load(fh)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key in ("algorithms", "features", "segment_lengths_s", "participants",
                "cnn_grid", "cca_components_grid", "cca_shrinkage_grid"):
        if key in raw and raw[key] is not None:
            raw[key] = tuple(tuple(v) if isinstance(v, list) else v for v in raw[key])
    return ExperimentConfig(**raw)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _rows_from_markers(pid, algorithm, feature, marker_type, trial_index, markers):
    rows = []
    for m in markers:
        decision = "A" if m.delta > 0 else "B"
        rows.append(
            (
                pid,
                algorithm,
                feature,
                marker_type,
                m.length_s,
                trial_index,
                m.start_s,
                m.rho_attended,
                m.rho_ignored,
                m.delta,
                decision,
                "A",
                int(decision == "A"),
            )
        )
    return rows


def _eval_segment_sets(trial, config):
    hop = {}
    for length in config.segment_lengths_s:
        hop_s = length if config.nonoverlap else config.hop_s
        hop[length] = segment_indices(trial.n_samples, trial.fs, length, hop_s)
    return hop


def _marker_segments(trial, config):
    return segment_indices(
        trial.n_samples, trial.fs, config.marker_segment_s, config.marker_segment_s
    )


def _reconstruction_rows(pid, algorithm, feature, trials, recons, config):
    """Eval + marker + null rows for a reconstruction-based decoder."""
    rows = []
    for trial, recon in zip(trials, recons):
        for length, segments in _eval_segment_sets(trial, config).items():
            markers = markers_from_reconstruction(recon, trial, feature, segments)
            rows += _rows_from_markers(pid, algorithm, feature, "eval", trial.index, markers)
        if config.with_markers:
            segments = _marker_segments(trial, config)
            if len(segments) >= 2:
                markers = markers_from_reconstruction(recon, trial, feature, segments)
                rows += _rows_from_markers(
                    pid, algorithm, feature, "marker", trial.index, markers
                )
                null_seed = zlib.crc32(
                    f"{config.seed}|{pid}|{algorithm}|{feature}|{trial.index}".encode()
                )
                nulls = null_markers(recon, trial, segments, seed=null_seed, feature_kind=feature)
                rows += _rows_from_markers(
                    pid, algorithm, feature, "null", trial.index, nulls
                )
    return rows


def _decode_linear(pid, trials, feature, config):
    plan = make_nested_cv(len(trials), config.inner_folds, config.seed)
    models = tune_backward(plan, trials, feature_kind=feature)
    recons = [
        reconstruct(models[h], trials[h].eeg).samples for h in plan.outer
    ]
    return _reconstruction_rows(pid, "linear", feature, trials, recons, config)


def _cnn_chunk_pairs(trials, feature, spans_list):
    pairs = []
    for t, lo, hi in spans_list:
        trial = trials[t]
        eeg = trial.eeg.data[:, lo:hi]
        feat = trial.feature("attended", feature).samples[lo:hi]
        pairs.append((eeg, feat))
    return pairs


def _decode_cnn(pid, trials, feature, config):
    plan = make_nested_cv(len(trials), config.inner_folds, config.seed)
    lengths = [t.n_samples for t in trials]
    budget = cnn_mod.TrainBudget(
        batch_size=config.cnn_batch_size,
        max_epochs=config.cnn_max_epochs,
        patience=config.cnn_patience,
        lr=config.cnn_lr,
        seed=config.seed,
    )
    recons = []
    for held_out in plan.outer:
        train_idx = [i for i in range(len(trials)) if i != held_out]
        train_lengths = [lengths[i] for i in train_idx]
        spans = inner_spans(sum(train_lengths), plan.inner)
        # last inner fold is the early-stopping / model-selection split
        train_chunks, val_chunks = [], []
        for i, span in enumerate(spans):
            chunks = [
                (train_idx[j], lo, hi) for j, lo, hi in span_chunks(span, train_lengths)
            ]
            (val_chunks if i == plan.inner - 1 else train_chunks).extend(chunks)
        train_pairs = _cnn_chunk_pairs(trials, feature, train_chunks)
        val_pairs = _cnn_chunk_pairs(trials, feature, val_chunks)
        best = None
        for k, n_blocks in config.cnn_grid:
            hyper = cnn_mod.CnnHyper(kernel_size=k, n_blocks=n_blocks)
            model = cnn_mod.train_cnn(train_pairs, val_pairs, hyper, budget)
            if best is None or model.best_validation > best.best_validation:
                best = model
        recons.append(cnn_mod.reconstruct_cnn(best, trials[held_out].eeg))
    return _reconstruction_rows(pid, "cnn", feature, trials, recons, config)


def _cca_projections(model, eeg_rows, att_rows, ign_rows):
    px = (eeg_rows - model.eeg_mean) @ model.eeg_projection
    pa = (att_rows - model.feature_mean) @ model.feature_projection
    pi = (ign_rows - model.feature_mean) @ model.feature_projection
    return px, pa, pi


def _segment_corr_vec(px, py, seg) -> np.ndarray:
    from .linear import safe_pearson

    sl = seg.slice()
    return np.array(
        [safe_pearson(px[sl, i], py[sl, i]) for i in range(px.shape[1])]
    )


def _chunk_segments(chunks, fs, length_s):
    """Non-overlapping segments fully inside each (trial, lo, hi) chunk."""
    out = []
    length = max(int(round(length_s * fs)), 2)
    for t, lo, hi in chunks:
        start = lo
        while start + length <= hi:
            out.append((t, Segment(start, length, start / fs, length_s)))
            start += length
    return out


def _decode_cca(pid, trials, feature, config):
    plan = make_nested_cv(len(trials), config.inner_folds, config.seed)
    fs = trials[0].fs
    from .linear import _advance_matrix

    eeg_rows = [_advance_matrix(t.eeg, cca_mod.CCA_EEG_LAGS) for t in trials]
    att_rows = [
        build_lag_matrix(t.feature("attended", feature), cca_mod.CCA_FEATURE_LAGS)
        for t in trials
    ]
    ign_rows = [
        build_lag_matrix(t.feature("ignored", feature), cca_mod.CCA_FEATURE_LAGS)
        for t in trials
    ]
    lengths = [t.n_samples for t in trials]

    rows = []
    for held_out in plan.outer:
        train_idx = [i for i in range(len(trials)) if i != held_out]
        train_lengths = [lengths[i] for i in train_idx]
        spans = inner_spans(sum(train_lengths), plan.inner)
        fold_chunks = [
            [(train_idx[j], lo, hi) for j, lo, hi in span_chunks(s, train_lengths)]
            for s in spans
        ]

        def fit_for(chunks, shrinkage, n_comp):
            X = np.concatenate([eeg_rows[t][lo:hi] for t, lo, hi in chunks])
            Y = np.concatenate([att_rows[t][lo:hi] for t, lo, hi in chunks])
            return cca_mod.fit_cca(
                X, Y, shrinkage=shrinkage, n_components=n_comp,
                eeg_lags=cca_mod.CCA_EEG_LAGS, feature_lags=cca_mod.CCA_FEATURE_LAGS,
            )

        def lda_for(model, seg_list):
            diffs = []
            for t, seg in seg_list:
                px, pa, pi = _cca_projections(model, eeg_rows[t], att_rows[t], ign_rows[t])
                diffs.append(_segment_corr_vec(px, pa, seg) - _segment_corr_vec(px, pi, seg))
            diffs = np.asarray(diffs)
            return cca_mod.fit_lda(diffs, -diffs)

        def accuracy_for(model, lda, seg_list):
            correct = []
            for t, seg in seg_list:
                px, pa, pi = _cca_projections(model, eeg_rows[t], att_rows[t], ign_rows[t])
                d = _segment_corr_vec(px, pa, seg) - _segment_corr_vec(px, pi, seg)
                correct.append(lda.score(d) > 0)
            return float(np.mean(correct)) if correct else np.nan

        scores = {}
        for shrinkage in config.cca_shrinkage_grid:
            for n_comp in config.cca_components_grid:
                accs = []
                for i in range(plan.inner):
                    fit_chunks = [c for j, f in enumerate(fold_chunks) if j != i for c in f]
                    val_chunks = fold_chunks[i]
                    train_segs = _chunk_segments(fit_chunks, fs, config.marker_segment_s)
                    val_segs = _chunk_segments(val_chunks, fs, config.marker_segment_s)
                    if len(train_segs) < 2 or not val_segs:
                        continue
                    try:
                        model = fit_for(fit_chunks, shrinkage, n_comp)
                        lda = lda_for(model, train_segs)
                    except (ValueError, np.linalg.LinAlgError):
                        continue
                    accs.append(accuracy_for(model, lda, val_segs))
                if accs:
                    scores[(shrinkage, n_comp)] = float(np.mean(accs))
        if not scores:
            raise ValueError(f"{pid}: no usable CCA tuning scores")
        best_key = max(sorted(scores), key=lambda k: scores[k])
        all_chunks = [c for f in fold_chunks for c in f]
        model = fit_for(all_chunks, *best_key)
        lda = lda_for(model, _chunk_segments(all_chunks, fs, config.marker_segment_s))

        trial = trials[held_out]
        px, pa, pi = _cca_projections(
            model, eeg_rows[held_out], att_rows[held_out], ign_rows[held_out]
        )
        for length, segments in _eval_segment_sets(trial, config).items():
            for seg in segments:
                vec_a = _segment_corr_vec(px, pa, seg)
                vec_b = _segment_corr_vec(px, pi, seg)
                margin = lda.score(vec_a - vec_b)
                decision = "A" if margin >= 0 else "B"
                rows.append(
                    (
                        pid, "cca", feature, "eval", length, trial.index,
                        seg.start_s, float(vec_a[0]), float(vec_b[0]),
                        margin, decision, "A", int(decision == "A"),
                    )
                )
    return rows


_DECODERS = {"linear": _decode_linear, "cnn": _decode_cnn, "cca": _decode_cca}


def _participant_rows(args):
    config, pid = args
    trials = load_participant(config.dataset, pid)
    rows = []
    for algorithm in config.algorithms:
        for feature in config.features:
            rows += _DECODERS[algorithm](pid, trials, feature, config)
    return rows


def _job_count() -> int:
    try:
        return max(1, int(os.environ.get("AAD_JOBS", "1")))
    except ValueError:
        return 1


def run_experiment(config: ExperimentConfig) -> dict:
    """Run the configured decoders over every participant.

    Writes results.csv (one row per segment) and summary.json into the
    output directory and returns the summary dict. Two runs with the
    same config and seed produce byte-identical outputs.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pids = list(config.participants or participant_ids(config.dataset))

    jobs = _job_count()
    if jobs > 1 and len(pids) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_participant = list(
                pool.map(_participant_rows, [(config, pid) for pid in pids])
            )
    else:
        per_participant = [_participant_rows((config, pid)) for pid in pids]

    rows = [r for chunk in per_participant for r in chunk]
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4], r[5], r[6]))

    results_path = out_dir / "results.csv"
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])

    summary = summarize_rows(rows)
    summary["config"] = {
        "dataset": str(config.dataset),
        "seed": config.seed,
        "algorithms": list(config.algorithms),
        "features": list(config.features),
        "segment_lengths_s": list(config.segment_lengths_s),
    }
    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if config.with_trf:
        run_trf_analysis(config)
    return summary


def summarize_rows(rows) -> dict:
    """Accuracy per (participant, algorithm, feature, length) from eval rows."""
    acc: dict = {}
    for r in rows:
        pid, algorithm, feature, marker_type, length = r[0], r[1], r[2], r[3], r[4]
        if marker_type != "eval":
            continue
        key = (pid, algorithm, feature, float(length))
        hit = acc.setdefault(key, [0, 0])
        hit[0] += int(r[12])
        hit[1] += 1
    per_key = []
    for (pid, algorithm, feature, length), (k, n) in sorted(acc.items()):
        per_key.append(
            {
                "participant": pid,
                "algorithm": algorithm,
                "feature": feature,
                "segment_length_s": length,
                "n_segments": n,
                "accuracy": k / n,
                "chance_level": chance_level(n),
            }
        )
    means: dict = {}
    for entry in per_key:
        key = (entry["algorithm"], entry["feature"], entry["segment_length_s"])
        means.setdefault(key, []).append(entry["accuracy"])
    mean_rows = [
        {
            "algorithm": a,
            "feature": f,
            "segment_length_s": l,
            "mean_accuracy": float(np.mean(v)),
            "n_participants": len(v),
        }
        for (a, f, l), v in sorted(means.items())
    ]
    return {"per_participant": per_key, "mean_accuracy": mean_rows}


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def marker_stats(results_path, alpha: float = 0.05) -> list[dict]:
    """Single-tailed unpaired t-tests of true vs null markers.

    One test per (participant, algorithm, feature); the Bonferroni
    correction uses the participant count within each algorithm/feature
    pair.
    """
    rows = read_results_csv(results_path)
    groups: dict = {}
    for r in rows:
        if r["marker_type"] not in ("marker", "null"):
            continue
        key = (r["participant"], r["algorithm"], r["feature"])
        groups.setdefault(key, {"marker": [], "null": []})[r["marker_type"]].append(
            float(r["score"])
        )
    m_by_pair: dict = {}
    for pid, algorithm, feature in groups:
        m_by_pair[(algorithm, feature)] = m_by_pair.get((algorithm, feature), 0) + 1
    out = []
    for (pid, algorithm, feature), data in sorted(groups.items()):
        if len(data["marker"]) < 2 or len(data["null"]) < 2:
            continue
        t, p = ttest("unpaired", "single", data["marker"], data["null"])
        m = m_by_pair[(algorithm, feature)]
        out.append(
            {
                "participant": pid,
                "algorithm": algorithm,
                "feature": feature,
                "t": t,
                "p": p,
                "m": m,
                "significant": bool(p < alpha / m),
            }
        )
    return out


def run_trf_analysis(config: ExperimentConfig) -> dict:
    """Cross-validated TRFs, difference TRFs, null TRFs and cluster tests.

    Exports grand-average TRF curves as CSV and one cluster JSON per
    (feature, role); the Bonferroni count is 12 (2 channels x 2 features
    x 3 rows, as displayed).
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pids = list(config.participants or participant_ids(config.dataset))
    results = {}
    p_values = []
    panels = []
    for feature in config.features:
        per_role: dict = {"attended": [], "ignored": [], "difference": []}
        nulls = []
        for p_idx, pid in enumerate(pids):
            trials = load_participant(config.dataset, pid)
            att = crossval_trf(trials, feature_kind=feature, role="attended")
            ign = crossval_trf(trials, feature_kind=feature, role="ignored")
            per_role["attended"].append(att)
            per_role["ignored"].append(ign)
            per_role["difference"].append(difference_trf(att, ign))
            nulls += null_trfs(
                trials,
                feature_kind=feature,
                n_shifts=config.trf_null_shifts,
                seed=config.seed + p_idx,
            )
        for role, trf_list in per_role.items():
            from .trf import TrfSet

            grand = TrfSet(trf_list).grand_average()
            export_trf_csv(out_dir / f"trf_{feature}_{role}.csv", grand)
            if len(trf_list) >= 2:
                result = cluster_permutation_test(
                    trf_list,
                    nulls,
                    n_perm=config.trf_permutations,
                    seed=config.seed,
                )
                export_cluster_json(out_dir / f"clusters_{feature}_{role}.json", result)
                results[(feature, role)] = result
                p_values.append(result.p_value)
                panels.append({"feature": feature, "role": role, "p": result.p_value})
    decisions = bonferroni(p_values, 12) if p_values else []
    for panel, sig in zip(panels, decisions):
        panel["significant"] = bool(sig)
    with open(out_dir / "trf_tests.json", "w") as fh:
        json.dump(panels, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return results
