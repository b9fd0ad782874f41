"""Command-line interface: feature extraction, synthetic datasets,
TRF analysis, attention decoding, marker statistics and reports."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np


def _cmd_features(args):
    from .features import auditory_envelope, onset_envelope
    from .io import file_digest, read_wav, write_f32
    from .signals import MultiSignal

    audio = read_wav(args.audio)
    if isinstance(audio, MultiSignal):
        audio = type(audio.channel(audio.channels[0]))(
            audio.data.mean(axis=0), audio.fs
        )
    envelope = auditory_envelope(audio)
    feature = envelope if args.kind == "envelope" else onset_envelope(
        auditory_envelope(audio, standardized=False)
    )
    out = args.out or Path(args.audio).with_suffix(f".{args.kind}.f32")
    write_f32(
        out,
        feature.samples,
        feature.fs,
        channels=["feature"],
        extra={"feature_kind": feature.kind, "source_digest": file_digest(args.audio)},
    )
    print(f"wrote {out} ({len(feature)} samples at {feature.fs:g} Hz)")


def _cmd_synth(args):
    from .synth import SynthConfig, gen_dataset

    config = SynthConfig(
        participants=args.participants,
        trials=args.trials,
        duration=args.duration,
        g_att=args.g_att,
        g_ign=args.g_ign,
        snr_db=args.snr,
        seed=args.seed,
    )
    gen_dataset(config, args.out)
    print(f"wrote synthetic dataset ({args.participants} participants) to {args.out}")


def _base_config(args):
    from .experiment import ExperimentConfig, load_config

    if args.config:
        config = load_config(args.config)
        overrides = {}
        if args.out:
            overrides["output_dir"] = args.out
        if args.dataset:
            overrides["dataset"] = args.dataset
        return replace(config, **overrides) if overrides else config
    if not args.dataset:
        raise SystemExit("either a dataset path or --config is required")
    return ExperimentConfig(
        dataset=args.dataset,
        output_dir=args.out or "aad_results",
        seed=args.seed,
    )


def _cmd_decode(args):
    from .experiment import run_experiment

    config = _base_config(args)
    overrides = {}
    if args.algo:
        overrides["algorithms"] = tuple(args.algo)
    if args.feature:
        overrides["features"] = tuple(
            {"envelope": "envelope", "onsets": "onset_envelope"}[f] for f in args.feature
        )
    if args.lengths:
        overrides["segment_lengths_s"] = tuple(args.lengths)
    if overrides:
        config = replace(config, **overrides)
    summary = run_experiment(config)
    for entry in summary["mean_accuracy"]:
        print(
            f"{entry['algorithm']:>6} {entry['feature']:>14} "
            f"{entry['segment_length_s']:>6g} s: "
            f"accuracy {entry['mean_accuracy']:.3f} "
            f"({entry['n_participants']} participants)"
        )
    print(f"results in {config.output_dir}")


def _cmd_trf(args):
    from .experiment import run_trf_analysis

    config = _base_config(args)
    overrides = {"trf_null_shifts": args.shifts, "trf_permutations": args.permutations}
    if args.feature:
        overrides["features"] = tuple(
            {"envelope": "envelope", "onsets": "onset_envelope"}[f] for f in args.feature
        )
    config = replace(config, **overrides)
    results = run_trf_analysis(config)
    for (feature, role), result in sorted(results.items()):
        flag = "significant" if result.p_value < 0.05 / 12 else "n.s."
        print(
            f"{feature:>14} {role:>10}: max cluster {result.max_cluster_size} taps, "
            f"p={result.p_value:.4g} ({flag} at 0.05/12)"
        )
    print(f"TRF curves and cluster JSON in {config.output_dir}")


def _cmd_stats(args):
    from .experiment import marker_stats

    stats = marker_stats(args.results)
    out = Path(args.out) if args.out else Path(args.results).parent / "stats.json"
    with open(out, "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    n_sig = sum(s["significant"] for s in stats)
    for s in stats:
        mark = "*" if s["significant"] else " "
        print(
            f"{mark} {s['participant']} {s['algorithm']}/{s['feature']}: "
            f"t={s['t']:.2f} p={s['p']:.3g} (threshold 0.05/{s['m']})"
        )
    print(f"{n_sig}/{len(stats)} significant; wrote {out}")


def _cmd_report(args):
    from .experiment import read_results_csv, summarize_rows

    raw = read_results_csv(args.results)
    rows = [
        (
            r["participant"], r["algorithm"], r["feature"], r["marker_type"],
            float(r["segment_length_s"]), int(r["trial"]), float(r["start_s"]),
            float(r["rho_att"]), float(r["rho_ign"]), float(r["score"]),
            r["decision"], r["truth"], int(r["correct"]),
        )
        for r in raw
    ]
    summary = summarize_rows(rows)
    print(f"{'algorithm':>10} {'feature':>14} {'length':>8} {'accuracy':>9} {'chance':>7}")
    by_len: dict = {}
    for entry in summary["per_participant"]:
        key = (entry["algorithm"], entry["feature"], entry["segment_length_s"])
        by_len.setdefault(key, []).append(entry)
    for (algorithm, feature, length), entries in sorted(by_len.items()):
        acc = np.mean([e["accuracy"] for e in entries])
        chance = np.mean([e["chance_level"] for e in entries])
        print(
            f"{algorithm:>10} {feature:>14} {length:>7g}s {acc:>9.3f} {chance:>7.3f}"
        )
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aad", description="Ear-EEG auditory attention decoding toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract speech features from a WAV file")
    p.add_argument("audio")
    p.add_argument("--kind", choices=("envelope", "onsets"), default="envelope")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--participants", type=int, default=18)
    p.add_argument("--trials", type=int, default=16)
    p.add_argument("--duration", type=float, default=150.0)
    p.add_argument("--g-att", type=float, default=1.0)
    p.add_argument("--g-ign", type=float, default=0.5)
    p.add_argument("--snr", type=float, default=-5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("decode", help="run attention decoding over a dataset")
    p.add_argument("dataset", nargs="?", default=None)
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--algo", action="append", choices=("linear", "cnn", "cca"))
    p.add_argument("--feature", action="append", choices=("envelope", "onsets"))
    p.add_argument("--lengths", type=float, nargs="+", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("trf", help="forward-model (TRF) analysis with cluster tests")
    p.add_argument("dataset", nargs="?", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--feature", action="append", choices=("envelope", "onsets"))
    p.add_argument("--shifts", type=int, default=500)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_trf)

    p = sub.add_parser("stats", help="marker-vs-null t-tests from results.csv")
    p.add_argument("results")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("report", help="accuracy-vs-length report from results.csv")
    p.add_argument("results")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
