"""chainmix command line: a file-mediated pipeline over five subcommands.

    chainmix ingest    raw check-in CSV -> sequence file
    chainmix fit       sequence file -> model + trace + posteriors
    chainmix report    model + sequences + posteriors -> JSON/text/CSV report and figures
    chainmix predict   model + a user's sequences -> cluster and stationary forecast
    chainmix simulate  model -> synthetic sequences with ground-truth labels

Every command writes a manifest JSON next to its outputs recording the full
parameter snapshot (seeds included), input/output paths, tool version, and
wall-clock duration. Data outputs are byte-reproducible given the same
inputs, flags, and seed; manifests differ only in their timing fields.

Exit codes: 0 success, 1 I/O failure, 2 malformed input or file shape
mismatch, 3 fit failure (non-convergence with --strict, or a degenerate
alpha=0 fit), 4 stationary-distribution non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import assign_user, build_report, render_report_text, report_to_json
from .em import DegeneracyError, EmConfig, FitResult, PosteriorMatrix, fit
from .ingest import (
    IngestConfig,
    ParseError,
    build_sequences,
    downsample_per_user,
    median_sequences_per_user,
    parse_checkins,
    read_sequences,
    write_sequences,
)
from .model import ConvergenceError, MixtureModel, SequenceDataset, stationary_distribution
from .synth import SynthConfig, sample, write_labels


def _default_seed() -> int:
    return int(os.environ.get("CHAINMIX_SEED", "0"))


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_manifest(path: Path, command: str, parameters: dict, inputs: dict, outputs: dict,
                    started: float, started_at: str, result: dict | None = None) -> None:
    doc = {
        "command": command,
        "parameters": parameters,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "version": __version__,
        "started_at": started_at,
        "duration_seconds": round(time.monotonic() - started, 6),
    }
    if result is not None:
        doc["result"] = result
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _write_trace(path: Path, result: FitResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iter", "loglik", "delta"])
        previous = result.initial_log_likelihood
        for i, loglik in enumerate(result.log_likelihood_trace, start=1):
            writer.writerow([i, repr(loglik), repr(loglik - previous)])
            previous = loglik


def _write_posteriors(path: Path, data: SequenceDataset, posteriors: PosteriorMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["user"] + [f"g{i}" for i in range(posteriors.n_clusters)])
        for seq, row in zip(data.sequences, posteriors.probs):
            writer.writerow([seq.user] + [repr(float(v)) for v in row])


def _read_posteriors(path) -> PosteriorMatrix:
    with open(path, "r", newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != "user":
            raise ValueError(f"{path}: not a posteriors file (expected a 'user,g0,...' header)")
        rows = [[float(v) for v in row[1:]] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no posterior rows")
    return PosteriorMatrix(np.array(rows))


def cmd_ingest(args) -> int:
    config = IngestConfig(
        city=args.city,
        date_from=args.date_from,
        date_to=args.date_to,
        min_checkins=args.min_checkins,
        min_seq_len=args.min_seq_len,
        seed=args.seed,
        strict=args.strict,
    )
    started, started_at = time.monotonic(), _utc_now()
    records = parse_checkins(args.input, config)
    if not records:
        print("no records matched the city and date filters", file=sys.stderr)
        return 2

    users_total = len({rec.userid for rec in records})
    unfiltered = build_sequences(records, replace(config, min_seq_len=1))
    data = build_sequences(records, config)
    users_kept = len(data.user_indices())
    print(f"records kept: {len(records)} from {users_total} users")
    print(f"users kept: {users_kept} (minimum {config.min_checkins} check-ins)")
    print(f"sequences: {len(unfiltered)} built, {len(data)} after dropping those "
          f"shorter than {config.min_seq_len}")

    if len(data) == 0:
        print("warning: no sequences survived the filters; writing an empty sequence file",
              file=sys.stderr)
        cap = None
    else:
        cap = median_sequences_per_user(data)
        if not args.no_downsample:
            data = downsample_per_user(data, config.seed)
            print(f"Me={cap}; sequences after per-user downsampling: {len(data)}")
        else:
            print(f"Me={cap}; downsampling skipped")

    output = Path(args.output)
    write_sequences(output, data)
    print(f"wrote {output}")
    _write_manifest(
        output.with_name(output.name + ".manifest.json"),
        "ingest",
        {
            "city": args.city,
            "date_from": args.date_from.isoformat(),
            "date_to": args.date_to.isoformat(),
            "min_checkins": args.min_checkins,
            "min_seq_len": args.min_seq_len,
            "seed": args.seed,
            "strict": args.strict,
            "no_downsample": args.no_downsample,
        },
        {"checkins": args.input},
        {"sequences": output},
        started,
        started_at,
        result={"records": len(records), "users": users_kept, "sequences": len(data),
                "median_sequences_per_user": cap},
    )
    return 0


def cmd_fit(args) -> int:
    config = EmConfig(
        n_clusters=args.clusters,
        epsilon=args.epsilon,
        max_iters=args.max_iters,
        alpha=args.alpha,
        init=args.init,
        seed=args.seed,
        jitter_scale=args.jitter_scale,
    )
    started, started_at = time.monotonic(), _utc_now()
    data = read_sequences(args.sequences)
    print(f"fit: {len(data)} sequences, {len(data.categories)} categories, "
          f"{config.n_clusters} clusters")
    result = fit(data, config, threads=args.threads)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / "model.json"
    trace_path = out_dir / "trace.csv"
    posteriors_path = out_dir / "posteriors.csv"
    model_path.write_text(result.model.to_json() + "\n", encoding="utf-8")
    _write_trace(trace_path, result)
    _write_posteriors(posteriors_path, data, result.posteriors)

    final = result.log_likelihood_trace[-1]
    if result.converged:
        print(f"converged after {result.iterations} iterations: log-likelihood {final:.6f}")
    else:
        print(f"did not converge within {result.iterations} iterations: "
              f"log-likelihood {final:.6f}", file=sys.stderr)
    print(f"wrote {model_path}, {trace_path}, {posteriors_path}")
    _write_manifest(
        out_dir / "manifest.json",
        "fit",
        {
            "clusters": args.clusters,
            "epsilon": args.epsilon,
            "max_iters": args.max_iters,
            "alpha": args.alpha,
            "init": args.init,
            "seed": args.seed,
            "jitter_scale": args.jitter_scale,
            "threads": args.threads,
            "strict": args.strict,
        },
        {"sequences": args.sequences},
        {"model": model_path, "trace": trace_path, "posteriors": posteriors_path},
        started,
        started_at,
        result={"converged": result.converged, "iterations": result.iterations,
                "log_likelihood": final},
    )
    if args.strict and not result.converged:
        return 3
    return 0


def cmd_report(args) -> int:
    started, started_at = time.monotonic(), _utc_now()
    model = MixtureModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    data = read_sequences(args.sequences)
    posteriors = _read_posteriors(args.posteriors)
    if data.categories.names != model.categories.names:
        raise ValueError("model and sequence file use different category vocabularies")
    if posteriors.n_sequences != len(data):
        raise ValueError(
            f"posteriors file has {posteriors.n_sequences} rows, sequence file has {len(data)}"
        )

    report = build_report(model, data, posteriors, top_k=args.top_k)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    text_path = out_dir / "report.txt"
    sizes_path = out_dir / "cluster_sizes.csv"
    top_path = out_dir / "top_categories.csv"
    json_path.write_text(report_to_json(report) + "\n", encoding="utf-8")
    text = render_report_text(report)
    text_path.write_text(text, encoding="utf-8")
    with open(sizes_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["cluster", "model_index", "p_seqs", "p_users"])
        for slot, summary in enumerate(report.clusters, start=1):
            writer.writerow([slot, summary.model_index,
                             repr(float(report.seq_sizes[slot - 1])),
                             repr(float(report.user_sizes[slot - 1]))])
    with open(top_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["cluster", "rank", "category", "popularity"])
        for slot, summary in enumerate(report.clusters, start=1):
            for rank, (name, value) in enumerate(summary.top_categories, start=1):
                writer.writerow([slot, rank, name, repr(value)])

    outputs = {"report_json": json_path, "report_text": text_path,
               "cluster_sizes": sizes_path, "top_categories": top_path}
    if not args.no_figures:
        from . import figures  # deferred: pulls in matplotlib

        starts_png = out_dir / "start_probabilities.png"
        trans_png = out_dir / "transition_matrices.png"
        pop_png = out_dir / "category_popularity.png"
        figures.save_start_probability_figure(report, starts_png)
        figures.save_transition_matrix_figure(report, trans_png)
        figures.save_popularity_figure(report, pop_png)
        outputs.update({"start_probabilities": starts_png, "transition_matrices": trans_png,
                        "category_popularity": pop_png})

    print(text, end="")
    print(f"wrote {', '.join(str(p) for p in outputs.values())}")
    _write_manifest(
        out_dir / "manifest.json",
        "report",
        {"top_k": args.top_k, "figures": not args.no_figures},
        {"model": args.model, "sequences": args.sequences, "posteriors": args.posteriors},
        outputs,
        started,
        started_at,
    )
    return 0


def cmd_predict(args) -> int:
    started, started_at = time.monotonic(), _utc_now()
    model = MixtureModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    data = read_sequences(args.sequences)
    if data.categories.names != model.categories.names:
        raise ValueError("model and sequence file use different category vocabularies")
    groups = data.user_indices()
    if args.user is not None:
        if args.user not in groups:
            raise ValueError(f"user {args.user!r} not present in {args.sequences}")
        users = [args.user]
    else:
        users = list(groups)
    if not users:
        raise ValueError("sequence file contains no sequences")

    results = {}
    for user in users:
        seqs = [data.sequences[i] for i in groups[user]]
        cluster, membership = assign_user(model, seqs)
        try:
            pi = stationary_distribution(model.clusters[cluster], tol=args.tol,
                                         max_iters=args.max_iters)
        except ConvergenceError as err:
            print(f"user {user}: cluster {cluster} has no power-iteration fixed point: {err}",
                  file=sys.stderr)
            return 4
        results[user] = {"cluster": cluster, "membership": membership.tolist(),
                         "stationary": pi.tolist()}
        print(f"user {user}: cluster {cluster} of {model.n_clusters}")
        print("  membership: (" + ", ".join(f"{v:.4f}" for v in membership) + ")")
        print("  stationary distribution:")
        for name, value in zip(model.categories.names, pi):
            print(f"    {name}, {value:.4f}")

    if args.output is not None:
        output = Path(args.output)
        output.write_text(json.dumps(results, indent=2) + "\n", encoding="utf-8")
        print(f"wrote {output}")
        _write_manifest(
            output.with_name(output.name + ".manifest.json"),
            "predict",
            {"user": args.user, "tol": args.tol, "max_iters": args.max_iters},
            {"model": args.model, "sequences": args.sequences},
            {"predictions": output},
            started,
            started_at,
        )
    return 0


def cmd_simulate(args) -> int:
    if args.length_min is not None or args.length_max is not None:
        if args.length_min is None or args.length_max is None:
            raise ValueError("--length-min and --length-max must be given together")
        length: int | tuple[int, int] = (args.length_min, args.length_max)
    else:
        length = args.length
    config = SynthConfig(n_sequences=args.n, length=length, seed=args.seed)
    started, started_at = time.monotonic(), _utc_now()
    model = MixtureModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    data, labels = sample(model, config)

    output = Path(args.output)
    labels_path = Path(args.labels) if args.labels else output.with_suffix(output.suffix + ".labels")
    write_sequences(output, data)
    write_labels(labels_path, labels)
    print(f"sampled {len(data)} sequences from {model.n_clusters} clusters (seed {args.seed})")
    print(f"wrote {output}, {labels_path}")
    _write_manifest(
        output.with_name(output.name + ".manifest.json"),
        "simulate",
        {"n": args.n, "length": list(length) if isinstance(length, tuple) else length,
         "seed": args.seed},
        {"model": args.model},
        {"sequences": output, "labels": labels_path},
        started,
        started_at,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chainmix",
        description="Cluster weekly check-in sequences with a mixture of Markov chains.",
    )
    parser.add_argument("--version", action="version", version=f"chainmix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="parse a check-in CSV into a sequence file")
    ingest.add_argument("--input", required=True, help="check-in CSV")
    ingest.add_argument("--output", required=True, help="sequence file to write")
    ingest.add_argument("--city", required=True, help="keep only this city")
    ingest.add_argument("--date-from", type=date.fromisoformat, default=date(2009, 1, 1))
    ingest.add_argument("--date-to", type=date.fromisoformat, default=date(2011, 12, 31))
    ingest.add_argument("--min-checkins", type=int, default=10,
                        help="drop users with fewer total check-ins (default 10)")
    ingest.add_argument("--min-seq-len", type=int, default=2,
                        help="drop weekly sequences shorter than this (default 2)")
    ingest.add_argument("--seed", type=int, default=_default_seed(),
                        help="downsampling seed (default $CHAINMIX_SEED or 0)")
    ingest.add_argument("--strict", action="store_true",
                        help="fail on unknown categories instead of skipping them")
    ingest.add_argument("--no-downsample", action="store_true",
                        help="keep every sequence of every user")
    ingest.set_defaults(func=cmd_ingest)

    fit_cmd = sub.add_parser("fit", help="run EM on a sequence file")
    fit_cmd.add_argument("--sequences", required=True, help="sequence file")
    fit_cmd.add_argument("--out-dir", required=True,
                         help="directory for model.json, trace.csv, posteriors.csv")
    fit_cmd.add_argument("-K", "--clusters", type=int, default=4, dest="clusters",
                         help="number of clusters (default 4)")
    fit_cmd.add_argument("--epsilon", type=float, default=1e-4,
                         help="stop once the log-likelihood gain drops below this (default 1e-4)")
    fit_cmd.add_argument("--max-iters", type=int, default=500)
    fit_cmd.add_argument("--alpha", type=float, default=1e-6,
                         help="additive smoothing pseudo-count (default 1e-6)")
    fit_cmd.add_argument("--init", choices=["uniform-jitter", "random"], default="uniform-jitter")
    fit_cmd.add_argument("--seed", type=int, default=_default_seed())
    fit_cmd.add_argument("--jitter-scale", type=float, default=0.01)
    fit_cmd.add_argument("--threads", type=int, default=1,
                         help="likelihood-pass parallelism; 1 is bit-reproducible (default 1)")
    fit_cmd.add_argument("--strict", action="store_true",
                         help="exit 3 when the run hits max-iters without converging")
    fit_cmd.set_defaults(func=cmd_fit)

    report = sub.add_parser("report", help="summarize a fitted model")
    report.add_argument("--model", required=True)
    report.add_argument("--sequences", required=True)
    report.add_argument("--posteriors", required=True)
    report.add_argument("--out-dir", required=True)
    report.add_argument("--top-k", type=int, default=3,
                        help="categories/transitions listed per cluster (default 3)")
    report.add_argument("--no-figures", action="store_true", help="skip the PNG renderings")
    report.set_defaults(func=cmd_report)

    predict = sub.add_parser("predict", help="assign users to clusters and forecast")
    predict.add_argument("--model", required=True)
    predict.add_argument("--sequences", required=True, help="sequence file with the user's weeks")
    predict.add_argument("--user", help="predict only this user (default: all users in the file)")
    predict.add_argument("--tol", type=float, default=1e-10)
    predict.add_argument("--max-iters", type=int, default=10_000)
    predict.add_argument("--output", help="optionally write the predictions as JSON")
    predict.set_defaults(func=cmd_predict)

    simulate = sub.add_parser("simulate", help="sample synthetic sequences from a model")
    simulate.add_argument("--model", required=True)
    simulate.add_argument("--output", required=True, help="sequence file to write")
    simulate.add_argument("--labels", help="labels file (default: <output>.labels)")
    simulate.add_argument("--n", type=int, required=True, help="number of sequences")
    simulate.add_argument("--length", type=int, default=10, help="fixed sequence length")
    simulate.add_argument("--length-min", type=int, help="uniform length range, lower bound")
    simulate.add_argument("--length-max", type=int, help="uniform length range, upper bound")
    simulate.add_argument("--seed", type=int, default=_default_seed())
    simulate.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DegeneracyError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
