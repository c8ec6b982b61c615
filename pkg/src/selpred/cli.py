"""Command-line entry point. Each subcommand is a thin shell over one library
operation; no metric logic lives here.

Exit codes: 0 success, 1 validation error (bad flags, malformed data),
2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness, metrics, peers, records, selector, toymodel
from .figures import render_figures

USAGE_ERROR = 1
IO_ERROR = 2


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selpred",
        description="Selective-prediction toolkit: metrics, selectors, "
                    "peer labeling, and ID/OOD mixture evaluation.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate the synthetic datasets")
    p.add_argument("--config", required=True, help="synthetic task config (JSON)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("partition", help="emit a group-respecting partition manifest")
    p.add_argument("--records", required=True, help="records file")
    p.add_argument("--n", required=True, type=int, help="number of subsets")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, help="manifest path")

    p = sub.add_parser(
        "peer-label",
        help="train leave-one-out peers plus the final model; emit the "
             "selector training records with heldout peer labels",
    )
    p.add_argument("--records", required=True, help="dataset records file")
    p.add_argument("--partition", required=True, help="partition manifest")
    p.add_argument("--train-config", required=True, help="classifier train config (JSON)")
    p.add_argument("--out", required=True, help="peer-labeled records output")
    p.add_argument("--jobs", type=int, default=1, help="parallel peer trainings")
    p.add_argument(
        "--predict", action="append", default=[], metavar="DATA:OUT",
        help="also emit final-model prediction records for DATA (repeatable)",
    )

    p = sub.add_parser("train-selector", help="train the MLP selection function")
    p.add_argument("--train", required=True, help="training records (targets = accuracy)")
    p.add_argument("--val", required=True, help="validation records for early stopping")
    p.add_argument("--config", required=True, help="selector train config (JSON)")
    p.add_argument("--out", required=True, help="model checkpoint path")

    p = sub.add_parser("score", help="score records with a selector model")
    p.add_argument("--model", required=True,
                   help="checkpoint path, or the literal 'maxprob'")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True, help="scored records output")

    p = sub.add_parser("eval", help="evaluate scored records, write a report")
    p.add_argument("--scored", required=True, help="scored test records")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--threshold-from", metavar="VAL",
                       help="scored validation records; the applied threshold "
                            "maximizes effective reliability at the first cost")
    group.add_argument("--gamma", type=float, help="fixed threshold")
    p.add_argument("--risks", type=_parse_float_list, default=[0.01, 0.05, 0.10])
    p.add_argument("--costs", type=_parse_float_list, default=[1.0, 10.0, 100.0])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("mixture", help="assemble an ID/OOD evaluation mixture")
    p.add_argument("--id", required=True, dest="id_pool", help="ID records file")
    p.add_argument("--ood", required=True, help="OOD records file")
    p.add_argument("--alpha", required=True, type=float)
    p.add_argument("--ood-count", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run a full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=None, help="override config jobs")
    p.add_argument("--no-figures", action="store_true")

    return parser


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_synth(args) -> int:
    config = toymodel.SyntheticTaskConfig(**_load_json(args.config))
    train, val, test_id, test_ood = toymodel.generate_synthetic(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, data, prefix in [
        ("train", train, "tr"), ("val", val, "va"),
        ("test_id", test_id, "te"), ("test_ood", test_ood, "oo"),
    ]:
        records.save_records(toymodel.dataset_to_records(data, prefix),
                             out / f"{name}.jsonl")
    print(f"wrote 4 dataset files to {out}")
    return 0


def cmd_partition(args) -> int:
    rs = records.load_records(args.records)
    part = peers.partition_by_group(rs, args.n, args.seed)
    peers.save_partition(part, args.out)
    print(f"partitioned {len(set(rs.groups()))} groups into {args.n} subsets -> {args.out}")
    return 0


def cmd_peer_label(args) -> int:
    rs = records.load_records(args.records)
    data = toymodel.dataset_from_records(rs)
    part = peers.load_partition(args.partition)
    doc = _load_json(args.train_config)
    n_classes = doc.pop("n_classes", int(data.labels.max()) + 1)
    toy_cfg = toymodel.ToyTrainConfig(**doc)
    result = harness.run_lyp_pipeline(
        data, part.n_subsets, toy_cfg, n_classes,
        partition=part, jobs=args.jobs,
    )
    records.save_records(result.selector_train_records(), args.out)
    print(f"peer-labeled {len(data)} records with {part.n_subsets} peers -> {args.out}")
    for spec in args.predict:
        src, _, dst = spec.partition(":")
        if not dst:
            raise ValueError(f"--predict expects DATA:OUT, got {spec!r}")
        extra = toymodel.dataset_from_records(records.load_records(src))
        records.save_records(
            toymodel.predict_records(result.final_model, extra, "pr"), dst
        )
        print(f"predicted {len(extra)} records -> {dst}")
    return 0


def cmd_train_selector(args) -> int:
    train = records.load_records(args.train)
    val = records.load_records(args.val)
    config = selector.TrainConfig(**_load_json(args.config))
    model = selector.train_selector(train, val, config)
    selector.save_selector(model, args.out)
    best = model.history["best_val_rc_auc"]
    print(f"trained selector: best validation RC-AUC {best:.4f} "
          f"at epoch {model.history['best_epoch']} -> {args.out}")
    return 0


def cmd_score(args) -> int:
    model = (
        selector.MaxProbSelector() if args.model == "maxprob"
        else selector.load_selector(args.model)
    )
    rs = records.load_records(args.records)
    scored = selector.score_all(model, rs)
    metrics.save_scored_records(scored, args.out)
    print(f"scored {len(rs)} records -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    scored = metrics.load_scored_records(args.scored)
    if args.gamma is not None:
        policy = metrics.ThresholdPolicy(gamma=args.gamma, rule="fixed")
    else:
        val = metrics.load_scored_records(args.threshold_from)
        harness.require_id_only(val)
        first_cost = args.costs[0] if args.costs else 1.0
        policy = metrics.select_threshold_phi(val, first_cost)
    report = metrics.evaluate(scored, policy, args.risks, args.costs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "curve.csv").write_text(report.curve_csv(), encoding="utf-8")
    if not args.no_figures:
        _eval_figure(report, out / "rc_curve.png")

    print(f"accuracy = {report.accuracy * 100:.2f}%")
    print(f"RC-AUC = {report.rc_auc * 100:.2f}")
    for level in args.risks:
        cov = report.c_at_r[float(level)]
        print(f"C@{format(level * 100, 'g')}% = {cov * 100:.2f}%")
    for cost in args.costs:
        print(f"phi@{format(cost, 'g')} = {report.phi[float(cost)] * 100:.2f}")
    realized_risk = (
        "undefined" if report.realized.risk is None
        else f"{report.realized.risk * 100:.2f}%"
    )
    print(f"realized coverage = {report.realized.coverage * 100:.2f}%, "
          f"risk = {realized_risk} at gamma = {report.gamma}")
    return 0


def _eval_figure(report, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    xs = [c for c, _ in report.curve]
    ys = [r for _, r in report.curve]
    ax.plot(xs, ys, linewidth=1.6)
    ax.set_xlabel("coverage")
    ax.set_ylabel("risk")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(bottom=0.0)
    ax.set_title("risk-coverage")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": "selpred"})
    plt.close(fig)


def cmd_mixture(args) -> int:
    id_pool = records.load_records(args.id_pool)
    ood_pool = records.load_records(args.ood)
    spec = harness.MixtureSpec(alpha=args.alpha, ood_count=args.ood_count,
                               seed=args.seed)
    mix = harness.build_mixture(id_pool, ood_pool, spec)
    records.save_records(mix, args.out)
    n_ood = sum(1 for t in mix.domain_tags() if t == "ood")
    print(f"mixture of {len(mix)} records ({len(mix) - n_ood} ID, {n_ood} OOD) "
          f"-> {args.out}")
    return 0


def cmd_run(args) -> int:
    config = harness.load_experiment_config(args.config)
    if args.jobs is not None:
        config = replace(config, jobs=args.jobs)
    report = harness.run_experiment(config)
    out_dir = Path(config.output_dir)
    if not out_dir.is_absolute():
        out_dir = Path(args.config).resolve().parent / out_dir
    written = harness.emit_report(report, out_dir)
    if not args.no_figures:
        written += render_figures(report, out_dir)
    print(f"experiment wrote {len(written)} files to {out_dir} "
          f"({len(report.cells)} cells, {len(report.failures)} failures)")
    print(f"wall clock: {report.wall_clock_seconds:.1f}s", file=sys.stderr)
    if report.failures:
        for key, msg in sorted(report.failures.items()):
            print(f"cell {key} failed: {msg}", file=sys.stderr)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "partition": cmd_partition,
    "peer-label": cmd_peer_label,
    "train-selector": cmd_train_selector,
    "score": cmd_score,
    "eval": cmd_eval,
    "mixture": cmd_mixture,
    "run": cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; map to the validation exit code
        return 0 if exc.code == 0 else USAGE_ERROR
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return IO_ERROR
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
