"""Command-line interface: evaluate, recalibrate, generate, plotdata.

Exit codes: 0 success, 1 input parse errors, 2 alignment errors,
3 configuration errors.  All subcommands are deterministic given flags
and seeds; reports embed no timestamps so reruns are byte-identical.

Reports carry percent-scaled calibration and ranking metrics (``units:
percent``); NLL is in nats and is not scaled.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__, ingest, metrics, pipeline, synth
from ._kernels import bin_stats
from .core import ConfigError
from .ingest import AlignmentError, FormatError
from .metrics import binned_error, canonical_edges
from .pipeline import CalibrationConfig, MetricReport


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # configuration errors exit with code 3
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def _parse_ks(text: str) -> list[int]:
    try:
        ks = sorted({int(part) for part in text.split(",") if part.strip()})
    except ValueError:
        raise ConfigError(f"bad k list: {text!r}") from None
    if not ks or ks[0] < 1:
        raise ConfigError(f"bad k list: {text!r}")
    return ks


_PERCENT_FIELDS = ("ece", "ace", "brier", "p_at_k", "ndcg_at_k")


def _k_block_dict(blk: pipeline.KBlock) -> dict:
    rel = blk.reliability
    edges = rel.edges
    reliability = [
        {
            "bin_low": float(edges[i]),
            "bin_high": float(edges[i + 1]),
            "mean_conf": float(rel.mean_conf[i]),
            "mean_acc": float(rel.mean_acc[i]),
            "count": int(rel.counts[i]),
        }
        for i in range(len(rel.counts))
    ]
    hist_edges = canonical_edges(len(blk.histogram))
    histogram = [
        {
            "bin_low": float(hist_edges[i]),
            "bin_high": float(hist_edges[i + 1]),
            "count": int(blk.histogram[i]),
        }
        for i in range(len(blk.histogram))
    ]
    return {
        "k": blk.k,
        "ece": blk.ece * 100.0,
        "ace": None if blk.ace is None else blk.ace * 100.0,
        "brier": blk.brier * 100.0,
        "nll": blk.nll,
        "p_at_k": blk.p_at_k * 100.0,
        "ndcg_at_k": blk.ndcg_at_k * 100.0,
        "pairs": blk.pairs,
        "reliability": reliability,
        "histogram": histogram,
    }


def _report_dict(report: MetricReport, config: dict) -> dict:
    out = {
        "dataset": report.dataset,
        "k_blocks": [_k_block_dict(report.blocks[k]) for k in report.ks],
        "units": "percent",
        "config": config,
    }
    if report.deltas is not None:
        out["deltas"] = [
            {"k": k, **_scale_delta(report.deltas[k])} for k in sorted(report.deltas)
        ]
    return out


def _scale_delta(d: dict) -> dict:
    return {
        name: (value * 100.0 if name in _PERCENT_FIELDS else value)
        for name, value in d.items()
    }


def _emit_json(obj: dict, path: str | None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


_CSV_COLUMNS = ("k", "ece", "ace", "brier", "nll", "p_at_k", "ndcg_at_k", "pairs")


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _report_csv(blocks: list[dict], path: str | None, include_phase: bool = False) -> None:
    lines = []
    header = list(_CSV_COLUMNS)
    if include_phase:
        header.insert(0, "phase")
    lines.append(",".join(header))
    for blk in blocks:
        row = [_csv_cell(blk[c]) for c in _CSV_COLUMNS]
        if include_phase:
            row.insert(0, blk["phase"])
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_aligned(args):
    truth = ingest.load_truth(args.truth)
    preds = ingest.load_predictions(args.preds)
    ingest.check_alignment(preds, truth, strict_ids=getattr(args, "strict_ids", False))
    return preds, truth


def _dataset_name(args) -> str:
    if getattr(args, "dataset", None):
        return args.dataset
    return args.truth.rsplit("/", 1)[-1].rsplit(".", 1)[0]


# ---------------------------------------------------------------------------
# subcommands


def cmd_evaluate(args) -> int:
    ks = _parse_ks(args.k)
    baseline = None
    if args.baseline:
        with open(args.baseline, encoding="utf-8") as fh:
            baseline = json.load(fh)
    if args.streaming:
        header, truth_blocks = ingest.read_truth_blocks(args.truth)
        pred_blocks = ingest.read_dump_blocks(args.preds)
        report = pipeline.evaluate_report_streaming(
            pred_blocks, truth_blocks, ks, args.bins,
            dataset=_dataset_name(args), strict_ids=args.strict_ids,
        )
    else:
        preds, truth = _load_aligned(args)
        report = pipeline.evaluate_report(
            preds, truth, ks, args.bins, dataset=_dataset_name(args)
        )
    config = {
        "subcommand": "evaluate",
        "truth": args.truth,
        "preds": args.preds,
        "ks": ks,
        "bins": args.bins,
        "streaming": bool(args.streaming),
    }
    out = _report_dict(report, config)
    if baseline is not None:
        out["deltas"] = _json_deltas(out["k_blocks"], baseline.get("k_blocks", []))
    if args.format == "csv":
        _report_csv(out["k_blocks"], args.out)
    else:
        _emit_json(out, args.out)
    return 0


def _json_deltas(current: list[dict], baseline: list[dict]) -> list[dict]:
    base_by_k = {blk["k"]: blk for blk in baseline}
    deltas = []
    for blk in current:
        base = base_by_k.get(blk["k"])
        if base is None:
            continue
        d = {"k": blk["k"]}
        for name in ("ece", "ace", "brier", "nll", "p_at_k", "ndcg_at_k"):
            if blk.get(name) is None or base.get(name) is None:
                continue
            d[name] = blk[name] - base[name]
        deltas.append(d)
    return deltas


def cmd_recalibrate(args) -> int:
    ks = _parse_ks(args.ks)
    config = CalibrationConfig(
        method=args.method, mode=args.mode, k=args.k, folds=args.folds, seed=args.seed
    )
    preds, truth = _load_aligned(args)
    dataset = _dataset_name(args)
    pre = pipeline.evaluate_report(preds, truth, ks, args.bins, dataset=dataset)
    result = pipeline.kfold_recalibrate(preds, truth, config)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    post = pipeline.evaluate_report(
        result.block, truth, ks, args.bins, baseline=pre, dataset=dataset
    )
    ingest.write_prediction_dump(result.block, args.out_preds)
    config_echo = {
        "subcommand": "recalibrate",
        "truth": args.truth,
        "preds": args.preds,
        "method": args.method,
        "mode": args.mode,
        "calibration_k": args.k,
        "folds": args.folds,
        "seed": args.seed,
        "ks": ks,
        "bins": args.bins,
        "out_preds": args.out_preds,
    }
    pre_blocks = [_k_block_dict(pre.blocks[k]) for k in pre.ks]
    post_blocks = [_k_block_dict(post.blocks[k]) for k in post.ks]
    out = {
        "dataset": dataset,
        "pre": pre_blocks,
        "post": post_blocks,
        "deltas": [
            {"k": k, **_scale_delta(post.deltas[k])} for k in sorted(post.deltas)
        ],
        "units": "percent",
        "config": config_echo,
        "warnings": result.warnings,
    }
    if args.format == "csv":
        rows = [dict(blk, phase="pre") for blk in pre_blocks]
        rows += [dict(blk, phase="post") for blk in post_blocks]
        _report_csv(rows, args.out_report, include_phase=True)
    else:
        _emit_json(out, args.out_report)
    return 0


def cmd_generate(args) -> int:
    try:
        distortion = synth.Distortion.parse(args.distort)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    header = ingest.RepoHeader(args.n, 1, args.m)
    edges = canonical_edges(args.bins)
    counts = np.zeros(args.bins, np.int64)
    sum_conf = np.zeros(args.bins, np.float64)
    sum_eta = np.zeros(args.bins, np.float64)
    pairs_total = 0
    with open(args.out_truth, "w", encoding="utf-8", newline="\n") as truth_fh, open(
        args.out_preds, "w", encoding="utf-8", newline="\n"
    ) as preds_fh:
        truth_fh.write(f"{header.n} {header.d} {header.m}\n")
        for offset, world in synth.iter_blocks(
            args.n, args.m, args.k, args.tail_exponent, args.seed, args.pool_size
        ):
            dump = synth.distort(world, distortion)
            pairs = metrics.topk_pairs(dump, None, args.k)
            eta = world.eta_lookup(pairs.ids, pairs.labels)
            c, sc, se = bin_stats(pairs.conf, eta, edges)
            counts += c
            sum_conf += sc
            sum_eta += se
            pairs_total += len(pairs.conf)
            dump.ids += offset
            ingest.write_prediction_dump(dump, preds_fh)
            for row in world.truth_rows():
                truth_fh.write(",".join(str(l) for l in sorted(row.relevant)))
                truth_fh.write("\n")
    analytic = binned_error(counts, sum_conf, sum_eta, pairs_total)
    print(f"analytic ECE@{args.k}: {analytic * 100.0:.4f}%")
    return 0


def cmd_plotdata(args) -> int:
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            report = json.load(fh)
        blocks = report.get("k_blocks", [])
        if not blocks:
            raise FormatError("report has no k_blocks")
        if args.k is not None:
            matching = [b for b in blocks if b["k"] == args.k]
            if not matching:
                raise ConfigError(f"report has no block for k={args.k}")
            blk = matching[0]
        elif len(blocks) == 1:
            blk = blocks[0]
        else:
            raise ConfigError("report has several k blocks; pass --k")
        reliability = blk["reliability"]
        histogram = blk["histogram"]
    else:
        if not (args.truth and args.preds):
            raise ConfigError("pass either --report or both --truth and --preds")
        if args.k is None:
            raise ConfigError("--k is required with raw inputs")
        preds, truth = _load_aligned(args)
        report = pipeline.evaluate_report(preds, truth, [args.k], args.bins)
        blk_obj = report.blocks[args.k]
        blk = _k_block_dict(blk_obj)
        reliability = blk["reliability"]
        histogram = blk["histogram"]

    rel_lines = ["bin_low,bin_high,mean_conf,mean_acc,count"]
    for row in reliability:
        rel_lines.append(
            f"{_csv_cell(float(row['bin_low']))},{_csv_cell(float(row['bin_high']))},"
            f"{_csv_cell(float(row['mean_conf']))},{_csv_cell(float(row['mean_acc']))},{row['count']}"
        )
    hist_lines = ["bin_low,bin_high,count"]
    for row in histogram:
        hist_lines.append(
            f"{_csv_cell(float(row['bin_low']))},{_csv_cell(float(row['bin_high']))},{row['count']}"
        )
    with open(args.out_reliability, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rel_lines) + "\n")
    with open(args.out_histogram, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(hist_lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="xcal", description=__doc__)
    parser.add_argument("--version", action="version", version=f"xcal {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    ev = sub.add_parser("evaluate", help="compute calibration and ranking metrics")
    ev.add_argument("--truth", required=True)
    ev.add_argument("--preds", required=True)
    ev.add_argument("--k", default="1,3,5", help="comma-separated k values")
    ev.add_argument("--bins", type=int, default=10)
    ev.add_argument("--out", default=None, help="report path (stdout when omitted)")
    ev.add_argument("--format", choices=("json", "csv"), default="json")
    ev.add_argument("--dataset", default=None)
    ev.add_argument("--baseline", default=None, help="previous report JSON for deltas")
    ev.add_argument("--streaming", action="store_true",
                    help="single-pass, bounded-memory evaluation (no ACE)")
    ev.add_argument("--strict-ids", action="store_true",
                    help="require prediction ids to match truth row order")
    ev.set_defaults(func=cmd_evaluate)

    rc = sub.add_parser("recalibrate", help="k-fold post-hoc recalibration")
    rc.add_argument("--truth", required=True)
    rc.add_argument("--preds", required=True)
    rc.add_argument("--method", choices=pipeline.METHODS, default="isotonic")
    rc.add_argument("--mode", choices=pipeline.MODES, default="joint")
    rc.add_argument("--k", type=int, default=5, help="calibration pool width")
    rc.add_argument("--folds", type=int, default=5)
    rc.add_argument("--seed", type=int, default=0)
    rc.add_argument("--ks", default="1,3,5", help="k values for the pre/post report")
    rc.add_argument("--bins", type=int, default=10)
    rc.add_argument("--out-preds", required=True)
    rc.add_argument("--out-report", default=None)
    rc.add_argument("--format", choices=("json", "csv"), default="json")
    rc.add_argument("--dataset", default=None)
    rc.add_argument("--strict-ids", action="store_true")
    rc.set_defaults(func=cmd_recalibrate)

    ge = sub.add_parser("generate", help="emit a synthetic truth/dump pair")
    ge.add_argument("--n", type=int, required=True)
    ge.add_argument("--m", type=int, required=True)
    ge.add_argument("--k", type=int, required=True)
    ge.add_argument("--tail-exponent", type=float, default=1.0)
    ge.add_argument("--distort", default="identity",
                    help="identity | temperature:T | midrange:G | softmax_normalize")
    ge.add_argument("--seed", type=int, default=0)
    ge.add_argument("--pool-size", type=int, default=None)
    ge.add_argument("--bins", type=int, default=10)
    ge.add_argument("--out-truth", required=True)
    ge.add_argument("--out-preds", required=True)
    ge.set_defaults(func=cmd_generate)

    pd = sub.add_parser("plotdata", help="emit reliability and histogram CSV tables")
    pd.add_argument("--report", default=None, help="report JSON from evaluate")
    pd.add_argument("--truth", default=None)
    pd.add_argument("--preds", default=None)
    pd.add_argument("--k", type=int, default=None)
    pd.add_argument("--bins", type=int, default=10)
    pd.add_argument("--out-reliability", required=True)
    pd.add_argument("--out-histogram", required=True)
    pd.add_argument("--strict-ids", action="store_true")
    pd.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except AlignmentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
