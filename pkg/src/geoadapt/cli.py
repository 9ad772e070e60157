"""Command-line entry point: ``geoadapt <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Iterator

from . import __version__
from .config import RunConfig
from .curation import DatasetRecord, RecordError, curate, dumps_jsonl, l_opt_histogram, stratify
from .evalharness import FORMATS, EmptyEvaluationError, EvalRecord, MetricReport, emit_report, evaluate
from .grpo import NumericFailure, ToyPolicy, run_curriculum
from .locatability import DistancePair, score_record, stratum_label
from .names import NameNormalizer
from .rewards import EntitySet, GeoLocation, RuleEntityExtractor, TableGroundingProvider, full_breakdown
from .world import SyntheticGeoWorld

log = logging.getLogger("geoadapt")

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class DataError(Exception):
    pass


def _common_flags(defaults: bool) -> argparse.ArgumentParser:
    # shared by the top-level parser and every subparser so flags work on either side
    # of the subcommand; subparsers use SUPPRESS to avoid clobbering earlier values
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d(None), help="config file (falls back to $GEOADAPT_CONFIG)")
    p.add_argument("--seed", type=int, default=d(None), help="random seed (overrides config)")
    p.add_argument("--set", action="append", default=d([]), metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--lenient", action="store_true", default=d(False), help="skip and log bad records instead of aborting")
    p.add_argument("--plot", action="store_true", default=d(False), help="also write static PNG charts")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geoadapt",
        description="Locatability scoring, geo rewards, dataset curation and toy GRPO training.",
        parents=[_common_flags(True)],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags(False)

    p = sub.add_parser("score", parents=[common], help="add locatability scores and stratum to each record")
    p.add_argument("-i", "--input", help="dataset JSON-lines (default: config dataset_in)")
    p.add_argument("-o", "--output", help="scored JSON-lines (default: stdout)")
    p.add_argument("--error-log", help="write rejected records as JSON-lines here")

    for name, helptext in (("stratify", "split records into standard and RAG-superior files"),
                           ("curate", "stratify and augment RAG-superior trajectories")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("-i", "--input")
        p.add_argument("--out-dir", help="output directory (default: config dataset_out)")
        p.add_argument("--error-log")
        if name == "curate":
            p.add_argument("--grounding", help="grounding table used to fill missing step confidences")

    p = sub.add_parser("reward", parents=[common], help="compute reward breakdowns for rollouts")
    p.add_argument("-i", "--input", required=True, help="rollouts JSON-lines")
    p.add_argument("-o", "--output")
    p.add_argument("--grounding", help="grounding table (default: config grounding_table)")
    p.add_argument("--gazetteer", help="one entity phrase per line for the rule-based extractor")
    p.add_argument("--error-log")

    p = sub.add_parser("train-toy", parents=[common], help="run the two-stage curriculum on a synthetic world")
    p.add_argument("--world", help="world JSON (default: bundled 200-image world)")
    p.add_argument("--trace", help="trace JSON-lines output")
    p.add_argument("--policy", help="final policy matrix output")
    p.add_argument("--init-policy-out", help="also dump the initial policy here")

    p = sub.add_parser("eval", parents=[common], help="distance-threshold and name accuracies")
    p.add_argument("-i", "--input", required=True, help="predictions JSON-lines")
    p.add_argument("--format", help=f"one of {', '.join(FORMATS)}")
    p.add_argument("-o", "--output")
    p.add_argument("--error-log")

    p = sub.add_parser("report", parents=[common], help="render a training trace or metric report")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", help="trace JSON-lines from train-toy")
    src.add_argument("--metrics", help="JSON metric report from eval")
    p.add_argument("--format", help=f"one of {', '.join(FORMATS)}")
    p.add_argument("-o", "--output")
    return parser


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise DataError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    if args.seed is not None:
        out["seed"] = str(args.seed)
    return out


def _write(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_lines(path: str) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield lineno, line


class Rejects:
    """Collects rejected records; aborts on the first one unless lenient."""

    def __init__(self, lenient: bool, error_log: str | None):
        self.lenient = lenient
        self.error_log = error_log
        self.items: list[dict] = []

    def add(self, lineno: int, image_id, reason: str) -> None:
        self.items.append({"line": lineno, "image_id": image_id, "reason": reason})
        log.error("line %s (%s): %s", lineno, image_id, reason)
        if not self.lenient:
            self.flush()
            raise DataError(f"rejected record at line {lineno}; rerun with --lenient to skip")

    def flush(self) -> None:
        if self.error_log is not None:
            Path(self.error_log).write_text("".join(json.dumps(i) + "\n" for i in self.items), encoding="utf-8")


def _parse_json(lineno: int, line: str, rejects: Rejects):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        rejects.add(lineno, None, f"malformed JSON: {exc.msg}")
        return None
    if not isinstance(obj, dict):
        rejects.add(lineno, None, "line is not a JSON object")
        return None
    return obj


def _input_path(args, cfg: RunConfig) -> str:
    path = args.input or cfg.dataset_in
    if not path:
        raise DataError("no input file given (use -i or dataset_in)")
    return path


def cmd_score(args, cfg: RunConfig) -> int:
    params = cfg.locatability_params()
    rejects = Rejects(args.lenient, args.error_log)
    out_lines, l_opts = [], []
    for lineno, line in _read_lines(_input_path(args, cfg)):
        obj = _parse_json(lineno, line, rejects)
        if obj is None:
            continue
        try:
            rec = DatasetRecord.from_dict(obj)
            if rec.d_rag is None or rec.d_reason is None:
                raise RecordError(f"{rec.image_id}: missing d_rag/d_reason")
        except RecordError as exc:
            rejects.add(lineno, obj.get("image_id"), str(exc))
            continue
        res, stratum = score_record(rec.l_visual, DistancePair(rec.d_rag, rec.d_reason), params)
        obj.update(l_base=res.l_base, l_gap=res.l_gap, l_reason=res.l_reason, l_opt=res.l_opt, stratum=stratum.value)
        out_lines.append(json.dumps(obj, ensure_ascii=False) + "\n")
        l_opts.append(res.l_opt)
    rejects.flush()
    _write("".join(out_lines), args.output)
    if args.plot:
        from .plots import l_opt_histogram_png

        target = Path(args.output).with_suffix(".l_opt.png") if args.output else Path("l_opt_histogram.png")
        l_opt_histogram_png(l_opt_histogram(l_opts), target)
    log.info("scored %d records, rejected %d", len(out_lines), len(rejects.items))
    return EXIT_OK


def _load_dataset(args, cfg: RunConfig, rejects: Rejects) -> tuple[list[DatasetRecord], dict[str, int]]:
    records, lines = [], {}
    for lineno, line in _read_lines(_input_path(args, cfg)):
        obj = _parse_json(lineno, line, rejects)
        if obj is None:
            continue
        try:
            rec = DatasetRecord.from_dict(obj)
        except RecordError as exc:
            rejects.add(lineno, obj.get("image_id"), str(exc))
            continue
        records.append(rec)
        lines.setdefault(rec.image_id, lineno)
    return records, lines


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out_dir or cfg.dataset_out
    if not out:
        raise DataError("no output directory given (use --out-dir or dataset_out)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_stratify(args, cfg: RunConfig) -> int:
    rejects = Rejects(args.lenient, args.error_log)
    records, lines = _load_dataset(args, cfg, rejects)
    result = stratify(records, cfg.locatability_params())
    for image_id, why in result.rejected:
        rejects.add(lines.get(image_id, 0), image_id, why)
    rejects.flush()
    out = _out_dir(args, cfg)
    standard = sorted(result.standard, key=lambda r: r.image_id)
    rag = sorted(result.rag_superior, key=lambda r: r.image_id)
    (out / "standard.jsonl").write_text(dumps_jsonl(standard), encoding="utf-8")
    (out / "rag_superior.jsonl").write_text(dumps_jsonl(rag), encoding="utf-8")
    summary = {
        "counts": {"accepted": len(standard) + len(rag), "rejected": len(rejects.items),
                   "standard": len(standard), "rag_superior": len(rag)},
        "l_opt_histogram": l_opt_histogram([r.scores["l_opt"] for r in standard + rag]),
        "rejected": rejects.items,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    if args.plot:
        from .plots import l_opt_histogram_png

        l_opt_histogram_png(summary["l_opt_histogram"], out / "l_opt_histogram.png")
    return EXIT_OK


def cmd_curate(args, cfg: RunConfig) -> int:
    rejects = Rejects(args.lenient, args.error_log)
    records, lines = _load_dataset(args, cfg, rejects)
    grounding = args.grounding or cfg.grounding_table
    provider = TableGroundingProvider.from_file(grounding) if grounding else None
    result = curate(records, cfg.curation_config(), provider=provider)
    for image_id, why in result.rejected:
        rejects.add(lines.get(image_id, 0), image_id, why)
    rejects.flush()
    out = _out_dir(args, cfg)
    (out / "standard.jsonl").write_text(dumps_jsonl(result.standard), encoding="utf-8")
    (out / "rag_superior.jsonl").write_text(dumps_jsonl(result.rag_superior), encoding="utf-8")
    summary = result.summary()
    summary["rejected"] = rejects.items
    summary["counts"]["rejected"] = len(rejects.items)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    if args.plot:
        from .plots import l_opt_histogram_png

        l_opt_histogram_png(summary["l_opt_histogram"], out / "l_opt_histogram.png")
    return EXIT_OK


def _normalizer(cfg: RunConfig) -> NameNormalizer:
    return NameNormalizer.from_file(cfg.alias_table) if cfg.alias_table else NameNormalizer.default()


def _true_label(obj: dict, cfg: RunConfig) -> int:
    if "true_label" in obj:
        return int(obj["true_label"])
    pair = DistancePair(float(obj["d_rag"]), float(obj["d_reason"]))
    return stratum_label(pair, cfg.tau_margin).label


def cmd_reward(args, cfg: RunConfig) -> int:
    params = cfg.reward_params()
    normalizer = _normalizer(cfg)
    grounding = args.grounding or cfg.grounding_table
    provider = TableGroundingProvider.from_file(grounding) if grounding else TableGroundingProvider()
    gaz_path = args.gazetteer or cfg.gazetteer
    gazetteer = Path(gaz_path).read_text(encoding="utf-8").splitlines() if gaz_path else []
    extract = RuleEntityExtractor(gazetteer)
    rejects = Rejects(args.lenient, args.error_log)
    out_lines = []
    for lineno, line in _read_lines(args.input):
        obj = _parse_json(lineno, line, rejects)
        if obj is None:
            continue
        try:
            pred_ents = EntitySet(obj["predicted_entities"]) if "predicted_entities" in obj \
                else extract(obj["predicted_rationale"])
            ref_ents = EntitySet(obj["reference_entities"]) if "reference_entities" in obj \
                else extract(obj["reference_rationale"])
            b = full_breakdown(
                predicted_label=int(obj["predicted_label"]),
                true_label=_true_label(obj, cfg),
                predicted_entities=pred_ents,
                reference_entities=ref_ents,
                image_id=str(obj["image_id"]),
                provider=provider,
                pred=GeoLocation.from_dict(obj["predicted"]),
                truth=GeoLocation.from_dict(obj["truth"]),
                params=params,
                normalizer=normalizer,
            )
        except (KeyError, TypeError, ValueError) as exc:
            rejects.add(lineno, obj.get("image_id"), f"bad rollout: {exc!r}")
            continue
        row = {"image_id": str(obj["image_id"])}
        row.update(b.to_dict())
        row["predicted_entities"] = pred_ents.to_list()
        row["reference_entities"] = ref_ents.to_list()
        out_lines.append(json.dumps(row, ensure_ascii=False) + "\n")
    rejects.flush()
    _write("".join(out_lines), args.output)
    return EXIT_OK


def cmd_train_toy(args, cfg: RunConfig) -> int:
    world_path = args.world or cfg.world
    world = SyntheticGeoWorld.load(world_path) if world_path else SyntheticGeoWorld.bundled()
    curriculum = cfg.curriculum_config()
    init = ToyPolicy.init(world.n_actions, world.feature_dim, seed=cfg.seed, temperature=cfg.temperature)
    if args.init_policy_out:
        Path(args.init_policy_out).write_text(init.dump(), encoding="utf-8")
    result = run_curriculum(world, init, curriculum, cfg.reward_params())
    trace_path = args.trace or cfg.trace_out
    Path(trace_path).write_text("".join(json.dumps(r) + "\n" for r in result.trace), encoding="utf-8")
    Path(args.policy or cfg.policy_out).write_text(result.policy.dump(), encoding="utf-8")
    if args.plot:
        from .plots import trace_png

        trace_png(result.trace, Path(trace_path).with_suffix(".png"))
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    fmt = args.format or cfg.report_format
    if fmt not in FORMATS:
        log.error("unknown format %r; choose from %s", fmt, ", ".join(FORMATS))
        return EXIT_USAGE
    rejects = Rejects(args.lenient, args.error_log)
    records, seen = [], set()
    for lineno, line in _read_lines(args.input):
        obj = _parse_json(lineno, line, rejects)
        if obj is None:
            continue
        try:
            rec = EvalRecord.from_dict(obj)
            if rec.image_id in seen:
                raise ValueError(f"duplicate image_id {rec.image_id}")
        except (KeyError, TypeError, ValueError) as exc:
            rejects.add(lineno, obj.get("image_id"), f"bad eval record: {exc!r}")
            continue
        seen.add(rec.image_id)
        records.append(rec)
    rejects.flush()
    try:
        report = evaluate(records, _normalizer(cfg))
    except EmptyEvaluationError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    _write(emit_report(report, fmt), args.output or cfg.report_out)
    return EXIT_DATA if rejects.items else EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    fmt = args.format or cfg.report_format
    if fmt not in FORMATS:
        log.error("unknown format %r; choose from %s", fmt, ", ".join(FORMATS))
        return EXIT_USAGE
    if args.metrics:
        report = MetricReport.from_dict(json.loads(Path(args.metrics).read_text(encoding="utf-8")))
        _write(emit_report(report, fmt), args.output)
        return EXIT_OK
    trace = [json.loads(line) for _, line in _read_lines(args.trace)]
    _write(_render_trace(trace, fmt), args.output)
    if args.plot:
        from .plots import reward_surface_png, trace_png

        base = Path(args.output or args.trace)
        trace_png(trace, base.with_suffix(".trace.png"))
        reward_surface_png(cfg.reward_params(), cfg.locatability_params(), base.with_suffix(".surface.png"))
    return EXIT_OK


_TRACE_FIELDS = ("stage", "epoch", "mean_reward", "mean_kl", "objective")


def _render_trace(trace: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(trace, indent=2) + "\n"
    if fmt == "csv":
        rows = [",".join(_TRACE_FIELDS)]
        rows += [",".join(repr(r[k]) for k in _TRACE_FIELDS) for r in trace]
        return "\n".join(rows) + "\n"
    lines = [f"{'stage':>5} {'epoch':>5} {'reward':>8} {'kl':>10} {'objective':>10}"]
    for r in trace:
        lines.append(f"{r['stage']:>5} {r['epoch']:>5} {r['mean_reward']:>8.4f} {r['mean_kl']:>10.6f} {r['objective']:>10.6f}")
    return "\n".join(lines) + "\n"


COMMANDS = {
    "score": cmd_score,
    "stratify": cmd_stratify,
    "curate": cmd_curate,
    "reward": cmd_reward,
    "train-toy": cmd_train_toy,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = RunConfig.load(args.config, _overrides(args))
    except (OSError, KeyError, ValueError, DataError) as exc:
        log.error("bad configuration: %s", exc)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, cfg)
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except NumericFailure as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
