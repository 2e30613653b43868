"""``togkit`` command line.

Exit codes: 0 success, 1 domain error (validation errors, pipeline stage
failures, backend failures), 2 usage error. Diagnostics go to stderr;
machine output goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from togkit.backends.config import ENV_VAR, build_backends, load_config
from togkit.backends.base import Frame, Mode
from togkit.errors import TogkitError
from togkit.eval import (
    DEFAULT_ANGLE_THRESHOLD,
    DEFAULT_IOU_THRESHOLD,
    FORMATS,
    EvalConfig,
    emit_report,
    evaluate_split,
    load_report,
)
from togkit.pipeline import (
    DEFAULT_AFFORDANCE_THRESHOLD,
    DEFAULT_MAX_AREA,
    DEFAULT_MIN_AREA,
    DEFAULT_N_ROTS,
    DEFAULT_TAU,
    TogParams,
    TogRequest,
    run_tog_safe,
)

log = logging.getLogger("togkit")

DEFAULTS_EPILOG = (
    f"Pipeline defaults: --min-area {DEFAULT_MIN_AREA}, --max-area {DEFAULT_MAX_AREA}, "
    f"--tau {DEFAULT_TAU}, --n-rots {DEFAULT_N_ROTS}. "
    f"Grasp success: rotated IoU > {DEFAULT_IOU_THRESHOLD} and angle difference <= "
    f"{DEFAULT_ANGLE_THRESHOLD:g} degrees. "
    f"Backend config defaults to ${ENV_VAR}, else noiseless oracles."
)


class UsageError(Exception):
    pass


def _in_range(lo, hi, cast=float, lo_open=True):
    def check(s):
        try:
            v = cast(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {s!r}") from None
        ok_lo = v > lo if lo_open else v >= lo
        if not ok_lo or (hi is not None and v > hi):
            bounds = f"{'(' if lo_open else '['}{lo}, {hi if hi is not None else 'inf'}{']' if hi is not None else ')'}"
            raise argparse.ArgumentTypeError(f"{v} outside {bounds}")
        return v

    return check


def _add_params(p: argparse.ArgumentParser):
    g = p.add_argument_group("pipeline parameters")
    g.add_argument("--min-area", type=_in_range(0, None), default=DEFAULT_MIN_AREA,
                   help="SSF lower area bound in px (default: %(default)s)")
    g.add_argument("--max-area", type=_in_range(0, None), default=DEFAULT_MAX_AREA,
                   help="SSF upper area bound in px (default: %(default)s)")
    g.add_argument("--tau", type=_in_range(0, 1), default=DEFAULT_TAU,
                   help="SSF subset overlap threshold in (0, 1] (default: %(default)s)")
    g.add_argument("--n-rots", type=_in_range(0, 360, int), default=DEFAULT_N_ROTS,
                   help="rotations tried by affordance alignment (default: %(default)s)")
    g.add_argument("--affordance-threshold", type=_in_range(0, 1, lo_open=False),
                   default=DEFAULT_AFFORDANCE_THRESHOLD,
                   help="confidence cut for standard-mode affordance masks (default: %(default)s)")
    g.add_argument("--empty-region-fallback", action="store_true",
                   help="use the whole object when the task region comes out empty")


def _params(a) -> TogParams:
    try:
        return TogParams(
            min_area=a.min_area,
            max_area=a.max_area,
            tau=a.tau,
            n_rots=a.n_rots,
            affordance_threshold=a.affordance_threshold,
            empty_region_fallback=a.empty_region_fallback,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _add_backend(p):
    p.add_argument("--backend", metavar="CFG", default=None,
                   help=f"backend config JSON (default: ${ENV_VAR}, else noiseless oracles)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="togkit", description="Task-oriented grasping toolkit.",
                                     epilog=DEFAULTS_EPILOG, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    parser.add_argument("-q", "--quiet", action="store_true", help="errors only on stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("validate", help="check a manifest against the schema and invariants",
                       epilog=DEFAULTS_EPILOG, formatter_class=fmt)
    p.add_argument("manifest")
    p.add_argument("--strict", action="store_true", help="treat warnings as errors")

    p = sub.add_parser("refine-affordances", help="intersect affordance masks with their object masks",
                       epilog=DEFAULTS_EPILOG, formatter_class=fmt)
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True, help="output manifest path")

    p = sub.add_parser("auto-label", help="transfer reference grasps and affordances onto scene objects",
                       epilog=DEFAULTS_EPILOG, formatter_class=fmt)
    p.add_argument("manifest")
    p.add_argument("--reference", required=True, help="manifest holding the reference entries")
    p.add_argument("--n-rots", type=_in_range(0, 360, int), default=DEFAULT_N_ROTS,
                   help="rotation candidates for alignment (default: %(default)s)")
    p.add_argument("--min-iou", type=_in_range(0, 1), default=0.3,
                   help="alignment IoU below which labelling fails (default: %(default)s)")
    p.add_argument("--no-refine", action="store_true", help="keep transferred affordances unclipped")
    p.add_argument("-o", "--output", required=True, help="output manifest path")

    p = sub.add_parser("run", help="run the pipeline for one (scene, object, task)",
                       epilog=DEFAULTS_EPILOG, formatter_class=fmt)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scene", required=True, help="scene id")
    p.add_argument("--object", required=True, help="object (subcategory) id")
    p.add_argument("--task", required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.BINARY.value,
                   help="framework (default: %(default)s)")
    _add_backend(p)
    _add_params(p)
    p.add_argument("--dump-trace", metavar="DIR", help="write per-stage overlays and trace.json here")
    p.add_argument("-o", "--output", help="write the result JSON here instead of stdout")

    p = sub.add_parser("eval", help="evaluate a split and write a report",
                       epilog=DEFAULTS_EPILOG, formatter_class=fmt)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", help="split tag or group (default: %(default)s)")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.BINARY.value,
                   help="framework (default: %(default)s)")
    _add_backend(p)
    _add_params(p)
    p.add_argument("--iou-threshold", type=_in_range(0, 1), default=DEFAULT_IOU_THRESHOLD,
                   help="grasp success needs rotated IoU strictly above this (default: %(default)s)")
    p.add_argument("--angle-threshold", type=_in_range(0, 90), default=DEFAULT_ANGLE_THRESHOLD,
                   help="grasp success needs angle difference <= this, degrees (default: %(default)s)")
    p.add_argument("--workers", type=_in_range(0, None, int), default=1, help="trial threads (default: %(default)s)")
    p.add_argument("--keep-traces", action="store_true", help="store per-trial traces in the JSON report")
    p.add_argument("--report-dir", required=True)
    p.add_argument("--format", choices=FORMATS, default="markdown", help="(default: %(default)s)")

    p = sub.add_parser("report", help="re-render a saved JSON report",
                       epilog=DEFAULTS_EPILOG, formatter_class=fmt)
    p.add_argument("report", help="report.json written by eval")
    p.add_argument("--format", choices=FORMATS, default="markdown", help="(default: %(default)s)")
    p.add_argument("-o", "--output", help="output file or directory (default: stdout)")
    p.add_argument("--override", action="append", default=[], metavar="OBJECT/TASK=VALUE",
                   help="manual partial-success score for a row, e.g. hammer_01/handover=0.5")
    return parser


def _write_json(obj, path=None):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_validate(a) -> int:
    from togkit.dataset import load_dataset, validate_dataset

    rep = validate_dataset(load_dataset(a.manifest))
    _write_json(rep.to_json())
    for issue in rep.issues:
        log.warning("%s", issue)
    failed = bool(rep.errors) or (a.strict and bool(rep.warnings))
    return 1 if failed else 0


def cmd_refine(a) -> int:
    from togkit.dataset import load_dataset, refine_dataset, save_dataset

    save_dataset(refine_dataset(load_dataset(a.manifest)), a.output)
    return 0


def cmd_auto_label(a) -> int:
    from togkit.dataset import auto_label_dataset, load_dataset, save_dataset

    d = load_dataset(a.manifest)
    refs = load_dataset(a.reference)
    save_dataset(auto_label_dataset(d, refs, a.n_rots, a.min_iou, refine=not a.no_refine), a.output)
    return 0


def cmd_run(a) -> int:
    from togkit.dataset import load_dataset
    from togkit.viz import dump_trace

    d = load_dataset(a.manifest)
    params = _params(a)
    scene = next((s for s in d.scenes if s.scene_id == a.scene), None)
    if scene is None:
        raise UsageError(f"no scene {a.scene!r} in {a.manifest}")
    backends = build_backends(load_config(a.backend), dataset=d)
    try:
        image = scene.load_image()
        frame = Frame(image, f"scene:{scene.image_id}", scene.image_path)
        res = run_tog_safe(TogRequest(frame, a.object, a.task, a.mode, backends, d, params))
        if a.dump_trace:
            dump_trace(res, image, a.dump_trace)
    finally:
        backends.close()
    _write_json(res.to_json(), a.output)
    if res.error:
        log.error("stage %s failed: %s", res.failed_stage, res.error)
        return 1
    return 0


def cmd_eval(a) -> int:
    from togkit.dataset import load_dataset

    d = load_dataset(a.manifest)
    cfg = EvalConfig(
        split=a.split,
        mode=Mode(a.mode),
        iou_threshold=a.iou_threshold,
        angle_threshold=a.angle_threshold,
        params=_params(a),
        workers=a.workers,
        keep_traces=a.keep_traces,
    )
    backends = build_backends(load_config(a.backend), dataset=d)
    try:
        report = evaluate_split(d, cfg, backends)
    finally:
        backends.close()
    out = Path(a.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report, "json", out)  # always kept so `report` can re-render
    if a.format != "json":
        emit_report(report, a.format, out)
    log.info("%s/%s: TG accuracy %.3f over %d trials", a.mode, a.split, report.tg_accuracy, len(report.trials))
    return 0


def cmd_report(a) -> int:
    from togkit.eval import report_csv, report_json, report_markdown

    r = load_report(a.report)
    for ov in a.override:
        key, _, val = ov.partition("=")
        if "/" not in key or not val:
            raise UsageError(f"bad --override {ov!r}; expected OBJECT/TASK=VALUE")
        try:
            r.manual_overrides[key] = float(val)
        except ValueError:
            raise UsageError(f"bad --override value {val!r}") from None
    if a.output:
        emit_report(r, a.format, a.output)
    else:
        sys.stdout.write({"json": report_json, "csv": report_csv, "markdown": report_markdown}[a.format](r))
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "refine-affordances": cmd_refine,
    "auto-label": cmd_auto_label,
    "run": cmd_run,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.ERROR if a.quiet else (logging.DEBUG if a.verbose > 1 else logging.INFO if a.verbose else logging.WARNING)
    logging.basicConfig(level=level, format="togkit: %(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        return COMMANDS[a.command](a)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"togkit: error: {exc}", file=sys.stderr)
        return 2
    except (TogkitError, OSError) as exc:
        print(f"togkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
