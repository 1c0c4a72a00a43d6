"""Command-line entry point: ``carma run``, ``carma eval`` and ``carma batch``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import FormatError, IoError, LoadError
from .evaluation import ResultRow, evaluate, format_table, read_sequence, report_table
from .model import Mode, ReasonerConfig
from .perception import PerceptionParams
from .pipeline import RunConfig, run_pipeline, write_run_outputs
from .scenario import load_scenario
from .trigger import DebouncePolicy
from .vlm_client import EndpointConfig

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_BACKEND = 3
EXIT_USAGE = 64

MODES = {
    "discrete-prev": Mode.DISCRETE_PREV,
    "trigger-prev": Mode.TRIGGER_PREV,
    "trigger": Mode.TRIGGER_ONLY,
    "trigger-label-prev": Mode.TRIGGER_LABEL_PREV,
}
BACKENDS = {"oracle": "oracle", "noisy-oracle": "noisy_oracle", "vlm": "vlm"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=list(MODES), default="trigger")
    p.add_argument("--backend", choices=list(BACKENDS), default="oracle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flip-prob", type=float, default=None,
                   help="noisy-oracle: probability of replacing the action (default 0.2)")
    p.add_argument("--swap-prob", type=float, default=0.0)
    p.add_argument("--toggle-prob", type=float, default=0.0)
    p.add_argument("--interval", type=float, default=2.0, help="discrete-prev sampling interval, s")
    p.add_argument("--debounce-k", type=int, default=2)
    p.add_argument("--no-robot-hand", action="store_true")
    p.add_argument("--base-url", default="https://api.openai.com/v1")
    p.add_argument("--model", default="gpt-4o")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--max-retries", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="carma", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="replay a scenario and write predicted triplets")
    run.add_argument("--scenario", required=True, type=Path)
    run.add_argument("--out", type=Path, default=Path("carma_out"))
    _add_run_options(run)

    ev = sub.add_parser("eval", help="score predicted against ground-truth triplets")
    ev.add_argument("--pred", required=True, type=Path)
    ev.add_argument("--gt", required=True, type=Path)
    ev.add_argument("--table", action="store_true", help="also print an aligned text table")
    ev.add_argument("--out", type=Path, help="write the JSON report here as well")

    batch = sub.add_parser("batch", help="run a manifest of (scenario, mode, backend) rows")
    batch.add_argument("--manifest", required=True, type=Path)
    batch.add_argument("--out", type=Path, help="output directory (overrides the manifest)")
    batch.add_argument("--no-figures", action="store_true")
    return parser


def make_run_config(mode: str = "trigger", backend: str = "oracle", seed: int = 0,
                    flip_prob: Optional[float] = None, swap_prob: float = 0.0,
                    toggle_prob: float = 0.0, interval: float = 2.0, debounce_k: int = 2,
                    robot_hand: bool = True, base_url: str = "https://api.openai.com/v1",
                    model: str = "gpt-4o", timeout: float = 30.0, max_retries: int = 1,
                    perception: Optional[PerceptionParams] = None) -> RunConfig:
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    if backend not in BACKENDS:
        raise UsageError(f"unknown backend {backend!r}; expected one of {', '.join(BACKENDS)}")
    backend = BACKENDS[backend]
    endpoint = None
    if backend == "vlm":
        endpoint = EndpointConfig.from_env(base_url=base_url, model=model, timeout=timeout,
                                           max_retries=max_retries)
    if flip_prob is None:
        flip_prob = 0.2 if backend == "noisy_oracle" else 0.0
    return RunConfig(
        reasoner=ReasonerConfig(MODES[mode], interval, robot_hand),
        backend=backend, seed=seed, flip_prob=flip_prob, swap_prob=swap_prob,
        toggle_prob=toggle_prob, endpoint=endpoint,
        perception=perception or PerceptionParams(),
        debounce=DebouncePolicy(debounce_k),
    )


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    cfg = make_run_config(args.mode, args.backend, args.seed, args.flip_prob, args.swap_prob,
                          args.toggle_prob, args.interval, args.debounce_k, not args.no_robot_hand,
                          args.base_url, args.model, args.timeout, args.max_retries,
                          PerceptionParams(intrinsics=scn.intrinsics))
    mem, pred, report = run_pipeline(scn, cfg)
    paths = write_run_outputs(args.out, mem, pred, report)
    print(f"{scn.name}: {report.triggers} triggers, {report.completed} triplets, "
          f"{len(report.grounding_errors)} grounding errors, "
          f"{len(report.backend_failures)} backend failures")
    for name, path in paths.items():
        print(f"{name}: {path}")
    if report.backend_unavailable and report.completed == 0:
        print("error: reasoning backend unavailable; no cycle completed", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = read_sequence(args.gt)
    pred = read_sequence(args.pred)
    result = evaluate(gt, pred)
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    if args.out:
        args.out.write_text(text + "\n")
    if args.table:
        row = ResultRow(gt.recording, gt.scenario or "sorting_fruits", gt.setting or "1P",
                        "prediction", result["tsr"]["tsr"], result["roles"]["action_acc"],
                        result["roles"]["object_acc"])
        print()
        print(format_table(report_table([row])), end="")
    return EXIT_OK


def run_batch(manifest_path: Path, out: Optional[Path] = None, figures: bool = True) -> dict:
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    base = Path(manifest_path).parent
    out = Path(out or base / manifest.get("out", "batch_out"))
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for k, row in enumerate(manifest["rows"]):
        scn = load_scenario(base / row["scenario"])
        cfg = make_run_config(row.get("mode", "trigger"), row.get("backend", "oracle"),
                              row.get("seed", 0), row.get("flip_prob"),
                              row.get("swap_prob", 0.0), row.get("toggle_prob", 0.0),
                              row.get("interval", 2.0), row.get("debounce_k", 2),
                              row.get("robot_hand", True),
                              perception=PerceptionParams(intrinsics=scn.intrinsics))
        mem, pred, report = run_pipeline(scn, cfg)
        write_run_outputs(out / f"{k:02d}_{scn.name}_{cfg.reasoner.mode.value}", mem, pred, report)
        gt_path = base / row["gt"] if "gt" in row else scn.ground_truth_path()
        if gt_path is None:
            raise FormatError(f"manifest row {k}: no ground truth for {scn.name}")
        gt = read_sequence(gt_path)
        res = evaluate(gt, pred)
        results.append(ResultRow(scn.name, gt.scenario or scn.header.get("scenario"),
                                 gt.setting or scn.header.get("setting"),
                                 cfg.reasoner.mode.value, res["tsr"]["tsr"],
                                 res["roles"]["action_acc"], res["roles"]["object_acc"]))
    table = report_table(results)
    (out / "table.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    (out / "table.txt").write_text(format_table(table))
    if figures:
        from .plotting import plot_roles, plot_tsr

        plot_tsr(table, out / "tsr.png")
        plot_roles(table, out / "roles.png")
    return table


def cmd_batch(args) -> int:
    table = run_batch(args.manifest, args.out, not args.no_figures)
    print(format_table(table), end="")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "eval": cmd_eval, "batch": cmd_batch}[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"carma: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, LoadError, IoError, json.JSONDecodeError, KeyError) as exc:
        print(f"carma: error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
