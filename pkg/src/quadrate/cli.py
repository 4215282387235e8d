"""Command-line front end: calibrate priors, run ladders, sweep thresholds.

Reports are written as a canonical ``report.json`` (byte-identical across
identical invocations; the full run config is embedded so a run can be
replayed from its own report) plus CSV side files. Wall-clock numbers go to
``timing.json`` only, which is excluded from the determinism contract.

Exit codes: 0 ok, 2 config error, 3 input error, 4 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, asdict
from typing import Optional

from . import frame_io, inference, metrics, multirate
from .clips import BUNDLED_CLIPS, clip_names, load_clip
from .frame_io import InvalidSpec, parse_pattern_spec
from .inference import DegenerateFit, InsufficientData, load_prior, save_prior
from .multirate import EncodeMode, InvalidQOrdering, Schedule
from .rdo_core import CostModelParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_INTERNAL = 4

MODE_NAMES = {
    "full": EncodeMode.FULL,
    "prune-all": EncodeMode.PRUNE_ALL,
    "prune-improved": EncodeMode.PRUNE_NON_SPECIAL,
    "bayes": EncodeMode.BAYES,
}


class ConfigError(ValueError):
    pass


class InputError(ValueError):
    pass


@dataclass
class RunConfig:
    """Complete, replayable description of one run."""

    input: Optional[str] = None
    synth: Optional[str] = None
    width: Optional[int] = None
    height: Optional[int] = None
    frames: Optional[int] = None
    gray: bool = False
    qref: int = 22
    qlocals: tuple = (27, 32, 37, 42)
    mode: str = "bayes"
    tau1: float = 0.2
    tau2: float = 0.05
    period: int = 8
    qoffset: int = 8
    seed: int = 0
    jobs: int = 1
    out: str = "runs/out"
    prior: Optional[str] = None
    calib_qs: Optional[tuple] = None
    lambda_scale: float = 0.85
    partition_bits: float = 4.0
    mode_bits: float = 2.0

    def schedule(self) -> Schedule:
        return Schedule(special_period=self.period, special_q_offset=self.qoffset)

    def cost_params(self) -> CostModelParams:
        return CostModelParams(
            lambda_scale=self.lambda_scale,
            partition_signal_bits=self.partition_bits,
            mode_signal_bits=self.mode_bits,
        )

    def encode_mode(self) -> EncodeMode:
        if self.mode not in MODE_NAMES:
            raise ConfigError(
                f"unknown mode {self.mode!r}; choose from {sorted(MODE_NAMES)}"
            )
        return MODE_NAMES[self.mode]

    def bayes_params(self) -> inference.BayesParams:
        return inference.BayesParams(
            tau1=self.tau1, tau2=self.tau2, rng_seed=self.seed
        )

    def validate(self) -> None:
        if (self.input is None) == (self.synth is None):
            raise ConfigError("exactly one of --input or --synth is required")
        if not self.qlocals:
            raise ConfigError("need at least one local quality level")
        for q in (self.qref, *self.qlocals):
            if not 0 <= q <= 63:
                raise ConfigError(f"quality level {q} outside [0, 63]")
        if self.qref >= min(self.qlocals):
            raise ConfigError(
                f"--qref {self.qref} must be strictly below all --qlocals "
                f"{sorted(self.qlocals)}"
            )
        self.encode_mode()
        if not 0.0 < self.tau1 < 1.0 or not 0.0 < self.tau2 < 1.0:
            raise ConfigError("tau1 and tau2 must lie strictly inside (0, 1)")
        if self.period < 1:
            raise ConfigError("--period must be >= 1")
        if self.jobs < 1:
            raise ConfigError("--jobs must be >= 1")


def load_input(config: RunConfig) -> list:
    """Materialize the frame sequence the config describes."""
    if config.synth is not None:
        if config.synth in BUNDLED_CLIPS:
            return load_clip(config.synth, frames=config.frames)
        if config.width is None or config.height is None or config.frames is None:
            raise InputError(
                "--synth patterns need --width, --height and --frames "
                f"(bundled clips: {clip_names()})"
            )
        spec = parse_pattern_spec(
            config.synth, config.width, config.height, config.frames,
            seed=config.seed,
        )
        return frame_io.generate_synthetic(spec)
    try:
        return frame_io.load_sequence(
            config.input, width=config.width, height=config.height,
            gray=config.gray, limit=config.frames,
        )
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _json_dump(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _instance_summary(inst: multirate.InstanceResult) -> dict:
    return {
        "Q": inst.Q,
        "mode": inst.mode.value,
        "frame_count": len(inst.frames),
        "leaf_evaluations_total": inst.leaf_evaluations_total,
        "rate_proxy_total": inst.rate_proxy_total,
        "distortion_total": inst.distortion_total,
        "mean_psnr": inst.mean_psnr(),
    }


def write_report(report: multirate.MultiRateReport, config: RunConfig,
                 out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    mode = config.encode_mode()

    doc = {
        "config": asdict(config),
        "rate_units": "proxy-bits (surrogate cost model, not codec bits)",
        "reference": _instance_summary(report.reference),
        "locals": [_instance_summary(inst) for inst in report.locals],
        "local_metrics": [
            {
                "Q": m.Q,
                "time_saving": m.time_saving,
                "rate_delta": m.rate_delta,
                "mean_psnr": m.mean_psnr,
                "baseline_mean_psnr": m.baseline_mean_psnr,
            }
            for m in report.local_metrics
        ],
        "bd_rate_vs_full_percent": report.bd_rate_vs_full,
        "anchor_points": [
            {"rate": p.rate, "quality": p.quality} for p in report.anchor_points
        ],
        "test_points": [
            {"rate": p.rate, "quality": p.quality} for p in report.test_points
        ],
    }
    if report.prior is not None:
        doc["prior"] = {
            "slopes": list(report.prior.slopes),
            "intercepts": list(report.prior.intercepts),
        }
    _json_dump(doc, os.path.join(out_dir, "report.json"))

    timing = {
        "reference_wall_seconds": report.reference.wall_seconds,
        "locals": [
            {"Q": inst.Q, "wall_seconds": inst.wall_seconds}
            for inst in report.locals
        ],
        "wall_time_saving": [
            {"Q": m.Q, "value": m.wall_time_saving} for m in report.local_metrics
        ],
    }
    _json_dump(timing, os.path.join(out_dir, "timing.json"))

    instances = [("reference", report.reference)]
    instances += [("local", inst) for inst in report.locals]
    if mode != EncodeMode.FULL:
        instances += [("baseline", report.baselines[q])
                      for q in sorted(report.baselines)]

    with open(os.path.join(out_dir, "rd_points.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["role", "Q", "rate_proxy", "psnr"])
        for role, inst in instances:
            writer.writerow(
                [role, inst.Q, repr(inst.rate_proxy_total), repr(inst.mean_psnr())]
            )

    with open(os.path.join(out_dir, "frames.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["role", "Q", "frame", "special", "q_eff", "distortion",
             "rate_proxy", "psnr", "leaf_evaluations"]
        )
        for role, inst in instances:
            for ef, special, psnr in zip(inst.frames, inst.special_flags,
                                         inst.psnr_per_frame):
                writer.writerow(
                    [role, inst.Q, ef.frame_index, int(special), ef.quality.Q,
                     repr(ef.distortion), repr(ef.rate_proxy), repr(psnr),
                     ef.leaf_evaluations]
                )

    with open(os.path.join(out_dir, "depth_stats.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["role", "Q"]
            + [f"frac_d{d}" for d in range(5)]
            + [f"a_{d}" for d in range(1, 5)]
        )
        for role, inst in instances:
            st = metrics.depth_area_stats(inst)
            writer.writerow([role, inst.Q]
                            + [repr(f) for f in st.fractions]
                            + [repr(c) for c in st.cumulative])

    with open(os.path.join(out_dir, "compare_stats.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Q", "remote_shallower", "equal", "remote_deeper"])
        for inst in report.locals:
            cs = metrics.depth_compare_stats(inst, report.reference)
            writer.writerow([inst.Q, repr(cs.remote_shallower), repr(cs.equal),
                             repr(cs.remote_deeper)])

    if mode == EncodeMode.BAYES:
        samples = []
        for inst in report.locals:
            samples.extend(inst.posterior_samples)
        if samples:
            hist = metrics.posterior_histogram(samples)
            with open(os.path.join(out_dir, "posterior_hist.csv"), "w",
                      newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["bin_left", "bin_right", "count", "density"])
                for i, count in enumerate(hist.counts):
                    writer.writerow(
                        [repr(hist.edges[i]), repr(hist.edges[i + 1]), count,
                         repr(hist.density[i])]
                    )
        bounds = {}
        for inst in report.locals:
            rep = metrics.pruning_bound_report(
                inst, report.baselines[inst.Q], config.tau1
            )
            bounds[str(inst.Q)] = dataclasses.asdict(rep)
        _json_dump(bounds, os.path.join(out_dir, "bound_report.json"))
        for inst in report.locals:
            inference.dump_tables(
                inst.count_tables, os.path.join(out_dir, f"tables_q{inst.Q}.csv")
            )
        if report.prior is not None:
            save_prior(report.prior, os.path.join(out_dir, "prior.csv"))

    return os.path.join(out_dir, "report.json")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_run(config: RunConfig, out_dir: Optional[str] = None) -> str:
    config.validate()
    sequence = load_input(config)
    mode = config.encode_mode()
    prior = load_prior(config.prior) if config.prior else None
    report = multirate.run_multirate(
        sequence,
        config.qref,
        list(config.qlocals),
        mode,
        config.schedule(),
        config.cost_params(),
        bayes=config.bayes_params() if mode == EncodeMode.BAYES else None,
        prior=prior,
        jobs=config.jobs,
    )
    return write_report(report, config, out_dir or config.out)


def cmd_calibrate(config: RunConfig) -> str:
    if (config.input is None) == (config.synth is None):
        raise ConfigError("exactly one of --input or --synth is required")
    sequence = load_input(config)
    if config.calib_qs is not None:
        grid = sorted(set(config.calib_qs))
        if len(grid) < 2:
            raise DegenerateFit(
                f"calibration grid {grid} has a single quality level; "
                "at least two distinct levels are required"
            )
    else:
        grid = multirate.calibration_grid(list(config.qlocals))
    schedule = config.schedule()
    params = config.cost_params()
    n = max(2, min(schedule.special_period, len(sequence)))
    samples = []
    for q in grid:
        result = multirate.encode_instance(
            sequence[:n], q, EncodeMode.FULL, schedule, params
        )
        stats = metrics.depth_area_stats(result)
        samples.append((4 * q, stats.cumulative))
    prior = inference.fit_prior(samples)
    os.makedirs(config.out, exist_ok=True)
    path = os.path.join(config.out, "prior.csv")
    save_prior(prior, path)
    return path


def cmd_sweep(config: RunConfig, tau1_values: list) -> str:
    if not tau1_values:
        raise ConfigError("sweep needs at least one tau1 value")
    config.validate()
    rows = []
    for tau1 in tau1_values:
        sub = dataclasses.replace(config, tau1=tau1)
        sub_out = os.path.join(config.out, f"tau1_{tau1}")
        report_path = cmd_run(sub, out_dir=sub_out)
        with open(report_path) as fh:
            doc = json.load(fh)
        row = {"tau1": tau1, "bd_rate_vs_full_percent": doc["bd_rate_vs_full_percent"]}
        for m in doc["local_metrics"]:
            row[f"dT_q{m['Q']}"] = m["time_saving"]
            row[f"rate_delta_q{m['Q']}"] = m["rate_delta"]
        rows.append(row)
    os.makedirs(config.out, exist_ok=True)
    path = os.path.join(config.out, "sweep.csv")
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v
                             for k, v in row.items()})
    return path


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", help="path to a .y4m or raw YUV file")
    parser.add_argument(
        "--synth",
        help="synthetic source: bundled clip name or pattern spec such as "
             "'noise:amplitude=40' or 'moving_texture:vx=2,vy=1'",
    )
    parser.add_argument("--width", type=int)
    parser.add_argument("--height", type=int)
    parser.add_argument("--frames", type=int, help="frame limit")
    parser.add_argument("--gray", action="store_const", const=True,
                        help="raw input is luma-only")
    parser.add_argument("--qref", type=int, help="reference quality level")
    parser.add_argument("--qlocals", help="comma-separated local quality levels")
    parser.add_argument("--mode", choices=sorted(MODE_NAMES))
    parser.add_argument("--tau1", type=float)
    parser.add_argument("--tau2", type=float)
    parser.add_argument("--period", type=int, help="special-frame period")
    parser.add_argument("--qoffset", type=int, help="special-frame Q reduction")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, help="parallel local encodes")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--prior", help="prior CSV to use instead of calibrating")
    parser.add_argument("--calib-qs", dest="calib_qs",
                        help="comma-separated calibration quality levels")
    parser.add_argument("--lambda-scale", dest="lambda_scale", type=float)
    parser.add_argument("--partition-bits", dest="partition_bits", type=float)
    parser.add_argument("--mode-bits", dest="mode_bits", type=float)
    parser.add_argument("--config", help="replay a run config or report JSON")


def _parse_int_list(text: str) -> tuple:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def build_config(args: argparse.Namespace) -> RunConfig:
    base: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
        base = doc.get("config", doc)
        base.pop("_comment", None)
    overrides = {}
    for field in dataclasses.fields(RunConfig):
        value = getattr(args, field.name, None)
        if value is None:
            continue
        if field.name in ("qlocals", "calib_qs") and isinstance(value, str):
            value = _parse_int_list(value)
        overrides[field.name] = value
    merged = {**base, **overrides}
    if "qlocals" in merged and merged["qlocals"] is not None:
        merged["qlocals"] = tuple(merged["qlocals"])
    if "calib_qs" in merged and merged["calib_qs"] is not None:
        merged["calib_qs"] = tuple(merged["calib_qs"])
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    return RunConfig(**merged)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadrate",
        description="multi-rate quadtree RDO simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="encode a ladder and write reports")
    _add_common(p_run)
    p_cal = sub.add_parser("calibrate", help="fit a split prior from full encodes")
    _add_common(p_cal)
    p_sweep = sub.add_parser("sweep", help="run once per tau1 value")
    _add_common(p_sweep)
    p_sweep.add_argument("--tau1-list", dest="tau1_list",
                         help="comma-separated tau1 values")
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_config(args)
        if args.command == "run":
            path = cmd_run(config)
            print(path)
        elif args.command == "calibrate":
            path = cmd_calibrate(config)
            print(path)
        elif args.command == "sweep":
            if not getattr(args, "tau1_list", None):
                raise ConfigError("--tau1-list is required for sweep")
            taus = [float(tok) for tok in args.tau1_list.split(",")
                    if tok.strip() != ""]
            path = cmd_sweep(config, taus)
            print(path)
        return EXIT_OK
    except (ConfigError, InvalidQOrdering) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (
        InputError,
        InvalidSpec,
        InsufficientData,
        DegenerateFit,
        frame_io.MalformedHeader,
        frame_io.UnsupportedFormat,
        frame_io.TruncatedFrame,
        multirate.MissingPrior,
        OSError,
    ) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - invariant violations
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
