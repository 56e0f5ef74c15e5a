"""Command-line pipeline: simulate, estimate, evaluate, kymo, visualize.

Configuration comes from a plain-text ``key = value`` file (``#`` comments)
overridden by CLI flags; unknown keys are an error and every value left at
its default is reported in the run log.  Exit codes: 0 success, 1 validation
error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path

import numpy as np

from . import io as evio
from . import viz
from .analysis import Kymogram, build_kymogram, compute_metrics, detect_slope, event_mask, velocity_from_slope
from .bos_physics import BosGeometry
from .core import (
    EmptyWindowError,
    EventStream,
    Roi,
    ScalarField,
    ValidationError,
    slice_events,
)
from .estimator import EstimatorConfig, estimate
from .event_ops import gaussian_smooth
from .simulator import SimConfig, blob_density_source, render_background, simulate_events, synth_scene


@dataclass(frozen=True)
class RunConfig:
    """Flat configuration covering the estimator, simulator, scene synthesis,
    and BOS geometry; field names double as config-file keys."""

    # estimator
    lambda1: float = 0.5
    lambda2: float = 0.1
    alpha: float = 0.95
    sigma_increment: float = 2.0
    sigma_density: float = 5.0
    iterations: int = 600
    lr: float = 0.05
    lr_decay: float = 0.1
    levels: int = 4
    coarsest_patch: int = 64
    window: float = 1.0 / 120.0
    parameterization: str = "poisson"
    seed: int = 0
    contrast: float = 1.0
    # simulator
    contrast_pos: float = 0.05
    contrast_neg: float = 0.05
    refractory_us: int = 0
    fps: float = 120.0
    dot_density: float = 0.02
    dot_radius: float = 1.5
    # synthetic scene
    width: int = 256
    height: int = 256
    duration: float = 0.1
    blob_count: int = 3
    blob_sigma: float = 40.0
    mod_freq: float = 8.0
    max_displacement: float = 3.0
    background_blur: float = 1.5
    # geometry
    focal_length: float = 0.025
    lens_to_schlieren: float = 1.7
    schlieren_to_background: float = 1.6
    pixel_pitch: float = 4.86e-6
    schlieren_depth: float = 0.1
    ambient_index: float = 1.000293
    gladstone_dale: float = 2.23e-4

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            alpha=self.alpha,
            sigma_increment=self.sigma_increment,
            sigma_density=self.sigma_density,
            iterations=self.iterations,
            lr=self.lr,
            lr_decay=self.lr_decay,
            levels=self.levels,
            coarsest_patch=self.coarsest_patch,
            window=self.window,
            parameterization=self.parameterization,
            seed=self.seed,
            contrast=self.contrast,
        )

    def sim_config(self) -> SimConfig:
        return SimConfig(
            contrast_pos=self.contrast_pos,
            contrast_neg=self.contrast_neg,
            refractory_us=self.refractory_us,
            fps=self.fps,
            seed=self.seed,
            dot_density=self.dot_density,
            dot_radius=self.dot_radius,
        )

    def geometry(self) -> BosGeometry:
        return BosGeometry(
            focal_length=self.focal_length,
            lens_to_schlieren=self.lens_to_schlieren,
            schlieren_to_background=self.schlieren_to_background,
            pixel_pitch=self.pixel_pitch,
            schlieren_depth=self.schlieren_depth,
            ambient_index=self.ambient_index,
            gladstone_dale=self.gladstone_dale,
        )


_FIELD_TYPES = {f.name: type(f.default) for f in dc_fields(RunConfig)}


def parse_config_file(path: str | Path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def build_config(
    file_values: dict | None, overrides: dict | None
) -> tuple[RunConfig, list[str]]:
    """Merge file values and CLI overrides over the defaults.

    Returns the config plus the names of keys still at their default (these
    get reported in the run log).  Unknown keys are an error.
    """
    merged: dict = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key not in _FIELD_TYPES:
                raise ValidationError(f"unknown config key {key!r}")
            typ = _FIELD_TYPES[key]
            try:
                merged[key] = typ(value) if not isinstance(value, typ) else value
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"config key {key!r}: {exc}") from exc
    cfg = RunConfig(**merged)
    defaulted = [name for name in _FIELD_TYPES if name not in merged]
    return cfg, defaulted


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _report_config(cfg: RunConfig, defaulted: list[str]) -> None:
    for f in dc_fields(RunConfig):
        marker = " (default)" if f.name in defaulted else ""
        _log(f"config: {f.name} = {getattr(cfg, f.name)}{marker}")


def _echo_config(cfg: RunConfig, out_dir: Path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dc_fields(RunConfig)]
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n")


def _parse_roi(text: str | None, resolution: tuple[int, int]) -> Roi:
    if text is None:
        return Roi(0, 0, resolution[0], resolution[1])
    try:
        x0, y0, w, h = (int(tok) for tok in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"--roi expects x,y,w,h integers, got {text!r}") from exc
    return Roi(x0, y0, w, h)


def cmd_simulate(cfg: RunConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolution = (cfg.width, cfg.height)
    background = render_background(resolution, cfg.dot_density, cfg.dot_radius, cfg.seed)
    if cfg.background_blur > 0:
        background = gaussian_smooth(background, cfg.background_blur)
    source = blob_density_source(
        resolution, cfg.blob_count, cfg.blob_sigma, cfg.mod_freq, cfg.seed + 1
    )
    scene = synth_scene(
        background, source, None, cfg.duration, cfg.fps, cfg.max_displacement
    )
    events = simulate_events(scene.frames, cfg.sim_config())

    evio.write_pgm16(out_dir / "background.pgm", background)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(exist_ok=True)
    stamp_lines = ["index,t_us"]
    for i, (frame, t_us) in enumerate(
        zip(scene.frames.frames, scene.frames.timestamps_us)
    ):
        evio.write_pgm16(frames_dir / f"frame_{i:06d}.pgm", frame)
        stamp_lines.append(f"{i},{t_us}")
    (frames_dir / "timestamps.csv").write_text("\n".join(stamp_lines) + "\n")
    gt_dir = out_dir / "gt"
    gt_dir.mkdir(exist_ok=True)
    for i, flow in enumerate(scene.gt_flows):
        evio.write_flow(gt_dir / f"flow_{i:06d}.flo", flow)
    evio.write_events_binary(out_dir / "events.evb", events)
    evio.write_events_text(out_dir / "events.csv", events)
    _echo_config(cfg, out_dir)
    _log(
        f"simulate: {len(scene.frames)} frames, {len(scene.gt_flows)} ground-truth "
        f"flows, {len(events)} events -> {out_dir}"
    )
    return 0


def _load_frames_dir(frames_dir: Path) -> tuple[list[Path], list[int]]:
    stamps_file = frames_dir / "timestamps.csv"
    if not stamps_file.exists():
        raise ValidationError(f"missing {stamps_file}")
    paths: list[Path] = []
    stamps: list[int] = []
    for line in stamps_file.read_text().splitlines()[1:]:
        idx, t_us = line.split(",")
        paths.append(frames_dir / f"frame_{int(idx):06d}.pgm")
        stamps.append(int(t_us))
    return paths, stamps


def _estimate_windows(
    events: EventStream, t0: int, t1: int, cfg: RunConfig, frame_arg: str, frames_arg: str
):
    """Yield (index, window_t0, window_t1, frame) over the requested span."""
    if frames_arg:
        paths, stamps = _load_frames_dir(Path(frames_arg))
        windows = []
        for i in range(len(stamps) - 1):
            if stamps[i] >= t0 and stamps[i + 1] <= t1:
                windows.append((stamps[i], stamps[i + 1], paths[i]))
        for k, (w0, w1, path) in enumerate(windows):
            yield k, w0, w1, evio.read_pgm16(path)
    else:
        frame = evio.read_pgm16(Path(frame_arg))
        win_us = int(round(cfg.window * 1e6))
        k = 0
        start = t0
        while start + win_us <= t1:
            yield k, start, start + win_us, frame
            k += 1
            start += win_us


def cmd_estimate(
    cfg: RunConfig,
    out_dir: Path,
    events_path: Path,
    frame_arg: str,
    frames_arg: str,
    t0: int | None,
    t1: int | None,
) -> int:
    if not events_path.exists():
        raise ValidationError(f"event file does not exist: {events_path}")
    events = evio.read_events(events_path)
    if len(events) == 0:
        raise EmptyWindowError("empty window: event file holds no events")
    lo = int(events.t[0]) if t0 is None else t0
    hi = int(events.t[-1]) + 1 if t1 is None else t1
    out_dir.mkdir(parents=True, exist_ok=True)
    est_cfg = cfg.estimator_config()
    manifest = ["index,t0_us,t1_us,n_events"]
    n_windows = 0
    for k, w0, w1, frame in _estimate_windows(events, lo, hi, cfg, frame_arg, frames_arg):
        window = slice_events(events, w0, w1)
        if len(window) == 0:
            raise EmptyWindowError(f"empty window: no events in window {k} [{w0}, {w1})")
        result = estimate(window, frame, est_cfg)
        evio.write_flow(out_dir / f"flow_{k:06d}.flo", result.v)
        evio.write_flow(out_dir / f"trans_{k:06d}.flo", result.p)
        if result.q is not None:
            evio.write_field_raw(out_dir / f"poisson_{k:06d}.fld", result.q)
        trace_lines = ["level,iteration,objective"]
        for level, trace in enumerate(result.loss_trace):
            for it, value in enumerate(trace):
                trace_lines.append(f"{level},{it},{value!r}")
        (out_dir / f"loss_{k:06d}.txt").write_text("\n".join(trace_lines) + "\n")
        viz.write_ppm(out_dir / f"flow_{k:06d}.ppm", viz.flow_to_rgb(result.v))
        viz.write_ppm(out_dir / f"trans_{k:06d}.ppm", viz.flow_to_rgb(result.p))
        manifest.append(f"{k},{w0},{w1},{len(window)}")
        n_windows += 1
        _log(f"estimate: window {k} [{w0}, {w1}) with {len(window)} events")
    (out_dir / "windows.csv").write_text("\n".join(manifest) + "\n")
    _echo_config(cfg, out_dir)
    _log(f"estimate: wrote {n_windows} windows -> {out_dir}")
    return 0


def cmd_evaluate(
    est_dir: Path, gt_dir: Path, events_path: Path, roi_text: str | None, out_path: Path | None
) -> int:
    events = evio.read_events(events_path)
    manifest_file = est_dir / "windows.csv"
    if not manifest_file.exists():
        raise ValidationError(f"missing window manifest {manifest_file}")
    rows = manifest_file.read_text().splitlines()[1:]
    roi = _parse_roi(roi_text, events.resolution)
    records = []
    header = f"{'win':>4} {'pixels':>8} {'AEE':>9} {'%Out':>8} {'AE':>9}"
    print(header)
    total_err = 0.0
    total_out = 0.0
    total_ae = 0.0
    total_n = 0
    csv_lines = ["window,n_pixels,aee,pct_out,ae"]
    for row in rows:
        k, w0, w1, _ = (int(tok) for tok in row.split(","))
        est_file = est_dir / f"flow_{k:06d}.flo"
        gt_file = gt_dir / f"flow_{k:06d}.flo"
        if not est_file.exists() or not gt_file.exists():
            raise ValidationError(f"missing flow pair for window {k}")
        est = evio.read_flow(est_file, units="px/window")
        gt = evio.read_flow(gt_file, units="px/window")
        mask = event_mask(slice_events(events, w0, w1), roi)
        metrics = compute_metrics(est, gt, mask)
        records.append((k, metrics))
        print(
            f"{k:>4} {metrics.n_pixels:>8} {metrics.aee:>9.4f} "
            f"{metrics.pct_out:>8.3f} {metrics.ae:>9.4f}"
        )
        csv_lines.append(
            f"{k},{metrics.n_pixels},{metrics.aee!r},{metrics.pct_out!r},{metrics.ae!r}"
        )
        total_err += metrics.aee * metrics.n_pixels
        total_out += metrics.pct_out * metrics.n_pixels
        total_ae += metrics.ae * metrics.n_pixels
        total_n += metrics.n_pixels
    if total_n == 0:
        raise ValidationError("no windows evaluated")
    agg = (total_err / total_n, total_out / total_n, total_ae / total_n)
    print(f"{'all':>4} {total_n:>8} {agg[0]:>9.4f} {agg[1]:>8.3f} {agg[2]:>9.4f}")
    csv_lines.append(f"all,{total_n},{agg[0]!r},{agg[1]!r},{agg[2]!r}")
    if out_path is not None:
        out_path.write_text("\n".join(csv_lines) + "\n")
    return 0


def _events_kymogram(
    events: EventStream, column: int, rows: tuple[int, int], rate: float, t0: int, t1: int
) -> Kymogram:
    """Histogram kymogram straight from events: per time bin, per-row event
    counts of one image column (equivalent to stacking per-bin histograms)."""
    w, h = events.resolution
    if not (0 <= column < w):
        raise ValidationError(f"column {column} out of bounds for width {w}")
    y0, y1 = rows
    if not (0 <= y0 < y1 <= h):
        raise ValidationError(f"row range {rows} out of bounds for height {h}")
    n_rows = int(np.floor((t1 - t0) * rate / 1e6))
    if n_rows < 1:
        raise ValidationError("time span too short for the requested kymogram rate")
    sel = slice_events(events, t0, t1)
    keep = (sel.x == column) & (sel.y >= y0) & (sel.y < y1)
    ts = sel.t[keep]
    ys = sel.y[keep]
    bins = np.minimum(((ts - t0) * rate / 1e6).astype(np.int64), n_rows - 1)
    grid = np.zeros((n_rows, y1 - y0))
    np.add.at(grid, (bins, ys - y0), 1.0)
    return Kymogram(grid, column=column, rate=rate)


def cmd_kymo(
    cfg: RunConfig,
    out_dir: Path,
    events_path: Path | None,
    fields_arg: str,
    column: int,
    rate: float,
    rows_text: str | None,
    t0: int | None,
    t1: int | None,
    patch: int,
    sigma: float,
) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    if events_path is not None:
        events = evio.read_events(events_path)
        if len(events) == 0:
            raise ValidationError("event file holds no events")
        lo = int(events.t[0]) if t0 is None else t0
        hi = int(events.t[-1]) + 1 if t1 is None else t1
        w, h = events.resolution
        rows = (0, h)
        if rows_text is not None:
            y0, y1 = (int(tok) for tok in rows_text.split(","))
            rows = (y0, y1)
        kymo = _events_kymogram(events, column, rows, rate, lo, hi)
    else:
        paths = sorted(Path(fields_arg).glob("*.fld"))
        if not paths:
            raise ValidationError(f"no .fld files under {fields_arg}")
        sources = [evio.read_field_raw(p) for p in paths]
        rows = None
        if rows_text is not None:
            y0, y1 = (int(tok) for tok in rows_text.split(","))
            rows = (y0, y1)
        kymo = build_kymogram(sources, column, rows, rate)

    viz.write_gray_pgm(out_dir / "kymogram.pgm", kymo.values)
    detections = detect_slope(kymo, patch, sigma)
    geometry = cfg.geometry()
    lines = ["start,angle_deg,slope_px_s,confidence,velocity_m_s"]
    for det in detections:
        velocity = velocity_from_slope(det.slope, geometry)
        lines.append(
            f"{det.start},{det.angle_deg!r},{det.slope!r},{det.confidence!r},{velocity!r}"
        )
        _log(
            f"kymo: patch@{det.start}: angle {det.angle_deg:.2f} deg, "
            f"slope {det.slope:.1f} px/s, velocity {velocity:.4f} m/s "
            f"(confidence {det.confidence:.2f})"
        )
    (out_dir / "slopes.csv").write_text("\n".join(lines) + "\n")
    _log(f"kymo: {kymo.values.shape[0]} rows x {kymo.values.shape[1]} cols -> {out_dir}")
    return 0


def cmd_visualize(
    flow_path: Path | None, field_path: Path | None, out_path: Path, max_magnitude: float | None
) -> int:
    if flow_path is not None:
        flow = evio.read_flow(flow_path)
        viz.write_ppm(out_path, viz.flow_to_rgb(flow, max_magnitude))
    else:
        assert field_path is not None
        field = evio.read_field_raw(field_path)
        viz.write_ppm(
            out_path,
            np.repeat(viz.field_preview(field)[:, :, None], 3, axis=2),
        )
    _log(f"visualize: wrote {out_path}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--t0", type=int, help="window span start, microseconds")
    parser.add_argument("--t1", type=int, help="window span end, microseconds")
    parser.add_argument("--roi", help="region of interest as x,y,w,h")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evbos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="render a synthetic scene and its events")
    _add_common(p_sim)

    p_est = sub.add_parser("estimate", help="estimate flow / density-rate per window")
    _add_common(p_est)
    p_est.add_argument("--events", required=True, help="event file (binary or text)")
    group = p_est.add_mutually_exclusive_group(required=True)
    group.add_argument("--frame", default="", help="single reference frame (PGM)")
    group.add_argument("--frames", default="", help="frame directory from simulate")

    p_eval = sub.add_parser("evaluate", help="score estimated flow against ground truth")
    p_eval.add_argument("--est", required=True, help="estimate output directory")
    p_eval.add_argument("--gt", required=True, help="ground-truth flow directory")
    p_eval.add_argument("--events", required=True, help="event file for masking")
    p_eval.add_argument("--roi", help="region of interest as x,y,w,h")
    p_eval.add_argument("--out", help="optional metrics CSV path")

    p_kymo = sub.add_parser("kymo", help="build a kymogram and detect slopes")
    _add_common(p_kymo)
    p_kymo.add_argument("--events", help="event file (histogram kymogram)")
    p_kymo.add_argument("--fields", default="", help="directory of .fld images")
    p_kymo.add_argument("--column", type=int, required=True, help="source x column")
    p_kymo.add_argument("--rate", type=float, default=1200.0, help="rows per second")
    p_kymo.add_argument("--rows", help="row range as y0,y1")
    p_kymo.add_argument("--patch", type=int, default=64, help="slope patch size")
    p_kymo.add_argument("--sigma", type=float, default=1.5, help="smoothing sigma")

    p_vis = sub.add_parser("visualize", help="render a flow or field file to an image")
    p_vis.add_argument("--flow", help=".flo file to render with the color wheel")
    p_vis.add_argument("--field", help=".fld file to render in grayscale")
    p_vis.add_argument("--out", required=True, help="output PPM path")
    p_vis.add_argument(
        "--max-magnitude", type=float, default=None, help="saturation magnitude (auto)"
    )
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    cfg, defaulted = build_config(file_values, overrides)
    _report_config(cfg, defaulted)
    return cfg


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(_config_from_args(args), Path(args.out))
    if args.command == "estimate":
        return cmd_estimate(
            _config_from_args(args),
            Path(args.out),
            Path(args.events),
            args.frame,
            args.frames,
            args.t0,
            args.t1,
        )
    if args.command == "evaluate":
        return cmd_evaluate(
            Path(args.est),
            Path(args.gt),
            Path(args.events),
            args.roi,
            Path(args.out) if args.out else None,
        )
    if args.command == "kymo":
        if (args.events is None) == (not args.fields):
            raise ValidationError("kymo needs exactly one of --events or --fields")
        return cmd_kymo(
            _config_from_args(args),
            Path(args.out),
            Path(args.events) if args.events else None,
            args.fields,
            args.column,
            args.rate,
            args.rows,
            args.t0,
            args.t1,
            args.patch,
            args.sigma,
        )
    if args.command == "visualize":
        if (args.flow is None) == (args.field is None):
            raise ValidationError("visualize needs exactly one of --flow or --field")
        return cmd_visualize(
            Path(args.flow) if args.flow else None,
            Path(args.field) if args.field else None,
            Path(args.out),
            args.max_magnitude,
        )
    raise ValidationError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
