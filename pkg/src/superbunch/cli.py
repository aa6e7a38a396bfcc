"""superbunch command line: theory | simulate | analyze | fit | pipeline | rerun."""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import coherence, formats
from .coincidence import AnalysisError, analyze, leave_one_out_slices
from .fitting import FitError, fit_slice, jackknife_g3_zero
from .formats import FormatError
from .model import (DEFAULT_BANDWIDTH, PS_PER_S, TWO_PI, ConfigError, SliceDirection,
                    SliceSpec, SourceConfig, validate)
from .source import dt_to_ps, simulate

log = logging.getLogger("superbunch")

EXIT_OK, EXIT_VALIDATION, EXIT_ANALYSIS, EXIT_FIT = 0, 2, 3, 4
SEED_ENV = "SUPERBUNCH_SEED"


class FitDidNotConverge(RuntimeError):
    pass


# -- manifests ---------------------------------------------------------------

def make_manifest(command: str, params: dict, config: SourceConfig | None = None) -> dict:
    body = {
        "tool": "superbunch",
        "version": __version__,
        "command": command,
        "params": params,
        "config": config.to_dict() if config else None,
    }
    return {**body, "manifest_hash": formats.digest(body), "outputs": {}}


def finish_manifest(manifest: dict, out: Path, files, started: float) -> None:
    manifest["outputs"] = {f.name: formats.file_sha256(f) for f in files}
    manifest["wall_clock"] = {
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "elapsed_s": round(time.time() - started, 3),
    }
    formats.write_json(out / "manifest.json", manifest)


def _bandwidths(args, n: int) -> tuple[float, ...] | None:
    if getattr(args, "bandwidth_hz", None):
        bws = [TWO_PI * f for f in args.bandwidth_hz]
    elif getattr(args, "bandwidth", None):
        bws = list(args.bandwidth)
    else:
        return None
    if len(bws) == 1:
        bws = bws * n
    return tuple(bws)


def resolve_config(args) -> SourceConfig:
    """Config file < environment seed < command-line flags."""
    cfg = SourceConfig.load(args.config) if getattr(args, "config", None) else SourceConfig()
    changes = {}
    if os.environ.get(SEED_ENV):
        changes["seed"] = int(os.environ[SEED_ENV])
    flag_map = {"stages": "n_stages", "rate": "mean_rate_per_detector", "duration": "duration",
                "modes": "modes_per_stage", "sample_dt": "sample_dt", "seed": "seed"}
    for flag, key in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            changes[key] = v
    n = changes.get("n_stages", cfg.n_stages)
    bws = _bandwidths(args, n)
    if bws is not None:
        changes["bandwidths"] = bws
    elif n != cfg.n_stages:
        changes["bandwidths"] = (cfg.bandwidths[0] if cfg.bandwidths else DEFAULT_BANDWIDTH,) * n
    return validate(cfg.replace(**changes))


# -- theory ------------------------------------------------------------------

def cmd_theory(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = args.stages
    bws = _bandwidths(args, n)
    if bws is None:
        bws = (DEFAULT_BANDWIDTH,) * n
    if len(bws) != n:
        raise ConfigError(["bandwidth count mismatch"])
    if args.grid < 3 or args.grid % 2 == 0:
        raise ConfigError(["grid must be an odd number >= 3"])
    tau_c = TWO_PI / min(bws) if bws else TWO_PI / DEFAULT_BANDWIDTH
    half = args.grid // 2
    tau = np.arange(-half, half + 1) * (args.span * tau_c / half)
    tau_ps = tau * PS_PER_S
    params = {"order": args.order, "stages": n, "bandwidths": list(bws), "grid": args.grid,
              "span": args.span}
    manifest = make_manifest("theory", params)
    h = manifest["manifest_hash"]
    started = time.time()
    files = []

    zero = {str(k): coherence.gN_zero(args.order, k) for k in range(0, 5)}
    print(f"g({args.order})(0) for n={n} stages: {coherence.gN_zero(args.order, n)}")
    for k in range(1, 5):
        print(f"  n={k}: {zero[str(k)]}")

    if args.order == 3:
        g = coherence.surface(tau, tau, bws)
        f = out / "theory_surface.csv"
        formats.write_csv(f, ["tau12_ps", "tau23_ps", "value", "sigma"],
                          formats.grid_rows(tau_ps, g), h)
        files.append(f)
        curves = {
            SliceDirection.T1_EQ_T3.value: coherence.slice_model_t1_eq_t3(tau, bws),
            SliceDirection.T1T2_EQ_T2T3.value: coherence.slice_model_diag(tau, bws),
            SliceDirection.T1_EQ_T2.value: coherence.slice_model_t1_eq_t2(tau, bws),
        }
    elif args.order == 2:
        curves = {"g2": coherence.g2(tau, bws)}
    else:
        curves = {}
    for name, v in curves.items():
        f = out / f"theory_slice_{name}.csv"
        formats.write_csv(f, ["tau_ps", "value"], zip(tau_ps.tolist(), np.asarray(v).tolist()), h)
        files.append(f)
    f = out / "theory.json"
    formats.write_json(f, {"manifest_hash": h, "zero_delay": zero, **params})
    files.append(f)
    finish_manifest(manifest, out, files, started)
    return EXIT_OK


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    manifest = make_manifest("simulate", {"csv": bool(args.csv)}, cfg)
    streams = simulate(cfg)
    files = []
    cfg.dump(out / "config.json")
    files.append(out / "config.json")
    for s in streams:
        f = out / f"ch{s.channel}.pstr"
        formats.write_stream(f, s)
        files.append(f)
        if args.csv:
            f = out / f"ch{s.channel}.csv"
            formats.write_stream_csv(f, s)
            files.append(f)
        print(f"channel {s.channel}: {len(s)} events")
    finish_manifest(manifest, out, files, started)
    return EXIT_OK


# -- analyze -----------------------------------------------------------------

def _input_streams(args):
    """Streams plus (duration_ps, bandwidths) found next to them."""
    duration = round(args.duration_s * PS_PER_S) if args.duration_s else None
    bws = _bandwidths(args, 1)
    if args.streams:
        paths = [Path(p) for p in args.streams]
        root = paths[0].parent
    else:
        root = Path(args.inp)
        paths = [root / f"ch{k}.pstr" for k in (1, 2, 3)]
        if not paths[0].exists():
            paths = [root / f"ch{k}.csv" for k in (1, 2, 3)]
    cfg_path = root / "config.json"
    if cfg_path.exists():
        cfg = SourceConfig.load(cfg_path)
        if duration is None:
            duration = round(cfg.duration / cfg.sample_dt) * dt_to_ps(cfg.sample_dt)
        if bws is None and cfg.bandwidths:
            bws = cfg.bandwidths
    streams = []
    for k, p in enumerate(paths, start=1):
        if not p.exists():
            raise FormatError(f"missing stream file {p}")
        streams.append(formats.load_stream(p, channel=k, duration_ps=duration))
    return streams, duration, bws


def run_analysis(streams, out: Path, bin_width: int | None, max_delay: int | None,
                 duration: int | None, bandwidths, segments: int, threads: int,
                 manifest: dict) -> dict:
    tau_c = (TWO_PI / min(bandwidths) * PS_PER_S) if bandwidths else None
    if bin_width is None:
        if tau_c is None:
            raise AnalysisError("bin width needed when the bandwidth is unknown")
        bin_width = max(int(round(tau_c / 20)), 1)
    if max_delay is None:
        if tau_c is None:
            raise AnalysisError("max delay needed when the bandwidth is unknown")
        max_delay = bin_width * int(round(5 * tau_c / bin_width))
    if tau_c is None:
        tau_c = max_delay / 5
    res = analyze(*streams, bin_width, max_delay, tau_c, duration, segments, threads)
    h = manifest["manifest_hash"]
    out.mkdir(parents=True, exist_ok=True)
    files = []
    hist, surf = res.histogram, res.surface
    f = out / "histogram.csv"
    formats.write_csv(f, ["tau12_ps", "tau23_ps", "count", "sigma"],
                      formats.grid_rows(hist.taus, hist.counts, np.sqrt(hist.counts)), h)
    files.append(f)
    f = out / "surface.csv"
    formats.write_csv(f, ["tau12_ps", "tau23_ps", "value", "sigma"],
                      formats.grid_rows(surf.taus, surf.values, surf.sigma), h)
    files.append(f)
    for name, p in res.slices.items():
        f = out / f"slice_{name}.csv"
        formats.write_csv(f, ["tau_ps", "value", "sigma"], p.rows(), h)
        files.append(f)
    summary = {
        "manifest_hash": h,
        "bin_width_ps": bin_width,
        "max_delay_ps": max_delay,
        "grid_side": 2 * hist.half + 1,
        "coherence_time_ps": tau_c,
        "duration_ps": hist.duration,
        "totals": list(hist.totals),
        "triples": int(hist.counts.sum()),
        "center_counts": int(hist.counts[hist.half, hist.half]),
        "jackknife_segments": segments,
        **res.summary,
        "errors": res.errors,
    }
    f = out / "summary.json"
    formats.write_json(f, summary)
    files.append(f)
    print(f"center g3 = {summary['center']:.4g} +- {res.errors.get('center', float('nan')):.2g}; "
          f"peak/background = {summary['ratio']:.4g}")
    for name, s in summary["slices"].items():
        print(f"  slice {name}: ratio {s['ratio']:.4g}")
    return {"summary": summary, "files": files, "analysis": res}


def cmd_analyze(args) -> int:
    started = time.time()
    streams, duration, bws = _input_streams(args)
    params = {"bin_width_ps": args.bin_width_ps, "max_delay_ps": args.max_delay_ps,
              "duration_ps": duration, "bandwidths": list(bws) if bws else None,
              "segments": args.segments,
              "inputs": {f"ch{k}": _stream_digest(s) for k, s in enumerate(streams, start=1)}}
    manifest = make_manifest("analyze", params)
    out = Path(args.out)
    r = run_analysis(streams, out, args.bin_width_ps, args.max_delay_ps, duration, bws,
                     args.segments, args.threads, manifest)
    finish_manifest(manifest, out, r["files"], started)
    return EXIT_OK


def _stream_digest(s) -> str:
    return hashlib.sha256(s.timestamps.astype("<i8").tobytes()).hexdigest()


# -- fit ---------------------------------------------------------------------

def run_fit(slice_path, model: str, stages: int, out_path: Path, separate: bool,
            manifest_hash: str, loo_profiles=None) -> dict:
    tau_ps, value, sigma = formats.read_slice_csv(slice_path)
    if np.all(sigma == 0):
        sigma = np.ones_like(sigma)
    res = fit_slice(tau_ps / PS_PER_S, value, sigma, model, stages,
                    separate_bandwidths=separate)
    doc = {"manifest_hash": manifest_hash, "slice": str(Path(slice_path).name), **res.to_dict()}
    if loo_profiles and res.converged:
        doc["g3_zero_err_jackknife"] = jackknife_g3_zero(loo_profiles, model, stages, res.params,
                                                         separate)
    formats.write_json(out_path, doc)
    bw = res.bandwidth if isinstance(res.bandwidth, list) else [res.bandwidth]
    bwe = res.bandwidth_err if isinstance(res.bandwidth_err, list) else [res.bandwidth_err]
    print(f"{model}: g3(0) = {res.g3_zero:.5g} +- {res.g3_zero_err:.2g}"
          + (f" (jackknife +- {doc['g3_zero_err_jackknife']:.2g})"
             if "g3_zero_err_jackknife" in doc else ""))
    for w, e in zip(bw, bwe):
        print(f"  bandwidth = {w:.6g} +- {e:.2g} rad/s ({w / TWO_PI:.6g} Hz)")
    if not res.converged:
        print(f"fit did not converge: {res.message} after {res.iterations} iterations "
              f"(gradient norm {res.gradient_norm:.3g})", file=sys.stderr)
        raise FitDidNotConverge(res.message)
    return doc


def cmd_fit(args) -> int:
    started = time.time()
    params = {"model": args.model, "stages": args.stages,
              "separate_bandwidths": args.separate_bandwidths,
              "slice_sha256": formats.file_sha256(args.slice)}
    manifest = make_manifest("fit", params)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        run_fit(args.slice, args.model, args.stages, out_path, args.separate_bandwidths,
                manifest["manifest_hash"])
    finally:
        if out_path.exists():
            manifest["outputs"] = {out_path.name: formats.file_sha256(out_path)}
            manifest["wall_clock"] = {"elapsed_s": round(time.time() - started, 3)}
            formats.write_json(out_path.with_name(out_path.stem + ".manifest.json"), manifest)
    return EXIT_OK


# -- pipeline ----------------------------------------------------------------

def cmd_pipeline(args) -> int:
    cfg = resolve_config(args)
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = {"bin_width_ps": args.bin_width_ps, "max_delay_ps": args.max_delay_ps,
              "segments": args.segments}
    manifest = make_manifest("pipeline", params, cfg)
    h = manifest["manifest_hash"]
    streams = simulate(cfg)
    files = []
    sdir = out / "streams"
    sdir.mkdir(exist_ok=True)
    cfg.dump(sdir / "config.json")
    for s in streams:
        f = sdir / f"ch{s.channel}.pstr"
        formats.write_stream(f, s)
        files.append(f)
    duration = round(cfg.duration / cfg.sample_dt) * dt_to_ps(cfg.sample_dt)
    r = run_analysis(streams, out / "analysis", args.bin_width_ps, args.max_delay_ps,
                     duration, cfg.bandwidths or None, args.segments, args.threads, manifest)
    files += r["files"]
    code = EXIT_OK
    if cfg.n_stages >= 1:
        for model, name in (("eq5", SliceDirection.T1T2_EQ_T2T3.value),
                            ("eq4", SliceDirection.T1_EQ_T3.value)):
            f = out / f"fit_{model}.json"
            try:
                loo = leave_one_out_slices(r["analysis"].segments, SliceSpec(name))
                run_fit(out / "analysis" / f"slice_{name}.csv", model, cfg.n_stages, f, False, h,
                        loo if len(loo) > 1 else None)
            except FitDidNotConverge:
                code = EXIT_FIT
            files.append(f)
    finish_manifest(manifest, out, files, started)
    return code


# -- rerun -------------------------------------------------------------------

def cmd_rerun(args) -> int:
    """Repeat the command recorded in a manifest into a new output location."""
    m = formats.read_json(args.manifest)
    command, params, cfg = m["command"], m["params"], m.get("config")
    base = Path(args.manifest).parent
    if cfg is not None:
        cfg_path = Path(args.out) / "rerun_config.json"
        Path(args.out).mkdir(parents=True, exist_ok=True)
        SourceConfig.from_dict(cfg).dump(cfg_path)
    argv = [command]
    if command == "theory":
        argv += ["--order", str(params["order"]), "--stages", str(params["stages"]),
                 "--grid", str(params["grid"]), "--span", str(params["span"])]
        if params["bandwidths"]:
            argv += ["--bandwidth", *map(repr, params["bandwidths"])]
        argv += ["--out", args.out]
    elif command in ("simulate", "pipeline"):
        argv += ["--config", str(cfg_path), "--out", args.out]
        if command == "simulate" and params.get("csv"):
            argv.append("--csv")
        if command == "pipeline":
            argv += _geometry_flags(params)
    elif command == "analyze":
        argv += ["--in", str(args.input or base), "--out", args.out] + _geometry_flags(params)
        if params.get("duration_ps"):
            argv += ["--duration-s", repr(params["duration_ps"] / PS_PER_S)]
        if params.get("bandwidths"):
            argv += ["--bandwidth", *map(repr, params["bandwidths"])]
    else:
        raise ConfigError([f"cannot rerun command {command!r}"])
    env_seed = os.environ.pop(SEED_ENV, None)
    try:
        return main(argv)
    finally:
        if env_seed is not None:
            os.environ[SEED_ENV] = env_seed


def _geometry_flags(params) -> list[str]:
    argv = ["--segments", str(params.get("segments", 16))]
    if params.get("bin_width_ps"):
        argv += ["--bin-width-ps", str(params["bin_width_ps"])]
    if params.get("max_delay_ps"):
        argv += ["--max-delay-ps", str(params["max_delay_ps"])]
    return argv


# -- parser ------------------------------------------------------------------

def _add_source_flags(p):
    p.add_argument("--config", help="JSON SourceConfig file")
    p.add_argument("--stages", type=int, help="number of scattering stages")
    p.add_argument("--bandwidth-hz", type=float, nargs="+", help="stage bandwidths in Hz")
    p.add_argument("--bandwidth", type=float, nargs="+", help="stage bandwidths in rad/s")
    p.add_argument("--rate", type=float, help="mean counts/s per detector")
    p.add_argument("--duration", type=float, help="simulated time in s")
    p.add_argument("--modes", type=int, help="field modes per stage")
    p.add_argument("--sample-dt", type=float, help="field sample interval in s")
    p.add_argument("--seed", type=int, help=f"RNG seed (overrides ${SEED_ENV})")


def _add_geometry_flags(p):
    p.add_argument("--bin-width-ps", type=int, help="histogram bin width (default tau_c/20)")
    p.add_argument("--max-delay-ps", type=int, help="histogram half range (default 5 tau_c)")
    p.add_argument("--segments", type=int, default=16, help="time segments for jackknife errors")
    p.add_argument("--threads", type=int, default=1, help="worker threads for counting")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="superbunch", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("theory", help="tabulate closed-form coherence")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--bandwidth-hz", type=float, nargs="+")
    p.add_argument("--bandwidth", type=float, nargs="+")
    p.add_argument("--grid", type=int, default=101, help="odd number of points per axis")
    p.add_argument("--span", type=float, default=5.0, help="half range in coherence times")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="generate three detector streams")
    _add_source_flags(p)
    p.add_argument("--csv", action="store_true", help="also write CSV streams")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="coincidence analysis of stream files")
    p.add_argument("--in", dest="inp", help="directory with ch1..ch3 stream files")
    p.add_argument("--streams", nargs=3, help="explicit stream files for D1 D2 D3")
    p.add_argument("--duration-s", type=float, help="record length (default from config.json)")
    p.add_argument("--bandwidth-hz", type=float, nargs="+")
    p.add_argument("--bandwidth", type=float, nargs="+")
    _add_geometry_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fit", help="fit a slice CSV")
    p.add_argument("--slice", required=True)
    p.add_argument("--model", choices=("eq4", "eq5"), default="eq5")
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--separate-bandwidths", action="store_true",
                   help="fit one bandwidth per stage instead of a shared one")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("pipeline", help="simulate, analyze and fit")
    _add_source_flags(p)
    _add_geometry_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("rerun", help="repeat a run recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--input", help="stream directory for analyze manifests")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "analyze" and not (args.inp or args.streams):
        print("analyze: one of --in or --streams is required", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (AnalysisError, FormatError, FitError) as e:
        print(f"analysis error: {e}", file=sys.stderr)
        return EXIT_ANALYSIS
    except FitDidNotConverge:
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
