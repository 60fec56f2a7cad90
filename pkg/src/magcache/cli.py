"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (bad trace/curve/image
input), 3 internal invariant failure.
"""

from __future__ import annotations

import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import cache as mc
from .calibrate import calibrate_from_trace, load_curve, save_curve
from .errors import ConfigError, DataError, InvariantError, MagCacheError, TraceFormatError
from .flowsim import SimSpec, load_sim_spec
from .imageio import read_pgm_dir, write_pgm_dir
from .metrics import compare_batches, dumps_report
from .pipeline import run_baseline, run_cached, sweep as run_sweep
from .report import stats_csv, stats_svg, sweep_csv
from .stats import compute_stats
from .trace import read_trace, write_trace

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("magcache")


def _parse_int_list(text: str | None, what: str) -> list[int]:
    if not text:
        return []
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise click.BadParameter(f"{what} must be comma-separated integers, got {text!r}")


def _parse_delta_list(text: str) -> list[float]:
    try:
        return [mc.parse_delta(p.strip()) for p in text.split(",") if p.strip()]
    except ConfigError as exc:
        raise click.BadParameter(str(exc))


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
        log.info("wrote %s", out)
    else:
        click.echo(text, nl=False)


def _out(ctx: click.Context, out: str | None, required: bool = False) -> str | None:
    out = out or ctx.obj.get("out")
    if required and not out:
        raise click.UsageError("an output path is required (--out)")
    return out


def _sim(ctx: click.Context, path: str | None) -> SimSpec:
    sim = load_sim_spec(path) if path else SimSpec()
    if ctx.obj.get("seed") is not None:
        sim = replace(sim, seed=ctx.obj["seed"])
    return sim


def cache_options(f):
    opts = [
        click.option("--preset", type=click.Choice(sorted(mc.PRESETS)), help="Named (delta, K, retain) preset."),
        click.option("--delta", "delta", type=str, help="Total skip-error tolerance, or 'unbounded'."),
        click.option("--K", "max_skip", type=click.IntRange(min=0), help="Maximum consecutive skipped steps."),
        click.option("--retain", type=click.FloatRange(0.0, 1.0), help="Fraction of initial steps always computed."),
        click.option("--pin", type=str, help="Comma-separated steps that are always computed."),
        click.option("--error-model", type=click.Choice([m.value for m in mc.ErrorModel]), help="Skip-error model."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _cache_config(preset, delta, max_skip, retain, pin, error_model, require_knobs=True) -> mc.CacheConfig:
    if preset:
        cfg = mc.PRESETS[preset]
    elif delta is not None and max_skip is not None:
        cfg = mc.CacheConfig(delta=mc.UNBOUNDED, max_skip=0)
    elif require_knobs:
        raise click.UsageError("give --preset, or both --delta and --K")
    else:
        cfg = mc.CacheConfig(delta=0.0, max_skip=0)
    try:
        if delta is not None:
            cfg = replace(cfg, delta=mc.parse_delta(delta))
    except ConfigError as exc:
        raise click.BadParameter(str(exc), param_hint="--delta")
    if max_skip is not None:
        cfg = replace(cfg, max_skip=max_skip)
    if retain is not None:
        cfg = replace(cfg, retain_fraction=retain)
    if error_model is not None:
        cfg = replace(cfg, error_model=mc.ErrorModel(error_model))
    return mc.with_pins(cfg, _parse_int_list(pin, "--pin"))


@click.group()
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the simulator seed.")
@click.option("--out", "out", type=click.Path(dir_okay=False), default=None, help="Default output path.")
@click.option("--quiet", is_flag=True, help="Suppress progress messages.")
@click.pass_context
def cli(ctx: click.Context, seed, out, quiet):
    """Magnitude-aware caching for flow-matching samplers."""
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format="%(message)s", stream=sys.stderr, force=True)
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, out=out)


@cli.group()
def trace():
    """Residual trace files (.mctr)."""


@trace.command("generate")
@click.option("--sim", "sim_path", type=click.Path(exists=True, dir_okay=False), help="Simulator spec JSON.")
@click.option("--out", type=click.Path(dir_okay=False))
@click.pass_context
def cmd_trace_generate(ctx, sim_path, out):
    """Run the baseline simulator and record its residual trace."""
    out = _out(ctx, out, required=True)
    sim = _sim(ctx, sim_path)
    base = run_baseline(sim)
    write_trace(base.trace, out)
    log.info("trace %s: dims %s", out, base.trace.shape)


@cli.command("stats")
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="CSV destination (default stdout).")
@click.option("--svg", "svg_path", type=click.Path(dir_okay=False), help="Also write a line-chart SVG.")
@click.pass_context
def cmd_stats(ctx, trace_path, out, svg_path):
    """Per-step gamma, sigma and cosine distance as CSV."""
    st = compute_stats(read_trace(trace_path))
    _emit(stats_csv(st), _out(ctx, out))
    if svg_path:
        Path(svg_path).write_text(stats_svg(st), encoding="utf-8")
        log.info("wrote %s", svg_path)


@cli.command("calibrate")
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pin", type=str, help="Comma-separated steps that are always computed.")
@click.option("--note", default="", help="Free-text note stored with the curve.")
@click.option("--out", type=click.Path(dir_okay=False))
@click.pass_context
def cmd_calibrate(ctx, trace_path, pin, note, out):
    """Calibrate a magnitude curve from one trace."""
    out = _out(ctx, out, required=True)
    curve = calibrate_from_trace(read_trace(trace_path), _parse_int_list(pin, "--pin"), note)
    save_curve(curve, out)
    log.info("curve %s: %d steps", out, curve.num_steps)


@cli.command("schedule")
@click.option("--curve", "curve_path", required=True, type=click.Path(exists=True, dir_okay=False))
@cache_options
@click.option("--out", type=click.Path(dir_okay=False), help="Schedule JSON destination (default stdout).")
@click.pass_context
def cmd_schedule(ctx, curve_path, preset, delta, max_skip, retain, pin, error_model, out):
    """Derive the skip schedule for a curve offline."""
    curve = load_curve(curve_path)
    cfg = _cache_config(preset, delta, max_skip, retain, pin, error_model)
    sched = mc.derive_schedule(curve, cfg)
    _emit(mc.dumps_schedule(sched), _out(ctx, out))
    log.info("computed %d of %d steps (speedup %.3f)", sched.computed_count, sched.num_steps, sched.model_call_speedup)


@cli.command("simulate")
@click.option("--sim", "sim_path", type=click.Path(exists=True, dir_okay=False), help="Simulator spec JSON.")
@click.option("--curve", "curve_path", type=click.Path(exists=True, dir_okay=False),
              help="Calibrated curve (default: calibrate on this run's baseline).")
@cache_options
@click.option("--baseline-out", type=click.Path(dir_okay=False), help="Write the baseline residual trace here.")
@click.option("--images-out", type=click.Path(file_okay=False), help="Write baseline/ and cached/ PGM images here.")
@click.option("--out", type=click.Path(dir_okay=False), help="Report JSON destination (default stdout).")
@click.pass_context
def cmd_simulate(ctx, sim_path, curve_path, preset, delta, max_skip, retain, pin, error_model,
                 baseline_out, images_out, out):
    """Run baseline and cached sampling with one seed and report quality."""
    sim = _sim(ctx, sim_path)
    cfg = _cache_config(preset, delta, max_skip, retain, pin, error_model)
    base = run_baseline(sim)
    curve = load_curve(curve_path) if curve_path else calibrate_from_trace(base.trace, note="simulate baseline")
    result = run_cached(base, curve, cfg)
    if baseline_out:
        write_trace(base.trace, baseline_out)
    if images_out:
        write_pgm_dir(Path(images_out) / "baseline", base.images)
        write_pgm_dir(Path(images_out) / "cached", result.cached_images)
    _emit(dumps_report(result.report), _out(ctx, out))
    r = result.report
    log.info("psnr %.3f dB, ssim %.4f, %d/%d steps computed", r.psnr_db, r.ssim, r.computed_steps, r.total_steps)


@cli.command("evaluate")
@click.option("--a", "dir_a", required=True, type=click.Path(exists=True, file_okay=False), help="Reference PGM directory.")
@click.option("--b", "dir_b", required=True, type=click.Path(exists=True, file_okay=False), help="Candidate PGM directory.")
@click.option("--schedule", "schedule_path", type=click.Path(exists=True, dir_okay=False),
              help="Schedule JSON supplying step counts.")
@click.option("--out", type=click.Path(dir_okay=False), help="Report JSON destination (default stdout).")
@click.pass_context
def cmd_evaluate(ctx, dir_a, dir_b, schedule_path, out):
    """Compare two directories of PGM images pairwise by file name."""
    names_a, imgs_a = read_pgm_dir(dir_a)
    names_b, imgs_b = read_pgm_dir(dir_b)
    if names_a != names_b:
        raise DataError("the two directories hold different file names")
    if imgs_a.shape != imgs_b.shape:
        raise DataError(f"image shapes differ: {imgs_a.shape[1:]} vs {imgs_b.shape[1:]}")
    computed = total = None
    if schedule_path:
        sched = mc.load_schedule(schedule_path)
        computed, total = sched.computed_count, sched.num_steps
    _emit(dumps_report(compare_batches(imgs_a, imgs_b, computed, total)), _out(ctx, out))


@cli.command("sweep")
@click.option("--sim", "sim_path", type=click.Path(exists=True, dir_okay=False), help="Simulator spec JSON.")
@click.option("--curve", "curve_path", type=click.Path(exists=True, dir_okay=False),
              help="Calibrated curve (default: calibrate on the baseline).")
@click.option("--deltas", required=True, help="Comma-separated delta values.")
@click.option("--Ks", "ks", required=True, help="Comma-separated K values.")
@click.option("--retain", type=click.FloatRange(0.0, 1.0), default=0.2, show_default=True)
@click.option("--pin", type=str)
@click.option("--error-model", type=click.Choice([m.value for m in mc.ErrorModel]), default="multiplicative")
@click.option("--out", type=click.Path(dir_okay=False), help="CSV destination (default stdout).")
@click.pass_context
def cmd_sweep(ctx, sim_path, curve_path, deltas, ks, retain, pin, error_model, out):
    """Grid of cached runs over delta x K; one CSV row per configuration."""
    sim = _sim(ctx, sim_path)
    delta_list = _parse_delta_list(deltas)
    k_list = _parse_int_list(ks, "--Ks")
    if not delta_list or not k_list or any(k < 0 for k in k_list):
        raise click.BadParameter("need at least one delta and one non-negative K")
    base = mc.with_pins(
        mc.CacheConfig(delta=0.0, max_skip=0, retain_fraction=retain, error_model=mc.ErrorModel(error_model)),
        _parse_int_list(pin, "--pin"),
    )
    curve = load_curve(curve_path) if curve_path else None
    rows = run_sweep(sim, delta_list, k_list, base, curve)
    rows = [("unbounded" if d == mc.UNBOUNDED else d, *rest) for d, *rest in rows]
    _emit(sweep_csv(rows), _out(ctx, out))


def main(argv: list[str] | None = None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="magcache", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except (DataError, TraceFormatError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_DATA
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except (InvariantError, MagCacheError, AssertionError) as exc:
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_INTERNAL
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
