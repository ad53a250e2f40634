"""Command-line front end.

Subcommands: ``phantom``, ``forward``, ``recon``, ``sweep-uncertainty``,
``sweep-delta`` and ``metrics``. Exit status is 0 on success, 1 on usage or
input-file errors and 2 when a numerical step fails.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (CONFIG_KEYS, PROFILE_EXTRAS, PROFILES, SweepConfig, TrialError,
                          describe_run, run_delta_sweep, run_uncertainty_sweep, write_delta_csv,
                          write_sweep_outputs)
from .forward_fd import FdModel, forward_fd, make_frequency_grid
from .forward_td import OUT_OF_WINDOW, TdModel, forward_td
from .geometry import AcousticConfig, ImageGrid, make_point_phantom, make_sensor_ring, make_shepp_logan
from .io import (FormatError, default_out_dir, is_spectra_file, read_image, read_image_csv,
                 read_key_values, read_sensors_csv, read_sinogram, read_spectra, stable_hash,
                 write_csv_table, write_image, write_image_csv, write_key_values, write_manifest,
                 write_sensors_csv, write_sinogram, write_spectra)
from .metrics import ConvergenceError, pearson
from .noise import NoiseSpec, add_noise, bandpass
from .recon import SolverSettings, backproject, tikhonov_solve

logger = logging.getLogger("patrecon")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

_INT_KEYS = {"nx", "ny", "n_sensors", "nt", "trials", "seed", "max_iters"}
_FLOAT_KEYS = {"side_length_m", "radius_m", "vs_mps", "dt_s", "f_lo_hz", "f_hi_hz", "alpha", "rel_tol"}
_LIST_KEYS = {"x_percents": float, "methods": str}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- config files -------------------------------------------------------------

def load_config(path, **overrides) -> SweepConfig:
    """Read a ``key = value`` sweep config; ``profile`` picks the defaults for absent keys."""
    raw = read_key_values(path, allowed=CONFIG_KEYS)
    profile = raw.get("profile", ("desk", 0))[0]
    if profile not in PROFILES:
        lineno = raw["profile"][1]
        raise FormatError(f"{path}:{lineno}: unknown profile {profile!r}; choose from {tuple(PROFILES)}")
    values = {}
    for key, (text, lineno) in raw.items():
        try:
            if key in _INT_KEYS:
                values[key] = int(text)
            elif key in _FLOAT_KEYS:
                values[key] = float(text)
            elif key in _LIST_KEYS:
                values[key] = tuple(_LIST_KEYS[key](v.strip()) for v in text.split(",") if v.strip())
            else:
                values[key] = text
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad value for {key!r}: {text!r}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    values.pop("profile", None)
    try:
        return SweepConfig.from_profile(profile, **values)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_config(path, cfg: SweepConfig) -> None:
    write_key_values(path, cfg.file_keys())


# -- shared options -----------------------------------------------------------

def _geometry_options(p):
    g = p.add_argument_group("geometry")
    g.add_argument("--profile", choices=tuple(PROFILES), default="desk",
                   help="defaults for every geometry option (default: desk)")
    g.add_argument("--nx", type=int)
    g.add_argument("--ny", type=int)
    g.add_argument("--side-length", type=float, help="field of view edge, m")
    g.add_argument("--radius", type=float, help="sensor ring radius, m")
    g.add_argument("--n-sensors", type=int)
    g.add_argument("--vs", type=float, help="speed of sound, m/s")
    g.add_argument("--dt", type=float, help="sampling interval, s")
    g.add_argument("--nt", type=int, help="samples per trace")
    g.add_argument("--f-lo", type=float, help="lower band edge, Hz")
    g.add_argument("--f-hi", type=float, help="upper band edge, Hz")
    g.add_argument("--sensors", type=Path, help="read sensor positions from this CSV (x_m,y_m)")
    g.add_argument("--out-of-window", choices=OUT_OF_WINDOW,
                   help="TOFs beyond the record: raise or drop (default follows the profile)")


def _pick(args, name, key):
    value = getattr(args, name, None)
    return PROFILES[args.profile][key] if value is None else value


def _setup(args):
    grid = ImageGrid(_pick(args, "nx", "nx"), _pick(args, "ny", "ny"),
                     _pick(args, "side_length", "side_length_m"))
    if args.sensors is not None:
        sensors = read_sensors_csv(args.sensors)
    else:
        sensors = make_sensor_ring(_pick(args, "radius", "radius_m"), _pick(args, "n_sensors", "n_sensors"))
    cfg = AcousticConfig(_pick(args, "vs", "vs_mps"), _pick(args, "dt", "dt_s"), _pick(args, "nt", "nt"),
                         _pick(args, "f_lo", "f_lo_hz"), _pick(args, "f_hi", "f_hi_hz"))
    oow = args.out_of_window or PROFILE_EXTRAS[args.profile]["out_of_window"]
    return grid, sensors, cfg, oow


def _echo(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}


def _output_path(value, default_name) -> Path:
    if value is not None:
        return Path(value)
    return default_out_dir() / default_name


def _manifest(out: Path, args, hashes: dict, seed, started, extra=None) -> Path:
    return write_manifest(out.parent, _echo(args), hashes, seed, started, extra,
                          name=out.name + ".manifest.json")


# -- subcommands --------------------------------------------------------------

def cmd_phantom(args, started):
    grid = ImageGrid(_pick(args, "nx", "nx"), _pick(args, "ny", "ny"),
                     _pick(args, "side_length", "side_length_m"))
    if args.kind == "shepp-logan":
        img = make_shepp_logan(grid.nx, grid.ny, grid.side_length)
    else:
        index = tuple(args.index) if args.index else None
        img = make_point_phantom(grid.nx, grid.ny, grid.side_length, index)
    out = _output_path(args.output, "phantom.pgm")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(out, img)
    if args.csv:
        write_image_csv(args.csv, img)
    _manifest(out, args, {"grid": stable_hash(img.geometry_key())}, None, started)
    print(out)


def _read_any_image(path, side_length):
    if str(path).endswith(".csv"):
        return read_image_csv(path, side_length)
    return read_image(path)


def cmd_forward(args, started):
    grid, sensors, cfg, oow = _setup(args)
    img = _read_any_image(args.input, grid.side_length)
    grid = img
    if args.export_sensors:
        write_sensors_csv(args.export_sensors, sensors)
    if args.domain == "td":
        data = forward_td(img, TdModel(grid, sensors, cfg, oow))
        if args.bandpass:
            data = bandpass(data, cfg.f_lo, cfg.f_hi)
    else:
        data = forward_fd(img, FdModel(grid, sensors, make_frequency_grid(cfg), cfg))
        if args.bandpass:
            data = bandpass(data, cfg.f_lo, cfg.f_hi, fs=1.0 / cfg.dt)
    if args.noise > 0:
        data = add_noise(data, NoiseSpec(args.noise, args.seed))
    out = _output_path(args.output, f"data_{args.domain}.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.domain == "td":
        write_sinogram(out, data)
        if args.csv:
            write_csv_table(args.csv, data.data)
    else:
        write_spectra(out, data)
        if args.csv:
            write_csv_table(args.csv, np.column_stack([data.data.real, data.data.imag]))
    hashes = {"grid": stable_hash(grid.geometry_key()), "sensors": stable_hash(sensors.geometry_key()),
              "config": stable_hash(cfg.__dict__)}
    _manifest(out, args, hashes, args.seed, started)
    print(out)


def cmd_recon(args, started):
    grid, sensors, cfg, oow = _setup(args)
    method = args.method.upper()
    settings = SolverSettings(args.alpha, args.max_iters, args.rel_tol, relative_alpha=args.relative_alpha)
    if method == "FDMM":
        if not is_spectra_file(args.input):
            raise FormatError(f"{args.input}:1: fdmm needs a spectra file (header with nf=)")
        data = read_spectra(args.input)
        cfg = replace(cfg, vs=data.freq_grid.vs)
        model = FdModel(grid, sensors, data.freq_grid, cfg)
        res = tikhonov_solve(model, data, settings)
    else:
        if is_spectra_file(args.input):
            raise FormatError(f"{args.input}:1: {method.lower()} needs a sinogram file, got spectra")
        sino = read_sinogram(args.input)
        cfg = replace(cfg, dt=sino.dt, nt=sino.n_samples, t0=sino.t0)
        if method == "TDMM":
            res = tikhonov_solve(TdModel(grid, sensors, cfg, oow), sino, settings)
        else:
            res = backproject(sino, sensors, grid, cfg)
    out = _output_path(args.output, f"recon_{method.lower()}.pgm")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(out, res.image)
    if args.csv:
        write_image_csv(args.csv, res.image)
    extra = {"method": method, "iterations_used": res.iterations_used,
             "final_residual_norm": res.final_residual_norm}
    _manifest(out, args, {"grid": stable_hash(grid.geometry_key()),
                          "sensors": stable_hash(sensors.geometry_key())}, None, started, extra)
    print(out)


def _sweep_config(args) -> tuple[SweepConfig, Path]:
    overrides = dict(seed=args.seed, trials=args.trials)
    cfg = load_config(args.config, **overrides)
    extra = {}
    if getattr(args, "threads", None):
        extra["threads"] = args.threads
    if getattr(args, "no_images", False):
        extra["save_images"] = False
    if extra:
        cfg = replace(cfg, **extra)
    explicit = "out_dir" in read_key_values(args.config)
    if args.out_dir is not None:
        out = Path(args.out_dir)
    elif explicit:
        out = Path(cfg.out_dir)
    else:
        out = default_out_dir(cfg.out_dir)
    return cfg, out


def cmd_sweep_uncertainty(args, started):
    cfg, out = _sweep_config(args)
    result = run_uncertainty_sweep(cfg)
    write_sweep_outputs(result, out)
    save_config(out / "config.cfg", cfg)
    write_manifest(out, describe_run(cfg), {"config": stable_hash(cfg.file_keys())}, cfg.seed, started)
    for (x, m), (mu, sd) in result.summary().items():
        print(f"X={x:g}% {m}: PC = {mu:.4f} +/- {sd:.4f}")
    print(out / "uncertainty.csv")


def cmd_sweep_delta(args, started):
    cfg, out = _sweep_config(args)
    rows = run_delta_sweep(cfg, tol=args.tol)
    out.mkdir(parents=True, exist_ok=True)
    write_delta_csv(out / "delta.csv", rows)
    save_config(out / "config.cfg", cfg)
    write_manifest(out, describe_run(cfg), {"config": stable_hash(cfg.file_keys())}, cfg.seed, started,
                   {"power_iteration_tol": args.tol})
    for x, a, k in rows:
        print(f"X={x:g}%: delta_td={a:.4f} delta_fd={k:.4f}")
    print(out / "delta.csv")


def cmd_metrics(args, started):
    a = _read_any_image(args.a, args.side_length)
    b = _read_any_image(args.b, args.side_length)
    print(f"{pearson(a, b):.12g}")


# -- parser and dispatch ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="patrecon", description="Photoacoustic reconstruction under sensor-position uncertainty")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="write a Shepp-Logan or point phantom")
    _geometry_options(s)
    s.add_argument("--kind", choices=("shepp-logan", "point"), default="shepp-logan")
    s.add_argument("--index", type=int, nargs=2, metavar=("IX", "IY"), help="point phantom pixel")
    s.add_argument("-o", "--output", type=Path, help="output .pgm (raw .f64 and .json written alongside)")
    s.add_argument("--csv", type=Path, help="also write the image as CSV")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("forward", help="simulate a sinogram or spectra from an image")
    _geometry_options(s)
    s.add_argument("-i", "--input", type=Path, required=True, help="image (.pgm with sidecar, or .csv)")
    s.add_argument("--domain", choices=("td", "fd"), default="td")
    s.add_argument("--noise", type=float, default=0.0, help="noise sigma as a fraction of peak (0 = none)")
    s.add_argument("--bandpass", action="store_true", help="apply the transducer band-pass")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--export-sensors", type=Path, help="write the sensor positions used to this CSV")
    s.add_argument("-o", "--output", type=Path)
    s.add_argument("--csv", type=Path, help="also write the data as CSV")
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("recon", help="reconstruct an image from a sinogram or spectra file")
    _geometry_options(s)
    s.add_argument("-i", "--input", type=Path, required=True)
    s.add_argument("--method", choices=("tdmm", "fdmm", "bp"), default="tdmm")
    s.add_argument("--alpha", type=float, default=0.0, help="Tikhonov weight")
    s.add_argument("--relative-alpha", action="store_true", help="scale alpha by ||M||_2^2")
    s.add_argument("--max-iters", type=int, default=50)
    s.add_argument("--rel-tol", type=float, default=1e-6)
    s.add_argument("-o", "--output", type=Path)
    s.add_argument("--csv", type=Path, help="also write the image as CSV")
    s.set_defaults(func=cmd_recon)

    for name, func, help_text in (("sweep-uncertainty", cmd_sweep_uncertainty,
                                   "Monte-Carlo PC sweep over sensor-radius uncertainty"),
                                  ("sweep-delta", cmd_sweep_delta,
                                   "operator perturbation metric over radius offsets")):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", type=Path, required=True, help="key = value config file")
        s.add_argument("--seed", type=int, help="override the master seed")
        s.add_argument("--trials", type=int, help="override trials per X")
        s.add_argument("--out-dir", type=Path)
        if name == "sweep-uncertainty":
            s.add_argument("--threads", type=int, help="worker threads for trials")
            s.add_argument("--no-images", action="store_true", help="skip averaged image output")
        else:
            s.add_argument("--tol", type=float, default=1e-6, help="power-iteration relative tolerance")
        s.set_defaults(func=func)

    s = sub.add_parser("metrics", help="image comparison metrics")
    msub = s.add_subparsers(dest="metric", required=True, parser_class=_Parser)
    m = msub.add_parser("pc", help="Pearson correlation of two images")
    m.add_argument("a", type=Path)
    m.add_argument("b", type=Path)
    m.add_argument("--side-length", type=float, default=0.03, help="field size for CSV images, m")
    m.set_defaults(func=cmd_metrics)
    return p


def _root_cause(exc):
    while isinstance(exc, TrialError) and exc.__cause__ is not None:
        exc = exc.__cause__
    return exc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    started = _dt.datetime.now(_dt.timezone.utc)
    try:
        args.func(args, started)
    except (FormatError, UsageError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, MemoryError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (TrialError, ValueError, TypeError) as exc:
        cause = _root_cause(exc)
        if isinstance(cause, (ConvergenceError, MemoryError, FloatingPointError, np.linalg.LinAlgError)):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
