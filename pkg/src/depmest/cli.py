"""Command-line front end.

Subcommands: ``simulate`` (error paths to CSV), ``fit`` (solve one regression
from X/y CSVs), ``infer`` (dependence-adjusted confidence intervals),
``dep-measure`` (coupling-gap profile) and ``mc`` (replicated experiments).

Configuration is a flat ``key=value`` text file plus flag overrides (flags
win); unknown keys are rejected before any computation, and every run echoes
its fully resolved configuration (defaults included) into the output
directory, so a run can be reproduced byte-identically from the echo.

Exit codes: 0 success, 2 configuration/usage error, 3 numeric error.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .dependence import measure_dependence, srd_diagnostic
from .designs import design_from_csv, rescale
from .estimators import fit as fit_model
from .exceptions import NumericError, UsageError
from .experiments import ExperimentConfig, run_experiment
from .inference import confidence_region, estimate_long_run_covariance
from .losses import estimate_psi_mean_derivative, parse_loss
from .processes import parse_innovation, parse_model, simulate_path

OUT_DIR_ENV = "DEPMEST_OUT_DIR"


# ---------------------------------------------------------------------------
# Key tables: name -> (parser, default, help)
# ---------------------------------------------------------------------------


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise UsageError(f"expected a boolean (true/false), got {text!r}")


def _parse_opt_int(text):
    return None if str(text).strip() == "" else int(text)


def _parse_opt_float(text):
    return None if str(text).strip() == "" else float(text)


def _parse_int_list(text):
    items = [s for s in str(text).split(",") if s.strip()]
    if not items:
        raise UsageError("expected a comma-separated list of integers")
    return [int(s) for s in items]


def _default_out_dir():
    return os.environ.get(OUT_DIR_ENV, ".")


_COMMON = {
    "out_dir": (str, None, "output directory (default: $DEPMEST_OUT_DIR or '.')"),
}

KEYS = {
    "simulate": {
        **_COMMON,
        "model": (str, "iid", "error model, e.g. geometric:0.5 | arch:1,0.5 | tar:0.5,-0.3"),
        "innov": (str, "gaussian:0,1", "innovation distribution"),
        "n": (int, 1000, "path length"),
        "seed": (int, 0, "master seed"),
        "burn_in": (int, 1000, "burn-in for recursive models"),
        "out": (str, "path.csv", "output CSV file name (one value per line)"),
    },
    "fit": {
        **_COMMON,
        "x": (str, "", "design CSV (one row per observation)"),
        "y": (str, "", "response CSV (one value per line)"),
        "header": (_parse_bool, False, "skip one header line in the CSVs"),
        "loss": (str, "square", "loss spec, e.g. huber:1.345 | quantile:0.5 | power:1.5"),
        "out": (str, "fit", "output file prefix"),
    },
    "infer": {
        **_COMMON,
        "x": (str, "", "design CSV"),
        "y": (str, "", "response CSV"),
        "header": (_parse_bool, False, "skip one header line in the CSVs"),
        "loss": (str, "square", "loss spec"),
        "bandwidth": (_parse_opt_int, None, "lag-window bandwidth (empty: ceil(n^(1/3)))"),
        "kernel": (str, "bartlett", "lag-window kernel: bartlett | truncated"),
        "level": (float, 0.95, "confidence level"),
        "out": (str, "infer", "output file prefix"),
    },
    "dep-measure": {
        **_COMMON,
        "model": (str, "geometric:0.5", "error model"),
        "innov": (str, "gaussian:0,1", "innovation distribution"),
        "loss": (str, "huber:1.345", "loss spec"),
        "max_lag": (int, 20, "largest lag in the profile"),
        "nrep": (int, 1000, "coupling replications"),
        "seed": (int, 0, "master seed"),
        "burn_in": (int, 1000, "burn-in for recursive models"),
        "out": (str, "profile.csv", "profile CSV file name"),
    },
    "mc": {
        **_COMMON,
        "kind": (str, "clt", "experiment: clt | bahadur | dependence | oscillation"),
        "loss": (str, "huber:1.345", "loss spec"),
        "model": (str, "geometric:0.5", "error model(s), ';'-separated for dependence"),
        "innov": (str, "gaussian:0,1", "innovation distribution"),
        "design": (str, "random", "design builder: random | polynomial"),
        "p": (int, 1, "number of regression coefficients"),
        "dist": (str, "uniform:-1,1", "entry distribution for the random design"),
        "n": (_parse_int_list, [500], "sample-size grid, comma separated"),
        "replications": (int, 100, "replications per grid point"),
        "seed": (int, 0, "master seed"),
        "level": (float, 0.95, "confidence level (clt)"),
        "bandwidth": (_parse_opt_int, None, "lag-window bandwidth (empty: default rule)"),
        "kernel": (str, "bartlett", "lag-window kernel"),
        "max_lag": (int, 20, "profile length (dependence)"),
        "burn_in": (int, 1000, "burn-in for recursive models"),
        "delta_rule": (str, "log", "ball-radius rule (oscillation): log | n"),
        "delta_scale": (float, 1.0, "multiplier for the log delta rule"),
        "grid_per_axis": (int, 5, "factorial grid resolution (oscillation)"),
        "slope0": (_parse_opt_float, None, "override for the slope at zero (empty: estimate)"),
        "aux_scale": (int, 20, "oracle run length as a multiple of max n (clt)"),
        "aux_slope_samples": (int, 200_000, "sample size for the slope estimate"),
        "aux_psi_samples": (int, 1_000_000, "sample size for the psi curves (oscillation)"),
        "threads": (int, 0, "worker cap for replications (0 = auto)"),
        "out": (str, "report.csv", "report CSV file name"),
    },
}


def _format_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def _read_config_file(path, command):
    table = KEYS[command]
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "command":
            if value != command:
                raise UsageError(
                    f"{path}:{lineno}: config is for command {value!r}, not {command!r}"
                )
            continue
        if key not in table:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r} for command {command!r}")
        parser = table[key][0]
        try:
            values[key] = parser(value)
        except (ValueError, UsageError) as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def _resolve(command, args):
    """Merge defaults, config file and flags (flags win); strict keys."""
    table = KEYS[command]
    resolved = {key: default for key, (_, default, _) in table.items()}
    if args.config:
        resolved.update(_read_config_file(args.config, command))
    for key, (parser, _, _) in table.items():
        flag_value = getattr(args, key.replace("-", "_"))
        if flag_value is not None:
            try:
                resolved[key] = parser(flag_value)
            except (ValueError, UsageError) as exc:
                raise UsageError(f"bad value for --{key.replace('_', '-')}: {exc}") from exc
    if resolved.get("out_dir") is None:
        resolved["out_dir"] = _default_out_dir()
    return resolved


def _echo_config(command, resolved):
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"command={command}"]
    for key in sorted(resolved):
        lines.append(f"{key}={_format_value(resolved[key])}")
    (out_dir / f"resolved_{command.replace('-', '_')}.cfg").write_text("\n".join(lines) + "\n")
    return out_dir


def _fmt_float(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    lines = []
    if header:
        lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def _load_xy(cfg):
    if not cfg["x"] or not cfg["y"]:
        raise UsageError("both --x and --y CSV paths are required")
    design = design_from_csv(cfg["x"], header=cfg["header"])
    try:
        y = np.loadtxt(cfg["y"], delimiter=",", skiprows=1 if cfg["header"] else 0, ndmin=1)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read response CSV {cfg['y']!r}: {exc}") from exc
    y = np.atleast_1d(y.squeeze())
    if y.ndim != 1:
        raise UsageError("response CSV must contain a single column")
    if y.size != design.n:
        raise UsageError(f"design has {design.n} rows but response has {y.size}")
    return design, y


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_simulate(cfg):
    out_dir = _echo_config("simulate", cfg)
    innov = parse_innovation(cfg["innov"])
    model = parse_model(cfg["model"], innov)
    path = simulate_path(model, cfg["n"], cfg["seed"], burn_in=cfg["burn_in"])
    _write_csv(out_dir / cfg["out"], None, ([_fmt_float(v)] for v in path))
    print(f"wrote {cfg['n']} values to {out_dir / cfg['out']}")
    return 0


def _fit_from_config(cfg):
    design, y = _load_xy(cfg)
    loss = parse_loss(cfg["loss"])
    return design, y, loss, fit_model(design, y, loss)


def _cmd_fit(cfg):
    out_dir = _echo_config("fit", cfg)
    design, y, loss, result = _fit_from_config(cfg)
    pairs = []
    for j, b in enumerate(result.beta):
        pairs.append((f"beta_{j}", _fmt_float(b)))
    for j, t in enumerate(result.theta):
        pairs.append((f"theta_{j}", _fmt_float(t)))
    pairs += [
        ("objective", _fmt_float(result.objective)),
        ("score_norm", _fmt_float(result.score_norm)),
        ("iterations", str(result.iterations)),
        ("converged", "true" if result.converged else "false"),
    ]
    block = "\n".join(f"{k}={v}" for k, v in pairs) + "\n"
    (out_dir / f"{cfg['out']}.txt").write_text(block)
    _write_csv(
        out_dir / f"{cfg['out']}.csv",
        [k for k, _ in pairs],
        [[v for _, v in pairs]],
    )
    print(block, end="")
    return 0


def _cmd_infer(cfg):
    out_dir = _echo_config("infer", cfg)
    design, y, loss, result = _fit_from_config(cfg)
    resc = rescale(design)
    resid = y - design.x @ result.beta
    # plug-in approximations on real data: slope and psi values from residuals
    slope0 = estimate_psi_mean_derivative(loss, resid)
    if slope0 <= 0:
        raise NumericError(f"residual-based slope estimate is not positive: {slope0}")
    lrv = estimate_long_run_covariance(resc, loss.psi(resid), cfg["bandwidth"], cfg["kernel"])
    region = confidence_region(result, resc, lrv, slope0, cfg["level"])
    rows = []
    print(f"{'coef':>6} {'estimate':>14} {'lower':>14} {'upper':>14}")
    for j in range(design.p):
        print(
            f"{j:>6} {result.beta[j]:>14.6g} {region.lower[j]:>14.6g} {region.upper[j]:>14.6g}"
        )
        rows.append(
            [
                str(j),
                _fmt_float(result.beta[j]),
                _fmt_float(region.lower[j]),
                _fmt_float(region.upper[j]),
                _fmt_float(region.halfwidth[j]),
            ]
        )
    print(f"level={cfg['level']} bandwidth={lrv.bandwidth} kernel={lrv.kernel}")
    print(f"ellipsoid_radius={region.ellipsoid_radius:.6g}")
    if region.degenerate:
        print("warning: covariance has a degenerate direction; intervals there are vacuous")
    _write_csv(
        out_dir / f"{cfg['out']}_intervals.csv",
        ["coef", "estimate", "lower", "upper", "halfwidth"],
        rows,
    )
    return 0


def _cmd_dep_measure(cfg):
    out_dir = _echo_config("dep-measure", cfg)
    innov = parse_innovation(cfg["innov"])
    model = parse_model(cfg["model"], innov)
    loss = parse_loss(cfg["loss"])
    profile = measure_dependence(
        model, loss, cfg["max_lag"], cfg["nrep"], cfg["seed"], burn_in=cfg["burn_in"]
    )
    diag = srd_diagnostic(profile)
    rows = [
        [str(k), _fmt_float(d), _fmt_float(raw), _fmt_float(se)]
        for k, d, raw, se in zip(profile.lags, profile.psi_gap, profile.raw_gap, profile.stderr)
    ]
    _write_csv(out_dir / cfg["out"], ["lag", "psi_gap", "raw_gap", "stderr"], rows)
    print(f"model: {model.name}   loss: {loss.name}")
    if diag.fit is not None:
        if diag.fit.kind == "geometric":
            print(f"decay fit: geometric rate {diag.fit.rate:.4g} (R^2 {diag.fit.r_squared:.3f})")
        else:
            print(
                f"decay fit: polynomial exponent {diag.fit.exponent:.4g} "
                f"(R^2 {diag.fit.r_squared:.3f})"
            )
    else:
        print("decay fit: not available (too few measurable lags)")
    print(f"partial sum: {diag.partial_sums[-1]:.6g}")
    print(f"verdict: {diag.verdict}")
    return 0


def _cmd_mc(cfg):
    out_dir = _echo_config("mc", cfg)
    innov = parse_innovation(cfg["innov"])
    models = [parse_model(m, innov) for m in str(cfg["model"]).split(";") if m.strip()]
    exp_cfg = ExperimentConfig(
        kind=cfg["kind"],
        loss=parse_loss(cfg["loss"]),
        models=models,
        n_grid=list(cfg["n"]),
        p=cfg["p"],
        design_builder=cfg["design"],
        design_dist=cfg["dist"],
        replications=cfg["replications"],
        seed=cfg["seed"],
        level=cfg["level"],
        bandwidth=cfg["bandwidth"],
        kernel=cfg["kernel"],
        max_lag=cfg["max_lag"],
        burn_in=cfg["burn_in"],
        delta_rule=cfg["delta_rule"],
        delta_scale=cfg["delta_scale"],
        grid_per_axis=cfg["grid_per_axis"],
        slope0=cfg["slope0"],
        aux_scale=cfg["aux_scale"],
        aux_slope_samples=cfg["aux_slope_samples"],
        aux_psi_samples=cfg["aux_psi_samples"],
        threads=cfg["threads"],
    )
    report = run_experiment(exp_cfg)
    rows = [
        [str(group), str(statistic), _format_value(value) if not isinstance(value, float) else _fmt_float(value)]
        for group, statistic, value in report.rows()
    ]
    _write_csv(out_dir / cfg["out"], ["group", "statistic", "value"], rows)
    print(report.summary())
    if not report.valid:
        print("warning: experiment marked invalid (failure budget or validity check exceeded)")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


_HANDLERS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "infer": _cmd_infer,
    "dep-measure": _cmd_dep_measure,
    "mc": _cmd_mc,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="depmest",
        description="M-estimation of linear models with dependent errors",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, table in KEYS.items():
        p = sub.add_parser(command, help=f"{command} subcommand")
        p.add_argument("--config", default=None, help="key=value config file")
        for key, (_, default, help_text) in table.items():
            p.add_argument(
                f"--{key.replace('_', '-')}",
                dest=key.replace("-", "_"),
                default=None,
                help=f"{help_text} (default: {_format_value(default) or 'none'})",
            )
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        resolved = _resolve(args.command, args)
        return _HANDLERS[args.command](resolved)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
