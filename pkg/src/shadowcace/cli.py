"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Failures print one JSON line to stderr, e.g.
``{"error": "MissingnessMismatch", "category": "data", "exit_code": 2, "message": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .causal import DEFAULT_BOOT, cace
from .errors import DataError, NumericalError, ShadowCaceError
from .gmm import two_step_fit
from .identification import (
    identify,
    observed_law_from_joint,
    odds_ratio_from_joint,
)
from .io import read_csv, read_joint, table4_dataset, write_csv
from .simulation import SimConfig, simulate_dataset, summaries_to_csv, table3

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n",
                          encoding="utf-8")


def _manifest(args, command: str, config: dict | None = None) -> dict:
    echo = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "manifest")}
    seed = echo.get("seed", config.get("seed") if config else None)
    return {
        "command": command,
        "arguments": echo,
        "config": config,
        "seed": seed,
        "version": __version__,
        "kernel_backend": _kernels.BACKEND,
        "numpy": np.__version__,
    }


def _write_manifest(args, command: str, primary_output, config: dict | None = None) -> None:
    path = args.manifest
    if path is None and primary_output is not None:
        path = f"{primary_output}.manifest.json"
    if path is not None:
        _dump(_manifest(args, command, config), path)


def _parse_n_list(text: str):
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--n-list must be comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise UsageError("--n-list must contain positive integers")
    return vals


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config: {exc}") from None
    config = SimConfig.from_json(text)
    data = simulate_dataset(config, args.replicate)
    write_csv(data, args.out)
    _write_manifest(args, "simulate", args.out, config.to_dict())
    return EXIT_OK


def _fit_report(data, n_boot: int, seed: int) -> dict:
    fit = two_step_fit(data)
    est = cace(data, fit, n_boot=n_boot, seed=seed)
    return {
        "data": {
            "n": data.n,
            "missing": int(np.sum(data.r == 0)),
            "support": list(data.support.values),
        },
        "gmm": fit.to_dict(),
        "cace": est.to_dict(),
        "kernel_backend": _kernels.BACKEND,
    }, fit, est


def cmd_fit(args) -> int:
    data = read_csv(args.data)
    report, _, _ = _fit_report(data, args.boot, args.seed)
    _dump(report, args.report)
    _write_manifest(args, "fit", args.report)
    return EXIT_OK


def cmd_identify(args) -> int:
    joint = read_joint(args.joint)
    observed = observed_law_from_joint(joint)
    try:
        direct = odds_ratio_from_joint(joint).values.tolist()
        shadow = True
    except DataError:
        direct, shadow = None, False
    res = identify(observed)
    diff = float(np.max(np.abs(res.joint.table - joint.table)))
    report = {
        "support": list(joint.support.values),
        "y_ref": joint.support.y_ref,
        "shadow_condition": shadow,
        "completeness": [
            {"a": c.a, "complete": c.complete, "condition_number": c.condition_number,
             "singular_values": list(c.singular_values)}
            for c in res.completeness
        ],
        "or_tilde": res.or_tilde.tolist(),
        "odds_ratio": res.odds_ratio.values.tolist(),
        "odds_ratio_from_joint": direct,
        "baseline_propensity": res.baseline.tolist(),
        "propensity": res.propensity.tolist(),
        "missing_outcome_law": res.missing_outcome_law.tolist(),
        "recovered_joint": res.joint.to_json(),
        "max_abs_roundtrip_error": diff,
        "roundtrip_ok": diff <= 1e-10,
    }
    _dump(report, args.report)
    _write_manifest(args, "identify", args.report)
    return EXIT_OK


def cmd_repro_table3(args) -> int:
    n_list = _parse_n_list(args.n_list)
    config = SimConfig(replicates=args.replicates, seed=args.seed, n_boot=args.boot,
                       max_drop_rate=args.max_drop_rate)
    summaries = table3(config, n_list, n_jobs=args.jobs, enforce_drop_rate=False)
    text = summaries_to_csv(summaries)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.json:
        _dump([s.to_dict() for s in summaries], args.json)
    _write_manifest(args, "repro-table3", args.out, config.to_dict())
    over = [s for s in summaries if s.n_failed / s.replicates > config.max_drop_rate]
    if over:
        detail = ", ".join(f"n={s.n}: {s.n_failed}/{s.replicates}" for s in over)
        raise _NumericFailure("ExcessiveNonConvergence",
                              f"failed replicates above {config.max_drop_rate:.1%} ({detail})")
    return EXIT_OK


def format_table5(fit, est) -> str:
    lines = [f"{'Parameter':<10}{'Estimate':>10}{'SD':>10}   95% Confidence Interval"]
    ci = fit.ci
    for i, name in enumerate(("alpha", "beta", "gamma")):
        lines.append(f"{name:<10}{fit.theta_hat.as_array()[i]:>10.4f}{fit.se[i]:>10.4f}"
                     f"   [{ci[i, 0]:.4f}, {ci[i, 1]:.4f}]")
    lines.append(f"{'CACE':<10}{est.point:>10.4f}{est.se:>10.4f}"
                 f"   [{est.ci_low:.4f}, {est.ci_high:.4f}]")
    return "\n".join(lines) + "\n"


def cmd_repro_table5(args) -> int:
    data = table4_dataset()
    report, fit, est = _fit_report(data, args.boot, args.seed)
    sys.stdout.write(format_table5(fit, est))
    if args.json:
        _dump(report, args.json)
    _write_manifest(args, "repro-table5", args.json)
    return EXIT_OK


class _NumericFailure(NumericalError):
    def __init__(self, name, message):
        super().__init__(message)
        self.name = name


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shadowcace", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--manifest", help="where to write the run manifest "
                   "(default: <output>.manifest.json next to the main output file)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="draw a dataset from a simulation config")
    s.add_argument("--config", required=True, help="SimConfig JSON (missing keys take defaults)")
    s.add_argument("--out", required=True, help="output CSV")
    s.add_argument("--replicate", type=int, default=0, help="replicate index (random stream)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="two-step GMM and CACE on a CSV dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--boot", type=int, default=DEFAULT_BOOT)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", required=True, help="output JSON report")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("identify", help="recover a joint law from its observed-data law")
    s.add_argument("--joint", required=True, help="JointLaw JSON")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("repro-table3", help="Monte Carlo bias/SD/CI table")
    s.add_argument("--n-list", default="100,500,1000,2000")
    s.add_argument("--replicates", type=int, default=1000)
    s.add_argument("--seed", type=int, default=SimConfig.seed)
    s.add_argument("--boot", type=int, default=DEFAULT_BOOT, help="bootstrap resamples per replicate")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--max-drop-rate", type=float, default=SimConfig.max_drop_rate)
    s.add_argument("--out", help="CSV output (default: stdout)")
    s.add_argument("--json", help="also write the summaries as JSON")
    s.set_defaults(func=cmd_repro_table3)

    s = sub.add_parser("repro-table5", help="fit the bundled deliberation-study data")
    s.add_argument("--boot", type=int, default=DEFAULT_BOOT)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--json", help="also write the full JSON report")
    s.set_defaults(func=cmd_repro_table5)
    return p


def _fail(name: str, category: str, code: int, message: str) -> int:
    sys.stderr.write(json.dumps({"error": name, "category": category, "exit_code": code,
                                 "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "boot", 0) < 0 or getattr(args, "replicates", 1) < 1:
            raise UsageError("--boot must be >= 0 and --replicates >= 1")
        return args.func(args)
    except UsageError as exc:
        return _fail("UsageError", "usage", EXIT_USAGE, str(exc))
    except _NumericFailure as exc:
        return _fail(exc.name, "numerical", EXIT_NUMERIC, str(exc))
    except DataError as exc:
        return _fail(type(exc).__name__, "data", EXIT_DATA, str(exc))
    except (NumericalError, ShadowCaceError) as exc:
        return _fail(type(exc).__name__, "numerical", EXIT_NUMERIC, str(exc))
    except OSError as exc:
        return _fail(type(exc).__name__, "data", EXIT_DATA, str(exc))


if __name__ == "__main__":
    sys.exit(main())
