"""Command-line front end: ``grantfree {simulate,convergence,sweep,roc}``.

Configuration precedence: built-in defaults < ``--profile`` < ``--config`` file
< command-line flags. Config files are either JSON objects or flat
``key = value`` lines (``#`` starts a comment).

Errors exit nonzero and print ``error[<category>]: <message>`` on stderr, with
category one of ``config``, ``io`` or ``runtime``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .decision import report
from .initializers import INITIALIZERS
from .model import SystemConfig
from .montecarlo import (
    DETECTORS,
    ExperimentSpec,
    StudyOutput,
    add_counters,
    run_study,
    run_trials,
    summarize,
)

logger = logging.getLogger("grantfree")

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_RUNTIME = 4

PROFILES = {
    "paper": {"K": 500, "M": 64, "T": 10, "n_trials": 10_000},
    "desk": {"K": 100, "M": 32, "T": 10, "n_trials": 500},
}

CONVERGENCE_HEADER = ["initializer", "update_index", "mean_loglik", "mean_mse"]
ROC_HEADER = ["detector", "sweep_value", "v_db", "p_fa", "p_md"]
SLICE_HEADER = ["detector", "sweep_value", "target_pfa", "p_md"]

# file/flag key -> (section, field, type); section "base" targets SystemConfig
_KEYS = {
    "K": ("base", "K", int),
    "M": ("base", "M", int),
    "T": ("base", "T", int),
    "snr_db": ("base", "snr_db", float),
    "epsilon_a": ("base", "epsilon_a", float),
    "lambda": ("base", "lam", float),
    "rho": ("base", "rho", float),
    "beta": ("base", "beta", float),
    "n_trials": ("base", "n_trials", int),
    "trials": ("base", "n_trials", int),
    "n_sweeps": ("base", "n_sweeps", int),
    "seed": ("base", "seed", int),
    "initializer": ("spec", "initializers", "list[str]"),
    "initializers": ("spec", "initializers", "list[str]"),
    "detectors": ("spec", "detectors", "list[str]"),
    "sweep_values": ("spec", "sweep_values", "list[float]"),
    "target_pfa": ("spec", "target_pfa", "list[float]"),
    "fixed_pilots": ("spec", "fixed_pilots", bool),
    "v_points": ("spec", "v_points", int),
    "refresh_every": ("spec", "refresh_every", int),
    "v_db": ("run", "v_db", float),
    "workers": ("run", "workers", int),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _coerce(key: str, raw, kind):
    try:
        if kind == "list[str]":
            items = raw if isinstance(raw, list) else str(raw).split(",")
            return [str(x).strip() for x in items if str(x).strip()]
        if kind == "list[float]":
            items = raw if isinstance(raw, list) else str(raw).split(",")
            return [float(x) for x in items if str(x).strip()]
        if kind is bool:
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(str(raw).strip()) if not isinstance(raw, (int, float)) else int(raw)
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {getattr(kind, '__name__', kind)}") from None


def read_config_file(path: str | os.PathLike) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config: {path}: top level must be an object")
        if "config_hash" in data and isinstance(data.get("config"), dict):
            # a run manifest: replay its configuration snapshot
            return dict(data["config"])
        return data
    data = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config: {path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        data[key] = value
    return data


def build_spec(values: dict, study: str = "single", profile: str | None = None) -> tuple[ExperimentSpec, dict]:
    """Turn a flat key/value mapping into an :class:`ExperimentSpec` plus run options."""
    base, spec_kw, run = {}, {}, {"v_db": 10.0, "workers": 1}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"profile: unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
        base.update(PROFILES[profile])
    for key, raw in values.items():
        if raw is None:
            continue
        if key not in _KEYS:
            raise ConfigError(f"{key}: unknown configuration key")
        section, name, kind = _KEYS[key]
        value = _coerce(key, raw, kind)
        {"base": base, "spec": spec_kw, "run": run}[section][name] = value
    try:
        cfg = SystemConfig(**base)
    except ValueError as exc:
        msg = str(exc).replace("lam ", "lambda ").replace("lam**2", "lambda**2")
        raise ConfigError(msg) from None
    for name in spec_kw.get("initializers", []):
        if name not in INITIALIZERS:
            raise ConfigError(f"initializers: unknown initializer {name!r}; expected one of {INITIALIZERS}")
    for name in spec_kw.get("detectors", []):
        if name not in DETECTORS:
            raise ConfigError(f"detectors: unknown detector {name!r}; expected one of {DETECTORS}")
    if run["workers"] < 1:
        raise ConfigError("workers: must be >= 1")
    try:
        spec = ExperimentSpec(base=cfg, study=study, **spec_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return spec, run


def parse_config(argv_values: dict, config_path: str | None = None, study: str = "single",
                 profile: str | None = None) -> tuple[ExperimentSpec, dict]:
    """Merge file values, flag values and the seed environment fallback."""
    values = read_config_file(config_path) if config_path else {}
    values.update({k: v for k, v in argv_values.items() if v is not None})
    if values.get("seed") is None and os.environ.get("GRANTFREE_SEED"):
        values["seed"] = os.environ["GRANTFREE_SEED"]
    return build_spec(values, study=study, profile=profile)


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: list[str], rows) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    _atomic_write(path, buf.getvalue())
    return path


def flat_config(spec: ExperimentSpec) -> dict:
    """Configuration snapshot in the same key vocabulary the config files use."""
    cfg = spec.base
    out = {
        "K": cfg.K, "M": cfg.M, "T": cfg.T, "snr_db": cfg.snr_db, "epsilon_a": cfg.epsilon_a,
        "lambda": cfg.lam, "rho": cfg.rho, "beta": cfg.beta, "n_trials": cfg.n_trials,
        "n_sweeps": cfg.n_sweeps, "seed": cfg.seed,
        "initializers": list(spec.initializers), "detectors": list(spec.detectors),
        "target_pfa": list(spec.target_pfa), "fixed_pilots": spec.fixed_pilots,
        "v_points": spec.v_points,
    }
    if spec.sweep_values:
        out["sweep_values"] = list(spec.sweep_values)
    if spec.refresh_every is not None:
        out["refresh_every"] = spec.refresh_every
    return out


def config_hash(spec: ExperimentSpec) -> str:
    blob = json.dumps(flat_config(spec), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def emit_results(output: StudyOutput, spec: ExperimentSpec, out_dir, started: str,
                 extra: dict | None = None) -> list[Path]:
    """Write the study's CSV files and a JSON manifest next to them."""
    out_dir = Path(out_dir)
    written = []
    if output.convergence:
        written.append(write_csv(out_dir / "convergence.csv", CONVERGENCE_HEADER, output.convergence))
    if output.roc:
        written.append(write_csv(out_dir / "roc.csv", ROC_HEADER, output.roc))
    if output.slices:
        rows = [row[:4] for row in output.slices]
        written.append(write_csv(out_dir / "slices.csv", SLICE_HEADER, rows))
    manifest = {
        "study": output.study,
        "config": flat_config(spec),
        "config_hash": config_hash(spec),
        "seed": spec.base.seed,
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [p.name for p in written],
        "fallback_counters": output.counters,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True, default=fmt) + "\n")
    written.append(path)
    return written


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON or key=value configuration file")
    parser.add_argument("--seed", type=str, help="master RNG seed (falls back to $GRANTFREE_SEED)")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--trials", type=str, help="Monte-Carlo trials per point")
    parser.add_argument("--workers", type=str, help="worker processes")
    parser.add_argument("--profile", choices=sorted(PROFILES), help="desk- or paper-scale defaults")
    parser.add_argument("--K", dest="K", type=str, help="number of devices")
    parser.add_argument("--M", dest="M", type=str, help="number of BS antennas")
    parser.add_argument("--T", dest="T", type=str, help="preamble length")
    parser.add_argument("--snr-db", dest="snr_db", type=str)
    parser.add_argument("--epsilon-a", dest="epsilon_a", type=str)
    parser.add_argument("--lambda", dest="lambda_", type=str, help="unknown-CSI scale")
    parser.add_argument("--sweeps", dest="n_sweeps", type=str, help="coordinate-ascent sweeps")
    parser.add_argument("--initializer", type=str, help="comma-separated initializer names")
    parser.add_argument("--target-pfa", dest="target_pfa", type=str)
    parser.add_argument("--v-points", dest="v_points", type=str)
    parser.add_argument("--fixed-pilots", dest="fixed_pilots", action="store_const", const=True)
    parser.add_argument("-v", "--verbose", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grantfree", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="run one configuration and report P_md/P_fa at --v-db")
    _common(p)
    p.add_argument("--v-db", dest="v_db", type=str, help="threshold scale in dB")
    p = sub.add_parser("convergence", help="likelihood/MSE traces per initializer")
    _common(p)
    p = sub.add_parser("sweep", help="P_md at target P_fa across lambda or SNR")
    _common(p)
    p.add_argument("--axis", choices=("lambda", "snr"), required=True)
    p.add_argument("--values", dest="sweep_values", type=str, required=True,
                   help="comma-separated sweep values")
    p = sub.add_parser("roc", help="full ROC at a fixed configuration")
    _common(p)
    return parser


_FLAG_KEYS = ("seed", "K", "M", "T", "snr_db", "epsilon_a", "n_sweeps", "target_pfa",
              "v_points", "fixed_pilots", "v_db", "workers", "sweep_values")


def _flag_values(args: argparse.Namespace) -> dict:
    values = {k: getattr(args, k, None) for k in _FLAG_KEYS}
    values["lambda"] = args.lambda_
    values["trials"] = args.trials
    values["initializers"] = args.initializer
    return values


def run(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    study = {
        "simulate": "single",
        "roc": "single",
        "convergence": "convergence",
        "sweep": "lambda_sweep" if getattr(args, "axis", None) == "lambda" else "snr_sweep",
    }[args.command]
    started = datetime.now(timezone.utc).isoformat()
    try:
        spec, opts = parse_config(_flag_values(args), args.config, study=study, profile=args.profile)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        extra = None
        if args.command == "simulate":
            output, extra = _simulate(spec, opts)
        else:
            output = run_study(spec, workers=opts["workers"])
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"error[runtime]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        paths = emit_results(output, spec, args.out, started, extra)
    except OSError as exc:
        print(f"error[io]: {exc.filename or args.out}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    for path in paths:
        print(path)
    return 0


def _simulate(spec: ExperimentSpec, opts: dict) -> tuple[StudyOutput, dict]:
    results = run_trials(spec, workers=opts["workers"])
    output = StudyOutput("single")
    summarize(output, results, spec, float(spec.base.lam))
    add_counters(output, results)
    summary = {}
    for label in results[0].estimates:
        reps = [report(r.estimates[label], r.gamma_true, np.flatnonzero(r.active), r.snr[label], opts["v_db"])
                for r in results]
        summary[label] = {
            "v_db": opts["v_db"],
            "p_md": float(np.mean([x.p_md for x in reps])),
            "p_fa": float(np.mean([x.p_fa for x in reps])),
            "mse": float(np.mean([x.mse for x in reps])),
        }
    return output, {"report": summary}


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
