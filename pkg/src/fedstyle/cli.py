"""Command-line front end.

Config files are flat ``key = value`` text, one entry per line, ``#`` starts a
comment. Keys are the ``ExperimentConfig`` field names; all are optional.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any

from .data import generate_synthetic, save_csv
from .errors import FedStyleError, InputError, ParseError
from .orchestrator import ExperimentConfig, RunResult, run_experiment, run_suite

log = logging.getLogger("fedstyle")

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str, line: int | None = None) -> Any:
    if key not in _FIELD_TYPES:
        raise ParseError(f"unknown key {key!r}", line=line)
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ParseError(f"bad value for {key!r}: {exc}", line=line) from None


def parse_config_text(text: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"expected 'key = value', got {body!r}", line=lineno)
        key, raw = (part.strip() for part in body.split("=", 1))
        values[key] = _coerce(key, raw, lineno)
    return values


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    values.update(overrides or {})
    cfg = ExperimentConfig.from_dict(values)
    cfg.validate()
    return cfg


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _parse_overrides(extra: list[str]) -> dict[str, Any]:
    """Turn leftover ``--key value`` pairs into typed config values."""
    out: dict[str, Any] = {}
    it = iter(extra)
    for token in it:
        if not token.startswith("--"):
            raise ParseError(f"unexpected argument {token!r}")
        key = token[2:].replace("-", "_")
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            raw = next(it, None)
            if raw is None:
                raise ParseError(f"missing value for --{key}")
        out[key] = _coerce(key, raw)
    return out


def write_outputs(result: RunResult, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "accuracy", "macro_f1", "mean_local_loss"])
        for m in result.rounds:
            writer.writerow([m.round, repr(m.accuracy), repr(m.macro_f1), repr(m.mean_local_loss)])
    (out / "result.json").write_text(result.to_json() + "\n", encoding="utf-8")
    (out / "config.echo").write_text(format_config(cfg), encoding="utf-8")


def cmd_run(args: argparse.Namespace, extra: list[str]) -> int:
    try:
        cfg = load_config(args.config, _parse_overrides(extra))
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        result = run_experiment(cfg)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FedStyleError as exc:
        print(f"error: run failed: {exc}", file=sys.stderr)
        return 2
    write_outputs(result, cfg, Path(args.out))
    if result.rounds:
        print(
            f"{cfg.method}: final accuracy {result.final_accuracy:.4f}, "
            f"macro-F1 {result.final_macro_f1:.4f} after {len(result.rounds)} rounds"
        )
    return 0


def cmd_gen_data(args: argparse.Namespace, extra: list[str]) -> int:
    if extra:
        print(f"error: unexpected arguments {extra}", file=sys.stderr)
        return 1
    try:
        ds = generate_synthetic(args.classes, args.per_class, args.dim, args.sigma, args.seed)
        save_csv(ds, args.out)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


SUMMARY_HEADER = [
    "config", "status", "final_accuracy", "trailing_mean_accuracy", "final_macro_f1", "error",
]


def cmd_suite(args: argparse.Namespace, extra: list[str]) -> int:
    cfg_dir = Path(args.config_dir)
    paths = sorted(cfg_dir.glob("*.cfg")) if cfg_dir.is_dir() else []
    if not paths:
        print(f"error: no *.cfg files in {cfg_dir}", file=sys.stderr)
        return 1
    try:
        overrides = _parse_overrides(extra)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    names, configs, parse_errors = [], [], {}
    for p in paths:
        try:
            configs.append(load_config(p, overrides))
            names.append(p.stem)
        except (InputError, OSError) as exc:
            parse_errors[p.stem] = str(exc)
    entries = run_suite(configs, workers=args.workers) if configs else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, entry in zip(names, entries):
        if entry.ok:
            r = entry.result
            write_outputs(r, entry.config, out / name)
            rows.append([
                name, "ok",
                repr(r.final_accuracy) if r.rounds else "",
                repr(r.trailing_mean_accuracy) if r.trailing_mean_accuracy is not None else "",
                repr(r.final_macro_f1) if r.rounds else "",
                "",
            ])
        else:
            rows.append([name, "failed", "", "", "", entry.error])
    for name, msg in parse_errors.items():
        rows.append([name, "config_error", "", "", "", msg])
    rows.sort(key=lambda r: r[0])
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        writer.writerows(rows)
    ok = sum(1 for r in rows if r[1] == "ok")
    print(f"{ok}/{len(rows)} runs succeeded; summary at {out / 'summary.csv'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedstyle", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment; extra --key value pairs override the config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--per-class", type=int, required=True)
    gen.add_argument("--dim", type=int, default=32)
    gen.add_argument("--sigma", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_data)

    suite = sub.add_parser("suite", help="run every *.cfg in a directory")
    suite.add_argument("--config-dir", required=True)
    suite.add_argument("--out", required=True)
    suite.add_argument("--workers", type=int, default=1)
    suite.set_defaults(func=cmd_suite)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args, extra)


if __name__ == "__main__":
    sys.exit(main())
