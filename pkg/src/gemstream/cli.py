"""Command-line front end.

::

    gemstream gen-stream --config C --out F
    gemstream run        --config C [--jobs J]
    gemstream compare    --dir D
    gemstream qp-check   --trials T --seed S

Exit codes: 0 ok, 1 usage or configuration error, 2 at least one run
failed, 3 a solver self-check failed.  Every file is written whole (temp
file then rename), so an interrupted command never leaves a half-written
output behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ExperimentConfig, load_config
from .continual import MetricsLog, run_method
from .errors import ConfigError, GemStreamError
from .qp import project_multi
from .qpcheck import run_checks
from .report import curves_svg, summarize, summary_csv
from .stream import export_stream, generate_stream

EXIT_OK, EXIT_USAGE, EXIT_RUN_FAILED, EXIT_CHECK_FAILED = 0, 1, 2, 3
MANIFEST = "manifest.json"
MANIFEST_FORMAT = "gemstream-manifest v1"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _err(msg: str) -> None:
    print(f"gemstream: error: {msg}", file=sys.stderr)


# -- gen-stream --------------------------------------------------------------


def cmd_gen_stream(config_path, out_path) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    spec = cfg.stream_for(cfg.seeds[0])
    stream = generate_stream(spec)
    tmp = Path(out_path)
    tmp.parent.mkdir(parents=True, exist_ok=True)
    # export_stream writes a path; route it through a temp file for atomicity
    fd, name = tempfile.mkstemp(dir=tmp.parent, prefix=f".{tmp.name}.", suffix=".tmp")
    os.close(fd)
    try:
        export_stream(stream, name, spec.class_count)
        os.replace(name, tmp)
    finally:
        if os.path.exists(name):
            os.unlink(name)
    sizes = [len(s) for s in stream.splits]
    print(f"d0={len(stream.d0)} splits={sizes} val={len(stream.validation)} seed={spec.seed} -> {out_path}")
    return EXIT_OK


# -- run ---------------------------------------------------------------------


def csv_name(method_name: str, seed: int) -> str:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in method_name)
    return f"{safe}_seed{seed}.csv"


def _execute(cfg: ExperimentConfig, method_index: int, seed: int):
    """One (method, seed) run; returns (csv text or None, record)."""
    method = cfg.methods[method_index]
    record = {"method": method.name, "seed": seed, "file": csv_name(method.name, seed)}
    try:
        stream = generate_stream(cfg.stream_for(seed))
        log = run_method(method, stream, cfg.arch(), cfg.train_for(seed), cfg.qp)
    except GemStreamError as exc:
        record.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        for attr in ("residual", "iterations"):
            if getattr(exc, attr, None) is not None:
                record[attr] = getattr(exc, attr)
        return None, record
    record.update(
        status="ok",
        final_val_err=round(log.final().val_err, 6),
        cum_steps=log.final().cum_steps,
        unprojected_steps=log.unprojected_steps,
    )
    return log.to_csv(), record


def _out_dir(cfg: ExperimentConfig, config_path) -> Path:
    out = Path(cfg.out_dir)
    return out if out.is_absolute() else Path(config_path).resolve().parent / out


def cmd_run(config_path, jobs: int = 1) -> int:
    if jobs < 1:
        _err("--jobs must be at least 1")
        return EXIT_USAGE
    try:
        cfg = load_config(config_path, require=("stream", "methods", "out_dir"))
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    out = _out_dir(cfg, config_path)
    tasks = [(i, s) for s in cfg.seeds for i in range(len(cfg.methods))]

    if jobs == 1:
        results = [_execute(cfg, i, s) for i, s in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_execute, cfg, i, s) for i, s in tasks]
            results = [f.result() for f in futures]

    records = []
    for text, record in results:
        if text is not None:
            atomic_write_text(out / record["file"], text)
            print(f"{record['method']} seed {record['seed']}: final val_err "
                  f"{record['final_val_err']:.4f} -> {record['file']}")
        else:
            print(f"{record['method']} seed {record['seed']}: FAILED ({record['error']})", file=sys.stderr)
        records.append(record)

    manifest = {
        "format": MANIFEST_FORMAT,
        "config_hash": cfg.config_hash(),
        "config": cfg.normalized(),
        "seeds": list(cfg.seeds),
        "files": [r["file"] for r in records if r["status"] == "ok"],
        "runs": records,
    }
    atomic_write_text(out / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    failed = sum(r["status"] != "ok" for r in records)
    if failed:
        _err(f"{failed} of {len(records)} runs failed; see {out / MANIFEST}")
        return EXIT_RUN_FAILED
    return EXIT_OK


# -- compare -----------------------------------------------------------------


def load_run_dir(run_dir):
    """Manifest plus successful logs grouped by method (manifest order)."""
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / MANIFEST).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {run_dir / MANIFEST}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{run_dir / MANIFEST} is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"{run_dir / MANIFEST} is not a gemstream manifest")
    try:
        runs = [r for r in manifest["runs"] if r["status"] == "ok"]
        train = manifest["config"]["train"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{run_dir / MANIFEST} is missing {exc}") from exc
    if not runs:
        raise ConfigError(f"{run_dir / MANIFEST} lists no successful runs")
    logs: dict[str, list[MetricsLog]] = {}
    for r in runs:
        try:
            log = MetricsLog.from_csv((run_dir / r["file"]).read_text())
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load {r.get('file')}: {exc}") from exc
        if not log.rows:
            raise ConfigError(f"{r['file']} has no rows")
        logs.setdefault(r["method"], []).append(log)
    return manifest, logs, train


def cmd_compare(run_dir) -> int:
    try:
        _, logs, train = load_run_dir(run_dir)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    rows = summarize(logs)
    atomic_write_text(Path(run_dir) / "summary.csv", summary_csv(rows))
    svg = curves_svg(logs, train["epochs_d0"], train["epochs_per_split"])
    atomic_write_text(Path(run_dir) / "curves.svg", svg)
    width = max(len(r["method"]) for r in rows)
    print(f"{'method':<{width}}  seeds  val_err median [q1, q3]   cum_steps")
    for r in rows:
        print(f"{r['method']:<{width}}  {r['seeds']:>5}  {r['val_err_median']:.4f} "
              f"[{r['val_err_q1']:.4f}, {r['val_err_q3']:.4f}]  {r['cum_steps_final']:>9}")
    return EXIT_OK


# -- qp-check ----------------------------------------------------------------


def cmd_qp_check(trials: int, seed: int, projector=project_multi) -> int:
    """``projector`` is a test hook for injecting a faulty solver."""
    if trials < 1:
        _err("--trials must be at least 1")
        return EXIT_USAGE
    report = run_checks(trials, seed, projector=projector)
    print(f"trials per suite: {trials}  seed: {seed}")
    print(f"max KKT residual:      {report.max_kkt_residual:.3e}")
    print(f"max optimality gap:    {report.max_optimality_gap:.3e}")
    print(f"min constraint slack:  {report.min_constraint_slack:.3e}")
    if report.ok:
        print("all checks passed")
        return EXIT_OK
    print(f"{len(report.failures)} failing instance(s):", file=sys.stderr)
    for f in report.failures:
        print(json.dumps(f), file=sys.stderr)
    return EXIT_CHECK_FAILED


# -- entry point -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gemstream", description="Online continual learning with projected gradients.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-stream", help="generate a drifting stream and export it")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run every (method, seed) in a config")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("compare", help="summarize a run directory")
    p.add_argument("--dir", required=True)

    p = sub.add_parser("qp-check", help="randomized self-check of the projection solver")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "gen-stream":
            return cmd_gen_stream(args.config, args.out)
        if args.command == "run":
            return cmd_run(args.config, args.jobs)
        if args.command == "compare":
            return cmd_compare(args.dir)
        return cmd_qp_check(args.trials, args.seed)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
