"""Command-line entry point.

Subcommands: run, simulate, train, eval, gen, report. Exit status is 0 on
success, 2 on configuration or usage errors, 3 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus
from .backend import BackendError, BackendUnavailable, ExecBackend
from .botnet import read_flow_csv
from .config import ConfigInvalid, EngineConfig, load_config
from .engine import Engine
from .http_ids import ATTACKS, HttpIds
from .learners import ClassifierModel, LearnerError, evaluate
from .models import load_default_models, load_models, train
from .packets import CaptureError, parse_capture
from .report import Comparison, build_report
from .scenario import ScriptValidation, load_script, run_scenario
from .storage import EventLog, StorageError, Vault, read_events

logger = logging.getLogger("soar")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _write(path: Path, data: str | bytes) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data)
    return path


def _figures(rep, out: Path, static=None, comparison=None) -> list[Path]:
    from . import plots

    if comparison is not None:
        return plots.render_comparison(comparison, out / "figures")
    return plots.render_all(rep, out / "figures", static)


def _write_report(rep, out: Path, figures: bool) -> None:
    _write(out / "report.csv", rep.to_csv())
    _write(out / "report.txt", rep.to_text())
    if figures:
        _figures(rep, out)


def _models(model_dir):
    return load_models(model_dir) if model_dir else load_default_models()


# -- run ---------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else EngineConfig()
    cfg = cfg.with_overrides(log_dir=args.out, idle_timeout=args.idle_timeout,
                             deploy_ahead=None if args.deploy_ahead is None else bool(args.deploy_ahead))
    pool, catalog = cfg.pool.build(), cfg.build_catalog()
    with open(args.capture, "rb") as fh:
        cap = parse_capture(fh)
    out = Path(cfg.log_dir)
    vault = Vault(cfg.vault_path)
    backend = cfg.backend.build(vault)
    if isinstance(backend, ExecBackend):
        backend.ping()
    ids, ddos_model, botnet_model = _models(args.models or cfg.models.get("dir"))
    on = cfg.detectors
    log_path = out / "log.jsonl"
    log_path.unlink(missing_ok=True)
    engine = Engine(pool, catalog, cfg.idle_timeout, cfg.deploy_ahead, backend=backend, log=EventLog(log_path),
                    vault=vault, ids=ids if on["http_ids"] else None,
                    ddos_model=ddos_model if on["ddos"] else None,
                    botnet_model=botnet_model if on["botnet"] else None)
    horizon = cap.packets[-1].ts if cap.packets else 0.0
    try:
        engine.start(0.0)
        for p in cap.packets:
            engine.process(p)
    except KeyboardInterrupt:
        logger.warning("interrupted; draining timers and flushing the log")
        horizon = engine.clock
    finally:
        engine.finish(horizon)
        engine.log.close()
    rep = build_report(engine.log.events(), horizon, catalog, name=Path(args.capture).stem, mode="dynamic",
                       gap=cfg.session_gap, top=args.top, pool=pool)
    _write_report(rep, out, not args.no_figures)
    print(f"{cap.total} records, {len(cap.packets)} packets, {cap.skipped} skipped; "
          f"{len(engine.log)} events; deployments {sum(rep.deployments.values())}")
    print(f"log: {log_path}")
    return EXIT_OK


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    script = load_script(args.script)
    out = Path(args.out)
    models = _models(args.models)
    kw = dict(seed=args.seed, deploy_latency=args.deploy_latency, models=models,
              deploy_ahead=None if args.deploy_ahead is None else bool(args.deploy_ahead))

    def one(static: bool, where: Path):
        run = run_scenario(script, static=static, vault_dir=where / "vault", **kw)
        rep = run.report(top=args.top, gap=args.gap)
        _write(where / "log.jsonl", run.log.text())
        _write(where / "capture.pcap", run.capture())
        _write(where / "report.csv", rep.to_csv())
        _write(where / "report.txt", rep.to_text())
        return rep

    if args.compare:
        dyn = one(False, out)
        sta = one(True, out / "static")
        cmp = Comparison(dyn, sta)
        _write(out / "comparison.csv", cmp.to_csv())
        if not args.no_figures:
            _figures(dyn, out, comparison=cmp)
        print(dyn.to_text())
        print(f"uptime dynamic {dyn.total_uptime:.0f} s vs static {sta.total_uptime:.0f} s "
              f"(ratio {cmp.uptime_ratio:.3f}, {cmp.saved_vs_static_pct:.1f}% saved)")
        print(f"mean engagement dynamic {dyn.mean_engagement:.1f} s vs static {sta.mean_engagement:.1f} s")
    else:
        rep = one(args.static, out)
        if not args.no_figures:
            _figures(rep, out)
        print(rep.to_text())
    print(f"artifacts written to {out}")
    return EXIT_OK


# -- corpora and models --------------------------------------------------------


def _parse_sizes(text: str | None) -> dict[str, int] | None:
    if not text:
        return None
    sizes = {}
    for part in text.split(","):
        k, sep, v = part.partition("=")
        if not sep or not v.strip().isdigit():
            raise UsageError(f"bad size {part!r}; expected class=count")
        sizes[k.strip().lower()] = int(v)
    return sizes


def cmd_gen(args) -> int:
    path = corpus.gen_corpus(args.task, args.seed, args.out, _parse_sizes(args.sizes))
    print(f"wrote {args.task} corpus to {path}")
    return EXIT_OK


def _dataset(task: str, path, attack: str | None):
    if task == "httpids":
        if not attack:
            raise UsageError("httpids needs --attack (one of XSS, SQLI, OSC)")
        return corpus.http_dataset(corpus.read_http_csv(path), attack)
    if task == "ddos":
        return corpus.load_ddos_csv(path)
    return read_flow_csv(path)


def _check_attack(attack: str | None) -> str | None:
    if attack is None:
        return None
    attack = attack.upper()
    if attack not in ATTACKS:
        raise UsageError(f"unknown attack {attack!r}; expected one of {', '.join(ATTACKS)}")
    return attack


def cmd_train(args) -> int:
    attack = _check_attack(args.attack)
    task = args.task or corpus.sniff_task(args.corpus)
    if task == "httpids" and attack is None:
        rows = corpus.read_http_csv(args.corpus)
        models = {}
        for a in ATTACKS:
            tr, te = corpus.http_dataset(rows, a).split(args.holdout, args.seed)
            models[a] = train(tr, args.family, f"httpids:{a}", args.seed)
            print(f"[{a}] holdout n={len(te)}\n{evaluate(models[a], te).table()}" if len(te) else f"[{a}]")
        HttpIds(models).save(_out(args.out))
        print(f"saved HTTP IDS bundle to {args.out}")
        return EXIT_OK
    ds = _dataset(task, args.corpus, attack)
    tr, te = ds.split(args.holdout, args.seed)
    name = f"httpids:{attack}" if task == "httpids" else task
    model = train(tr, args.family, name, args.seed)
    model.save(_out(args.out))
    if len(te):
        print(f"holdout n={len(te)}\n{evaluate(model, te).table()}")
    print(f"saved {model.family} model for {name} to {args.out}")
    return EXIT_OK


def _out(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def cmd_eval(args) -> int:
    attack = _check_attack(args.attack)
    task = args.task or corpus.sniff_task(args.corpus)
    doc = json.loads(Path(args.model).read_text())
    if "models" in doc:
        ids = HttpIds.load(args.model)
        rows = corpus.read_http_csv(args.corpus)
        for a in [attack] if attack else ATTACKS:
            _, te = corpus.http_dataset(rows, a).split(args.holdout, args.seed) if args.holdout else (
                None, corpus.http_dataset(rows, a))
            print(f"[{a}] n={len(te)}\n{evaluate(ids.models[a], te).table()}")
        return EXIT_OK
    model = ClassifierModel.from_dict(doc)
    if task == "httpids" and attack is None:
        attack = model.task.partition(":")[2] or None
    ds = _dataset(task, args.corpus, attack)
    te = ds.split(args.holdout, args.seed)[1] if args.holdout else ds
    print(f"n={len(te)}\n{evaluate(model, te).table()}")
    return EXIT_OK


# -- report ------------------------------------------------------------------


def cmd_report(args) -> int:
    events = read_events(args.log)
    horizon = args.horizon if args.horizon is not None else max((ev.ts for ev in events), default=0.0)
    rep = build_report(events, horizon, name=Path(args.log).stem, mode=args.mode, gap=args.gap, top=args.top)
    print(rep.to_text())
    if args.out:
        _write_report(rep, Path(args.out), not args.no_figures)
        print(f"report written to {args.out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _flag01(v: str) -> int:
    if v not in ("0", "1"):
        raise argparse.ArgumentTypeError("expected 0 or 1")
    return int(v)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="soar", description="Dynamic honeypot orchestration engine.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="replay a capture file through the live engine")
    p.add_argument("capture")
    p.add_argument("--config", help="YAML engine configuration")
    p.add_argument("--out", help="output directory (overrides log_dir)")
    p.add_argument("--models", help="directory of model files")
    p.add_argument("--idle-timeout", type=float)
    p.add_argument("--deploy-ahead", type=_flag01)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="run a scenario script in virtual time")
    p.add_argument("script", help="bundled scenario name or script path")
    p.add_argument("--seed", type=int)
    p.add_argument("--static", action="store_true", help="always-on baseline instead of dynamic deployment")
    p.add_argument("--deploy-ahead", type=_flag01)
    p.add_argument("--deploy-latency", type=float)
    p.add_argument("--compare", action="store_true", help="run dynamic and static and compare")
    p.add_argument("--out", default="soar-out")
    p.add_argument("--models")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--gap", type=float, default=300.0, help="engagement session gap, seconds")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen", help="generate a labeled synthetic corpus")
    p.add_argument("--task", required=True, choices=corpus.TASKS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", help="per-class counts, e.g. normal=3000,ddos=2000")
    p.set_defaults(func=cmd_gen)

    for name, func in (("train", cmd_train), ("eval", cmd_eval)):
        p = sub.add_parser(name, help=f"{name} a detector model on a corpus")
        p.add_argument("--corpus", "--data", dest="corpus", required=True)
        p.add_argument("--task", choices=corpus.TASKS, help="guessed from the CSV header when omitted")
        p.add_argument("--attack", help="XSS, SQLI or OSC (httpids only)")
        p.add_argument("--holdout", type=float, default=0.25)
        p.add_argument("--seed", type=int, default=0)
        if name == "train":
            p.add_argument("--family", choices=("tree", "lr"), default="tree")
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--model", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="rebuild a report from an event log")
    p.add_argument("log")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--gap", type=float, default=300.0)
    p.add_argument("--horizon", type=float, help="defaults to the last event time")
    p.add_argument("--mode", default="dynamic")
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


CONFIG_ERRORS = (ConfigInvalid, UsageError, ScriptValidation, corpus.CorpusError)
RUNTIME_ERRORS = (BackendError, CaptureError, LearnerError, StorageError, OSError, ValueError, KeyError)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"soar {args.cmd}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendUnavailable as exc:
        print(f"soar {args.cmd}: backend unavailable: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except RUNTIME_ERRORS as exc:
        print(f"soar {args.cmd}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
