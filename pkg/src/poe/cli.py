"""Command-line entry point: ``poe <command> [options]``.

Settings resolve as flags > INI config file (``--config``) > defaults. The
config file has sections ``[run]`` (seed), ``[panel]`` (PanelConfig fields),
``[train]`` and ``[fewshot]`` (TrainConfig fields); keys are field names.
Every command writes ``<output>.manifest.json`` next to its main output.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import checkpoint as ckpt
from . import numkit as nk
from .forge import ForgeConfig, GateError, ProvenanceTeacher, forge
from .fusion import FusionMode, PanelScorer, pooled_panel, score_batch
from .meta_eval import OTHER, evaluate_metric, hits_at_1
from .panel import PanelConfig, build_vocab, new_panel
from .records import (DomainDataset, SchemaError, dialogue_from_json, eval_record_from_json,
                      pair_from_json, read_jsonl, selection_task_from_json, write_jsonl)
from .synthetic import make_eval_set, make_quality_eval_set, make_selection_tasks, make_world
from .trainer import (PRESETS, TrainConfig, fewshot_finetune, finetune_adapters, train_multitask,
                      train_new_adapter)

log = logging.getLogger("poe")

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_CHECKPOINT, EXIT_NUMERICAL = 0, 2, 3, 4, 5

PANEL_FLAGS = {"layers": "n_layers", "d_model": "d_model", "heads": "n_heads", "ffn": "d_ffn",
               "bottleneck": "bottleneck", "max_len": "max_len", "init_range": "init_range"}
TRAIN_FLAGS = {"batch_size": "batch_size", "lr": "lr", "epochs": "max_epochs", "eval_every": "eval_every",
               "patience": "patience", "weight_decay": "weight_decay", "sampling": "sampling",
               "max_steps": "max_steps"}
FEWSHOT_DEFAULTS = TrainConfig(batch_size=2, lr=1e-3, max_epochs=30, patience=10, loss="mse")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- configuration

def _read_ini(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise UsageError(f"config file {path} not found")
        cp.read(path, encoding="utf-8")
    return cp


def _coerce(cls, name: str, raw: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if name not in fields:
        raise UsageError(f"unknown {cls.__name__} key {name!r}")
    default = fields[name].default
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int) or (default is None and name == "max_steps"):
            return None if raw.strip().lower() == "none" else int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"bad value {raw!r} for {name}") from None
    return raw.strip()


def _overrides(cp: configparser.ConfigParser, section: str, cls, args, flags: dict[str, str]) -> dict:
    out = {}
    if cp.has_section(section):
        out.update({k: _coerce(cls, k, v) for k, v in cp.items(section) if k != "preset"})
    for flag, fname in flags.items():
        val = getattr(args, flag, None)
        if val is not None:
            out[fname] = val
    return out


def resolve_seed(args, cp: configparser.ConfigParser) -> int:
    if args.seed is not None:
        return args.seed
    if cp.has_option("run", "seed"):
        return cp.getint("run", "seed")
    env = os.environ.get("POE_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"POE_SEED={env!r} is not an integer") from None
    return 0


def panel_overrides(args, cp) -> dict:
    return _overrides(cp, "panel", PanelConfig, args, PANEL_FLAGS)


def train_config(args, cp, seed: int, section: str = "train", base: TrainConfig | None = None) -> TrainConfig:
    preset = getattr(args, "preset", None) or cp.get(section, "preset", fallback=None)
    if preset is not None and preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    start = PRESETS[preset] if preset else (base or TrainConfig())
    try:
        return dataclasses.replace(start, seed=seed, **_overrides(cp, section, TrainConfig, args, TRAIN_FLAGS))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- manifests and io helpers

def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths: Sequence[str | Path]) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(f for f in p.iterdir() if f.is_file()) if p.is_dir() else [p]
        for f in files:
            out[str(f)] = sha256_file(f)
    return out


def versions() -> dict[str, str]:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "poe": pkg}


def write_manifest(path: str | Path, command: str, seed: int, config: dict,
                   inputs: Sequence[str | Path], outputs: Sequence[str | Path]) -> dict:
    canon = json.dumps(config, sort_keys=True, default=str)
    man = {"command": command, "seed": seed, "config": json.loads(canon),
           "config_hash": hashlib.sha256(canon.encode()).hexdigest(), "versions": versions(),
           "inputs": _hash_inputs(inputs), "outputs": _hash_inputs([o for o in outputs if Path(o).exists()])}
    Path(path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def _need(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {path} does not exist")
    return p


def _write_report(prefix: str | Path, obj: dict, table: str) -> list[Path]:
    prefix = Path(prefix)
    js, txt = prefix.with_name(prefix.name + ".json"), prefix.with_name(prefix.name + ".txt")
    js.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    txt.write_text(table + "\n")
    print(table)
    return [js, txt]


def load_forged(data_dir: Path) -> list[DomainDataset]:
    """``<domain>.train.jsonl`` / ``<domain>.valid.jsonl`` pairs from a forge output directory."""
    trains = sorted(data_dir.glob("*.train.jsonl"))
    if not trains:
        raise UsageError(f"no *.train.jsonl files in {data_dir}")
    out = []
    for tr in trains:
        domain = tr.name[: -len(".train.jsonl")]
        va = tr.with_name(f"{domain}.valid.jsonl")
        ds = DomainDataset(domain, read_jsonl(tr, pair_from_json),
                           read_jsonl(va, pair_from_json) if va.exists() else [])
        for p in [*ds.train, *ds.valid]:
            if p.label is None:
                raise SchemaError(f"{tr}: training pairs need a label")
        if not ds.valid:
            raise UsageError(f"{domain}: no validation pairs ({va} missing or empty)")
        out.append(ds)
    return out


def _parse_named(items: Sequence[str], what: str) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"{what} expects NAME=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = v
    return out


# ---------------------------------------------------------------- commands

def cmd_synth(args, cp, seed) -> list[Path]:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    world = make_world(seed=seed)
    write_jsonl(out / "dialogues.jsonl", [{"domain": d.domain, "utterances": d.utterances, "id": d.id}
                                           for d in world.dialogues(args.per_domain, rng)])
    written = [out / "dialogues.jsonl"]
    for domain in world.domains:
        path = out / f"eval_{domain}.jsonl"
        write_jsonl(path, make_eval_set(world, domain, args.eval_size, rng))
        written.append(path)
    path = out / "eval_quality.jsonl"
    write_jsonl(path, make_quality_eval_set(world, world.domains[0], args.eval_size, rng))
    written.append(path)
    path = out / "selection.jsonl"
    write_jsonl(path, [t for d in world.domains for t in make_selection_tasks(world, d, args.tasks, rng)])
    written.append(path)
    write_manifest(out / "manifest.json", "synth", seed,
                   {"per_domain": args.per_domain, "eval_size": args.eval_size, "tasks": args.tasks}, [], written)
    return written


def cmd_forge(args, cp, seed) -> list[Path]:
    src = _need(args.dialogues, "--dialogues")
    dialogues = read_jsonl(src, dialogue_from_json)
    cfg = ForgeConfig(threshold=args.threshold, negatives_per_pair=args.negatives,
                      valid_fraction=args.valid_fraction, seed=seed)
    try:
        datasets = forge(dialogues, ProvenanceTeacher(seed), cfg)
    except GateError as exc:
        raise SchemaError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for ds in datasets:
        for split, pairs in (("train", ds.train), ("valid", ds.valid)):
            path = out / f"{ds.domain}.{split}.jsonl"
            write_jsonl(path, pairs)
            written.append(path)
        print(f"{ds.domain}: {len(ds.train)} train / {len(ds.valid)} valid")
    write_manifest(out / "manifest.json", "forge", seed, dataclasses.asdict(cfg), [src], written)
    return written


def _history_lines(stage: str, hist, domain: str | None = None):
    for rec in hist.records:
        yield {"stage": stage, **({"domain": domain} if domain else {}), **rec}


def cmd_train(args, cp, seed) -> list[Path]:
    data = _need(args.data, "--data")
    datasets = load_forged(data)
    stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    if not stages or set(stages) - {"multitask", "finetune"}:
        raise UsageError("--stages takes multitask and/or finetune")
    cfg = train_config(args, cp, seed)
    if cfg.sampling == "quota" and cfg.batch_size % len(datasets):
        raise UsageError(f"batch size {cfg.batch_size} is not divisible by {len(datasets)} domains; "
                         "pass --batch-size or --sampling uniform")
    vocab = build_vocab(datasets, args.min_count)
    try:
        panel = new_panel(vocab, [d.domain for d in datasets], seed, **panel_overrides(args, cp))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad panel configuration: {exc}") from None
    history = []
    if "multitask" in stages:
        panel, hist = train_multitask(panel, datasets, cfg)
        history += _history_lines("multitask", hist)
        print(f"multitask: {hist.steps} steps, best mean accuracy {hist.best_score:.4f} at step {hist.best_step}")
    if "finetune" in stages:
        panel, hists = finetune_adapters(panel, datasets, cfg)
        for ds, h in zip(datasets, hists):
            history += _history_lines("finetune", h, ds.domain)
            print(f"finetune {ds.domain}: best accuracy {h.best_score:.4f}")
    out = Path(args.out)
    ckpt.save(panel, out)
    hist_path = out.with_name(out.name + ".history.jsonl")
    write_jsonl(hist_path, history)
    write_manifest(out.with_name(out.name + ".manifest.json"), "train", seed,
                   {"panel": panel.config.to_dict(), "train": dataclasses.asdict(cfg), "stages": stages,
                    "min_count": args.min_count}, [data], [out, hist_path])
    return [out, hist_path]


def _hint(value: str | None):
    if value is None:
        return None
    return int(value) if value.lstrip("-").isdigit() else value


def cmd_score(args, cp, seed) -> list[Path]:
    panel = ckpt.load(_need(args.checkpoint, "--checkpoint"))
    pairs = read_jsonl(_need(args.pairs, "--pairs"), pair_from_json)
    hint = _hint(args.domain)
    if isinstance(hint, int) and not 0 <= hint < panel.n_experts:
        raise UsageError(f"--domain {hint} out of range for {panel.n_experts} experts")
    if args.fusion != "late" and hint is None:
        traces = score_batch(pooled_panel(panel, args.fusion), pairs, 0)
    else:
        traces = score_batch(panel, pairs, hint)
    out = Path(args.out)
    write_jsonl(out, [dataclasses.asdict(t) for t in traces])
    for t in traces:
        print(json.dumps(dataclasses.asdict(t)))
    write_manifest(out.with_name(out.name + ".manifest.json"), "score", seed,
                   {"domain": args.domain, "fusion": args.fusion}, [args.checkpoint, args.pairs], [out])
    return [out]


def cmd_pool(args, cp, seed) -> list[Path]:
    panel = ckpt.load(_need(args.checkpoint, "--checkpoint"))
    out = Path(args.out)
    ckpt.save(pooled_panel(panel, args.mode), out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "pool", seed, {"mode": args.mode},
                   [args.checkpoint], [out])
    return [out]


def _oracle_scorer(records):
    lookup = {id(r.pair): r.human_score for rs in records for r in rs}

    def scorer(pairs, hint=None):
        return np.array([lookup[id(p)] for p in pairs])
    return scorer


def cmd_eval(args, cp, seed) -> list[Path]:
    if not args.dataset:
        raise UsageError("at least one --dataset is required")
    paths = {}
    for item in args.dataset:
        name, path = item.split("=", 1) if "=" in item else (Path(item).stem, item)
        paths[name] = _need(path, "--dataset")
    domain_map = _parse_named(args.domain_of or [], "--domain-of")
    datasets = {name: read_jsonl(p, eval_record_from_json) for name, p in paths.items()}
    inputs = list(paths.values())
    if args.oracle:
        scorer, training = _oracle_scorer(datasets.values()), list(set(domain_map.values()) - {OTHER})
    else:
        panel = ckpt.load(_need(args.checkpoint, "--checkpoint or --oracle"))
        scorer, training = PanelScorer(panel, args.fusion), panel.domains
        inputs.append(args.checkpoint)
    report = evaluate_metric(scorer, datasets, domain_map, training)
    written = _write_report(args.report, report.to_json(), report.table())
    write_manifest(Path(args.report + ".manifest.json"), "eval", seed,
                   {"fusion": args.fusion, "oracle": args.oracle, "domain_map": domain_map}, inputs, written)
    return written


def cmd_fewshot(args, cp, seed) -> list[Path]:
    panel = ckpt.load(_need(args.checkpoint, "--checkpoint"))
    records = read_jsonl(_need(args.data, "--data"), eval_record_from_json)
    cfg = train_config(args, cp, seed, "fewshot", FEWSHOT_DEFAULTS)
    cfg = dataclasses.replace(cfg, loss="mse")
    model = panel if panel.n_experts == 1 else pooled_panel(panel, args.mode)
    rows, table = [], [("K%", "rho_before", "rho_after", "sd_after", "seeds")]
    for k in args.k:
        runs = []
        for s in range(args.seeds):
            _, rep = fewshot_finetune(model, records, k, cfg, np.random.default_rng([seed, s, int(k)]),
                                      adapter_only=args.adapter_only)
            runs.append(rep.to_json())
            log.info("K=%s seed %d: %.4f -> %.4f", k, s, rep.rho_before, rep.rho_after)
        after = np.array([r["rho_after"] for r in runs])
        rows.append({"k_percent": k, "rho_before": runs[0]["rho_before"], "mean_rho_after": float(after.mean()),
                     "sd_rho_after": float(after.std()), "runs": runs})
        table.append((f"{k:g}", f"{runs[0]['rho_before']:.4f}", f"{after.mean():.4f}", f"{after.std():.4f}",
                      str(args.seeds)))
    widths = [max(len(r[i]) for r in table) for i in range(5)]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in table)
    written = _write_report(args.report, {"model": model.domains[0], "train": dataclasses.asdict(cfg),
                                          "results": rows}, text)
    write_manifest(Path(args.report + ".manifest.json"), "fewshot", seed,
                   {"train": dataclasses.asdict(cfg), "k": args.k, "seeds": args.seeds, "mode": args.mode,
                    "adapter_only": args.adapter_only}, [args.checkpoint, args.data], written)
    return written


def cmd_select(args, cp, seed) -> list[Path]:
    tasks = read_jsonl(_need(args.tasks, "--tasks"), selection_task_from_json)
    inputs: list = [args.tasks]
    if args.oracle:
        truth = {(tuple(t.context), tuple(t.candidates)): t.positive_index for t in tasks}

        def scorer(context, candidates):
            s = np.zeros(len(candidates))
            s[truth[(tuple(context), tuple(candidates))]] = 1.0
            return s
        name = "oracle"
    elif args.random:
        rng = np.random.default_rng(seed)

        def scorer(context, candidates):
            return rng.random(len(candidates))
        name = "random"
    else:
        panel = ckpt.load(_need(args.checkpoint, "--checkpoint, --oracle or --random"))
        ps = PanelScorer(panel, args.fusion)
        hint = _hint(args.domain)

        def scorer(context, candidates):
            return ps.select(context, candidates, hint)
        name = args.checkpoint
        inputs.append(args.checkpoint)
    h1 = hits_at_1(scorer, tasks)
    written = _write_report(args.report, {"scorer": name, "tasks": len(tasks), "hits_at_1": h1},
                            f"scorer  {name}\ntasks   {len(tasks)}\nhits@1  {h1:.4f}")
    write_manifest(Path(args.report + ".manifest.json"), "select", seed,
                   {"scorer": name, "domain": args.domain, "fusion": args.fusion}, inputs, written)
    return written


def cmd_new_adapter(args, cp, seed) -> list[Path]:
    panel = ckpt.load(_need(args.checkpoint, "--checkpoint"))
    train = read_jsonl(_need(args.train, "--train"), pair_from_json)
    valid = read_jsonl(_need(args.valid, "--valid"), pair_from_json)
    domain = args.domain or (train[0].domain if train else None)
    if not domain:
        raise UsageError("--domain is required for an empty training file")
    if domain in panel.domains:
        raise UsageError(f"the panel already has an expert for {domain!r}")
    if any(p.label is None for p in [*train, *valid]):
        raise SchemaError("training pairs need a label")
    cfg = train_config(args, cp, seed)
    out_panel, hist = train_new_adapter(panel, DomainDataset(domain, train, valid), cfg, domain)
    print(f"new expert {out_panel.n_experts - 1} ({domain}): best accuracy {hist.best_score:.4f}")
    out = Path(args.out)
    ckpt.save(out_panel, out)
    write_manifest(out.with_name(out.name + ".manifest.json"), "new-adapter", seed,
                   {"train": dataclasses.asdict(cfg), "domain": domain},
                   [args.checkpoint, args.train, args.valid], [out])
    return [out]


# ---------------------------------------------------------------- argument parsing

def _add_panel_flags(p):
    g = p.add_argument_group("panel overrides")
    g.add_argument("--layers", type=int)
    g.add_argument("--d-model", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--ffn", type=int)
    g.add_argument("--bottleneck", type=int)
    g.add_argument("--max-len", type=int)
    g.add_argument("--init-range", type=float)


def _add_train_flags(p):
    g = p.add_argument_group("training overrides")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--eval-every", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--sampling", choices=["quota", "uniform"])
    g.add_argument("--max-steps", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [run], [panel], [train], [fewshot] sections")
    common.add_argument("--seed", type=int, help="defaults to [run] seed, then $POE_SEED, then 0")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="poe", description="Panel-of-experts dialogue response scorer.")
    sub = parser.add_subparsers(dest="command", required=True)
    fusions = ["late", *[m.value for m in FusionMode]]

    p = sub.add_parser("synth", parents=[common], help="write a toy corpus with known ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--per-domain", type=int, default=60)
    p.add_argument("--eval-size", type=int, default=200)
    p.add_argument("--tasks", type=int, default=50)

    p = sub.add_parser("forge", parents=[common], help="build labeled datasets from dialogues")
    p.add_argument("--dialogues", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--negatives", type=int, default=2)
    p.add_argument("--valid-fraction", type=float, default=0.1)

    p = sub.add_parser("train", parents=[common], help="multitask training and adapter finetuning")
    p.add_argument("--data", required=True, help="forge output directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--stages", default="multitask,finetune")
    p.add_argument("--min-count", type=int, default=1)
    _add_panel_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("score", parents=[common], help="score context/response pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--domain", help="expert index or domain name")
    p.add_argument("--fusion", choices=fusions, default="late")

    p = sub.add_parser("pool", parents=[common], help="collapse all experts into one")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=[m.value for m in FusionMode], default="avg")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="correlation with human scores")
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_true", help="score with the human scores themselves")
    p.add_argument("--dataset", action="append", metavar="[NAME=]PATH")
    p.add_argument("--domain-of", action="append", metavar="NAME=DOMAIN")
    p.add_argument("--fusion", choices=fusions, default="late")
    p.add_argument("--report", required=True, help="output prefix for .json and .txt")

    p = sub.add_parser("fewshot", parents=[common], help="K%% few-shot transfer, several seeds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=float, nargs="+", default=[10, 20, 30, 40])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--mode", choices=[m.value for m in FusionMode], default="avg")
    p.add_argument("--adapter-only", action="store_true")
    p.add_argument("--report", required=True)
    _add_train_flags(p)

    p = sub.add_parser("select", parents=[common], help="hits@1 on 20-candidate selection tasks")
    p.add_argument("--tasks", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--checkpoint")
    g.add_argument("--oracle", action="store_true")
    g.add_argument("--random", action="store_true")
    p.add_argument("--domain")
    p.add_argument("--fusion", choices=fusions, default="late")
    p.add_argument("--report", required=True)

    p = sub.add_parser("new-adapter", parents=[common], help="add and train one expert, encoder frozen")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--domain")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    return parser


COMMANDS = {"synth": cmd_synth, "forge": cmd_forge, "train": cmd_train, "score": cmd_score,
            "pool": cmd_pool, "eval": cmd_eval, "fewshot": cmd_fewshot, "select": cmd_select,
            "new-adapter": cmd_new_adapter}


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cp = _read_ini(args.config)
        seed = resolve_seed(args, cp)
        COMMANDS[args.command](args, cp, seed)
    except UsageError as exc:
        print(f"poe {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SchemaError as exc:
        print(f"poe {args.command}: schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ckpt.CheckpointError as exc:
        print(f"poe {args.command}: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except nk.NumericalError as exc:
        print(f"poe {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())
