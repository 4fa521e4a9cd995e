"""Command-line entry point.

Subcommands: gen-data, embed, train, eval, flops, report.  Every command is
driven by one JSON config file and is reproducible from (config, seeds)
alone; the config hash is recorded in everything written.  Exit codes:
0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import engine, flops, metrics
from .config import ExperimentConfig, load_config
from .distill import freeze
from .embeddings import hash_embedding, load_embedding_file, save_embedding_file
from .errors import ConfigError, ConsistencyError, FormatError, NumericError
from .phantoms import load_dataset, make_staged_dataset, save_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _write_run_stamp(out_dir: Path, cfg: ExperimentConfig, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(json.dumps(
        {"command": command, "config": cfg.to_dict(),
         "config_hash": cfg.hash()},
        indent=2, sort_keys=True) + "\n")


def _dataset_dir(cfg: ExperimentConfig) -> Path:
    return cfg.resolved_output_dir() / "dataset"


def _checkpoint_path(cfg: ExperimentConfig, stage: int) -> Path:
    return cfg.resolved_output_dir() / "checkpoints" / f"stage{stage}.ckpt"


def cmd_gen_data(cfg: ExperimentConfig, force: bool = False) -> int:
    out = _dataset_dir(cfg)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"{out} exists and is not empty (use --force)")
    ds = make_staged_dataset(
        cfg.dataset.build_plan(), cfg.dataset.build_spec(),
        n_per_stage=cfg.dataset.n_per_stage, seed=cfg.dataset.seed,
        n_val=cfg.dataset.n_val, n_test=cfg.dataset.n_test,
        n_eval=cfg.dataset.n_eval)
    save_dataset(ds, out)
    _write_run_stamp(cfg.resolved_output_dir(), cfg, "gen-data")
    print(f"dataset: {out}")
    for st in ds.stages:
        names = [ds.class_names()[c] for c in st.new_class_ids]
        print(f"  stage {st.index} ({st.name}): classes {names}, "
              f"train/val/test = {len(st.train)}/{len(st.val)}/{len(st.test)}")
    print(f"  eval: {len(ds.eval_set)} fully annotated samples")
    return EXIT_OK


def cmd_embed(cfg: ExperimentConfig, out_file: str | None,
              validate_file: str | None) -> int:
    if validate_file:
        table = load_embedding_file(validate_file)
        dims = {len(v) for v in table.values()}
        print(f"{validate_file}: {len(table)} classes, dim "
              f"{dims.pop() if dims else 0}: ok")
        return EXIT_OK
    if not out_file:
        raise ConfigError("embed needs --out FILE or --validate FILE")
    plan = cfg.dataset.build_plan()
    emb = cfg.model.embedding
    table = {name: hash_embedding(name, emb.dim, emb.seed)
             for name in plan.all_classes()}
    save_embedding_file(table, out_file)
    print(f"wrote {len(table)} hash embeddings (dim {emb.dim}) to {out_file}")
    return EXIT_OK


def _build_stage1_model(cfg: ExperimentConfig) -> engine.SegModel:
    model = engine.build_model(
        cfg.model.build_backbone_config(), cfg.model.embedding.dim,
        cfg.model.embedding.provider, head_kernel=cfg.model.head_kernel,
        hyper_hidden=cfg.model.hyper_hidden, seed=cfg.model.seed)
    return model


def cmd_train(cfg: ExperimentConfig, stage: int,
              from_checkpoint: str | None) -> int:
    ds = load_dataset(_dataset_dir(cfg))
    if not 1 <= stage <= len(ds.stages):
        raise ConfigError(f"stage {stage} outside 1..{len(ds.stages)}")
    if stage > 1 and not from_checkpoint:
        raise ConfigError(f"training stage {stage} needs --from with the "
                          f"stage {stage - 1} checkpoint")
    provider = cfg.model.embedding.build_provider()
    stage_data = ds.stages[stage - 1]

    teacher = None
    pseudo = engine.PseudoLabelStore(mode=cfg.train.pseudo_mode,
                                     threshold=cfg.train.threshold)
    if stage == 1:
        model = _build_stage1_model(cfg)
    else:
        model = engine.load_checkpoint(from_checkpoint)
        if model.stage_index != stage - 1:
            raise ConfigError(
                f"checkpoint is at stage {model.stage_index}, "
                f"expected {stage - 1}")
        if cfg.method != "finetune":
            pseudo = engine.precompute_pseudo_labels(
                model, stage_data.train, mode=cfg.train.pseudo_mode,
                threshold=cfg.train.threshold)
            engine.save_pseudo_store(
                pseudo, _dataset_dir(cfg) / "pseudo" / f"stage{stage}")
        if cfg.method in ("lwf", "ilt", "plop"):
            teacher = engine.load_checkpoint(from_checkpoint)
            freeze(teacher)

    new_names = [ds.class_names()[c] for c in stage_data.new_class_ids]
    registry = model.registry.extend(new_names, stage, provider)
    model = engine.extend_model(
        model, list(registry.classes[len(model.registry):]))

    log_rows: list[dict] = []
    engine.train_stage(model, stage_data.train, pseudo, cfg.train,
                       method=cfg.method, teacher=teacher, log_rows=log_rows)

    ckpt = _checkpoint_path(cfg, stage)
    engine.save_checkpoint(model, ckpt, extra={"config_hash": cfg.hash(),
                                               "method": cfg.method})
    log_path = cfg.resolved_output_dir() / "logs" / f"train_stage{stage}.csv"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w", newline="") as fh:
        fh.write(f"# config_hash={cfg.hash()}\n")
        writer = csv.DictWriter(
            fh, fieldnames=["stage", "epoch", "step", "lr", "loss", "bce",
                            "distill"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(log_rows)
    _write_run_stamp(cfg.resolved_output_dir(), cfg, f"train --stage {stage}")
    final = log_rows[-1]["loss"] if log_rows else float("nan")
    print(f"stage {stage} [{cfg.method}]: {len(log_rows)} steps, "
          f"final loss {final:.4f}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, checkpoint: str,
             mode: str = "multilabel") -> int:
    ds = load_dataset(_dataset_dir(cfg))
    model = engine.load_checkpoint(checkpoint)
    report = metrics.evaluate_model(
        model, ds.eval_set, ds.groups(), mode=mode,
        threshold=cfg.train.threshold, method=cfg.method)
    out = (cfg.resolved_output_dir() / "reports" /
           f"stage{model.stage_index}-{cfg.method}")
    files = metrics.emit_report(
        report, out, group_steps=ds.group_steps(),
        header_comment=f"config_hash={cfg.hash()}")
    _write_run_stamp(cfg.resolved_output_dir(), cfg, "eval")
    print(f"step {report.step} [{cfg.method}] "
          + " ".join(f"{g}={v:.3f}" for g, v in report.groups.items()))
    for kind, path in sorted(files.items()):
        print(f"  {kind}: {path}")
    return EXIT_OK


def cmd_flops(cfg: ExperimentConfig, paper_constants: bool = False) -> int:
    provider = cfg.model.embedding.build_provider()
    plan = cfg.dataset.build_plan()
    model = _build_stage1_model(cfg)
    for t, stage in enumerate(plan.stages, start=1):
        registry = model.registry.extend(list(stage.new_classes), t, provider)
        model = engine.extend_model(
            model, list(registry.classes[len(model.registry):]))
    # raises ConsistencyError (exit 3) if the MAC counter disagrees
    entries = flops.audit_reference_net(model, cfg.dataset.height,
                                        cfg.dataset.width)
    out = cfg.resolved_output_dir() / "flops"
    out.mkdir(parents=True, exist_ok=True)

    with (out / "itemized.csv").open("w", newline="") as fh:
        fh.write(f"# config_hash={cfg.hash()}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["component", "flops", "params", "per_step_growth"])
        for name in sorted(entries):
            e = entries[name]
            writer.writerow([e.name, e.flops, e.params, e.per_step_growth])

    heads_per_step = [len(s.new_classes) for s in plan.stages]
    n_steps = len(plan.stages)
    dec_flops = sum(entries[f"dec{i}"].flops
                    for i in range(len(cfg.model.dec_channels)))
    desk = {
        "ours_base": flops.CostEntry("ours_base", entries["total"].flops),
        "backbone": flops.CostEntry("backbone", entries["backbone"].flops),
        "decoder": flops.CostEntry("decoder", dec_flops),
        "head": flops.CostEntry("head", entries["per_class"].flops),
    }
    scenarios = [("desk", desk)]
    if paper_constants:
        scenarios.append(("paper", flops.paper_constants()))

    with (out / "growth.csv").open("w", newline="") as fh:
        fh.write(f"# config_hash={cfg.hash()}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "strategy", "step", "cumulative_flops"])
        for scen_name, consts in scenarios:
            for strategy in flops.STRATEGIES:
                curve = flops.growth_model(strategy, n_steps, heads_per_step,
                                           consts)
                for t, value in enumerate(curve.cumulative_flops, start=1):
                    writer.writerow([scen_name, strategy, t, value])

    print(f"{'component':<22}{'MFLOPs':>12}{'params':>10}")
    for name in ("backbone", "hypernet_per_class", "head_per_class",
                 "per_class", "total"):
        e = entries[name]
        print(f"{e.name:<22}{e.flops / 1e6:>12.3f}{e.params:>10}")
    for scen_name, consts in scenarios:
        print(f"growth ({scen_name}, GFLOPs/step):")
        for strategy in flops.STRATEGIES:
            curve = flops.growth_model(strategy, n_steps, heads_per_step,
                                       consts)
            vals = " ".join(f"{v / 1e9:10.3f}"
                            for v in curve.cumulative_flops)
            print(f"  {strategy:<18}{vals}")
    _write_run_stamp(cfg.resolved_output_dir(), cfg, "flops")
    print(f"wrote {out / 'itemized.csv'} and {out / 'growth.csv'}")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, csv_files: list[str]) -> int:
    ds = load_dataset(_dataset_dir(cfg))
    if not csv_files:
        csv_files = sorted(
            str(p) for p in
            (cfg.resolved_output_dir() / "reports").glob("stage*/report.csv"))
    if not csv_files:
        raise ConfigError("no report CSVs found; run eval first")
    name_to_id = {name: cid for name, cid in ds.class_ids.items()}
    rows = []
    for path in csv_files:
        rows.extend(metrics.load_report_csv(path))
    reports: dict[tuple[str, int], metrics.DiceReport] = {}
    for (method, step) in sorted({(r["method"], r["step"]) for r in rows}):
        mine = [r for r in rows if r["method"] == method and r["step"] == step]
        per_class = {name_to_id[r["class"]]: r["dsc"] for r in mine
                     if r["class"] != "mean"}
        members = {g: [c for c in ids if c in per_class]
                   for g, ids in ds.groups().items()}
        members = {g: ids for g, ids in members.items() if ids}
        reports[(method, step)] = metrics.DiceReport(
            method=method, step=step, mode="multilabel", n_samples=0,
            per_class=per_class, class_names=ds.class_names(),
            group_members=members)
    out = cfg.resolved_output_dir() / "reports" / "combined"
    files = metrics.emit_report(list(reports.values()), out,
                                group_steps=ds.group_steps(),
                                header_comment=f"config_hash={cfg.hash()}")
    print((out / "report.txt").read_text())
    for kind, path in sorted(files.items()):
        print(f"  {kind}: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contseg",
        description="Continual-learning segmentation laboratory on synthetic "
                    "organ phantoms")
    parser.add_argument("--print-config", action="store_true",
                        help="print the default config as JSON and exit")
    sub = parser.add_subparsers(dest="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        return p

    p = add("gen-data", "generate the staged phantom dataset")
    p.add_argument("--force", action="store_true",
                   help="overwrite an existing dataset directory")

    p = add("embed", "generate or validate an embedding table")
    p.add_argument("--out", help="write a hash-embedding JSON table here")
    p.add_argument("--validate", help="validate an existing embedding file")

    p = add("train", "train one continual stage")
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--from", dest="from_checkpoint",
                   help="previous-stage checkpoint (required for stage > 1)")

    p = add("eval", "evaluate a checkpoint on the held-out set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("multilabel", "exclusive"),
                   default="multilabel")

    p = add("flops", "emit cost tables and growth curves")
    p.add_argument("--paper-constants", action="store_true",
                   help="add growth rows using the published 3D constants")

    p = add("report", "combine per-stage eval CSVs into one table and plot")
    p.add_argument("csvs", nargs="*", help="report.csv files (default: all "
                                           "under the output directory)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(json.dumps(ExperimentConfig().to_dict(), indent=2,
                         sort_keys=True))
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, force=args.force)
        if args.command == "embed":
            return cmd_embed(cfg, args.out, args.validate)
        if args.command == "train":
            return cmd_train(cfg, args.stage, args.from_checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.mode)
        if args.command == "flops":
            return cmd_flops(cfg, paper_constants=args.paper_constants)
        if args.command == "report":
            return cmd_report(cfg, args.csvs)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConsistencyError, NumericError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
