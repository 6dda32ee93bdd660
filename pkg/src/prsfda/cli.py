"""Command-line surface: dataset generation, phase runs, evaluation, ablation.

Exit codes: 0 success, 1 domain errors (bad config, missing files, training
failures), 2 usage errors. Diagnostics go to stderr; results are files under
the --out directory. Seed priority: --seed flag > config > PRSFDA_SEED env.
"""

import functools
import json
import os
import sys
from pathlib import Path

import click

from .data import DomainSpec, generate_pair, load_dataset, save_dataset
from .errors import ConfigError, PrsfdaError
from .model import load_checkpoint
from .pipeline import (
    PhaseConfig,
    adapt_unsupervised,
    config_hash,
    evaluate,
    naive_self_train,
    run_ablation,
    self_train_plnl,
    train_source,
)
from .report import write_svg_curves


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(doc) - {"domain", "phases", "seeds"}
    if unknown:
        raise ConfigError(f"unknown top-level config sections: {sorted(unknown)}")
    return doc


def _resolve_seed(flag_seed, cfg_dict):
    if flag_seed is not None:
        return flag_seed
    if "seed" in cfg_dict.get("phases", {}):
        return int(cfg_dict["phases"]["seed"])
    env = os.environ.get("PRSFDA_SEED")
    return int(env) if env is not None else 0


def _build(cfg_dict, seed):
    spec = DomainSpec.from_dict({**cfg_dict.get("domain", {}), "seed": seed})
    phases = PhaseConfig.from_dict({**cfg_dict.get("phases", {}), "seed": seed})
    return spec, phases


def _domain_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PrsfdaError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except FileNotFoundError as exc:
            click.echo(f"error: file not found: {exc.filename}", err=True)
            sys.exit(1)

    return wrapper


def _write_phase_outputs(out, record, report_flag):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if record.report is not None:
        record.report.write_csv(out / "report.csv")
        (out / "report.json").write_text(record.report.to_json() + "\n")
    lines = ["epoch,loss"] + [f"{i},{v:.6f}" for i, v in enumerate(record.loss_curve)]
    (out / "loss_curve.csv").write_text("\n".join(lines) + "\n")
    if report_flag:
        write_svg_curves(out / "loss_curve.svg", {"loss": record.loss_curve},
                         title=record.phase)


@click.group()
def main():
    """Source-free domain adaptation trainer on a synthetic two-domain benchmark."""


config_opt = click.option("--config", "config_path", type=str, default=None,
                          help="JSON config with 'domain' and/or 'phases' sections.")
out_opt = click.option("--out", "out", type=str, required=True,
                       help="Output directory (all results land here).")
seed_opt = click.option("--seed", type=int, default=None, help="Seed override.")
report_opt = click.option("--report", "report_flag", is_flag=True,
                          help="Also emit SVG curves.")


@main.command("generate-data")
@config_opt
@out_opt
@seed_opt
@_domain_errors
def generate_data_cmd(config_path, out, seed):
    """Generate the four benchmark splits as dataset files."""
    cfg = _load_config(config_path)
    seed = _resolve_seed(seed, cfg)
    spec, _ = _build(cfg, seed)
    pair = generate_pair(spec)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(pair.source_train, out / "source_train.ds")
    save_dataset(pair.source_val, out / "source_val.ds")
    save_dataset(pair.target_train, out / "target_train.ds")
    save_dataset(pair.target_eval, out / "target_eval.ds")
    (out / "domain_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    click.echo(f"wrote 4 splits to {out}", err=True)


@main.command("train-source")
@config_opt
@click.option("--data", "data_dir", type=str, required=True,
              help="Directory produced by generate-data.")
@out_opt
@seed_opt
@report_opt
@_domain_errors
def train_source_cmd(config_path, data_dir, out, seed, report_flag):
    """Phase 0: class-balanced source training with augmentation."""
    cfg = _load_config(config_path)
    seed = _resolve_seed(seed, cfg)
    spec, phases = _build(cfg, seed)
    data = Path(data_dir)
    source_train = load_dataset(data / "source_train.ds", expect_role="source")
    source_val = load_dataset(data / "source_val.ds", expect_role="source")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _, record = train_source(source_train, phases, num_classes=spec.num_classes,
                             source_val=source_val, checkpoint_path=out / "source.ckpt")
    record.report.metadata.update(config_hash=config_hash(spec, phases), seed=seed)
    _write_phase_outputs(out, record, report_flag)
    click.echo(f"source-val mIoU {record.report.miou:.4f}", err=True)


def _run_target_phase(config_path, checkpoint, data_dir, out, seed, report_flag, phase_fn):
    cfg = _load_config(config_path)
    seed = _resolve_seed(seed, cfg)
    spec, phases = _build(cfg, seed)
    model = load_checkpoint(checkpoint)
    data = Path(data_dir)
    target_train = load_dataset(data / "target_train.ds", expect_role="target")
    target_eval = load_dataset(data / "target_eval.ds", expect_role="target")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model, record = phase_fn(model, target_train.images_only(), phases,
                             checkpoint_path=out / "adapted.ckpt")
    record.report = evaluate(model, target_eval, metadata={
        "phase": record.phase, "config_hash": config_hash(spec, phases), "seed": seed,
    })
    _write_phase_outputs(out, record, report_flag)
    click.echo(f"{record.phase}: target-eval mIoU {record.report.miou:.4f}", err=True)


@main.command("adapt")
@config_opt
@click.option("--checkpoint", type=str, required=True)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--regularizer", type=click.Choice(["msl", "ent"]), default=None)
@out_opt
@seed_opt
@report_opt
@_domain_errors
def adapt_cmd(config_path, checkpoint, data_dir, regularizer, out, seed, report_flag):
    """Phase 1: confidence-regularized unsupervised adaptation."""

    def phase_fn(model, view, phases, checkpoint_path):
        if regularizer is not None:
            from dataclasses import replace

            phases = replace(phases, regularizer=regularizer)
        return adapt_unsupervised(model, view, phases, checkpoint_path=checkpoint_path)

    _run_target_phase(config_path, checkpoint, data_dir, out, seed, report_flag, phase_fn)


@main.command("self-train")
@config_opt
@click.option("--checkpoint", type=str, required=True)
@click.option("--data", "data_dir", type=str, required=True)
@click.option("--naive", is_flag=True, help="Run the naive ST baseline instead of PL/NL.")
@out_opt
@seed_opt
@report_opt
@_domain_errors
def self_train_cmd(config_path, checkpoint, data_dir, naive, out, seed, report_flag):
    """Phase 2: noise-aware pseudo-label self-training (or the naive baseline)."""
    phase_fn = naive_self_train if naive else self_train_plnl
    _run_target_phase(config_path, checkpoint, data_dir, out, seed, report_flag, phase_fn)


@main.command("evaluate")
@config_opt
@click.option("--checkpoint", type=str, required=True)
@click.option("--data", "data_path", type=str, required=True,
              help="A labeled dataset file (e.g. target_eval.ds).")
@out_opt
@seed_opt
@_domain_errors
def evaluate_cmd(config_path, checkpoint, data_path, out, seed):
    """Evaluate a checkpoint on a labeled split; emits CSV and JSON reports."""
    cfg = _load_config(config_path)
    seed = _resolve_seed(seed, cfg)
    spec, phases = _build(cfg, seed)
    model = load_checkpoint(checkpoint)
    split = load_dataset(data_path)
    report = evaluate(model, split, metadata={
        "config_hash": config_hash(spec, phases), "seed": seed,
    })
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    (out / "report.json").write_text(report.to_json() + "\n")
    click.echo(f"mIoU {report.miou:.4f}", err=True)


@main.command("ablate")
@config_opt
@out_opt
@seed_opt
@click.option("--jobs", type=int, default=1, help="Parallel workers over seeds.")
@report_opt
@_domain_errors
def ablate_cmd(config_path, out, seed, jobs, report_flag):
    """Run all six ablation arms plus the lambda sweep; emits CSV tables."""
    cfg = _load_config(config_path)
    base_seed = _resolve_seed(seed, cfg)
    spec, phases = _build(cfg, base_seed)
    seeds = cfg.get("seeds")
    if seed is not None or seeds is None:
        seeds = list(range(base_seed, base_seed + 5))
    result = run_ablation(spec, phases, out, seeds=[int(s) for s in seeds], jobs=jobs)
    if report_flag:
        write_svg_curves(Path(out) / "ablation.svg",
                         {"mean mIoU": list(result.arm_means.values())},
                         title="ablation arms (order: " + ", ".join(result.arm_means) + ")")
    for arm, miou in result.arm_means.items():
        click.echo(f"{arm}: mean mIoU {miou:.4f}", err=True)


if __name__ == "__main__":
    main()
