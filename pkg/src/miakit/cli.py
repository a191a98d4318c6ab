"""Command-line interface.

Subcommands cover the pipeline end to end (``run``, ``ablate``) and
stage by stage (``train-target`` through ``baselines``), all driven by
one config file. Stage subcommands reuse cached artifacts from the
output directory, so a downstream stage can rerun alone and still
reproduce the full-pipeline result.

Exit codes: 0 success, 2 config error, 3 data or format error,
4 numeric or training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import contrastive as cl
from . import figures, nn, pipeline
from .config import ExperimentConfig, load_config, write_default_config
from .data import PosteriorDump, load_posterior_dump, write_posterior_dump
from .errors import DataError, MiakitError
from .features import load_feature_dump, write_feature_dump
from .metrics import score_report
from .pipeline import artifact_path
from .target import build_shadows

log = logging.getLogger("miakit")


def _load(args) -> ExperimentConfig:
    return load_config(args.config)


def _out_dir(cfg: ExperimentConfig, args) -> str:
    return args.out or cfg.output.dir


def _need(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"missing artifact {path}; run '{hint}' first")
    return path


def _synthetic_state(cfg: ExperimentConfig):
    dataset = pipeline.load_or_gen_dataset(cfg)
    split = pipeline.make_split(cfg, dataset)
    return dataset, split


def cmd_init(args) -> int:
    write_default_config(args.config)
    print(f"wrote default config to {args.config}")
    return 0


def cmd_train_target(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    os.makedirs(out, exist_ok=True)
    dataset, split = _synthetic_state(cfg)
    net, profile = pipeline.run_target_stage(cfg, dataset, split)
    nn.save_network(net, artifact_path(out, "target"))
    pipeline.atomic_write_text(
        artifact_path(out, "target_profile"),
        json.dumps(profile.to_dict(), sort_keys=True, indent=2) + "\n",
    )
    print(
        f"target trained: train acc {profile.train_accuracy:.3f}, "
        f"test acc {profile.test_accuracy:.3f}, gap {profile.gap:.3f}"
    )
    return 0


def cmd_dump_posteriors(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    os.makedirs(out, exist_ok=True)
    net = nn.load_network(_need(artifact_path(out, "target"), "train-target"))
    dataset, split = _synthetic_state(cfg)
    d_t, d_l = pipeline.make_dumps(net, split)
    if args.no_membership:
        d_t = PosteriorDump(probs=d_t.probs, labels=d_t.labels, bits=None)
    write_posterior_dump(d_t, artifact_path(out, "d_t_dump"))
    write_posterior_dump(d_l, artifact_path(out, "d_l_dump"))
    print(
        f"wrote {artifact_path(out, 'd_t_dump')} ({d_t.n_samples} rows) and "
        f"{artifact_path(out, 'd_l_dump')} ({d_l.n_samples} rows)"
    )
    return 0


def _dumps_for_attack(cfg: ExperimentConfig, out: str):
    if cfg.dataset.kind == "dump":
        return pipeline.load_dumps(cfg)
    d_t = load_posterior_dump(_need(artifact_path(out, "d_t_dump"), "dump-posteriors"))
    d_l = load_posterior_dump(_need(artifact_path(out, "d_l_dump"), "dump-posteriors"))
    return d_t, d_l


def _shadows_and_raw(cfg: ExperimentConfig, out: str):
    if cfg.dataset.kind == "dump" or cfg.attack.view_mode == "posterior_dropout":
        net = None
        if cfg.dataset.kind != "dump":
            net = nn.load_network(_need(artifact_path(out, "target"), "train-target"))
        from .target import ShadowPair

        return ShadowPair(net, cfg.attack.d1, cfg.attack.d2, "posterior_dropout"), None
    net = nn.load_network(_need(artifact_path(out, "target"), "train-target"))
    _, split = _synthetic_state(cfg)
    shadows = build_shadows(net, cfg.attack.d1, cfg.attack.d2, cfg.attack.view_mode)
    return shadows, split.target_set.features


def cmd_make_attack_data(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    os.makedirs(out, exist_ok=True)
    d_t, _ = _dumps_for_attack(cfg, out)
    shadows, raw = _shadows_and_raw(cfg, out)
    pairs = pipeline.make_attack_pairs(cfg, d_t, shadows, raw)
    write_feature_dump(pairs.reshape(-1, pairs.shape[2]), artifact_path(out, "attack_data"))
    print(f"wrote {pairs.shape[0]} view pairs to {artifact_path(out, 'attack_data')}")
    return 0


def cmd_train_clmia(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    rows = load_feature_dump(_need(artifact_path(out, "attack_data"), "make-attack-data"))
    pairs = rows.reshape(-1, 2, rows.shape[1])
    if cfg.attack.fresh_views:
        d_t, _ = _dumps_for_attack(cfg, out)
        shadows, raw = _shadows_and_raw(cfg, out)
        model = pipeline.train_attack_encoder(cfg, pairs, d_t, shadows, raw)
    else:
        model = pipeline.train_attack_encoder(cfg, pairs)
    cl.save_attack_model(model, artifact_path(out, "encoder"))
    print(
        f"encoder trained for {len(model.encoder_losses)} epochs: "
        f"loss {model.encoder_losses[0]:.4f} -> {model.encoder_losses[-1]:.4f}"
    )
    return 0


def cmd_finetune(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    model = cl.load_attack_model(_need(artifact_path(out, "encoder"), "train-clmia"))
    _, d_l = _dumps_for_attack(cfg, out)
    model = pipeline.finetune_attack(cfg, model, d_l)
    cl.save_attack_model(model, artifact_path(out, "model"))
    print(f"head fine-tuned on {d_l.n_samples} labeled samples")
    return 0


def cmd_infer(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    model = cl.load_attack_model(_need(artifact_path(out, "model"), "finetune"))
    dump = (
        load_posterior_dump(args.dump)
        if args.dump
        else _dumps_for_attack(cfg, out)[0]
    )
    scores = cl.membership_scores(model, dump.probs)
    decisions = (scores >= cl.DECISION_THRESHOLD).astype(int)
    dest = args.scores_out or os.path.join(out, "decisions.csv")
    with open(dest, "w", encoding="ascii", newline="\n") as fh:
        fh.write("score,decision\n")
        for s, d in zip(scores, decisions):
            fh.write(f"{s:.9g},{d}\n")
    print(f"wrote {len(scores)} decisions to {dest}")
    if dump.bits is not None:
        report, curve = score_report(
            "clmia", scores, dump.bits, config_hash=cfg.config_hash(), seed=cfg.seed
        )
        pipeline.write_report(out, report, curve)
        print(
            f"balanced accuracy {report.balanced_accuracy:.3f}, "
            f"f1 {report.f1:.3f}, auc {report.auc:.3f}"
        )
    return 0


def cmd_baselines(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    d_t, d_l = _dumps_for_attack(cfg, out)
    dataset = split = None
    if cfg.dataset.kind == "synthetic":
        dataset, split = _synthetic_state(cfg)
    reports = pipeline.baseline_reports(cfg, d_t, d_l, dataset, split)
    for name, (report, curve) in sorted(reports.items()):
        pipeline.write_report(out, report, curve)
        print(
            f"{name:18s} balanced acc {report.balanced_accuracy:.3f} "
            f"f1 {report.f1:.3f} auc {report.auc:.3f}"
        )
    if cfg.output.figures:
        figures.roc_figure(
            {name: curve for name, (_, curve) in sorted(reports.items())},
            os.path.join(out, "figures", "roc_baselines.png"),
        )
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    reports, _manifest = pipeline.run_experiment(cfg, out)
    for name, (report, _) in sorted(reports.items()):
        print(
            f"{name:18s} balanced acc {report.balanced_accuracy:.3f} "
            f"f1 {report.f1:.3f} auc {report.auc:.3f}"
        )
    print(f"artifacts under {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg, args)
    cells = pipeline.run_ablation(cfg, out)
    for name, cell in sorted(cells.items()):
        line = f"{name:40s} clmia {cell['clmia'].balanced_accuracy:.3f}"
        if "only_fc" in cell:
            line += f"  only_fc {cell['only_fc'].balanced_accuracy:.3f}"
        print(line)
    print(f"{len(cells)} cells under {os.path.join(out, 'ablation')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="miakit",
        description="Membership-inference attack toolkit",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, *, config=True, out=True):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("-c", "--config", required=True, help="experiment config file")
        if out:
            p.add_argument("-o", "--out", default=None, help="output directory override")
        p.set_defaults(fn=fn)
        return p

    p = sub.add_parser("init", help="write a commented default config")
    p.add_argument("config", help="path for the new config file")
    p.set_defaults(fn=cmd_init)

    add("train-target", cmd_train_target, "train the target classifier")
    p = add("dump-posteriors", cmd_dump_posteriors, "write D_t and D_l posterior dumps")
    p.add_argument(
        "--no-membership",
        action="store_true",
        help="withhold membership bits from the D_t dump",
    )
    add("make-attack-data", cmd_make_attack_data, "build the view-pair attack dataset")
    add("train-clmia", cmd_train_clmia, "contrastive training of the attack encoder")
    add("finetune", cmd_finetune, "supervised fine-tuning of the classification head")
    p = add("infer", cmd_infer, "membership inference over a posterior dump")
    p.add_argument("--dump", default=None, help="posterior dump to score (default: D_t)")
    p.add_argument("--scores-out", default=None, help="decisions CSV destination")
    add("baselines", cmd_baselines, "run the six comparison attacks")
    add("run", cmd_run, "full pipeline: target, attack, inference, baselines")
    add("ablate", cmd_ablate, "grid sweeps over temperature, dropout, labeled budget")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except MiakitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
