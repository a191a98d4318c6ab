"""Experiment runner: the five pipeline stages plus ablation sweeps.

Stages run in order: dataset, split, target training, shadow views,
attack data, unsupervised encoder training, supervised fine-tuning,
inference, metrics, baselines. Every stage draws its seed from the
master seed through the fixed counter table, so a stage rerun from
cached upstream artifacts reproduces the full-pipeline result exactly.
A failing stage aborts with its name and leaves a partial manifest.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import time
from dataclasses import replace

import numpy as np

from . import baselines as bl
from . import contrastive as cl
from . import figures, nn
from .config import ExperimentConfig
from .data import (
    Dataset,
    MembershipSplit,
    PosteriorDump,
    gen_synthetic,
    load_posterior_dump,
    split_membership,
    write_posterior_dump,
)
from .errors import ConfigError, DataError, StageError
from .features import load_feature_dump, write_feature_dump
from .metrics import AttackReport, RocCurve, score_report, write_roc_text
from .target import ShadowPair, build_shadows, posteriors, train_target

log = logging.getLogger(__name__)

VERSION = "0.1.0"

ARTIFACTS = {
    "target": "target.net",
    "target_profile": "target_profile.json",
    "d_t_dump": "d_t.dump",
    "d_l_dump": "d_l.dump",
    "attack_data": "attack_data.features",
    "encoder": "attack_encoder.bin",
    "model": "attack_model.bin",
    "manifest": "manifest.json",
}


def artifact_path(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, ARTIFACTS[name])


def report_path(out_dir: str, attack: str) -> str:
    return os.path.join(out_dir, "reports", f"{attack}.json")


def roc_path(out_dir: str, attack: str) -> str:
    return os.path.join(out_dir, "roc", f"{attack}_roc.txt")


def atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_report(out_dir: str, report: AttackReport, curve: RocCurve) -> None:
    os.makedirs(os.path.join(out_dir, "reports"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "roc"), exist_ok=True)
    atomic_write_text(report_path(out_dir, report.attack), report.to_json())
    write_roc_text(curve, roc_path(out_dir, report.attack))


def load_or_gen_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset.kind != "synthetic":
        raise ConfigError("raw samples only exist for synthetic datasets")
    d = cfg.dataset
    return gen_synthetic(d.n, d.classes, d.dim, d.separation, cfg.stage_seed("dataset"))


def make_split(cfg: ExperimentConfig, dataset: Dataset) -> MembershipSplit:
    s = cfg.split
    return split_membership(
        dataset,
        member_fraction=s.member_fraction,
        labeled_count=s.labeled_count,
        member_ratio=s.labeled_ratio,
        seed=cfg.stage_seed("split"),
        target_count=s.target_count,
    )


def target_spec(cfg: ExperimentConfig, dataset: Dataset) -> nn.NetworkSpec:
    return nn.NetworkSpec(
        layer_sizes=(dataset.dim, *cfg.target.hidden, dataset.n_classes),
        activation=cfg.target.activation,
        seed=cfg.stage_seed("target"),
    )


def run_target_stage(cfg: ExperimentConfig, dataset: Dataset, split: MembershipSplit):
    spec = target_spec(cfg, dataset)
    return train_target(
        split.train,
        split.holdout,
        spec,
        epochs=cfg.target.epochs,
        learning_rate=cfg.target.learning_rate,
        seed=cfg.stage_seed("target"),
        batch_size=cfg.target.batch_size,
    )


def make_dumps(net: nn.Network, split: MembershipSplit):
    """Posterior dumps for the inference set D_t and labeled set D_l."""
    d_t = PosteriorDump(
        probs=posteriors(net, split.target_set.features),
        labels=split.target_set.labels,
        bits=split.target_bits,
    )
    d_l = PosteriorDump(
        probs=posteriors(net, split.labeled_set.features),
        labels=split.labeled_set.labels,
        bits=split.labeled_bits,
    )
    return d_t, d_l


def load_dumps(cfg: ExperimentConfig):
    d_t = load_posterior_dump(cfg.dataset.d_t_dump)
    d_l = load_posterior_dump(cfg.dataset.d_l_dump)
    if d_t.bits is None:
        raise DataError("the D_t dump needs membership bits for evaluation")
    if d_l.bits is None:
        raise DataError("the D_l dump needs membership bits for fine-tuning")
    if d_t.n_classes != d_l.n_classes:
        raise DataError("D_t and D_l dumps disagree on the class count")
    return d_t, d_l


def make_attack_pairs(
    cfg: ExperimentConfig,
    d_t: PosteriorDump,
    shadows: ShadowPair,
    raw_features=None,
    epoch: int = 0,
) -> np.ndarray:
    return cl.build_attack_data(
        shadows,
        base_posteriors=d_t.probs,
        raw_features=raw_features,
        seed=cfg.stage_seed("views"),
        epoch=epoch,
        features_after_dropout=cfg.attack.features_after_dropout,
        normalize=cfg.attack.normalize_features,
    )


def train_attack_encoder(
    cfg: ExperimentConfig,
    pairs: np.ndarray,
    d_t: PosteriorDump | None = None,
    shadows: ShadowPair | None = None,
    raw_features=None,
) -> cl.AttackModel:
    ccfg = cfg.attack.contrastive(cfg.stage_seed("encoder"))
    pairs_for_epoch = None
    if ccfg.fresh_views:
        if shadows is None or d_t is None:
            raise ConfigError("fresh_views needs the shadows available at training time")
        pairs_for_epoch = lambda epoch: make_attack_pairs(  # noqa: E731
            cfg, d_t, shadows, raw_features=raw_features, epoch=epoch
        )
    return cl.train_encoder(pairs, ccfg, pairs_for_epoch=pairs_for_epoch)


def finetune_attack(cfg: ExperimentConfig, model: cl.AttackModel, d_l: PosteriorDump):
    return cl.finetune(
        model,
        d_l.probs,
        d_l.bits,
        epochs=cfg.attack.finetune_epochs,
        learning_rate=cfg.attack.finetune_learning_rate,
        seed=cfg.stage_seed("finetune"),
        batch_size=cfg.attack.finetune_batch_size,
    )


def clmia_report(cfg: ExperimentConfig, model: cl.AttackModel, d_t: PosteriorDump):
    scores = cl.membership_scores(model, d_t.probs)
    return score_report(
        "clmia", scores, d_t.bits, config_hash=cfg.config_hash(), seed=cfg.seed
    )


def only_fc_report(cfg: ExperimentConfig, d_l: PosteriorDump, d_t: PosteriorDump):
    """Head-only control: same labeled budget, no contrastive encoder."""
    model = cl.AttackModel(
        encoder=None, projection=None,
        normalize_features=cfg.attack.normalize_features,
    )
    model = cl.finetune(
        model,
        d_l.probs,
        d_l.bits,
        epochs=cfg.attack.finetune_epochs,
        learning_rate=cfg.attack.finetune_learning_rate,
        seed=cfg.stage_seed("only_fc"),
        batch_size=cfg.attack.finetune_batch_size,
    )
    scores = cl.membership_scores(model, d_t.probs)
    return score_report(
        "only_fc", scores, d_t.bits, config_hash=cfg.config_hash(), seed=cfg.seed
    )


def baseline_reports(
    cfg: ExperimentConfig,
    d_t: PosteriorDump,
    d_l: PosteriorDump,
    dataset: Dataset | None = None,
    split: MembershipSplit | None = None,
) -> dict[str, tuple[AttackReport, RocCurve]]:
    """All six comparison attacks, calibrated on the same labeled budget.

    The NN attack needs raw auxiliary samples and the target
    architecture, so it is skipped (with a log line) when the pipeline
    runs from posterior dumps alone.
    """
    out: dict[str, tuple[AttackReport, RocCurve]] = {}
    chash = cfg.config_hash()
    for kind in ("top1", "entropy", "modified_entropy", "loss"):
        direction = bl.STAT_DIRECTIONS[kind]
        cal_scores = bl.batch_statistics(kind, d_l.probs, d_l.labels)
        tau = bl.calibrate_threshold(cal_scores, d_l.bits, direction)
        attack = bl.ThresholdAttack(kind=kind, threshold=tau, direction=direction)
        eval_scores = bl.batch_statistics(kind, d_t.probs, d_t.labels)
        decisions = attack.decide(eval_scores)
        roc_scores = eval_scores if direction == "ge" else -eval_scores
        out[kind] = score_report(
            kind,
            roc_scores,
            d_t.bits,
            config_hash=chash,
            seed=cfg.seed,
            decisions=decisions,
            extra={"threshold": tau, "direction": direction},
        )

    correct = (np.argmax(d_t.probs, axis=1) == d_t.labels).astype(np.int64)
    out["correctness"] = score_report(
        "correctness",
        correct.astype(np.float64),
        d_t.bits,
        config_hash=chash,
        seed=cfg.seed,
        decisions=correct,
    )

    if dataset is None or split is None:
        log.info("NN attack skipped: needs raw samples and the target architecture")
        return out

    pool = np.setdiff1d(
        split.non_member_idx, np.concatenate([split.target_idx, split.labeled_idx])
    )
    if len(pool) < cfg.baselines.aux_count:
        raise DataError(
            f"need {cfg.baselines.aux_count} auxiliary samples for the NN attack, "
            f"only {len(pool)} non-members remain outside D_t and D_l"
        )
    rng = np.random.default_rng([cfg.stage_seed("baselines"), 0x11])
    aux = rng.choice(pool, size=cfg.baselines.aux_count, replace=False)
    half = cfg.baselines.aux_count // 2
    aux_members = dataset.subset(aux[:half])
    aux_non = dataset.subset(aux[half:])
    shadow_spec = replace(
        target_spec(cfg, dataset), seed=cfg.stage_seed("baselines") % 2**63
    )
    model = bl.nn_attack_train(
        aux_members,
        aux_non,
        shadow_spec,
        shadow_epochs=cfg.baselines.shadow_epochs,
        shadow_lr=cfg.baselines.shadow_learning_rate,
        seed=cfg.stage_seed("baselines"),
        attack_hidden=cfg.baselines.attack_hidden,
        attack_epochs=cfg.baselines.attack_epochs,
        attack_lr=cfg.baselines.attack_learning_rate,
        target_train_features=split.train.features,
    )
    scores = model.scores(d_t.probs)
    out["nn_attack"] = score_report(
        "nn_attack", scores, d_t.bits, config_hash=chash, seed=cfg.seed
    )
    return out


class _StageTimer:
    def __init__(self):
        self.times: dict[str, float] = {}
        self.current: str | None = None

    def run(self, name, fn, *args, **kwargs):
        self.current = name
        start = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.times[name] = round(time.perf_counter() - start, 3)
        return result


def write_manifest(out_dir: str, cfg: ExperimentConfig, timer: _StageTimer,
                   reports: dict, aborted: str | None = None) -> dict:
    manifest = {
        "config_hash": cfg.config_hash(),
        "version": VERSION,
        "stages": timer.times,
        "reports": sorted(reports.keys()),
        "artifacts": {
            name: ARTIFACTS[name]
            for name in ARTIFACTS
            if os.path.exists(artifact_path(out_dir, name))
        },
    }
    if aborted:
        manifest["aborted_stage"] = aborted
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(
        artifact_path(out_dir, "manifest"),
        json.dumps(manifest, sort_keys=True, indent=2) + "\n",
    )
    return manifest


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None):
    """Execute the full pipeline; returns (reports, manifest).

    Reports map attack name to (AttackReport, RocCurve). Artifacts and
    reports are written under ``out_dir`` (default: the config's output
    dir); rerunning with an identical config reproduces identical
    report bytes.
    """
    cfg.validate()
    out_dir = cfg.output.dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    timer = _StageTimer()
    reports: dict[str, tuple[AttackReport, RocCurve]] = {}
    try:
        dataset = split = net = None
        if cfg.dataset.kind == "synthetic":
            dataset = timer.run("dataset", load_or_gen_dataset, cfg)
            split = timer.run("split", make_split, cfg, dataset)
            net, profile = timer.run("target", run_target_stage, cfg, dataset, split)
            nn.save_network(net, artifact_path(out_dir, "target"))
            atomic_write_text(
                artifact_path(out_dir, "target_profile"),
                json.dumps(profile.to_dict(), sort_keys=True, indent=2) + "\n",
            )
            d_t, d_l = timer.run("dump", make_dumps, net, split)
            write_posterior_dump(d_t, artifact_path(out_dir, "d_t_dump"))
            write_posterior_dump(d_l, artifact_path(out_dir, "d_l_dump"))
            # downstream stages consume the materialized artifacts so a
            # stage rerun from files reproduces this run bit for bit
            d_t = load_posterior_dump(artifact_path(out_dir, "d_t_dump"))
            d_l = load_posterior_dump(artifact_path(out_dir, "d_l_dump"))
            shadows = build_shadows(net, cfg.attack.d1, cfg.attack.d2, cfg.attack.view_mode)
            raw = split.target_set.features
        else:
            d_t, d_l = timer.run("dump", load_dumps, cfg)
            shadows = ShadowPair(None, cfg.attack.d1, cfg.attack.d2, "posterior_dropout")
            raw = None

        pairs = timer.run("attack_data", make_attack_pairs, cfg, d_t, shadows, raw)
        write_feature_dump(
            pairs.reshape(-1, pairs.shape[2]), artifact_path(out_dir, "attack_data")
        )
        rows = load_feature_dump(artifact_path(out_dir, "attack_data"))
        pairs = rows.reshape(-1, 2, rows.shape[1])
        model = timer.run(
            "encoder", train_attack_encoder, cfg, pairs, d_t, shadows, raw
        )
        cl.save_attack_model(model, artifact_path(out_dir, "encoder"))
        model = timer.run("finetune", finetune_attack, cfg, model, d_l)
        cl.save_attack_model(model, artifact_path(out_dir, "model"))
        reports["clmia"] = timer.run("infer", clmia_report, cfg, model, d_t)

        if cfg.ablation.only_fc:
            reports["only_fc"] = timer.run("only_fc", only_fc_report, cfg, d_l, d_t)
        if cfg.baselines.enabled:
            reports.update(
                timer.run("baselines", baseline_reports, cfg, d_t, d_l, dataset, split)
            )

        for report, curve in reports.values():
            write_report(out_dir, report, curve)
        if cfg.output.figures:
            figures.roc_figure(
                {name: curve for name, (_, curve) in sorted(reports.items())},
                os.path.join(out_dir, "figures", "roc.png"),
            )
    except StageError:
        write_manifest(out_dir, cfg, timer, reports, aborted=timer.current)
        raise
    manifest = write_manifest(out_dir, cfg, timer, reports)
    return reports, manifest


def _cell_name(overrides: dict) -> str:
    parts = []
    for key, value in overrides.items():
        if key == "labeled_ratio":
            parts.append(f"r{value[0]}-{value[1]}")
        else:
            parts.append(f"{key.split('.')[-1]}{value:g}" if isinstance(value, float)
                         else f"{key.split('.')[-1]}{value}")
    return "_".join(parts) if parts else "default"


def run_ablation(cfg: ExperimentConfig, out_dir: str | None = None):
    """Cartesian sweep over the enabled grids, one report set per cell.

    The target model (and, for cells that share the same view and
    temperature settings, the trained encoder) is shared across the
    sweep so that only the varied factor changes.
    """
    cfg.validate()
    if not cfg.ablation.enabled:
        raise ConfigError("ablation sweep requested but ablation.enabled is false")
    out_dir = cfg.output.dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    ab = cfg.ablation

    taus = ab.tau_grid or (cfg.attack.tau,)
    d1s = ab.d1_grid or (cfg.attack.d1,)
    d2s = ab.d2_grid or (cfg.attack.d2,)
    sizes = ab.labeled_sizes or (cfg.split.labeled_count,)
    ratios = ab.labeled_ratios or (cfg.split.labeled_ratio,)

    dataset = load_or_gen_dataset(cfg)
    base_split = make_split(cfg, dataset)
    net, _profile = run_target_stage(cfg, dataset, base_split)

    encoder_cache: dict[tuple, cl.AttackModel] = {}
    cells: dict[str, dict[str, AttackReport]] = {}
    sweep_rows = []
    for tau, d1, d2, size, ratio in itertools.product(taus, d1s, d2s, sizes, ratios):
        cell_cfg = cfg.with_overrides(
            attack=replace(cfg.attack, tau=tau, d1=d1, d2=d2),
            split=replace(cfg.split, labeled_count=size, labeled_ratio=ratio),
        )
        split = make_split(cell_cfg, dataset)
        d_t, d_l = make_dumps(net, split)
        enc_key = (tau, d1, d2)
        if enc_key not in encoder_cache:
            shadows = build_shadows(net, d1, d2, cell_cfg.attack.view_mode)
            pairs = make_attack_pairs(cell_cfg, d_t, shadows, split.target_set.features)
            encoder_cache[enc_key] = train_attack_encoder(
                cell_cfg, pairs, d_t, shadows, split.target_set.features
            )
        # fresh head per cell; the cached encoder is never mutated
        base = encoder_cache[enc_key]
        model = cl.AttackModel(base.encoder, base.projection)
        model = finetune_attack(cell_cfg, model, d_l)
        report, curve = clmia_report(cell_cfg, model, d_t)

        name = _cell_name(
            {"tau": tau, "d1": d1, "d2": d2, "n": size, "labeled_ratio": ratio}
        )
        cell_dir = os.path.join(out_dir, "ablation", name)
        write_report(cell_dir, report, curve)
        cell_reports = {"clmia": report}
        if ab.only_fc:
            fc_report, fc_curve = only_fc_report(cell_cfg, d_l, d_t)
            write_report(cell_dir, fc_report, fc_curve)
            cell_reports["only_fc"] = fc_report
        cells[name] = cell_reports
        sweep_rows.append(
            {
                "cell": name,
                "tau": tau,
                "d1": d1,
                "d2": d2,
                "labeled_count": size,
                "labeled_ratio": f"{ratio[0]}:{ratio[1]}",
                "balanced_accuracy": report.balanced_accuracy,
            }
        )

    atomic_write_text(
        os.path.join(out_dir, "ablation", "sweep.json"),
        json.dumps(sweep_rows, sort_keys=True, indent=2) + "\n",
    )
    if cfg.output.figures:
        fig_dir = os.path.join(out_dir, "figures")
        if len(taus) > 1:
            figures.sweep_figure(
                sweep_rows, "tau", "balanced_accuracy",
                os.path.join(fig_dir, "ablation_tau.png"), logx=True,
            )
        if len(sizes) > 1:
            figures.sweep_figure(
                sweep_rows, "labeled_count", "balanced_accuracy",
                os.path.join(fig_dir, "ablation_labeled_size.png"),
                group_key="labeled_ratio",
            )
        if len(d1s) > 1 or len(d2s) > 1:
            figures.sweep_figure(
                sweep_rows, "d1" if len(d1s) > 1 else "d2", "balanced_accuracy",
                os.path.join(fig_dir, "ablation_dropout.png"),
            )
    return cells
