"""Experiment configuration: flat INI-style sections with # comments.

One master seed in [run] fans out to per-stage seeds through a fixed
counter table (see ``stage_seed``), so any stage can rerun on its own
and still reproduce the full-pipeline result bit for bit. The config
hash covers every section that can affect metric values; the [output]
section is excluded.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .contrastive import ContrastiveConfig
from .data import parse_ratio
from .errors import ConfigError
from .target import VIEW_MODES

# Counter-based seed derivation: stage seed = first output of
# SeedSequence([master_seed, counter]).
STAGE_COUNTERS = {
    "dataset": 1,
    "split": 2,
    "target": 3,
    "views": 4,
    "encoder": 5,
    "finetune": 6,
    "baselines": 7,
    "only_fc": 8,
}


def stage_seed(master_seed: int, stage: str) -> int:
    if stage not in STAGE_COUNTERS:
        raise ConfigError(f"unknown stage {stage!r}")
    seq = np.random.SeedSequence([master_seed, STAGE_COUNTERS[stage]])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    n: int = 2000
    classes: int = 10
    dim: int = 32
    separation: float = 3.0
    d_t_dump: str = ""
    d_l_dump: str = ""

    def validate(self):
        if self.kind not in ("synthetic", "dump"):
            raise ConfigError("dataset.kind must be 'synthetic' or 'dump'")
        if self.kind == "dump" and (not self.d_t_dump or not self.d_l_dump):
            raise ConfigError("dump datasets need dataset.d_t_dump and dataset.d_l_dump")
        if self.kind == "synthetic" and self.n < self.classes:
            raise ConfigError("dataset.n must be at least dataset.classes")


@dataclass(frozen=True)
class SplitConfig:
    member_fraction: float = 0.5
    target_count: int = 800
    labeled_count: int = 200
    labeled_ratio: tuple[int, int] = (1, 1)

    def validate(self):
        if not 0.0 < self.member_fraction < 1.0:
            raise ConfigError("split.member_fraction must lie in (0, 1)")
        if self.target_count % 2 != 0 or self.target_count < 2:
            raise ConfigError("split.target_count must be a positive even number")
        if self.labeled_count < 2:
            raise ConfigError("split.labeled_count must be at least 2")


@dataclass(frozen=True)
class TargetConfig:
    hidden: tuple[int, ...] = (128, 64)
    activation: str = "relu"
    epochs: int = 300
    learning_rate: float = 0.1
    batch_size: int = 32

    def validate(self):
        if not self.hidden:
            raise ConfigError("target.hidden needs at least one layer size")
        if self.epochs < 0:
            raise ConfigError("target.epochs must be non-negative")


@dataclass(frozen=True)
class AttackConfig:
    tau: float = 0.05
    batch_pairs: int = 64
    epochs: int = 150
    learning_rate: float = 0.05
    d1: float = 0.1
    d2: float = 0.1
    view_mode: str = "posterior_dropout"
    features_after_dropout: bool = False
    encoder_hidden: tuple[int, ...] = (128,)
    embed_dim: int = 64
    projection_dim: int = 32
    grad_reduction: str = "mean"
    symmetric: bool = True
    fresh_views: bool = False
    normalize_features: bool = False
    finetune_epochs: int = 40
    finetune_learning_rate: float = 0.1
    finetune_batch_size: int = 32

    def validate(self):
        if self.view_mode not in VIEW_MODES:
            raise ConfigError(f"attack.view_mode must be one of {VIEW_MODES}")
        if self.tau <= 0:
            raise ConfigError("attack.tau must be positive")

    def contrastive(self, seed: int) -> ContrastiveConfig:
        return ContrastiveConfig(
            tau=self.tau,
            batch_pairs=self.batch_pairs,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            d1=self.d1,
            d2=self.d2,
            view_mode=self.view_mode,
            features_after_dropout=self.features_after_dropout,
            seed=seed,
            encoder_hidden=self.encoder_hidden,
            embed_dim=self.embed_dim,
            projection_dim=self.projection_dim,
            grad_reduction=self.grad_reduction,
            symmetric=self.symmetric,
            fresh_views=self.fresh_views,
            normalize_features=self.normalize_features,
        )


@dataclass(frozen=True)
class BaselinesConfig:
    enabled: bool = True
    shadow_epochs: int = 300
    shadow_learning_rate: float = 0.1
    aux_count: int = 400
    attack_hidden: tuple[int, ...] = (32,)
    attack_epochs: int = 80
    attack_learning_rate: float = 0.1

    def validate(self):
        if self.aux_count < 4:
            raise ConfigError("baselines.aux_count must be at least 4")


@dataclass(frozen=True)
class AblationConfig:
    enabled: bool = False
    tau_grid: tuple[float, ...] = ()
    d1_grid: tuple[float, ...] = ()
    d2_grid: tuple[float, ...] = ()
    labeled_sizes: tuple[int, ...] = ()
    labeled_ratios: tuple[tuple[int, int], ...] = ()
    only_fc: bool = True

    def validate(self):
        grids = (self.tau_grid, self.d1_grid, self.d2_grid,
                 self.labeled_sizes, self.labeled_ratios)
        if self.enabled and not any(grids) and not self.only_fc:
            raise ConfigError("ablation enabled but every grid is empty")


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    figures: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 7
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    baselines: BaselinesConfig = field(default_factory=BaselinesConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> "ExperimentConfig":
        for block in (self.dataset, self.split, self.target,
                      self.attack, self.baselines, self.ablation):
            block.validate()
        if self.dataset.kind == "dump" and self.attack.view_mode == "network_dropout":
            raise ConfigError(
                "dump-based runs support posterior_dropout views only "
                "(network views need the target weights)"
            )
        return self

    def hashed_dict(self) -> dict:
        d = asdict(self)
        d.pop("output")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.hashed_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def stage_seed(self, stage: str) -> int:
        return stage_seed(self.seed, stage)

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)


def _typed(section, key, cast, default):
    raw = section.get(key)
    if raw is None or raw.strip() == "":
        return default
    try:
        return cast(raw.strip())
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"[{section.name}] {key} = {raw!r}: {exc}") from exc


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ratio_tuple(text: str) -> tuple[tuple[int, int], ...]:
    return tuple(parse_ratio(v.strip()) for v in text.split(",") if v.strip())


def load_config(path) -> ExperimentConfig:
    """Parse a config file; every seed must be explicit in the file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")
    known = {"run", "dataset", "split", "target", "attack",
             "baselines", "ablation", "output"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")

    def section(name):
        if parser.has_section(name):
            return parser[name]
        parser.add_section(name)
        return parser[name]

    run = section("run")
    if run.get("seed") is None:
        raise ConfigError(f"{path}: [run] seed is required; no wall-clock defaults")
    seed = _typed(run, "seed", int, None)

    ds = section("dataset")
    dataset = DatasetConfig(
        kind=_typed(ds, "kind", str, "synthetic"),
        n=_typed(ds, "n", int, 2000),
        classes=_typed(ds, "classes", int, 10),
        dim=_typed(ds, "dim", int, 32),
        separation=_typed(ds, "separation", float, 3.0),
        d_t_dump=_typed(ds, "d_t_dump", str, ""),
        d_l_dump=_typed(ds, "d_l_dump", str, ""),
    )
    sp = section("split")
    split = SplitConfig(
        member_fraction=_typed(sp, "member_fraction", float, 0.5),
        target_count=_typed(sp, "target_count", int, 800),
        labeled_count=_typed(sp, "labeled_count", int, 200),
        labeled_ratio=_typed(sp, "labeled_ratio", parse_ratio, (1, 1)),
    )
    tg = section("target")
    target = TargetConfig(
        hidden=_typed(tg, "hidden", _int_tuple, (128, 64)),
        activation=_typed(tg, "activation", str, "relu"),
        epochs=_typed(tg, "epochs", int, 300),
        learning_rate=_typed(tg, "learning_rate", float, 0.1),
        batch_size=_typed(tg, "batch_size", int, 32),
    )
    at = section("attack")
    attack = AttackConfig(
        tau=_typed(at, "tau", float, 0.05),
        batch_pairs=_typed(at, "batch_pairs", int, 64),
        epochs=_typed(at, "epochs", int, 150),
        learning_rate=_typed(at, "learning_rate", float, 0.05),
        d1=_typed(at, "d1", float, 0.1),
        d2=_typed(at, "d2", float, 0.1),
        view_mode=_typed(at, "view_mode", str, "posterior_dropout"),
        features_after_dropout=_typed(at, "features_after_dropout", _bool, False),
        encoder_hidden=_typed(at, "encoder_hidden", _int_tuple, (128,)),
        embed_dim=_typed(at, "embed_dim", int, 64),
        projection_dim=_typed(at, "projection_dim", int, 32),
        grad_reduction=_typed(at, "grad_reduction", str, "mean"),
        symmetric=_typed(at, "symmetric", _bool, True),
        fresh_views=_typed(at, "fresh_views", _bool, False),
        normalize_features=_typed(at, "normalize_features", _bool, False),
        finetune_epochs=_typed(at, "finetune_epochs", int, 40),
        finetune_learning_rate=_typed(at, "finetune_learning_rate", float, 0.1),
        finetune_batch_size=_typed(at, "finetune_batch_size", int, 32),
    )
    bl = section("baselines")
    baselines = BaselinesConfig(
        enabled=_typed(bl, "enabled", _bool, True),
        shadow_epochs=_typed(bl, "shadow_epochs", int, 300),
        shadow_learning_rate=_typed(bl, "shadow_learning_rate", float, 0.1),
        aux_count=_typed(bl, "aux_count", int, 400),
        attack_hidden=_typed(bl, "attack_hidden", _int_tuple, (32,)),
        attack_epochs=_typed(bl, "attack_epochs", int, 80),
        attack_learning_rate=_typed(bl, "attack_learning_rate", float, 0.1),
    )
    ab = section("ablation")
    ablation = AblationConfig(
        enabled=_typed(ab, "enabled", _bool, False),
        tau_grid=_typed(ab, "tau_grid", _float_tuple, ()),
        d1_grid=_typed(ab, "d1_grid", _float_tuple, ()),
        d2_grid=_typed(ab, "d2_grid", _float_tuple, ()),
        labeled_sizes=_typed(ab, "labeled_sizes", _int_tuple, ()),
        labeled_ratios=_typed(ab, "labeled_ratios", _ratio_tuple, ()),
        only_fc=_typed(ab, "only_fc", _bool, True),
    )
    out = section("output")
    output = OutputConfig(
        dir=_typed(out, "dir", str, "out"),
        figures=_typed(out, "figures", _bool, True),
    )
    cfg = ExperimentConfig(
        seed=seed,
        dataset=dataset,
        split=split,
        target=target,
        attack=attack,
        baselines=baselines,
        ablation=ablation,
        output=output,
    )
    return cfg.validate()


def write_default_config(path) -> None:
    """Emit a fully commented default config, used by ``miakit init``."""
    cfg = ExperimentConfig()
    text = f"""\
# miakit experiment configuration.
# Flat key = value sections; everything shown here is the default.
# Comments start with '#'. All randomness flows from [run] seed.

[run]
seed = {cfg.seed}

[dataset]
kind = synthetic          # synthetic | dump
n = {cfg.dataset.n}
classes = {cfg.dataset.classes}
dim = {cfg.dataset.dim}
separation = {cfg.dataset.separation}
# d_t_dump = path/to/d_t.dump   # dump mode: inference-set posteriors
# d_l_dump = path/to/d_l.dump   # dump mode: labeled-set posteriors

[split]
member_fraction = {cfg.split.member_fraction}
target_count = {cfg.split.target_count}
labeled_count = {cfg.split.labeled_count}
labeled_ratio = 1:1       # members:non-members inside the labeled set

[target]
hidden = 128,64
activation = relu
epochs = {cfg.target.epochs}
learning_rate = {cfg.target.learning_rate}
batch_size = {cfg.target.batch_size}

[attack]
tau = {cfg.attack.tau}
batch_pairs = {cfg.attack.batch_pairs}
epochs = {cfg.attack.epochs}
learning_rate = {cfg.attack.learning_rate}
d1 = {cfg.attack.d1}
d2 = {cfg.attack.d2}
view_mode = posterior_dropout   # posterior_dropout | network_dropout
features_after_dropout = false
encoder_hidden = 128
embed_dim = {cfg.attack.embed_dim}
projection_dim = {cfg.attack.projection_dim}
grad_reduction = mean     # mean | sum over the batch
symmetric = true          # anchor both views of every pair
fresh_views = false       # regenerate augmentations each epoch
normalize_features = false  # L2-normalize encoder inputs
finetune_epochs = {cfg.attack.finetune_epochs}
finetune_learning_rate = {cfg.attack.finetune_learning_rate}
finetune_batch_size = {cfg.attack.finetune_batch_size}

[baselines]
enabled = true
shadow_epochs = {cfg.baselines.shadow_epochs}
shadow_learning_rate = {cfg.baselines.shadow_learning_rate}
aux_count = {cfg.baselines.aux_count}
attack_hidden = 32
attack_epochs = {cfg.baselines.attack_epochs}
attack_learning_rate = {cfg.baselines.attack_learning_rate}

[ablation]
enabled = false
tau_grid =                # e.g. 0.01,0.05,0.1,0.5,1.0
d1_grid =
d2_grid =
labeled_sizes =           # e.g. 200,400,600,800
labeled_ratios =          # e.g. 1:1,1:2,1:3,2:3
only_fc = true            # emit the head-only control per cell

[output]
dir = out
figures = true
"""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(text)
