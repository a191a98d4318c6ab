import dataclasses as dc
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from miakit import pipeline
from miakit.config import (
    AblationConfig,
    AttackConfig,
    BaselinesConfig,
    DatasetConfig,
    ExperimentConfig,
    SplitConfig,
    TargetConfig,
)


def tiny_config(seed=5, **overrides) -> ExperimentConfig:
    """Small, fast config used by pipeline and CLI tests (~1 s end to end)."""
    cfg = ExperimentConfig(
        seed=seed,
        dataset=DatasetConfig(n=400, classes=4, dim=8, separation=2.5),
        split=SplitConfig(member_fraction=0.5, target_count=200, labeled_count=80),
        target=TargetConfig(hidden=(32,), epochs=40, learning_rate=0.1),
        attack=AttackConfig(
            batch_pairs=16,
            epochs=15,
            encoder_hidden=(32,),
            embed_dim=16,
            projection_dim=8,
            finetune_epochs=10,
        ),
        baselines=BaselinesConfig(
            enabled=False, shadow_epochs=40, aux_count=60, attack_epochs=20
        ),
        ablation=AblationConfig(only_fc=False),
    )
    return dc.replace(cfg, **overrides) if overrides else cfg


@pytest.fixture(scope="session")
def desk_cfg() -> ExperimentConfig:
    """The pinned desk-scale default configuration (seed 7)."""
    return ExperimentConfig(seed=7)


@pytest.fixture(scope="session")
def desk_run(desk_cfg, tmp_path_factory):
    """One full default-config pipeline run, shared across test modules."""
    out_dir = tmp_path_factory.mktemp("desk_run")
    reports, manifest = pipeline.run_experiment(desk_cfg, str(out_dir))
    return {
        "cfg": desk_cfg,
        "reports": reports,
        "manifest": manifest,
        "out_dir": str(out_dir),
    }
