import dataclasses as dc
import json
import os

import pytest

from miakit import contrastive as cl
from miakit import nn, pipeline
from miakit.config import AblationConfig, BaselinesConfig, DatasetConfig
from miakit.data import load_posterior_dump
from miakit.errors import ConfigError, StageError
from conftest import tiny_config


def report_bytes(out_dir, name):
    with open(pipeline.report_path(out_dir, name), "rb") as fh:
        return fh.read()


class TestRunExperiment:
    def test_everything_off_yields_single_clmia_report(self, tmp_path):
        cfg = tiny_config()
        reports, manifest = pipeline.run_experiment(cfg, str(tmp_path))
        assert set(reports) == {"clmia"}
        assert manifest["reports"] == ["clmia"]

    def test_identical_configs_reproduce_report_bytes(self, tmp_path):
        cfg = tiny_config()
        a, b = tmp_path / "a", tmp_path / "b"
        pipeline.run_experiment(cfg, str(a))
        pipeline.run_experiment(cfg, str(b))
        assert report_bytes(a, "clmia") == report_bytes(b, "clmia")
        # delimited ROC export matches too
        assert (a / "roc" / "clmia_roc.txt").read_bytes() == (
            b / "roc" / "clmia_roc.txt"
        ).read_bytes()

    def test_equal_hash_means_equal_metrics(self, tmp_path):
        cfg = tiny_config()
        ra, _ = pipeline.run_experiment(cfg, str(tmp_path / "a"))
        rb, _ = pipeline.run_experiment(cfg, str(tmp_path / "b"))
        a, b = ra["clmia"][0], rb["clmia"][0]
        assert a.config_hash == b.config_hash
        assert a.balanced_accuracy == b.balanced_accuracy
        assert a.auc == b.auc

    def test_artifacts_written(self, tmp_path):
        cfg = tiny_config(
            baselines=BaselinesConfig(
                enabled=True, shadow_epochs=40, aux_count=60, attack_epochs=20
            ),
            ablation=AblationConfig(only_fc=True),
        )
        reports, manifest = pipeline.run_experiment(cfg, str(tmp_path))
        for name in ("target", "target_profile", "d_t_dump", "d_l_dump",
                     "attack_data", "encoder", "model", "manifest"):
            assert os.path.exists(pipeline.artifact_path(str(tmp_path), name)), name
        assert (tmp_path / "figures" / "roc.png").exists()
        assert {"clmia", "only_fc", "top1", "entropy", "modified_entropy",
                "loss", "correctness", "nn_attack"} == set(reports)
        # stage wall times live in the manifest, not the reports
        assert "stages" in manifest
        assert "wall" not in json.dumps(json.loads(report_bytes(tmp_path, "clmia")))

    def test_stage_error_names_stage_and_leaves_manifest(self, tmp_path):
        cfg = tiny_config()
        cfg = dc.replace(cfg, split=dc.replace(cfg.split, labeled_count=3000))
        with pytest.raises(StageError, match="split"):
            pipeline.run_experiment(cfg, str(tmp_path))
        manifest = json.loads(
            (tmp_path / "manifest.json").read_text()
        )
        assert manifest["aborted_stage"] == "split"

    def test_dump_mode_round_trip(self, tmp_path):
        # produce dumps with one config, re-attack them in dump mode
        src = tmp_path / "src"
        cfg = tiny_config()
        pipeline.run_experiment(cfg, str(src))
        dump_cfg = tiny_config(
            dataset=DatasetConfig(
                kind="dump",
                d_t_dump=str(src / "d_t.dump"),
                d_l_dump=str(src / "d_l.dump"),
            ),
        )
        out = tmp_path / "dump_run"
        reports, _ = pipeline.run_experiment(dump_cfg, str(out))
        assert "clmia" in reports
        assert reports["clmia"][0].balanced_accuracy > 0.0

    def test_dump_mode_rejects_network_views(self, tmp_path):
        src = tmp_path / "src"
        pipeline.run_experiment(tiny_config(), str(src))
        cfg = tiny_config(
            dataset=DatasetConfig(
                kind="dump",
                d_t_dump=str(src / "d_t.dump"),
                d_l_dump=str(src / "d_l.dump"),
            ),
        )
        cfg = dc.replace(cfg, attack=dc.replace(cfg.attack, view_mode="network_dropout"))
        with pytest.raises(ConfigError, match="posterior_dropout"):
            pipeline.run_experiment(cfg, str(tmp_path / "x"))

    def test_dump_mode_skips_nn_attack(self, tmp_path):
        src = tmp_path / "src"
        pipeline.run_experiment(tiny_config(), str(src))
        cfg = tiny_config(
            dataset=DatasetConfig(
                kind="dump",
                d_t_dump=str(src / "d_t.dump"),
                d_l_dump=str(src / "d_l.dump"),
            ),
            baselines=BaselinesConfig(enabled=True),
        )
        reports, _ = pipeline.run_experiment(cfg, str(tmp_path / "out"))
        assert "nn_attack" not in reports
        assert "top1" in reports and "modified_entropy" in reports


class TestStageIsolation:
    def test_downstream_rerun_reproduces_reports(self, tmp_path):
        cfg = tiny_config()
        out = str(tmp_path)
        pipeline.run_experiment(cfg, out)
        original = report_bytes(out, "clmia")

        # rerun fine-tune and inference from the cached encoder and dumps
        model = cl.load_attack_model(pipeline.artifact_path(out, "encoder"))
        d_t = load_posterior_dump(pipeline.artifact_path(out, "d_t_dump"))
        d_l = load_posterior_dump(pipeline.artifact_path(out, "d_l_dump"))
        model = pipeline.finetune_attack(cfg, model, d_l)
        report, curve = pipeline.clmia_report(cfg, model, d_t)
        pipeline.write_report(out, report, curve)
        assert report_bytes(out, "clmia") == original

    def test_cached_encoder_matches_fresh_training(self, tmp_path):
        cfg = tiny_config()
        out = str(tmp_path)
        pipeline.run_experiment(cfg, out)
        cached = cl.load_attack_model(pipeline.artifact_path(out, "encoder"))

        from miakit.features import load_feature_dump

        rows = load_feature_dump(pipeline.artifact_path(out, "attack_data"))
        pairs = rows.reshape(-1, 2, rows.shape[1])
        fresh = pipeline.train_attack_encoder(cfg, pairs)
        assert nn.params_digest(fresh.encoder) == nn.params_digest(cached.encoder)


class TestAblation:
    def test_singleton_grid_is_single_cell(self, tmp_path):
        cfg = tiny_config(
            ablation=AblationConfig(enabled=True, tau_grid=(0.05,), only_fc=False)
        )
        cells = pipeline.run_ablation(cfg, str(tmp_path))
        assert len(cells) == 1

    def test_size_by_ratio_grid_shape(self, tmp_path):
        cfg = tiny_config(
            ablation=AblationConfig(
                enabled=True,
                labeled_sizes=(60, 80),
                labeled_ratios=((1, 1), (1, 2), (1, 3), (2, 3)),
                only_fc=False,
            ),
        )
        cells = pipeline.run_ablation(cfg, str(tmp_path))
        assert len(cells) == 8
        assert (tmp_path / "ablation" / "sweep.json").exists()
        assert (tmp_path / "figures" / "ablation_labeled_size.png").exists()

    def test_only_fc_cells_have_control_report(self, tmp_path):
        cfg = tiny_config(
            ablation=AblationConfig(enabled=True, tau_grid=(0.05, 0.5), only_fc=True)
        )
        cells = pipeline.run_ablation(cfg, str(tmp_path))
        assert len(cells) == 2
        for cell in cells.values():
            assert {"clmia", "only_fc"} <= set(cell)

    def test_disabled_ablation_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            pipeline.run_ablation(tiny_config(), str(tmp_path))

    def test_cell_hashes_differ_from_base(self, tmp_path):
        cfg = tiny_config(
            ablation=AblationConfig(enabled=True, tau_grid=(0.05, 0.5), only_fc=False)
        )
        cells = pipeline.run_ablation(cfg, str(tmp_path))
        hashes = {cell["clmia"].config_hash for cell in cells.values()}
        assert len(hashes) == 2


class TestDeskRun:
    def test_desk_reports_reasonable(self, desk_run):
        reports = desk_run["reports"]
        clmia = reports["clmia"][0]
        assert clmia.balanced_accuracy > 0.5
        assert clmia.auc > 0.5
        assert 0.0 <= clmia.tpr_at_fpr[0.001] <= 1.0

    def test_desk_manifest_lists_all_stages(self, desk_run):
        stages = desk_run["manifest"]["stages"]
        for stage in ("dataset", "split", "target", "encoder", "finetune", "infer"):
            assert stage in stages
