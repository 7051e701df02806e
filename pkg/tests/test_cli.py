import json

import pytest
import yaml

from sagtwin import cli
from sagtwin.config import RunConfig, apply_override, dump_default_config, load_config
from sagtwin.errors import ConfigError

TINY = {
    "seed": 501,
    "generation": {"train_steps": 700, "test_steps": 220, "decoy_steps": [30]},
    "narx": {"lags": 3, "epochs": 1500, "plateau_patience": 800},
    "twin": {"n_e": 50},
    "detector": {"n_e_extra": 20, "calibration_extra_streams": 0},
    "scenarios": {
        "hardness-10pct": {"kind": "ore_hardness", "magnitude": 0.10,
                           "onset_offset": 30, "ramp_steps": 60, "total_steps": 260},
    },
}


class TestConfig:
    def test_defaults_load(self):
        cfg = RunConfig.from_dict()
        assert cfg.narx_hyper.m == 12
        assert cfg.plant.u_nom == (3000.0, 72.0, 9.5)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"plnt": {}})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"plant": {"nose_std": [0.1, 0.1]}})

    def test_dotted_override(self):
        data = {"plant": {"noise_std": [0.2, 0.2]}, "seed": 1}
        merged = {"seed": 1, "plant": {"noise_std": [0.1, 0.1]}}
        apply_override(merged, "plant.noise_std=[0.5, 0.5]")
        assert merged["plant"]["noise_std"] == [0.5, 0.5]
        apply_override(merged, "seed=99")
        assert merged["seed"] == 99
        with pytest.raises(ConfigError):
            apply_override(merged, "no.such.key=1")
        with pytest.raises(ConfigError):
            apply_override(merged, "keyvalue")

    def test_yaml_round_trip(self, tmp_path):
        path = tmp_path / "config.yaml"
        dump_default_config(path)
        cfg = load_config(path, overrides=["seed=4242", "narx.hidden=2"])
        assert cfg.seed == 4242
        assert cfg.narx_hyper.hidden == 2

    def test_yaml_comments_allowed(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("# a comment\nseed: 11  # trailing comment\n")
        assert load_config(path).seed == 11

    def test_scenario_map_replaced_not_merged(self):
        cfg = RunConfig.from_dict({"scenarios": {"only": {
            "kind": "liner_wear", "magnitude": 1.0, "onset_offset": 10,
            "ramp_steps": 20, "total_steps": 50}}})
        assert set(cfg.scenarios) == {"only"}

    def test_bad_scenario_kind(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"scenarios": {"x": {
                "kind": "earthquake", "magnitude": 1, "onset_offset": 1,
                "ramp_steps": 1, "total_steps": 9}}})


class TestCliRuns:
    def test_exit_codes(self, tmp_path):
        # unknown config key -> 2
        bad = tmp_path / "bad.yaml"
        bad.write_text("plnt: {}\n")
        assert cli.main(["generate", "-c", str(bad)]) == 2
        # stage failure (evaluate without artifacts) -> 3
        assert cli.main(["evaluate", "-o", str(tmp_path / "empty")]) == 3

    def test_full_tiny_run(self, tmp_path):
        outdir = tmp_path / "run"
        cfg_path = tmp_path / "tiny.yaml"
        with open(cfg_path, "w") as fh:
            yaml.safe_dump({**TINY, "output_dir": str(outdir)}, fh)
        assert cli.main(["run", "-c", str(cfg_path)]) == 0
        metrics = json.loads((outdir / "metrics.json").read_text())
        assert metrics["pipeline"]["train_len"] == 700
        assert metrics["pipeline"]["test_len"] == 220
        assert "quantiles" in metrics["horizon_errors"]
        assert set(metrics["horizon_errors"]["quantiles"]) == {"1", "2", "3", "4", "5"}
        assert "hardness-10pct" in metrics["scenarios"]
        assert (outdir / "timings.json").exists()

    def test_every_figure_has_csv_sibling(self, tmp_path):
        outdir = tmp_path / "run"
        cfg_path = tmp_path / "tiny.yaml"
        with open(cfg_path, "w") as fh:
            yaml.safe_dump({**TINY, "output_dir": str(outdir)}, fh)
        assert cli.main(["run", "-c", str(cfg_path)]) == 0
        figures = sorted((outdir / "figures").glob("*.svg"))
        assert figures
        csvs = {p.stem.replace("_y1", "").replace("_y2", "").replace("_hist", "")
                for p in (outdir / "figures").glob("*.csv")}
        for fig in figures:
            stem = fig.stem.replace("_y1", "").replace("_y2", "").replace("_hist", "")
            assert stem in csvs, f"figure {fig.name} has no CSV sibling"

    def test_stages_rerunnable(self, tmp_path):
        outdir = tmp_path / "run"
        cfg_path = tmp_path / "tiny.yaml"
        with open(cfg_path, "w") as fh:
            yaml.safe_dump({**TINY, "output_dir": str(outdir)}, fh)
        assert cli.main(["generate", "-c", str(cfg_path)]) == 0
        assert cli.main(["identify", "-c", str(cfg_path)]) == 0
        assert cli.main(["train", "-c", str(cfg_path)]) == 0
        assert cli.main(["calibrate", "-c", str(cfg_path)]) == 0
        assert cli.main(["evaluate", "-c", str(cfg_path)]) == 0
        assert cli.main(["scenario", "hardness-10pct", "-c", str(cfg_path)]) == 0
        assert cli.main(["report", "-c", str(cfg_path)]) == 0
        assert (outdir / "metrics.json").exists()

    def test_unknown_scenario_fails(self, tmp_path):
        outdir = tmp_path / "run"
        cfg_path = tmp_path / "tiny.yaml"
        with open(cfg_path, "w") as fh:
            yaml.safe_dump({**TINY, "output_dir": str(outdir)}, fh)
        assert cli.main(["generate", "-c", str(cfg_path)]) == 0
        assert cli.main(["scenario", "nope", "-c", str(cfg_path)]) == 3
