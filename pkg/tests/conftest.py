import numpy as np
import pytest

from sagtwin import workflow
from sagtwin.config import RunConfig
from sagtwin.timeseries import DATASET_IDS, Series

#: small but fully functional run configuration shared by twin/session tests
QUICK_OVERRIDES = {
    "seed": 7701,
    "generation": {"train_steps": 900, "test_steps": 260, "decoy_steps": [40]},
    "narx": {"lags": 4, "epochs": 2500, "plateau_patience": 1200},
    "twin": {"n_e": 60},
    "detector": {"n_e_extra": 30, "calibration_extra_streams": 0},
    "scenarios": {},
}


@pytest.fixture(scope="session")
def quick_run(tmp_path_factory):
    """Tiny end-to-end artifacts: generated data, identified and trained
    models, calibrated detector."""
    outdir = tmp_path_factory.mktemp("quick_run")
    cfg = RunConfig.from_dict({**QUICK_OVERRIDES, "output_dir": str(outdir)})
    workflow.stage_generate(cfg)
    workflow.stage_prepare(cfg)
    workflow.stage_identify(cfg)
    workflow.stage_train(cfg)
    workflow.stage_calibrate(cfg)
    return cfg


@pytest.fixture(scope="session")
def quick_models(quick_run):
    reg, nx, det_cfg = workflow.load_models(quick_run)
    references = workflow.load_references(quick_run.output_dir)
    return {"cfg": quick_run, "reg": reg, "narx": nx, "det_cfg": det_cfg,
            "references": references}


def make_series(values, dt=30.0, start=0.0):
    """Series over the canonical dataset columns from an [T, 8] array."""
    return Series(start_time=start, dt=dt, values=np.asarray(values, dtype=float),
                  ids=DATASET_IDS)


def loop_series(seed=0, T=2000, pole=0.6, dc=1.0, offset=0.0, switch_p=0.02):
    """Synthetic three-loop dataset: each MV tracks its setpoint through a
    known first-order loop; CVs held constant."""
    rng = np.random.default_rng(seed)
    usp = np.zeros((T, 3))
    lvl = np.zeros(3)
    for t in range(T):
        if rng.random() < switch_p:
            lvl = rng.uniform(-1, 1, 3)
        usp[t] = lvl
    u = np.zeros((T, 3))
    for t in range(1, T):
        u[t] = pole * u[t - 1] + dc * (1 - pole) * usp[t]
    vals = np.column_stack([u + offset, usp + offset, np.full((T, 2), 5.0)])
    return make_series(vals), u + offset, usp + offset
