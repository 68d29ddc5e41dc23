import shutil
import subprocess
from pathlib import Path

import pytest
import yaml


def run_uhs(*argv) -> subprocess.CompletedProcess:
    """Invoke the benchmark CLI as an external tool (interface boundary)."""
    exe = shutil.which("uhs")
    if exe is None:
        pytest.skip("primary `uhs` CLI not installed")
    return subprocess.run([exe, *map(str, argv)], capture_output=True, text=True)


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory) -> Path:
    """A small benchmark-produced dataset: 12 sims, 16x16 training grids."""
    tmp = tmp_path_factory.mktemp("uhsd_fixture")
    cfg = {
        "workdir": str(tmp / "run"),
        "n_sims": 12,
        "grid": {"nx": 32, "ny": 32, "dx": 240.0, "dy": 240.0, "thickness": 100.0},
        "schedule": {"n_cycles": 1, "inject_rate": 15.0},
        "dataset": {"downsample_factor": 2},
    }
    cfg_path = tmp / "cfg.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    for cmd in ("gen", "simulate", "dataset"):
        proc = run_uhs(cmd, "--config", cfg_path)
        assert proc.returncode == 0, proc.stderr
    return tmp / "run" / "dataset.uhsd"
