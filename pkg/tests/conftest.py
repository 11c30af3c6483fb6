"""Session-scoped benchmark runs shared by the acceptance suite.

The long training runs live here because several acceptance checks read the
same artifacts: the ring benchmark feeds the distance, coverage, cycle,
refinement, ablation, and reproducibility checks, so it trains once per
session instead of once per test.
"""

from pathlib import Path

import pytest

from coopforge.domains import DomainDescriptor
from coopforge.langevin import LangevinConfig
from coopforge.trainer import TrainConfig, train

# 8-mode ring pair. The target is rotated by 0.15 rad and shrunk to 0.6x so
# every source mode has a unique nearest target mode; a rotation of pi/8
# would park each target mode exactly between two source modes and make the
# assignment ambiguous by construction.
RING_BENCH_X = DomainDescriptor(
    "ring", {"n": 2000, "modes": 8, "radius": 1.6, "mode_std": 0.18, "rotation": 0.0, "scale": 1.0}, seed=1
)
RING_BENCH_Y = DomainDescriptor(
    "ring", {"n": 2000, "modes": 8, "radius": 1.6, "mode_std": 0.18, "rotation": 0.15, "scale": 0.6}, seed=2
)

DOT_BENCH_X = DomainDescriptor(
    "moving_dot", {"n_seqs": 40, "length": 12, "side": 16, "appearance": "solid", "motion_style": "bounce"}, seed=11
)
DOT_BENCH_Y = DomainDescriptor(
    "moving_dot", {"n_seqs": 40, "length": 12, "side": 16, "appearance": "hollow", "motion_style": "bounce"}, seed=12
)


def ring_benchmark_config(steps: int = 15) -> TrainConfig:
    """Published point-domain recipe: Adam 2e-4, one pair per step, l=15, delta=0.02."""
    return TrainConfig(
        iterations=5000,
        langevin=LangevinConfig(steps=steps, step_size=0.02, noise_scale=1.0, seed=0),
        eval_every=250,
        checkpoint_every=250,
        eval_samples=200,
    )


def dot_benchmark_config() -> TrainConfig:
    """Sequence recipe: k=2 horizon, cycle anchor on, image-scale Langevin."""
    return TrainConfig(
        iterations=1500,
        langevin=LangevinConfig(steps=5, step_size=0.02, noise_scale=1.0, seed=0),
        eval_every=500,
        checkpoint_every=1500,
        eval_samples=10,
        k=2,
        sequence_cycle=True,
    )


class BenchRun:
    """A finished training run plus everything needed to re-derive its numbers."""

    def __init__(self, state, cfg: TrainConfig, desc_x, desc_y, out_dir: Path, seconds: float):
        self.state = state
        self.cfg = cfg
        self.desc_x = desc_x
        self.desc_y = desc_y
        self.out_dir = Path(out_dir)
        self.seconds = seconds
        self.metrics_path = self.out_dir / "metrics.csv"

    def metrics_rows(self) -> list[str]:
        lines = self.metrics_path.read_text().strip().splitlines()
        return lines[1:]

    def last_row(self) -> dict[str, float]:
        header = self.metrics_path.read_text().splitlines()[0].split(",")
        values = self.metrics_rows()[-1].split(",")
        return dict(zip(header, map(float, values)))

    def checkpoints(self) -> list[Path]:
        paths = [p for p in self.out_dir.iterdir() if p.name.startswith("ckpt_")]
        return sorted(paths, key=lambda p: int(p.name.split("_")[1]))


def _run(cfg, desc_x, desc_y, out_dir) -> BenchRun:
    import time

    t0 = time.perf_counter()
    state, _ = train(cfg, desc_x, desc_y, out_dir)
    return BenchRun(state, cfg, desc_x, desc_y, out_dir, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Scoreboard: the acceptance tests register one summary line apiece and the
# terminal summary prints them after the run, pass or fail.
# ---------------------------------------------------------------------------

SCOREBOARD: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> bool:
    SCOREBOARD[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    return ok


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if SCOREBOARD:
        terminalreporter.section("acceptance scoreboard")
        for number in sorted(SCOREBOARD):
            terminalreporter.write_line(SCOREBOARD[number])


@pytest.fixture(scope="session")
def ring_run(tmp_path_factory) -> BenchRun:
    """The full ring benchmark, trained once per session."""
    out = tmp_path_factory.mktemp("ring_run")
    return _run(ring_benchmark_config(), RING_BENCH_X, RING_BENCH_Y, out)


@pytest.fixture(scope="session")
def ring_run_repeat(tmp_path_factory) -> BenchRun:
    """Second run of the identical ring benchmark, for reproducibility checks."""
    out = tmp_path_factory.mktemp("ring_run_repeat")
    return _run(ring_benchmark_config(), RING_BENCH_X, RING_BENCH_Y, out)


@pytest.fixture(scope="session")
def ring_run_l1(tmp_path_factory) -> BenchRun:
    """Ring benchmark with a single Langevin step, for the ablation check."""
    out = tmp_path_factory.mktemp("ring_run_l1")
    return _run(ring_benchmark_config(steps=1), RING_BENCH_X, RING_BENCH_Y, out)


@pytest.fixture(scope="session")
def dot_run(tmp_path_factory) -> BenchRun:
    """The moving-dot sequence benchmark, trained once per session."""
    out = tmp_path_factory.mktemp("dot_run")
    return _run(dot_benchmark_config(), DOT_BENCH_X, DOT_BENCH_Y, out)
