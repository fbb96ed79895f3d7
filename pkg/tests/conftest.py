"""Shared fixtures: one calibrated corpus and one step scenario for the suite.

The heavy artifacts (60-scan calibration sweep, fitted rate model, the two
240 s scenario runs) are session-scoped and timed, so the acceptance tests
can charge each criterion with the real cost of producing what it checks.
"""

from __future__ import annotations

import time

import pytest
from hypothesis import HealthCheck, settings

from scanstream.pipeline import run_scenario
from scanstream.predictor import fit, save_model
from scanstream.residual_opt import calibrate_detailed, min_rate, write_table
from scanstream.scangen import SensorProfile, generate_corpus
from scanstream.scenario import load_scenario

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

# Desk-scale sensor: small enough that a full grid sweep over 60 scans and
# two 240 s closed-loop runs stay inside the per-criterion time budgets.
PROFILE = SensorProfile(rings=16, azimuth_steps=448)
CORPUS_SEED = 1234  # calibration environments
SCENE_SEED = 7  # evaluation environment, deliberately disjoint
SCAN_HZ = 10.0
EPSILON = 0.05
R_MAX_BPS = 10.0e6

# fixture name -> wall seconds spent building it, for honest budget accounting
FIXTURE_WALL: dict[str, float] = {}
# every closed-loop RunResult the suite produces, for the conservation check
RUN_REGISTRY: list = []

STEP_SCENARIO_TEMPLATE = """\
version: 1
scan_source:
  profile: {{rings: {rings}, azimuth_steps: {azimuth}}}
  seed: {scene_seed}
  velocity: [1.0, 0.3]
scan_hz: {scan_hz}
duration: 240.0
mode: adaptive
model: model.json
transport:
  sender_queue_cap: 160
link:
  trace: [[0.0, 10.0e6], [60.0, 3.0e6], [180.0, 10.0e6]]
  prop_delay: 0.020
  queue_limit: 250000
  ce_threshold: 0.005
rate_bounds:
  r_min_bps: {r_min!r}
  r_max_bps: 10.0e6
  floor_q: {floor_q}
  epsilon: {epsilon}
baseline:
  q: 16
  c: 0
  pacing_bps: 3.2e6
"""


def _timed(name: str, builder):
    t0 = time.perf_counter()
    value = builder()
    FIXTURE_WALL[name] = time.perf_counter() - t0
    return value


@pytest.fixture(scope="session")
def corpus60():
    return _timed(
        "corpus60",
        lambda: generate_corpus(PROFILE, seed=CORPUS_SEED, n_scans=60, scan_hz=SCAN_HZ),
    )


@pytest.fixture(scope="session")
def calibration(corpus60):
    return _timed("calibration", lambda: calibrate_detailed(corpus60, scan_hz=SCAN_HZ))


@pytest.fixture(scope="session")
def table(calibration):
    return calibration[0]


@pytest.fixture(scope="session")
def samples(calibration):
    return calibration[1]


@pytest.fixture(scope="session")
def model(samples):
    return _timed("model", lambda: fit(samples, SCAN_HZ))


@pytest.fixture(scope="session")
def bounds(table):
    return _timed("bounds", lambda: min_rate(table, EPSILON, R_MAX_BPS, "mean_ptp"))


@pytest.fixture(scope="session")
def art_dir(tmp_path_factory, model, table, bounds):
    """Directory holding model.json, table.csv, and the step scenario."""
    path = tmp_path_factory.mktemp("artifacts")
    save_model(model, path / "model.json")
    write_table(path / "table.csv", table)
    (path / "step.yaml").write_text(
        STEP_SCENARIO_TEMPLATE.format(
            rings=PROFILE.rings,
            azimuth=PROFILE.azimuth_steps,
            scene_seed=SCENE_SEED,
            scan_hz=SCAN_HZ,
            r_min=bounds.r_min_bps,
            floor_q=bounds.floor.min_q,
            epsilon=EPSILON,
        )
    )
    return path


@pytest.fixture(scope="session")
def step_scenario_path(art_dir):
    return art_dir / "step.yaml"


@pytest.fixture(scope="session")
def adaptive_run(step_scenario_path, model):
    scenario = load_scenario(step_scenario_path)
    result = _timed("adaptive_run", lambda: run_scenario(scenario, model=model))
    RUN_REGISTRY.append(("step-adaptive", result))
    return result


@pytest.fixture(scope="session")
def baseline_run(step_scenario_path):
    scenario = load_scenario(step_scenario_path)
    scenario.mode = "baseline"
    result = _timed("baseline_run", lambda: run_scenario(scenario))
    RUN_REGISTRY.append(("step-baseline", result))
    return result


# ------------------------------------------------------- acceptance report

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
