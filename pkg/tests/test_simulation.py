import json
import os

import pytest

from credential_hub.consensus.simulation import (
    EQUIVOCATE_LEADER,
    RANDOM_VOTES,
    SILENT,
    Scenario,
    expect_unsafe,
    run_simulation,
)
from credential_hub.core.exceptions import ConfigError

SCENARIOS_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios")


def test_fault_free_network_finalizes_every_height():
    report = run_simulation(Scenario(n=4, seed=1, tx_count=10, heights=4))
    assert report.passed
    assert report.heights_finalized == 4
    assert report.max_final_round == 0
    assert report.liveness_per_1000_ticks > 0
    digests = {node["chainDigest"] for node in report.nodes.values()}
    assert len(digests) == 1



def test_unfinished_run_still_passes_when_safe():
    scenario = Scenario(n=4, seed=1, tx_count=10, heights=4, max_ticks=2)
    report = run_simulation(scenario)
    assert report.heights_finalized < 4
    assert report.passed

@pytest.mark.parametrize("seed", range(100))
def test_silent_validator_is_tolerated(seed):
    report = run_simulation(
        Scenario(
            n=4,
            seed=seed,
            byzantine={1: SILENT},
            jitter=2,
            tx_count=5,
            tx_interval=2,
            heights=3,
        )
    )
    assert report.passed
    assert report.heights_finalized == 3
    # v1 ведёт высоту 1: нужна смена раунда
    assert report.max_final_round >= 1
    assert report.nodes["v1"]["height"] == 0


@pytest.mark.parametrize("seed", range(100))
def test_equivocating_leader_never_breaks_safety(seed):
    scenario = Scenario(
        n=4,
        seed=seed,
        byzantine={0: EQUIVOCATE_LEADER},
        jitter=2,
        tx_count=6,
        tx_interval=2,
        heights=5,
    )
    report = run_simulation(scenario)
    assert not report.expect_unsafe
    assert report.safety_violations == 0
    assert report.validity_violations == 0
    assert report.honest_equivocations == 0
    assert report.heights_finalized == 5


@pytest.mark.parametrize("seed", range(100))
@pytest.mark.parametrize(
    "byzantine",
    [
        {1: RANDOM_VOTES, 4: EQUIVOCATE_LEADER},
        {1: SILENT, 4: SILENT},
        {2: SILENT, 5: EQUIVOCATE_LEADER},
    ],
)
def test_seven_validators_with_two_faults(seed, byzantine):
    scenario = Scenario(
        n=7,
        seed=seed,
        byzantine=byzantine,
        default_delay=2,
        jitter=3,
        round_timeout=12,
        tx_count=8,
        heights=5,
    )
    report = run_simulation(scenario)
    assert (report.n, report.f, report.quorum) == (7, 2, 5)
    assert report.passed
    assert report.heights_finalized == 5


def test_same_seed_gives_identical_report(tmp_path):
    scenario = Scenario(
        n=4, seed=42, byzantine={0: EQUIVOCATE_LEADER}, jitter=2, tx_count=10
    )
    first = tmp_path / "first.json"
    second = tmp_path / "second.json"
    run_simulation(scenario, str(first))
    run_simulation(Scenario.from_dict(scenario.to_dict()), str(second))
    assert first.read_bytes() == second.read_bytes()
    report = json.loads(first.read_text(encoding="utf-8"))
    assert report["byzantine"] == {"v0": EQUIVOCATE_LEADER}
    assert report["safetyViolations"] == 0


def test_expect_unsafe_beyond_fault_bound():
    assert not expect_unsafe(4, 1)
    assert expect_unsafe(4, 2)
    assert not expect_unsafe(7, 2)
    assert expect_unsafe(7, 3)


def test_scenario_parsing():
    scenario = Scenario.from_dict(
        {
            "n": 4,
            "seed": 9,
            "byzantine": [{"node": "v0", "behavior": EQUIVOCATE_LEADER}],
            "delays": {"default": 2, "edges": [{"from": "v1", "to": 3, "delay": 5}]},
            "txCount": 3,
        }
    )
    assert scenario.byzantine == {0: EQUIVOCATE_LEADER}
    assert scenario.edge_delays == {(1, 3): 5}
    assert scenario.default_delay == 2


@pytest.mark.parametrize(
    "data",
    [
        {"n": 0},
        {"n": 4, "byzantine": [{"node": "v4", "behavior": SILENT}]},
        {"n": 4, "byzantine": [{"node": "v0", "behavior": "Chaotic"}]},
        {"n": 4, "dropRate": 1.0},
        {"seed": 1},
        [],
    ],
)
def test_bad_scenarios(data):
    with pytest.raises(ConfigError):
        Scenario.from_dict(data)


def test_missing_scenario_file(tmp_path):
    with pytest.raises(ConfigError):
        Scenario.load(str(tmp_path / "absent.json"))


def test_bundled_scenarios_load():
    names = sorted(os.listdir(SCENARIOS_DIR))
    assert "n4-f1-equivocate.json" in names
    for name in names:
        Scenario.load(os.path.join(SCENARIOS_DIR, name))
