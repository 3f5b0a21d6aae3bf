import pytest

from enclavefm.adversary import (
    DEFENSE_FOR,
    AttackKind,
    AttackReport,
    AttackScenario,
    Fixture,
    SuiteReport,
    containment_hits,
    run_attack,
    windows,
)
from enclavefm.defenses import ALL_ON, Defenses


def test_windows_and_hits():
    secret = bytes(range(40))
    assert len(windows(secret)) == 40 - 16 + 1
    assert containment_hits(b"xx" + secret[5:21] + b"yy", secret) == 1
    assert containment_hits(b"xx" + secret[5:20] + b"yy", secret) == 0
    assert containment_hits(b"abcabc", b"abc") == 2


def test_every_scenario_has_a_defense():
    assert set(DEFENSE_FOR) == set(AttackKind)
    assert set(DEFENSE_FOR.values()) == set(Defenses.__dataclass_fields__)


def test_defenses_without():
    d = ALL_ON.without("memory_integrity")
    assert not d.memory_integrity and d.memory_encryption
    with pytest.raises(KeyError):
        ALL_ON.without("nonsense")


def test_scenario_rejects_unknown_params():
    with pytest.raises(ValueError):
        AttackScenario(AttackKind.TAMPER_MEMORY, {"nope": 1})


@pytest.mark.parametrize("kind", list(AttackKind))
def test_blocked_with_defenses_on(kind):
    report = run_attack(AttackScenario(kind), health_check=False)
    assert report.blocked, report.evidence
    assert report.disabled_defenses == ()


@pytest.mark.parametrize("kind", list(AttackKind))
def test_not_blocked_with_its_defense_off(kind):
    fixture = Fixture(ALL_ON.without(DEFENSE_FOR[kind]))
    report = run_attack(AttackScenario(kind), fixture)
    assert not report.blocked, report.evidence
    assert report.disabled_defenses == (DEFENSE_FOR[kind],)


def test_tamper_memory_evidence():
    report = run_attack("TAMPER_MEMORY", health_check=False)
    assert report.evidence["outcome"] == "SERVICE_CRASHED"
    assert report.evidence["enclave_crashed"] and report.evidence["next_session"] == "SERVICE_CRASHED"


def test_eavesdrop_network_multiple_sessions():
    report = run_attack(AttackScenario(AttackKind.EAVESDROP_NETWORK, {"sessions": 4, "seed": 9}), health_check=False)
    assert report.blocked and report.evidence["sessions"] == 4 and report.evidence["captured_bytes"] > 0


def test_report_json_roundtrip():
    report = run_attack("CSP_SWAP_SOFTWARE", health_check=False)
    assert AttackReport.from_json(report.to_json()) == report
    suite = SuiteReport((report,))
    lines = suite.to_jsonl().splitlines()
    assert '"type": "header"' in lines[0] and '"passed": true' in lines[-1]


def test_scenarios_over_tcp():
    report = run_attack("CSP_SWAP_MODEL", Fixture(transport="tcp"))
    assert report.blocked and report.evidence["step"] == 7
