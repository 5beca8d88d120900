import csv
import hashlib

import pytest
from conftest import scenario_run

from soar import corpus
from soar.http_ids import TokenFeatureSpec, extract_http_features
from soar.orchestrator import DEFAULT_CATALOG, EventKind, Service, replay
from soar.scenario import (
    PROBE_PORTS, ScriptValidation, bundled_names, load_script, parse_script, race_check, run_scenario,
)

# -- race arithmetic -----------------------------------------------------------------


def test_race_budget_example():
    v = race_check(1.5, 20, 6)
    assert v.label == "WIN" and v.margin == 24.0


def test_race_boundary_is_strict():
    v = race_check(1.5, 4, 6)
    assert v.label == "LOSE" and v.margin == 0.0


def test_zero_latency_always_wins():
    assert all(race_check(1.5, s, 0).win for s in (0.01, 1, 7, 300))


def test_race_rejects_bad_inputs():
    with pytest.raises(ValueError):
        race_check(0, 20, 6)
    with pytest.raises(ValueError):
        race_check(1.5, -1, 6)


# -- script parsing -------------------------------------------------------------------


def test_bundled_scripts_parse():
    assert set(bundled_names()) >= {"ctf_small", "modbus_once", "quiet", "sqli_followup"}
    for name in bundled_names():
        assert load_script(name).duration > 0


@pytest.mark.parametrize("text", [
    "duration 10\nt=1 actor=Z SCAN 10.0.0.1 ports=22",
    "duration 10\nactor A ip=10.0.0.9\nt=1 actor=A LAUNCH_MISSILES 10.0.0.1",
    "duration 10\nactor A ip=10.0.0.9\nt=50 actor=A IDLE 5",
    "duration 10\nactor A ip=999.0.0.9",
    "duration 10\nset warp_factor=9",
    "duration 10\nactor A ip=10.0.0.9\nt=1 actor=A SCAN 10.0.0.1 rate=fast",
])
def test_invalid_scripts_rejected(text):
    with pytest.raises(ScriptValidation):
        parse_script(text)


def test_unknown_bundled_name():
    with pytest.raises(ScriptValidation):
        load_script("no_such_scenario")


# -- bundled scenarios ----------------------------------------------------------------


def _deploys(run, service=None):
    return [e for e in run.events if e.kind is EventKind.DEPLOY
            and (service is None or e.detail["template"] == service)]


def test_single_modbus_probe_deploys_and_reaps_once():
    run = scenario_run("modbus_once")
    rep = run.report()
    assert rep.deployments.get("MODBUS") == 1 and rep.reaps.get("MODBUS") == 1
    [dep] = [e for e in _deploys(run, "MODBUS") if e.detail["reason"] == "probe"]
    [reap] = [e for e in run.events if e.kind is EventKind.REAP
              and e.detail["instance"] == dep.detail["instance"]]
    last = max(e.ts for e in run.events if e.kind is EventKind.TOUCH
               and e.detail.get("instance") == dep.detail["instance"])
    assert reap.ts - max(last, dep.ts) == pytest.approx(900.0, abs=1.0)


def test_sqli_on_first_decoy_deploys_followup_next_door():
    run = scenario_run("sqli_followup")
    [alert] = [e for e in run.events if e.kind is EventKind.ALERT_FOLLOWUP]
    [follow] = _deploys(run, "HTTP_SQLI")
    assert follow.detail["ip"] == "172.26.233.40"
    assert int(follow.ts) == int(alert.ts)
    assert follow.ts >= alert.ts


def test_quiet_scenario_never_deploys():
    run = scenario_run("quiet")
    assert _deploys(run) == []
    assert len(run.packets) > 0


@pytest.mark.parametrize("name", ["ctf_small", "modbus_once", "sqli_followup", "quiet"])
def test_replay_reproduces_final_states(name):
    run = scenario_run(name)
    rebuilt = replay(run.events, run.pool, run.engine.catalog, run.engine.state.idle_timeout)
    assert rebuilt.snapshot() == run.engine.state.snapshot()


@pytest.mark.parametrize("name", ["ctf_small", "modbus_once", "sqli_followup", "quiet"])
def test_reruns_are_byte_identical(name):
    a = run_scenario(load_script(name))
    b = run_scenario(load_script(name))
    assert a.log.text() == b.log.text()
    assert a.capture() == b.capture()
    assert a.report().to_csv() == b.report().to_csv()


def test_different_seed_changes_traffic():
    a = scenario_run("ctf_small")
    b = scenario_run("ctf_small", seed=8)
    assert hashlib.sha256(a.capture()).digest() != hashlib.sha256(b.capture()).digest()


def test_every_race_in_demo_is_won(ctf_dynamic):
    races = ctf_dynamic.report().races
    assert races and all(r.win for r in races)


def test_deployments_bounded_by_probe_bursts(ctf_dynamic):
    script = ctf_dynamic.script
    bursts = {}
    for a in script.actions:
        if a.verb == "SCAN":
            ports = [int(x) for x in a.opt("ports", "22,80").split(",")]
        elif a.verb in PROBE_PORTS:
            ports = [PROBE_PORTS[a.verb]]
        elif a.verb == "PROBE":
            ports = [a.opt("port", None, int)]
        else:
            continue
        for p in ports:
            bursts[p] = bursts.get(p, 0) + 1
    rep = ctf_dynamic.report()
    for t in DEFAULT_CATALOG.base_templates():
        assert rep.deployments.get(t.service.value, 0) <= bursts.get(t.port, 0), t.service
    alerts = [e for e in ctf_dynamic.events if e.kind is EventKind.ALERT_FOLLOWUP]
    for svc in (Service.HTTP_SQLI, Service.HTTP_XSS, Service.HTTP_OSC):
        assert rep.deployments.get(svc.value, 0) <= len(alerts)


def test_static_mode_runs_base_templates_throughout(ctf_static):
    rep = ctf_static.report()
    assert rep.cpu.total == pytest.approx(100.0 * (1 - 6 / len(DEFAULT_CATALOG)))
    assert not [e for e in ctf_static.events if e.kind is EventKind.REAP]


def test_demo_detectors_fire(ctf_dynamic):
    rep = ctf_dynamic.report()
    assert rep.ddos_packets > 0 and rep.botnet_flows > 0 and len(rep.samples) >= 2


# -- corpus generators ------------------------------------------------------------------


@pytest.mark.parametrize("task", corpus.TASKS)
def test_gen_corpus_is_deterministic(tmp_path, task):
    small = {k: 100 for k in corpus.DEFAULT_SIZES[task]}
    a = corpus.gen_corpus(task, 5, tmp_path / "a.csv", small)
    b = corpus.gen_corpus(task, 5, tmp_path / "b.csv", small)
    assert a.read_bytes() == b.read_bytes()


def test_ddos_ratio_is_exact():
    _, labels = corpus.ddos_packets(seed=2, sizes={"normal": 400, "ddos": 200})
    assert labels.count(0) == 400 and labels.count(1) == 200


def test_botnet_counts_are_exact():
    _, labels = corpus.botnet_flows(seed=2, sizes={"normal": 300, "botnet": 150})
    assert labels.count(0) == 300 and labels.count(1) == 150


def test_http_rows_have_class_tokens(tmp_path):
    path = corpus.gen_corpus("httpids", 6, tmp_path / "h.csv", {"benign": 100, "xss": 150, "sqli": 150, "osc": 150})
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 550
    for r in rows:
        if r["label"] != "benign":
            spec = TokenFeatureSpec.default(r["label"].upper())
            assert sum(extract_http_features(r["raw"], spec).counts) >= 1


def test_tiny_sizes_rejected():
    with pytest.raises(corpus.CorpusError):
        corpus.ddos_packets(seed=1, sizes={"normal": 50, "ddos": 200})
    with pytest.raises(corpus.CorpusError):
        corpus.http_rows(seed=1, sizes={"benign": 200})
