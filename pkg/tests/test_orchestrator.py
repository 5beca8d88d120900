import itertools
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import select_ips_oracle

from soar.orchestrator import (
    DEFAULT_CATALOG, EXAMPLE_POOL, DstNotInPool, EngineState, EventKind, HoneypotTemplate, Interaction,
    ReservedIpPool, Service, State, apply_event, mark_ready, on_ids_alert, on_packet, reap_idle, replay,
    select_ips,
)
from soar.packets import Packet, Proto

P = EXAMPLE_POOL.ips
IP4, IP40, IP85, IP125, IP185, IP220, IP250 = P


def pkt(ts, dst, port, src="10.0.0.9"):
    return Packet(ts, "02:00:00:00:00:09", "02:00:00:00:00:01", src, dst, Proto.TCP, 40000, port, 54)


def activate_all(state, events, ts):
    for ev in events:
        if ev.kind is EventKind.DEPLOY:
            mark_ready(ev.detail["instance"], ts, state)


# -- select_ips ----------------------------------------------------------------


def test_select_first_address_takes_from_front():
    assert select_ips(IP4, 2, EXAMPLE_POOL, set()) == [IP40, IP85]


def test_select_other_address_takes_from_back():
    assert select_ips(IP85, 2, EXAMPLE_POOL, {IP250}) == [IP185, IP220]


@pytest.mark.parametrize("dst", P)
def test_select_zero_request(dst):
    assert select_ips(dst, 0, EXAMPLE_POOL, set()) == []


def test_select_rejects_foreign_dst():
    with pytest.raises(DstNotInPool):
        select_ips("172.26.233.5", 1, EXAMPLE_POOL, set())


def test_select_short_list_returns_everything_left():
    occupied = {IP40, IP85, IP125, IP185}
    assert select_ips(IP220, 5, EXAMPLE_POOL, occupied) == [IP4, IP250]


def test_select_matches_oracle_exhaustively():
    start = time.perf_counter()
    cases = 0
    for size in range(2, 8):
        pool = ReservedIpPool.evenly_spaced("10.1.0.10", 20, size)
        for mask in range(1 << size):
            occupied = {ip for k, ip in enumerate(pool.ips) if mask >> k & 1}
            for dst in pool.ips:
                for n in range(8):
                    assert select_ips(dst, n, pool, occupied) == select_ips_oracle(dst, n, pool.ips, occupied)
                    cases += 1
    assert cases == sum(s * (1 << s) * 8 for s in range(2, 8))
    assert time.perf_counter() - start < 5.0


@given(st.data())
def test_select_never_returns_dst_or_occupied(data):
    size = data.draw(st.integers(2, 16))
    pool = ReservedIpPool.evenly_spaced("10.2.0.1", data.draw(st.integers(1, 15)), size)
    occupied = set(data.draw(st.lists(st.sampled_from(pool.ips), unique=True)))
    dst = data.draw(st.sampled_from(pool.ips))
    n = data.draw(st.integers(0, 20))
    out = select_ips(dst, n, pool, occupied)
    assert dst not in out and not occupied & set(out)
    assert len(out) == min(n, len(set(pool.ips) - occupied - {dst}))
    assert out == sorted(out, key=pool.index)


# -- pool and catalog ------------------------------------------------------------


def test_pool_validation():
    with pytest.raises(ValueError):
        ReservedIpPool(("10.0.0.1",))
    with pytest.raises(ValueError):
        ReservedIpPool(("10.0.0.5", "10.0.0.1"))
    with pytest.raises(ValueError):
        ReservedIpPool(("10.0.0.1", "10.0.0.3", "10.0.0.4"), spacing=2)
    with pytest.raises(ValueError):
        ReservedIpPool.evenly_spaced("10.0.0.1", 1, 17)
    with pytest.raises(ValueError):
        ReservedIpPool.evenly_spaced("10.0.0.250", 20, 3, "10.0.0.0/24")
    with pytest.raises(ValueError):
        EXAMPLE_POOL.check_dhcp("172.26.233.100", "172.26.233.130")
    EXAMPLE_POOL.check_dhcp("172.26.233.130", "172.26.233.180")


def test_pool_defaults():
    pool = ReservedIpPool.evenly_spaced("172.26.233.4")
    assert len(pool) == 7 and pool.spacing == 20
    assert pool.ips[-1] == "172.26.233.124"


def test_template_port_range():
    with pytest.raises(ValueError):
        HoneypotTemplate(Service.SSH, 0, "x")
    with pytest.raises(ValueError):
        HoneypotTemplate(Service.SSH, 70000, "x")


def test_catalog_default_contents():
    assert len(DEFAULT_CATALOG) == 9
    assert {t.service for t in DEFAULT_CATALOG.base_templates()} == {
        Service.HTTP_WEB, Service.HTTP_APP, Service.DB, Service.SSH, Service.SMTP, Service.MODBUS}
    assert DEFAULT_CATALOG.for_port(22).service is Service.SSH
    assert DEFAULT_CATALOG.for_port(80).service is Service.HTTP_WEB
    assert DEFAULT_CATALOG.follow_up("SQLI").service is Service.HTTP_SQLI
    assert DEFAULT_CATALOG["SSH"].interaction is Interaction.MEDIUM


# -- on_packet -------------------------------------------------------------------


def test_probe_deploys_at_probed_and_next_address():
    state = EngineState(EXAMPLE_POOL)
    events = on_packet(pkt(1.0, IP4, 80), state)
    assert [(e.kind, e.detail["template"], e.detail["ip"]) for e in events] == [
        (EventKind.DEPLOY, "HTTP_WEB", IP4), (EventKind.DEPLOY, "HTTP_WEB", IP40)]
    assert events[0].detail["decision"] == events[1].detail["decision"] == 1


def test_active_instance_is_touched():
    state = EngineState(EXAMPLE_POOL)
    activate_all(state, on_packet(pkt(1.0, IP4, 80), state), 1.0)
    events = on_packet(pkt(5.0, IP40, 80), state)
    assert [e.kind for e in events] == [EventKind.TOUCH]
    assert state.live_at(IP40).last_activity == 5.0


def test_unknown_port_only_notifies():
    state = EngineState(EXAMPLE_POOL)
    events = on_packet(pkt(1.0, IP4, 9999), state)
    assert [(e.kind, e.detail["reason"]) for e in events] == [(EventKind.NOTIFY, "unknown-port-probe")]
    assert not state.instances


def test_running_template_elsewhere_is_touched_not_redeployed():
    state = EngineState(EXAMPLE_POOL)
    activate_all(state, on_packet(pkt(1.0, IP4, 22), state), 1.0)
    events = on_packet(pkt(2.0, IP125, 22), state)
    assert [e.kind for e in events] == [EventKind.TOUCH]
    assert events[0].detail["direct"] is False


def test_deploy_ahead_off_deploys_only_at_probe():
    state = EngineState(EXAMPLE_POOL, deploy_ahead=False)
    events = on_packet(pkt(1.0, IP85, 25), state)
    assert [e.detail["ip"] for e in events] == [IP85]


def _filled(n_variants):
    """Five base decoys on the first five addresses plus ``n_variants`` follow-up decoys after them."""
    state = EngineState(EXAMPLE_POOL, deploy_ahead=False)
    for k, port in enumerate([22, 25, 80, 502, 3306]):
        activate_all(state, on_packet(pkt(k, P[k], port), state), k)
    for k, service in enumerate(["HTTP_SQLI", "HTTP_XSS"][:n_variants]):
        iid = state.new_id()
        apply_event(state, state.event(5.0, EventKind.DEPLOY, [iid], instance=iid, template=service, ip=P[5 + k]))
    state.deploy_ahead = True
    return state


def test_exhausted_pool_still_answers_at_probed_address():
    state = _filled(1)
    events = on_packet(pkt(10.0, IP250, 8080), state)
    assert [(e.kind, e.detail.get("reason")) for e in events] == [
        (EventKind.DEPLOY, "probe"), (EventKind.NOTIFY, "pool-exhausted")]


def test_exhausted_pool_with_occupied_probe_only_notifies():
    state = _filled(2)
    events = on_packet(pkt(10.0, IP4, 8080), state)
    assert [(e.kind, e.detail.get("reason")) for e in events] == [(EventKind.NOTIFY, "pool-exhausted")]


def test_no_reserved_traffic_means_no_deployments():
    state = EngineState(EXAMPLE_POOL)
    with pytest.raises(DstNotInPool):
        on_packet(pkt(1.0, "172.26.233.5", 80), state)
    assert not state.instances


# -- reaping ---------------------------------------------------------------------


def _idle_state(*last):
    state = EngineState(EXAMPLE_POOL, deploy_ahead=False)
    for k, t in enumerate(last):
        activate_all(state, on_packet(pkt(t, P[k], [22, 25, 80][k]), state), t)
    return state


def test_reap_at_exact_timeout():
    state = _idle_state(100.0)
    events = reap_idle(1000.0, state)
    assert [e.kind for e in events] == [EventKind.REAP]
    assert state.instances["hp0001"].state is State.REAPED
    assert IP4 not in state.by_ip


def test_no_reap_below_timeout():
    state = _idle_state(100.0)
    assert reap_idle(999.0, state) == []


def test_reaps_ordered_by_instance_id():
    state = _idle_state(10.0, 5.0)
    events = reap_idle(2000.0, state)
    assert [e.detail["instance"] for e in events] == ["hp0001", "hp0002"]


def test_deploying_instances_are_not_reaped():
    state = EngineState(EXAMPLE_POOL)
    on_packet(pkt(0.0, IP4, 22), state)
    assert reap_idle(5000.0, state) == []


# -- IDS follow-ups --------------------------------------------------------------


def test_sqli_alert_deploys_follow_up_next_address():
    state = EngineState(EXAMPLE_POOL, deploy_ahead=False)
    activate_all(state, on_packet(pkt(0.0, IP4, 80), state), 0.0)
    events = on_ids_alert("SQLI", IP4, 3.0, state)
    assert [e.kind for e in events] == [EventKind.ALERT_FOLLOWUP, EventKind.DEPLOY]
    assert (events[1].detail["template"], events[1].detail["ip"]) == ("HTTP_SQLI", IP40)


def test_alert_touches_running_follow_up():
    state = EngineState(EXAMPLE_POOL, deploy_ahead=False)
    activate_all(state, on_packet(pkt(0.0, IP4, 80), state), 0.0)
    activate_all(state, on_ids_alert("XSS", IP4, 1.0, state), 1.0)
    events = on_ids_alert("XSS", IP4, 9.0, state)
    assert [e.kind for e in events] == [EventKind.ALERT_FOLLOWUP, EventKind.TOUCH]
    assert state.live_of(Service.HTTP_XSS)[0].last_activity == 9.0


def test_alert_with_full_pool_notifies():
    state = _filled(1)
    activate_all(state, on_packet(pkt(8.0, IP250, 8080), state), 8.0)
    events = on_ids_alert("OSC", IP250, 10.0, state)
    assert [(e.kind, e.detail.get("reason")) for e in events] == [
        (EventKind.ALERT_FOLLOWUP, None), (EventKind.NOTIFY, "pool-exhausted")]


def test_alert_needs_active_http_host():
    state = EngineState(EXAMPLE_POOL)
    activate_all(state, on_packet(pkt(0.0, IP4, 22), state), 0.0)
    with pytest.raises(Exception):
        on_ids_alert("SQLI", IP4, 1.0, state)
    with pytest.raises(ValueError):
        on_ids_alert("CSRF", IP4, 1.0, state)


# -- log invariants -------------------------------------------------------------


def test_event_json_roundtrip_is_stable():
    state = EngineState(EXAMPLE_POOL)
    for ev in on_packet(pkt(1.25, IP4, 80), state):
        line = ev.to_json()
        assert type(ev).from_json(line).to_json() == line
        assert line.startswith('{"seq":')


def test_illegal_transitions_rejected():
    state = EngineState(EXAMPLE_POOL)
    events = on_packet(pkt(0.0, IP4, 22), state)
    with pytest.raises(Exception):
        apply_event(state, events[0])
    reap = state.event(5.0, EventKind.REAP, ["hp0001"], instance="hp0001")
    with pytest.raises(Exception):
        apply_event(state, reap)


ports = st.sampled_from([22, 25, 80, 502, 3306, 8080, 9999])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 400, allow_nan=False), st.integers(0, 6), ports), max_size=60),
       st.booleans(), st.floats(1.0, 900.0))
def test_random_streams_keep_invariants(steps, ahead, timeout):
    state = EngineState(EXAMPLE_POOL, idle_timeout=timeout, deploy_ahead=ahead)
    log = []
    t = 0.0
    for dt, k, port in steps:
        t += dt
        log += reap_idle(t, state)
        evs = on_packet(pkt(t, P[k], port), state)
        log += evs
        for ev in evs:
            if ev.kind is EventKind.DEPLOY:
                log.append(mark_ready(ev.detail["instance"], t, state))
        live_ips = [i.ip for i in state.instances.values() if i.live]
        assert len(live_ips) == len(set(live_ips))
        assert all(i.last_activity >= i.deployed_at for i in state.instances.values())
    for ev in log:
        if ev.kind is EventKind.REAP:
            assert ev.ts >= state.instances[ev.detail["instance"]].last_activity + timeout
    rebuilt = replay(log, EXAMPLE_POOL, idle_timeout=timeout)
    assert rebuilt.snapshot() == state.snapshot()
    assert [e.seq for e in log] == sorted(e.seq for e in log)


def test_reap_order_is_deterministic_for_equal_deadlines():
    a = _idle_state(10.0, 10.0, 10.0)
    b = _idle_state(10.0, 10.0, 10.0)
    assert [e.to_json() for e in reap_idle(910.0, a)] == [e.to_json() for e in reap_idle(910.0, b)]


def test_every_occupancy_keeps_instance_per_ip_unique():
    for occupied_ports in itertools.combinations([22, 25, 80, 502], 2):
        state = EngineState(EXAMPLE_POOL)
        for k, port in enumerate(occupied_ports):
            activate_all(state, on_packet(pkt(k, P[3 + k], port), state), k)
        ips = list(state.by_ip)
        assert len(ips) == len(set(ips)) == 4
