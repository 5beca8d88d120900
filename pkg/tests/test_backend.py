import hashlib
import stat
import sys
import textwrap

import pytest

from soar.backend import (
    ActionKind, AddressInUse, BackendUnavailable, ExecBackend, ImageMissing, Outcome, ReadinessTimeout,
    SimulatedBackend, StaleHandle, read_backup,
)
from soar.orchestrator import DEFAULT_CATALOG, EventKind, Service
from soar.storage import Vault

WEB = DEFAULT_CATALOG[Service.HTTP_WEB]
SSH = DEFAULT_CATALOG[Service.SSH]


def test_simulated_start_default_latency_zero():
    be = SimulatedBackend()
    h = be.start(WEB, "172.26.233.40", now=12.0)
    assert h.ready_at == h.started_at == 12.0
    [act] = be.actions
    assert act.kind is ActionKind.START and act.latency == 0 and act.outcome is Outcome.OK


def test_configured_latency():
    h = SimulatedBackend(latency=6.0).start(WEB, "172.26.233.40", now=1.0)
    assert h.ready_at - h.started_at == 6.0


def test_occupied_ip_rejected():
    be = SimulatedBackend()
    be.start(WEB, "172.26.233.40")
    with pytest.raises(AddressInUse):
        be.start(SSH, "172.26.233.40")


def test_missing_image_rejected():
    with pytest.raises(ImageMissing):
        SimulatedBackend(images=[SSH.image_id]).start(WEB, "172.26.233.40")


def test_backup_holds_exactly_planted_files():
    vault = Vault()
    be = SimulatedBackend(vault=vault)
    h = be.start(SSH, "172.26.233.85", now=0.0)
    planted = {"/tmp/a.sh": b"rm -rf /\n", "/root/.x": b"cat /etc/passwd\n"}
    for k, (path, data) in enumerate(planted.items()):
        be.plant_file(h, path, data, ts=10.0 + k)
    doc = read_backup(vault, be.stop_with_backup(h, now=50.0))
    assert {f["path"]: f["sha256"] for f in doc["files"]} == {
        p: hashlib.sha256(d).hexdigest() for p, d in planted.items()}
    assert all(vault.get_blob(f["sha256"]) == planted[f["path"]] for f in doc["files"])
    assert doc["image"] == SSH.image_id


def test_fresh_instance_backup_is_empty_but_issued():
    vault = Vault()
    be = SimulatedBackend(vault=vault)
    bid = be.stop_with_backup(be.start(SSH, "172.26.233.85"), now=3.0)
    assert read_backup(vault, bid)["files"] == []


def test_stale_handle_rejected():
    be = SimulatedBackend()
    h = be.start(SSH, "172.26.233.85")
    be.stop_with_backup(h)
    with pytest.raises(StaleHandle):
        be.stop_with_backup(h)
    with pytest.raises(StaleHandle):
        be.list_new_files(h, 0.0)
    be.start(WEB, "172.26.233.85")


def test_list_new_files_since_and_order():
    be = SimulatedBackend()
    h = be.start(SSH, "172.26.233.85")
    assert be.list_new_files(h, 0.0) == []
    be.plant_file(h, "/z", b"z", ts=5.0)
    be.plant_file(h, "/a", b"a", ts=5.0)
    be.plant_file(h, "/old", b"o", ts=1.0)
    found = be.list_new_files(h, since=2.0)
    assert [p for p, _, _ in found] == ["/a", "/z"]
    assert found[0][2] == hashlib.sha256(b"a").hexdigest()


def test_identical_action_sequences_are_identical():
    def run():
        be = SimulatedBackend(latency=2.0)
        h = be.start(WEB, "172.26.233.40", now=1.0)
        be.plant_file(h, "/x", b"payload", 3.0)
        return h, be.stop_with_backup(h, now=9.0), be.actions

    assert run() == run()


def test_every_reap_has_one_backup_action(ctf_dynamic):
    reaps = sorted(e.detail["instance"] for e in ctf_dynamic.events if e.kind is EventKind.REAP)
    stops = sorted(a.instance_id for a in ctf_dynamic.engine.backend.actions
                   if a.kind is ActionKind.STOP_WITH_BACKUP)
    assert reaps and reaps == stops


# -- command-execution backend against a fake runtime ----------------------------------


@pytest.fixture
def fake_runtime(tmp_path):
    """A stand-in container CLI that knows one image and serves two files."""
    script = tmp_path / "fakert"
    script.write_text(textwrap.dedent(f"""\
        #!{sys.executable}
        import sys
        args = sys.argv[1:]
        with open({str(tmp_path / "calls")!r}, "a") as fh:
            fh.write(" ".join(args) + "\\n")
        if args[:2] == ["image", "inspect"]:
            sys.exit(0 if args[2] == "cowrie" else 1)
        if args[:1] == ["exec"] and args[2] == "find":
            print("/tmp/b.sh")
            print("/tmp/a.sh")
        elif args[:1] == ["exec"] and args[2] == "cat":
            sys.stdout.write("content of " + args[3])
        sys.exit(0)
        """))
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    return script


def _exec_backend(runtime, **kw):
    ticks = iter(range(1000))
    return ExecBackend(runtime=str(runtime), clock=lambda: float(next(ticks)), sleep=lambda s: None, **kw)


def test_exec_start_list_and_stop(fake_runtime):
    be = _exec_backend(fake_runtime, probe=lambda ip, port: True)
    h = be.start(SSH, "172.26.233.85")
    assert h.ready_at >= h.started_at
    files = be.list_new_files(h, 0.0)
    assert [p for p, _, _ in files] == ["/tmp/a.sh", "/tmp/b.sh"]
    assert files[0][2] == hashlib.sha256(b"content of /tmp/a.sh").hexdigest()
    doc = read_backup(be.vault, be.stop_with_backup(h))
    assert len(doc["files"]) == 2
    assert any(c.endswith(f"run -d --name {h.instance_id} --network soar --ip 172.26.233.85 cowrie")
               for c in be.commands)
    assert be.commands[-1].endswith(f"rm -f {h.instance_id}")


def test_exec_missing_image(fake_runtime):
    be = _exec_backend(fake_runtime, probe=lambda ip, port: True)
    with pytest.raises(ImageMissing):
        be.start(WEB, "172.26.233.40")
    assert be.actions[-1].outcome is Outcome.FAILED


def test_exec_readiness_timeout_removes_container(fake_runtime):
    be = _exec_backend(fake_runtime, probe=lambda ip, port: False, readiness_timeout=5.0)
    with pytest.raises(ReadinessTimeout):
        be.start(SSH, "172.26.233.85")
    assert "rm -f" in be.commands[-1]


def test_exec_missing_runtime(tmp_path):
    be = _exec_backend(tmp_path / "no-such-runtime")
    with pytest.raises(BackendUnavailable):
        be.ping()
