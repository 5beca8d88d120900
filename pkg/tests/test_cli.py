import csv
import subprocess

import pytest

from soar.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from soar.packets import capture_bytes


def test_run_on_smoke_capture(smoke_capture, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(smoke_capture), "--out", str(out)]) == EXIT_OK
    for name in ("log.jsonl", "report.csv", "report.txt"):
        assert (out / name).stat().st_size > 0
    assert {p.name for p in (out / "figures").glob("*.png")} >= {"deployments_dynamic.png", "cpu_dynamic.png"}
    rows = list(csv.reader(open(out / "report.csv")))
    assert ["deployments", "HTTP_WEB", "decisions", "1"] in rows
    assert "100 packets" in capsys.readouterr().out


def test_run_twice_gives_identical_log(smoke_capture, tmp_path):
    for k in range(2):
        assert main(["run", str(smoke_capture), "--out", str(tmp_path / f"o{k}"), "--no-figures"]) == EXIT_OK
    assert (tmp_path / "o0" / "log.jsonl").read_bytes() == (tmp_path / "o1" / "log.jsonl").read_bytes()


def test_run_on_empty_capture(tmp_path):
    cap = tmp_path / "empty.pcap"
    cap.write_bytes(capture_bytes([]))
    assert main(["run", str(cap), "--out", str(tmp_path / "o"), "--no-figures"]) == EXIT_OK
    assert (tmp_path / "o" / "log.jsonl").read_text() == ""


def test_run_rejects_garbage_capture(tmp_path):
    cap = tmp_path / "junk.pcap"
    cap.write_bytes(b"definitely not a capture file")
    assert main(["run", str(cap), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_bad_config_key_exits_2(smoke_capture, tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("pool:\n  bogus: 1\n")
    assert main(["run", str(smoke_capture), "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "pool.bogus" in capsys.readouterr().err


def test_idle_timeout_flag_overrides(smoke_capture, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("idle_timeout: 5000\n")
    out = tmp_path / "o"
    assert main(["run", str(smoke_capture), "--config", str(cfg), "--idle-timeout", "10", "--out", str(out),
                 "--no-figures"]) == EXIT_OK
    assert '"kind":"REAP"' in (out / "log.jsonl").read_text().replace(" ", "")


def test_simulate_is_deterministic(tmp_path):
    for k in range(2):
        assert main(["simulate", "modbus_once", "--out", str(tmp_path / f"s{k}"), "--no-figures"]) == EXIT_OK
    for name in ("log.jsonl", "capture.pcap", "report.csv", "report.txt"):
        assert (tmp_path / "s0" / name).read_bytes() == (tmp_path / "s1" / name).read_bytes()


def test_simulate_compare_writes_both_modes(tmp_path):
    out = tmp_path / "cmp"
    assert main(["simulate", "sqli_followup", "--compare", "--out", str(out)]) == EXIT_OK
    assert (out / "comparison.csv").exists() and (out / "static" / "report.csv").exists()
    assert (out / "figures" / "cpu_dynamic.png").exists()


def test_unknown_scenario_exits_2(tmp_path):
    assert main(["simulate", "nope", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_usage_errors_exit_2():
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["simulate"]) == EXIT_CONFIG
    assert main(["simulate", "quiet", "--deploy-ahead", "2"]) == EXIT_CONFIG


def test_gen_train_eval_ddos(tmp_path, capsys):
    data, model = tmp_path / "ddos.csv", tmp_path / "ddos.json"
    assert main(["gen", "--task", "ddos", "--seed", "3", "--out", str(data), "--sizes", "normal=600,ddos=400"]) == 0
    assert main(["train", "--data", str(data), "--family", "tree", "--out", str(model)]) == EXIT_OK
    capsys.readouterr()
    assert main(["eval", "--model", str(model), "--data", str(data)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "Accuracy" in text and "F-Score" in text


def test_train_httpids_bundle_and_single(tmp_path, capsys):
    data = tmp_path / "http.csv"
    assert main(["gen", "--task", "httpids", "--out", str(data), "--sizes", "benign=200,xss=100,sqli=100,osc=100"]) == 0
    assert main(["train", "--corpus", str(data), "--out", str(tmp_path / "ids.json")]) == EXIT_OK
    assert main(["eval", "--model", str(tmp_path / "ids.json"), "--corpus", str(data)]) == EXIT_OK
    assert main(["train", "--corpus", str(data), "--attack", "xss", "--family", "lr",
                 "--out", str(tmp_path / "xss.json")]) == EXIT_OK
    assert main(["train", "--corpus", str(data), "--attack", "csrf", "--out", str(tmp_path / "x.json")]) == EXIT_CONFIG


def test_bad_sizes_exit_2(tmp_path):
    assert main(["gen", "--task", "ddos", "--out", str(tmp_path / "d.csv"), "--sizes", "normal=lots"]) == EXIT_CONFIG
    assert main(["gen", "--task", "ddos", "--out", str(tmp_path / "d.csv"), "--sizes", "normal=5,ddos=5"]) == EXIT_CONFIG


def test_report_from_log(tmp_path, capsys):
    sim = tmp_path / "sim"
    assert main(["simulate", "ctf_small", "--out", str(sim), "--no-figures"]) == EXIT_OK
    capsys.readouterr()
    assert main(["report", str(sim / "log.jsonl"), "--top", "5", "--horizon", "7200", "--out",
                 str(tmp_path / "rep"), "--no-figures"]) == EXIT_OK
    assert "top 5 engagement times" in capsys.readouterr().out
    ours = [r for r in csv.reader(open(tmp_path / "rep" / "report.csv")) if r[0] != "meta"]
    sims = [r for r in csv.reader(open(sim / "report.csv")) if r[0] not in ("meta", "engagement")]
    assert [r for r in ours if r[0] != "engagement"] == sims


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(["soar", "simulate", "quiet", "--out", str(tmp_path), "--no-figures"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "artifacts written to" in proc.stdout


@pytest.mark.parametrize("argv", [["--help"], ["simulate", "--help"]])
def test_help_exits_0(argv):
    assert main(argv) == EXIT_OK
