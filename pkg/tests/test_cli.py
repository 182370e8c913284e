import json
import subprocess
import sys
import time

import pytest

from pacdosq.bastion.database import SpectrumDatabase
from pacdosq.cli import build_parser, main
from pacdosq.harness import read_csv
from pacdosq.harness.runner import _free_port
from pacdosq.nodes import READY_LINE
from pacdosq.onion import Consensus


def test_parser_lists_commands():
    help_text = build_parser().format_help()
    for cmd in ("keygen", "directory", "relay", "psb", "gatekeeper", "client", "harness"):
        assert cmd in help_text


def test_harness_run_and_report(tmp_path, capsys):
    spec = tmp_path / "spec.toml"
    spec.write_text('run_id = "small"\ndb_rows = 1024\nclients = 2\n')
    assert main(["harness", "run", "--spec", str(spec), "--out", str(tmp_path / "out")]) == 0
    rows = read_csv(tmp_path / "out" / "small.csv")
    assert {r.phase for r in rows} >= {"respond", "e2e"}
    capsys.readouterr()
    assert main(["harness", "report", str(tmp_path / "out" / "small.csv")]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert lines and all(l["measured"] == pytest.approx(1.0) for l in lines)


def test_harness_run_reports_failure(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"ell": 3, "t": 2, "faults": [[2, "down"]], "must_succeed": False}))
    assert main(["harness", "run", "--spec", str(spec), "--out", str(tmp_path)]) == 0
    spec.write_text(json.dumps({"ell": 3, "t": 2, "faults": [[2, "down"]]}))
    with pytest.raises(ValueError):
        main(["harness", "run", "--spec", str(spec), "--out", str(tmp_path)])


def _cli(*args):
    return [sys.executable, "-m", "pacdosq.cli", *args]


def _wait(proc, log, deadline=20.0):
    end = time.monotonic() + deadline
    while time.monotonic() < end:
        if READY_LINE in log.read_text():
            return
        assert proc.poll() is None, log.read_text()
        time.sleep(0.05)
    raise AssertionError(f"{log} never became ready")


def test_full_deployment_over_tcp(tmp_path, capsys):
    d = tmp_path
    assert main(["keygen", "sig", "--out", str(d / "auth.json"), "--public-out", str(d / "auth.pub"), "--seed", "1"]) == 0
    assert main(["keygen", "sig", "--out", str(d / "psb.json"), "--public-out", str(d / "psb.pub"), "--seed", "2"]) == 0
    for i in range(9):
        main(["keygen", "kem", "--out", str(d / f"r{i}.json"), "--seed", str(10 + i)])
    (d / "db.toml").write_text("kappa = 10\n[grid]\nrows = 1024\n")
    assert main(["psb", "setup", "--config", str(d / "db.toml"), "--sig-key", str(d / "psb.json"),
                 "--out", str(d / "db.bin")]) == 0
    db = SpectrumDatabase.load(d / "db.bin")
    assert db.r == 1024 and db.s == 3000

    relay_addrs = [f"127.0.0.1:{_free_port()}" for _ in range(9)]
    psb_addrs = [f"127.0.0.1:{_free_port()}" for _ in range(3)]
    gk_addr = f"127.0.0.1:{_free_port()}"
    args = ["directory", "publish", "--authority-key", str(d / "auth.json"), "--psb-pubkey", str(d / "psb.pub"),
            "--out", str(d / "consensus.bin")]
    for i, a in enumerate(relay_addrs):
        args += ["--relay", f"{a}={d / f'r{i}.json'}"]
    for i, a in enumerate(psb_addrs, start=1):
        args += ["--psb", f"{i}={a}"]
    assert main(args) == 0
    assert len(Consensus.from_bytes((d / "consensus.bin").read_bytes()).relays) == 9

    procs, running = [], []
    try:
        for i, a in enumerate(relay_addrs):
            procs.append(("relay", i, _cli("relay", "--listen", a, "--keys", str(d / f"r{i}.json"))))
        for i, a in enumerate(psb_addrs, start=1):
            procs.append(("psb", i, _cli("psb", "serve", "--listen", a, "--db", str(d / "db.bin"), "--index", str(i))))
        procs.append(("gk", 0, _cli("gatekeeper", "--listen", gk_addr, "--psb-pubkey", str(d / "psb.pub"),
                                    "--access-log", str(d / "access.jsonl"))))
        for name, i, cmd in procs:
            log = d / f"{name}-{i}.log"
            running.append((subprocess.Popen(cmd, stdout=open(log, "w"), stderr=subprocess.STDOUT), log))
        for proc, log in running:
            _wait(proc, log)

        (d / "client.toml").write_text(
            'consensus = "consensus.bin"\nauthority_pubkey = "auth.pub"\n'
            f'gatekeeper = "{gk_addr}"\nell = 3\nt = 2\nseed = 5\n'
            "[grid]\nrows = 1024\n[position]\nlx = 350.0\nly = 120.0\nch = 2\ntimestamp = 0\n"
        )
        capsys.readouterr()
        assert main(["client", "end-to-end", "--config", str(d / "client.toml")]) == 0
        events = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert [e["event"] for e in events] == ["fetch", "solve", "access"]
        assert events[0]["recovery_path"] == "easy" and events[2]["granted"]
        assert (d / "client.token").exists()
        assert main(["client", "request-access", "--config", str(d / "client.toml")]) == 3
        replay = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert replay["reason"] == "REPLAY"
    finally:
        for proc, _ in running:
            proc.terminate()
        for proc, _ in running:
            proc.wait(timeout=10)
    access = [json.loads(l) for l in (d / "access.jsonl").read_text().splitlines()]
    assert [a["reason"] for a in access] == ["OK", "REPLAY"]
