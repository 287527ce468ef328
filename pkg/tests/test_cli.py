import os
import subprocess
import sys

import pytest

from swarmmsg.cli import main

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CHEATER = os.path.join(ROOT, "scenarios", "cheater.scn")


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_simulate_pass_exit_0(capsys, tmp_path):
    metrics = tmp_path / "m.txt"
    log = tmp_path / "log.txt"
    assert main(["simulate", "--scenario", CHEATER, "--metrics-out", str(metrics), "--log-out", str(log)]) == 0
    out = capsys.readouterr().out
    assert "PASS cheaters_decommissioned.eq 1.0" in out
    assert "cheaters_decommissioned=1" in metrics.read_text()
    assert "decommission" in log.read_text()


def test_simulate_failed_assertion_exit_2(capsys, tmp_path):
    scn = write(tmp_path, "f.scn", "simver 1\n[sim]\nnodes = 7\nclients = 0\nduration_s = 10\n"
                                   "[assert]\nblocks.min = 1000\n")
    assert main(["simulate", "--scenario", scn]) == 2
    assert "FAIL blocks.min 1000.0" in capsys.readouterr().out


def test_config_error_exit_1_with_line(capsys, tmp_path):
    scn = write(tmp_path, "bad.scn", "simver 1\n[sim]\nnodes = 7\nwarp = 9\n")
    assert main(["simulate", "--scenario", scn]) == 1
    assert "line 4:" in capsys.readouterr().err


def test_missing_file_and_usage_errors(capsys):
    assert main(["simulate", "--scenario", "/nonexistent.scn"]) == 1
    assert main(["nonsense"]) == 1
    assert main(["pow", "mine", "--text", "abc"]) == 1


def test_pow_mine_and_verify_golden(capsys):
    assert main(["pow", "mine", "--text", "abc", "--threshold", str(2**56)]) == 0
    assert capsys.readouterr().out.strip() == "nonce=311 hash_head=00c09f42f1827d06 attempts=312"
    assert main(["pow", "verify", "--text", "abc", "--nonce", "311", "--threshold", str(2**56)]) == 0
    assert capsys.readouterr().out.startswith("accept")
    assert main(["pow", "verify", "--text", "abc", "--nonce", "310", "--threshold", str(2**56)]) == 1


def test_pow_envelope_roundtrip(capsys):
    assert main(["pow", "mine", "--text", "hi", "--difficulty", "2", "--recipient", "05" + "11" * 32,
                 "--timestamp", "1000"]) == 0
    lines = dict(l.split("=", 1) for l in capsys.readouterr().out.split())
    assert main(["pow", "verify", "--request-hex", lines["request"], "--difficulty", "2",
                 "--now-ms", "1000"]) == 0
    assert f"threshold={lines['threshold']}" in capsys.readouterr().out
    assert main(["pow", "verify", "--request-hex", "00", "--difficulty", "2"]) == 1


def test_swarm_map_zero_key(capsys, tmp_path):
    keys = write(tmp_path, "k.txt", "# keys\n" + "00" * 32 + "\n")
    assert main(["swarm", "map", "--keys", keys]) == 0
    assert capsys.readouterr().out.strip() == "00" * 32 + " -> 0 (point 0)"
    assert main(["swarm", "map", "--keys", keys, "--swarms", "100,5"]) == 0
    assert " -> 5 " in capsys.readouterr().out
    bad = write(tmp_path, "b.txt", "xyz\n")
    assert main(["swarm", "map", "--keys", bad]) == 1


def test_inspect(capsys):
    assert main(["inspect", "--node", "n000", "--scenario", CHEATER]) == 0
    out = capsys.readouterr().out
    assert "node=n000" in out and "status=active" in out
    assert main(["inspect", "--node", "n999", "--scenario", CHEATER]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "swarmmsg", "pow", "verify", "--text", "abc",
                          "--nonce", "0", "--threshold", str(2**60)], capture_output=True, text=True)
    assert res.returncode == 0 and "hash_head=0c0311fc532156ee" in res.stdout
