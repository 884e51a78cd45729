import json
import shutil
import subprocess
import sys

import pytest

from toricqdm.cli import main, parse_order

from conftest import GOLDEN


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_parse_order():
    assert parse_order("3") == 3
    assert parse_order("q=2,Q=1") == {"q": 2, "Q": 1}


def test_inspect_f1(capsys):
    code, out = run(capsys, "inspect", "--example", "F1", "--json")
    assert code == 0
    d = json.loads(out.out)
    assert d["rank"] == 4
    assert "P - phi - l2" in d["U"]


def test_qh_p1_relation(capsys):
    code, out = run(capsys, "qh", "--example", "P1", "--order", "3")
    assert code == 0
    rel = [line for line in out.out.splitlines() if "relations" in line]
    assert rel and all(line.startswith("[PASS]") or "PASS" in line for line in rel)


def test_decompose_is_byte_stable(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(capsys, "decompose", "--example", "P1", "--order", "2", "--out", str(a))[0] == 0
    assert run(capsys, "decompose", "--example", "P1", "--order", "2", "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert set(json.loads(a.read_text())) >= {"sigma_hat", "r_hat", "tau_star", "chi_tau", "chi_r", "reports"}


def test_verify_against_golden(capsys):
    code, out = run(capsys, "verify", "--example", "P1", "--order", "3", "--golden", str(GOLDEN / "p1_q3.json"))
    assert code == 0, out.out


def test_verify_detects_altered_golden_value(tmp_path, capsys):
    bad = tmp_path / "p1.json"
    data = json.loads((GOLDEN / "p1_q3.json").read_text())
    first = data["chi_r"]["(1,)"][0]
    key = sorted(first["coeff"])[0]
    first["coeff"][key] = "12345"
    bad.write_text(json.dumps(data))
    code, out = run(capsys, "verify", "--example", "P1", "--order", "3", "--golden", str(bad))
    assert code == 1
    assert f"/chi_r/(1,)[0]/coeff/{key}" in out.out


def test_verify_detects_unreadable_golden(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    shutil.copy(GOLDEN / "p1_q3.json", bad)
    bad.write_text(bad.read_text()[:-20])
    code, out = run(capsys, "verify", "--example", "P1", "--order", "2", "--golden", str(bad))
    assert code == 1
    assert "golden file broken.json first residual at file" in out.out


@pytest.mark.parametrize("argv", [
    ["inspect"],
    ["inspect", "--example", "P7"],
    ["inspect", "--example", "P1", "--order", "q=x"],
    ["inspect", "--example", "P1", "--z-slack", "0"],
])
def test_config_errors_exit_2(argv, capsys):
    code, out = run(capsys, *argv)
    assert code == 2
    assert "config error" in out.err


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"k": 1, "N": 2, "c": [[1, 1, 1]]}))
    assert run(capsys, "inspect", "--config", str(cfg))[0] == 2
    cfg.write_text("{not json")
    assert run(capsys, "inspect", "--config", str(cfg))[0] == 2


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "toricqdm.cli", "inspect", "--example", "P1"],
                         capture_output=True, text=True, check=False)
    assert out.returncode == 0 and "PASS" in out.stdout
