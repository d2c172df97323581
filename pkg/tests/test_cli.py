import json
import subprocess
import sys

import pytest

from qtkw.cli import RunConfig, ConfigError, run


def invoke(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def checks(report):
    return {c["name"]: c for c in report["checks"]}


def test_verify_manufactured_solution(capsys):
    code, rep, _ = invoke(capsys, "verify", "--u", "0.3*x1 + 0.2*x5^3", "--nodes", "16")
    assert code == 0 and rep["pass"]
    names = checks(rep)
    assert "gbc_defect" in names
    assert sum(n.startswith("weak_residual") for n in names) == 6
    assert sum(n.startswith("cocycle_defect") for n in names) == 3
    assert sum(n.startswith("kw_residual") for n in names) == 10
    assert list(rep) == ["command", "config", "checks", "pass", "seconds"]


def test_verify_with_wrong_data_fails(capsys):
    code, rep, _ = invoke(capsys, "verify", "--u", "0", "--q", "3 + 0.1*x1", "--t", "0", "--nodes", "8")
    assert code == 1 and not rep["pass"]
    assert not checks(rep)["kw_residual[X1]"]["pass"]


def test_coarse_grid_reports_failure(capsys):
    # quadrature error at N = 8 exceeds the Gauss-Bonnet tolerance
    code, rep, _ = invoke(capsys, "gbc", "--u", "x5^3", "--nodes", "8")
    assert code == 1 and not checks(rep)["gbc_defect"]["pass"]


def test_non_neumann_solution_fails(capsys):
    code, rep, _ = invoke(capsys, "verify", "--u", "x5", "--nodes", "8")
    assert code == 1
    assert not checks(rep)["neumann_defect"]["pass"]


def test_mobius_anchor(capsys):
    code, rep, _ = invoke(capsys, "mobius-check", "--a", "0,0.5,0,0", "--nodes", "8")
    assert code == 0
    c = checks(rep)
    assert c["phi_a(+e1)"]["pass"] and c["phi_a(+e1)"]["value"] < 1e-14
    assert c["liouville_residual"]["pass"]


def test_gbc_split(capsys):
    code, rep, _ = invoke(capsys, "gbc", "--u", "x5^3", "--nodes", "16")
    assert code == 0
    c = checks(rep)
    assert c["N_Q/pi^2"]["value"] == pytest.approx(-2.0, rel=1e-8)
    assert c["B_T/pi^2"]["value"] == pytest.approx(6.0, rel=1e-8)


def test_paneitz_check(capsys):
    code, rep, _ = invoke(capsys, "paneitz-check", "--u", "x1*x2 + x5^2", "--nodes", "8")
    assert code == 0
    assert "paneitz3_routes" in checks(rep)


def test_certify_reports_direction(capsys):
    code, rep, _ = invoke(capsys, "certify", "--q", "3 + 0.1*x1", "--t", "1")
    assert code == 0
    block = rep["certificate"]
    assert block["decision"] == "certificate"
    assert block["direction"] == pytest.approx([0] * 6 + [1, 0, 0, 0], abs=1e-6)
    assert block["interior_min"] >= -1e-9 and block["maximum"] == pytest.approx(0.1, rel=1e-3)


def test_certify_inconclusive_is_not_an_error(capsys):
    code, rep, _ = invoke(capsys, "certify", "--q", "3", "--t", "0")
    assert code == 0
    assert rep["certificate"]["decision"] == "none_found"
    assert "inconclusive" in rep["certificate"]["note"]


def test_orbit_check(capsys):
    code, rep, _ = invoke(capsys, "orbit-check", "--u", "0.1*x5^3", "--q", "3 + 0.1*x1", "--t", "1",
                          "--field", "X1", "--nodes", "12")
    assert code == 0, rep
    assert checks(rep)["factor_rate_vs_div"]["value"] < 1e-5


@pytest.mark.parametrize("argv, fragment", [
    (["verify"], "needs --u"),
    (["verify", "--u", "x1 + y"], "unknown identifier"),
    (["gbc", "--u", "x1", "--nodes", "4"], "[8, 256]"),
    (["mobius-check", "--a", "0.9,0.9,0,0"], "|a| < 1"),
    (["mobius-check", "--a", "0.1,0.2"], "4 comma-separated"),
    (["certify", "--q", "3", "--t", "x5"], "x1..x4"),
    (["orbit-check", "--h", "0.5"], "--h"),
    (["orbit-check", "--field", "Y7"], "--field"),
    (["mobius-check", "--rot", "1,1,0.5"], "--rot"),
])
def test_usage_errors_exit_2(capsys, argv, fragment):
    code, rep, err = invoke(capsys, *argv)
    assert code == 2 and rep is None
    assert fragment in err


def test_positional_diagnostic(capsys):
    code, _, err = invoke(capsys, "verify", "--u", "x1 + (x2")
    assert code == 2
    lines = err.strip().splitlines()
    assert "offset 5" in lines[0]
    assert lines[-1].index("^") == lines[-2].index("(")


def test_unknown_command_exit_2(capsys):
    assert run(["bogus"]) == 2


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# gbc run\nu = x5^3\nnodes = 12  # small\n")
    code, rep, _ = invoke(capsys, "gbc", "--config", str(cfg))
    assert code == 0 and rep["config"]["u"] == "x5^3" and rep["config"]["nodes"] == 12
    code, rep, _ = invoke(capsys, "gbc", "--config", str(cfg), "--nodes", "16")
    assert code == 0 and rep["config"]["nodes"] == 16


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = invoke(capsys, "gbc", "--config", str(cfg))
    assert code == 2 and "unknown key" in err
    code, _, err = invoke(capsys, "gbc", "--config", str(tmp_path / "missing.cfg"))
    assert code == 2


def test_determinism_modulo_wall_clock(tmp_path):
    outs = []
    for k, threads in enumerate(("1", "2")):
        path = tmp_path / f"r{k}.json"
        assert run(["verify", "--u", "0.2*x1*x2 + 0.1*x5^3", "--nodes", "12",
                    "--threads", threads, "--out", str(path)]) == 0
        rep = json.loads(path.read_text())
        rep.pop("seconds")
        outs.append(json.dumps(rep))
    assert outs[0] == outs[1]


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig("gbc", u="x1", nodes=300).validate()
    cfg = RunConfig("certify", q="3")
    assert cfg.nodes == 8
    cfg.validate()
    assert "threads" not in cfg.echo()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qtkw", "mobius-check", "--nodes", "8"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "mobius-check"
