import csv
import json
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from dswmpc.cli import EXIT_CONFIG, EXIT_DESIGN, EXIT_INFEASIBLE, EXIT_OK, EXIT_REFUSED, main, trace_columns
from dswmpc.config import (
    ConfigError,
    TOLERANCE_ENV,
    dump_config,
    load_config,
    loads_config,
    tolerance_profile,
)
from dswmpc.geometry import Polytope, support

SMALL = textwrap.dedent("""
    name = "small"

    [run]
    T_sim = 4

    [controller]
    N = 3
    dwell = 2
    E_halfwidth = {E}
    Eu_halfwidth = 0.1

    [signal]
    visibility = "times_and_modes_known"
    modes = [1, 2]
    transitions = "cycle"
    schedule = [[0, 1], [2, 2]]

    [[topology]]
    mode = 1
    neighbors = {{ 1 = [{N12}], 2 = [] }}

    [[topology]]
    mode = 2
    neighbors = {{ 1 = [], 2 = [{N21}] }}

    [[subsystem]]
    index = 1
    A = [[1.0, 1.0], [0.0, 1.0]]
    B = [[0.5], [1.0]]
    X = {{ lower = [-1.0, -1.0], upper = [1.0, 1.0] }}
    U = {{ lower = [-0.5], upper = [0.5] }}
    x0 = [0.2, -0.1]
    {C12}

    [[subsystem]]
    index = 2
    A = [[1.0, 1.0], [0.0, 1.0]]
    B = [[0.5], [1.0]]
    X = {{ lower = [-1.0, -1.0], upper = [1.0, 1.0] }}
    U = {{ lower = [-0.5], upper = [0.5] }}
    x0 = [-0.1, 0.1]
    {C21}
""")

COUPLING = """
    [[subsystem.coupling]]
    neighbor = {j}
    A = {A}
"""


def small_text(E=0.1, coupled=True, A12="[[0.05, 0.0], [0.0, 0.05]]"):
    if not coupled:
        return SMALL.format(E=E, N12="", N21="", C12="", C21="")
    return SMALL.format(
        E=E, N12="2", N21="1",
        C12=textwrap.dedent(COUPLING.format(j=2, A=A12)),
        C21=textwrap.dedent(COUPLING.format(j=1, A="[[0.05, 0.0], [0.0, 0.05]]")),
    )


def write(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ------------------------------------------------------------------ configuration


@pytest.mark.parametrize("name", ["example1", "example2", "example3"])
def test_bundled_configs_parse(name):
    cfg = load_config(name)
    assert len(cfg.network) == 4
    assert len(cfg.modes) == 3
    assert cfg.N == 5
    assert set(cfg.dwell.values()) == {3}
    assert cfg.T_sim == 15
    assert np.allclose(cfg.x0[1], [-0.55, 0.9])


def test_round_trip_is_equal(tmp_path):
    for name in ("example1", "example2", "example3"):
        cfg = load_config(name)
        again = load_config(write(tmp_path, dump_config(cfg), f"{name}.toml"))
        assert again == cfg


def test_zero_dwell_is_rejected(tmp_path):
    text = small_text().replace("dwell = 2", "dwell = 0")
    with pytest.raises(ConfigError) as err:
        loads_config(text)
    assert any(e.startswith("controller.dwell") for e in err.value.errors)


def test_wrong_coupling_shape_names_both_subsystems():
    with pytest.raises(ConfigError) as err:
        loads_config(small_text(A12="[[0.05, 0.0, 0.0], [0.0, 0.05, 0.0]]"))
    msg = "\n".join(err.value.errors)
    assert "subsystem 1" in msg and "subsystem 2" in msg


def test_all_errors_are_collected():
    text = small_text().replace("N = 3", "N = 0").replace("T_sim = 4", "T_sim = -1")
    with pytest.raises(ConfigError) as err:
        loads_config(text)
    assert len(err.value.errors) >= 2


def test_parse_error_reports_position():
    with pytest.raises(ConfigError, match="line"):
        loads_config("name = \n")


def test_inadmissible_schedule_is_rejected():
    with pytest.raises(ConfigError, match="schedule"):
        loads_config(small_text().replace("[2, 2]", "[1, 2]"))


def test_tolerance_profile_from_environment(monkeypatch):
    cfg = loads_config(small_text())
    assert cfg.tolerances["name"] == "default"
    monkeypatch.setenv(TOLERANCE_ENV, "strict")
    assert cfg.tolerances == dict(eps=1e-4, audit_tol=1e-8, name="strict")
    assert cfg.to_spec().settings.eps == 1e-4
    monkeypatch.setenv(TOLERANCE_ENV, "bogus")
    with pytest.raises(ConfigError):
        tolerance_profile()


# ------------------------------------------------------------------ commands


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_run_writes_outputs(tmp_path, capsys):
    cfg = write(tmp_path, small_text())
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "small_dswmpc_trace.csv")
    assert rows[0] == trace_columns(2, 1)
    assert len(rows) == 1 + 2 * (4 + 1)
    final = [r for r in rows[1:] if r[0] == "4"]
    assert len(final) == 2 and all(r[2] == "" and r[4] != "" for r in final)
    status = json.loads((out / "small_dswmpc_status.json").read_text())
    assert status["exit_code"] == 0 and status["status"] == "ok"
    audit = json.loads((out / "small_dswmpc_audit.json").read_text())
    assert all(v["pass"] for v in audit.values())
    sse = json.loads((out / "small_dswmpc_sse.json").read_text())
    assert sse["total"] > 0


def test_exit_codes_of_bundled_failures(tmp_path):
    assert main(["run", "example2", "--strategy", "cswmpc", "--out", str(tmp_path)]) == EXIT_REFUSED
    assert main(["run", "example3", "--strategy", "deswmpc", "--out", str(tmp_path)]) == EXIT_INFEASIBLE
    status = json.loads((tmp_path / "example3_deswmpc_status.json").read_text())
    assert status["cause"] == "runtime infeasibility" and status["failure_step"] == 0


def test_config_errors_exit_two(tmp_path, capsys):
    bad = write(tmp_path, small_text().replace("dwell = 2", "dwell = 0"))
    assert main(["validate", str(bad)]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    assert "controller.dwell" in capsys.readouterr().err
    assert main(["compare", str(write(tmp_path, small_text(), "ok.toml")),
                 "--strategies", "nope"]) == EXIT_CONFIG


def test_validate_bundled(capsys):
    assert main(["validate", "example1"]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_sets_of_decoupled_network_have_point_tubes(tmp_path):
    cfg = write(tmp_path, small_text(coupled=False))
    assert main(["sets", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    Z = Polytope.from_text((tmp_path / "sets" / "sub1_mode1_Z.txt").read_text())
    for d in np.eye(2):
        assert abs(support(Z, d)) <= 1e-9 and abs(support(Z, -d)) <= 1e-9
    certs = json.loads((tmp_path / "sets" / "certificates.json").read_text())
    assert certs["all_pass"]
    assert (tmp_path / "sets" / "sub2_mode2_T.boundary.csv").exists()


def test_sets_report_empty_tightening(tmp_path):
    cfg = write(tmp_path, small_text(E=10.0))
    assert main(["sets", str(cfg), "--out", str(tmp_path)]) == EXIT_DESIGN
    certs = json.loads((tmp_path / "sets" / "certificates.json").read_text())
    assert certs["status"] == "design_failure"
    assert certs["error"]["set"] == "Xhat"


def test_compare_shows_dash_for_refused(tmp_path, capsys):
    cfg = write(tmp_path, small_text().replace("times_and_modes_known", "fully_unknown"))
    assert main(["compare", str(cfg), "--strategies", "dswmpc,cswmpc", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "small_compare.csv")
    table = {r[0]: r for r in rows[1:]}
    assert table["cswmpc"][1] == "-" and table["cswmpc"][2] == "refused"
    assert table["dswmpc"][1] != "-"
    assert "-" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "dswmpc", "validate", "example2"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "example2: ok" in res.stdout
