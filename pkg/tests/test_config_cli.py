import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from transmon_open.cli import main
from transmon_open.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def base(**over):
    d = {
        "chain": {"L": 3},
        "params": {"U_MHz": 230, "J_MHz": 20},
        "initial_state": "1_1 1_2",
        "evolution": {"method": "master", "t_max_us": 0.05, "n_points": 6},
    }
    d.update(over)
    return d


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    manifest = [l for l in lines if l.startswith("#")]
    body = [l for l in lines if not l.startswith("#")]
    rows = list(csv.reader(body))
    return manifest, rows[0], np.array(rows[1:], dtype=float) if len(rows) > 1 else np.zeros((0, len(rows[0])))


def test_units_converted():
    cfg = parse_config(base(params={"U_MHz": 230, "J_MHz": 20, "gamma_kHz": 8, "omega_GHz": [5.0, 5.1, 5.2]}))
    p = cfg.params
    assert p.U[0] == pytest.approx(2 * math.pi * 230)
    assert p.gamma[0] == pytest.approx(2 * math.pi * 8e-3)
    assert p.omega[1] == pytest.approx(2 * math.pi * 5100)
    assert p.rotating_frame


def test_superposition_and_sector_space():
    cfg = parse_config(base(
        initial_state={"superposition": [{"state": "2_1", "re": 1}, {"state": "0110", "im": 1}]},
        chain={"L": 4},
        params={"U_MHz": 230, "J_MHz": 20, "gamma_kHz": 1},
    ))
    assert cfg.N == 2
    assert cfg.space().Ns == [0, 1, 2]
    assert cfg.initial[(0, 1, 1, 0)] == 1j


@pytest.mark.parametrize(
    "data,fragment",
    [
        (base(chain={"L": 0}), "chain/L"),
        (base(params={"U_MHz": 230, "J_MHz": [1, 2, 3]}), "J_MHz"),
        (base(params={"U_MHz": 230, "U_kHz": 1, "J_MHz": 20}), "more than one unit"),
        (base(params={"J_MHz": 20}), "missing U"),
        (base(params={"U_MHz": 230, "J_MHz": 20, "bogus": 1}), "params"),
        (base(initial_state="4_7"), "initial_state"),
        (base(initial_state={"superposition": [{"state": "1_1"}, {"state": "1_2", "re": 0}]}), "all weights are zero"),
        (base(initial_state={"superposition": [{"state": "1_1", "re": 1}, {"state": "2_2", "re": 1}]}), "one photon-number sector"),
        (base(chain={"L": 3, "d_max": 1}, initial_state="2_1"), "d_max"),
        (base(evolution={"n_points": 1}), "evolution/n_points"),
        (base(params={"U_MHz": -1, "J_MHz": 20}), "params"),
    ],
)
def test_config_errors_name_the_field(data, fragment):
    with pytest.raises(ConfigError) as err:
        parse_config(data)
    assert fragment in str(err.value)


def test_json_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "chain": {"L": 3},\n  "params": {,}\n}')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.L in (3, 4, 5)


def test_evolve_master_writes_manifest_csv(tmp_path, capsys):
    data = base(observables=["n_1", "n_2", "n_3", "P_N2", "P_a0", "coh_110_101", "purity"],
                output={"path": "run", "dump_states": True})
    rc = main(["evolve", "--config", str(write(tmp_path, data)), "--out", str(tmp_path / "o")])
    assert rc == 0
    manifest, header, vals = read_csv(tmp_path / "o" / "run.csv")
    assert manifest and all(l.startswith("# ") for l in manifest)
    assert any("version" in l for l in manifest) and any("seed" in l for l in manifest)
    assert header == ["t_us", "n_1", "n_2", "n_3", "P_N2", "P_a0", "coh_110_101", "purity"]
    assert vals.shape == (6, 8)
    assert np.allclose(vals[:, 1:4].sum(axis=1), 2)
    assert np.allclose(vals[:, 8 - 1], 1)
    resolved = json.loads((tmp_path / "o" / "run_manifest.json").read_text())
    assert resolved["U_rad_per_us"][0] == pytest.approx(2 * math.pi * 230)
    dumps = sorted((tmp_path / "o").glob("run_rho_*.txt"))
    assert len(dumps) == 6
    assert dumps[0].read_text().startswith("# 6 6 ")


def test_zero_rates_equal_unitary(tmp_path):
    from scipy.linalg import expm

    from transmon_open.model import build_hamiltonian

    data = base(evolution={"method": "master", "t_max_us": 0.05, "n_points": 6})
    main(["evolve", "--config", str(write(tmp_path, data)), "--out", str(tmp_path)])
    _, _, vals = read_csv(tmp_path / "cfg.csv")
    cfg = parse_config(data)
    b = cfg.space().sectors[0]
    H = build_hamiltonian(cfg.params, b).toarray()
    psi0 = np.zeros(len(b), complex)
    psi0[b.find((1, 1, 0))] = 1
    for row in vals:
        pr = np.abs(expm(-1j * H * row[0]) @ psi0) ** 2
        assert np.allclose(row[1:4], pr @ b.occupations, atol=1e-10)


def traj_config():
    return base(
        params={"U_MHz": 230, "J_MHz": 20, "gamma_kHz": 800, "kappa_kHz": 4000},
        evolution={"method": "trajectories", "t_max_us": 0.5, "n_points": 11, "n_traj": 60, "seed": 4},
        output={"jump_log": True},
    )


def test_trajectories_byte_identical_across_threads(tmp_path):
    cfg = write(tmp_path, traj_config())
    outs = []
    for i, threads in enumerate(["1", "3", "0", "1"]):
        d = tmp_path / f"o{i}"
        assert main(["evolve", "--config", str(cfg), "--out", str(d), "--threads", threads]) == 0
        outs.append(((d / "cfg.csv").read_bytes(), (d / "cfg_jumps.csv").read_bytes()))
    assert all(o == outs[0] for o in outs)
    lines = [l for l in (tmp_path / "o0" / "cfg_jumps.csv").read_text().splitlines() if not l.startswith("#")]
    assert lines[0] == "trajectory,t_us,kind,site"
    kinds = {row[2] for row in csv.reader(lines[1:])}
    assert kinds <= {"dissipation", "dephasing"} and kinds


def test_seed_flag_overrides(tmp_path):
    cfg = write(tmp_path, traj_config())
    main(["evolve", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["evolve", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "99"])
    main(["evolve", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "4"])
    a, b, c = ((tmp_path / x / "cfg.csv").read_text() for x in "abc")
    assert a == c and a != b
    assert "# seed = 99" in b


def test_trajectory_flags_and_postselection(tmp_path):
    cfg = write(tmp_path, base(params={"U_MHz": 230, "J_MHz": 20, "gamma_kHz": 800}))
    rc = main(["evolve", "--config", str(cfg), "--out", str(tmp_path), "--trajectories", "20", "--postselect-N", "2"])
    assert rc == 0
    _, header, vals = read_csv(tmp_path / "cfg.csv")
    assert header[-1] == "n_contributing" and "n_1_se" in header
    assert vals[0, -1] == 20 and np.all(np.diff(vals[:, -1]) <= 0)


def test_trajectories_reject_non_diagonal_observable(tmp_path, capsys):
    cfg = write(tmp_path, base(observables=["purity"], evolution={"method": "trajectories", "n_traj": 2}))
    assert main(["evolve", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "observables" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, base(chain={"L": "four"}))
    assert main(["evolve", "--config", str(cfg)]) == 1
    assert "chain/L" in capsys.readouterr().err
    cfg = write(tmp_path, base(observables=["n_9"]))
    assert main(["basis", "--config", str(cfg), "--out", str(tmp_path)]) in (0, 1)
    assert main(["evolve", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_numeric_failure_exit_code(tmp_path, capsys):
    data = base(evolution={"method": "master", "integrator": "rk45", "t_max_us": 1.0, "n_points": 2,
                           "rtol": 1e-300, "atol": 1e-300})
    assert main(["evolve", "--config", str(write(tmp_path, data)), "--out", str(tmp_path)]) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_predict_tables(tmp_path, capsys):
    assert main(["predict", "--config", str(CONFIGS / "coherence_stacks.json"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "Gamma_closed_stack_down" in out
    _, header, _ = read_csv(tmp_path / "coherence_stacks_predict_series.csv")
    assert header == ["t_us", "P_a-3", "P_a-1", "P_a0"]
    rows = list(csv.reader(l for l in (tmp_path / "coherence_stacks_predict.csv").read_text().splitlines() if not l.startswith("#")))
    table = {r[0]: r for r in rows[1:] if r[0] != "Gamma"}
    kk = float(table["K_kappa"][3])
    assert kk == pytest.approx(9 * 2 * math.pi * 0.04)
    # invalid closed forms are listed with a reason
    assert "singular" in table["Gamma_closed_b1_b2"][4]
    closed = float(table["Gamma_closed_stack_down"][3])
    trace = [float(r[3]) for r in rows[1:] if r[0] == "Gamma" and r[1] == "-3" and r[2] == "-1"]
    assert closed == pytest.approx(trace[0], rel=1e-10)


def test_predict_gamma_only_has_no_rates(tmp_path, capsys):
    data = base(params={"U_MHz": 230, "J_MHz": 20, "gamma_kHz": 8}, predict={"pairs": [["110", "011"]]})
    assert main(["predict", "--config", str(write(tmp_path, data)), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "\nGamma" not in out
    assert "K_gamma,110,011" in out
    _, header, vals = read_csv(tmp_path / "cfg_predict_series.csv")
    assert header == ["t_us", "P_N0", "P_N1", "P_N2"]
    assert np.allclose(vals[:, 1:].sum(axis=1), 1)


def test_predict_single_boson_jtilde(tmp_path, capsys):
    data = base(initial_state="1_2")
    main(["predict", "--config", str(write(tmp_path, data)), "--out", str(tmp_path)])
    out = capsys.readouterr().out
    row = [l for l in out.splitlines() if l.startswith("J_tilde")][0].split(",")
    assert float(row[3]) == pytest.approx(2 * math.pi * 20)


def test_compare_pass_and_fail(tmp_path, capsys):
    data = base(params={"U_MHz": 230, "J_MHz": 20, "gamma_kHz": 800},
                evolution={"method": "master", "t_max_us": 2, "n_points": 11},
                compare={"checks": [{"kind": "sector_law", "tol": 1e-6}]})
    assert main(["compare", "--config", str(write(tmp_path, data)), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "cfg_compare_summary.json").read_text())
    assert summary["pass"] and summary["checks"][0]["value"] < 1e-6
    _, header, _ = read_csv(tmp_path / "cfg_compare.csv")
    assert "P_N2_numeric" in header and "P_N2_predicted" in header
    data["compare"]["checks"][0]["tol"] = 1e-300
    assert main(["compare", "--config", str(write(tmp_path, data)), "--out", str(tmp_path)]) == 3
    assert "sector_law" in capsys.readouterr().err


def test_compare_trajectory_vs_master(tmp_path, capsys):
    data = traj_config()
    data["evolution"]["n_traj"] = 400
    data["compare"] = {"checks": [{"kind": "trajectory_vs_master", "tol": 3.0, "fraction": 0.9}]}
    rc = main(["compare", "--config", str(write(tmp_path, data)), "--out", str(tmp_path)])
    summary = json.loads((tmp_path / "cfg_compare_summary.json").read_text())
    assert rc == (0 if summary["pass"] else 3)
    assert summary["checks"][0]["value"] >= 0.9
    _, header, _ = read_csv(tmp_path / "cfg_compare.csv")
    assert "n_1_z" in header


def test_basis_inventory(tmp_path, capsys):
    data = base(chain={"L": 4}, initial_state="3_2")
    assert main(["basis", "--config", str(write(tmp_path, data)), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "N,a,manifold_dim,sector_dim"
    assert "3,-3,4,20" in out and "3,0,4,20" in out and "3,-1,12,20" in out
