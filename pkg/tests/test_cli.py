import csv
import json

import pytest

from hygamp_dcs import harness
from hygamp_dcs.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from hygamp_dcs.gamp import DivergenceError
from hygamp_dcs.harness import CSV_COLUMNS

SMALL = {"system": {"N": 60, "p_a": 0.2}, "axes": {"snr_db": [0.0], "L": [30], "T": [3]},
         "solver": {"i_max": 60}, "em": {"grid": [0.0, 10.0, 20.0], "se_samples": 2000,
                                         "se_iters": 20}}


@pytest.fixture
def config(tmp_path):
    def make(**over):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**SMALL, **over}))
        return str(path)
    return make


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_writes_exact_columns(config, tmp_path):
    out = tmp_path / "r.csv"
    rc = main(["simulate", "--config", config(), "--trials", "3", "--seed", "5",
               "--algo", "all", "--out", str(out)])
    assert rc == EXIT_OK
    table = rows(out)
    assert tuple(table[0]) == CSV_COLUMNS
    assert len(table) == 1 + 3 * 3
    assert {r[1] for r in table[1:]} == {"hygamp_dcs", "forward_only", "gamp"}
    assert (tmp_path / "r.summary.csv").exists()


def test_simulate_to_stdout(config, capsys):
    assert main(["simulate", "--config", config(), "--trials", "1"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0] == ",".join(CSV_COLUMNS)


def test_seed_flag_is_reproducible(config, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        main(["simulate", "--config", config(), "--trials", "2", "--seed", "0x2a",
              "--out", str(path)])
    strip = lambda t: [r[:-1] for r in t]   # runtime differs
    assert strip(rows(a)) == strip(rows(b))


def test_em_algorithm_runs_with_fixed_snr0(config, tmp_path):
    out = tmp_path / "em.csv"
    rc = main(["simulate", "--config", config(em={"snr0_db": 15.0}), "--trials", "2",
               "--algo", "em_hygamp_dcs", "--out", str(out)])
    assert rc == EXIT_OK
    assert all(r[1] == "em_hygamp_dcs" for r in rows(out)[1:])


def test_em_algorithm_runs_with_auto_snr0(config, tmp_path):
    out = tmp_path / "em.csv"
    rc = main(["simulate", "--config", config(), "--trials", "1", "--algo", "em_hygamp_dcs",
               "--out", str(out)])
    assert rc == EXIT_OK
    with open(tmp_path / "em.summary.csv", newline="") as fh:
        (agg,) = list(csv.DictReader(fh))
    assert float(agg["snr0_db"]) in (0.0, 10.0, 20.0)


@pytest.mark.parametrize("over", [{"unknown": 1}, {"trials": 0}, {"axes": {"snr_db": []}}])
def test_config_errors_exit_2(config, over):
    assert main(["simulate", "--config", config(**over)]) == EXIT_CONFIG


def test_missing_config_file_exits_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.yaml")]) == EXIT_CONFIG


def test_simulate_rejects_multi_cell(config):
    cfg = config(axes={"snr_db": [0.0, 5.0], "L": [30], "T": [3]})
    assert main(["simulate", "--config", cfg]) == EXIT_CONFIG


def test_bad_algo_flag_is_usage_error(config):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--config", config(), "--algo", "magic"])
    assert exc.value.code == 2


def test_all_diverged_exits_3(config, tmp_path, monkeypatch):
    def boom(*args, **kw):
        raise DivergenceError("blew up", iteration=1)

    monkeypatch.setitem(harness.ALGORITHMS, "hygamp_dcs", boom)
    out = tmp_path / "d.csv"
    assert main(["simulate", "--config", config(), "--trials", "2", "--out", str(out)]) \
        == EXIT_DIVERGED
    assert len(rows(out)) == 3


def test_sweep_writes_one_summary_row_per_cell_and_algo(config, tmp_path):
    cfg = config(axes={"snr_db": [0.0, 10.0], "L": [30], "T": [1, 3]})
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", cfg, "--trials", "2", "--algo", "hygamp_dcs,gamp",
                 "--out", str(out)]) == EXIT_OK
    assert len(rows(out)) == 1 + 4 * 2 * 2
    assert len(rows(tmp_path / "s.summary.csv")) == 1 + 4 * 2


def test_se_subcommand(config, tmp_path):
    out = tmp_path / "se.csv"
    assert main(["se", "--config", config(), "--samples", "2000", "--iters", "7",
                 "--out", str(out)]) == EXIT_OK
    table = rows(out)
    assert table[0][:4] == ["cell_id", "iteration", "tau_r_mean", "tnmse_db"]
    assert len(table) == 1 + 7


def test_em_init_subcommand(config, tmp_path):
    out = tmp_path / "init.csv"
    assert main(["em-init", "--config", config(), "--out", str(out)]) == EXIT_OK
    table = rows(out)
    assert len(table) == 1 + 3
    assert sum(int(r[table[0].index("chosen")]) for r in table[1:]) == 1
