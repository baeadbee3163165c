import csv
import io
import json
import subprocess
import sys

import pytest

from ncphi4.cli import main


def run(capsys, *args):
    code = main(list(args))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_counterterms_rows(capsys):
    code, out, _ = run(capsys, "counterterms", "--cutoff", "100")
    assert code == 0
    assert len(rows(out)) == 101


def test_counterterms_small_cutoff_value(capsys):
    _, out, _ = run(capsys, "counterterms", "--cutoff", "2")
    assert float(rows(out)[0]["T_m"]) == pytest.approx(11 / 6, rel=1e-15)


def test_counterterms_asymptotic_report(capsys):
    _, out, _ = run(capsys, "counterterms", "--cutoff", "100000", "--report-asymptotic", "--format", "json")
    d = json.loads(out)
    assert set(d) == {"meta", "data"}
    assert abs(d["data"]["T2_over_cutoff"] - 2.6058) / 2.6058 < 0.05


def test_cancellation_exit_codes(capsys):
    assert run(capsys, "cancellation", "--order", "1")[0] == 0
    code, out, _ = run(capsys, "cancellation", "--order", "2")
    assert code == 0
    assert len(rows(out)) == 10 and all(r["residual"] == "0" for r in rows(out))
    code, out, err = run(capsys, "cancellation", "--order", "2", "--cutoffs", "1-2", "--perturb-multiplicity")
    assert code == 1
    assert "residual" in err
    assert run(capsys, "cancellation", "--order", "2", "--cutoffs", "11")[0] == 2


def test_cancellation_exact_convention(capsys):
    code, out, _ = run(capsys, "cancellation", "--order", "2", "--convention", "exact", "--cutoffs", "1-3")
    assert code == 0


def test_lve_zero_coupling(capsys):
    code, out, _ = run(capsys, "lve", "--lambda", "0", "--samples", "1000", "--seed", "3", "--format", "json")
    assert code == 0
    assert json.loads(out)["data"]["value"] == {"re": 0.0, "im": 0.0}


def test_lve_requires_seed_and_samples(capsys):
    assert run(capsys, "lve", "--samples", "2000")[0] == 2
    assert run(capsys, "lve", "--samples", "10", "--seed", "1")[0] == 2
    assert run(capsys, "lve", "--samples", "2000", "--seed", "-1")[0] == 2


def test_lve_deterministic_across_workers(capsys):
    args = ["lve", "--cutoff", "2", "--lambda", "0.02", "--nmax", "2", "--samples", "3000", "--seed", "9"]
    _, a, _ = run(capsys, *args, "--workers", "1")
    _, b, _ = run(capsys, *args, "--workers", "4")
    assert a == b
    kinds = [r["kind"] for r in rows(a)]
    assert kinds.count("tree") == 2 and "oracle" in kinds


def test_graphs_order_one(capsys):
    code, out, _ = run(capsys, "graphs", "--order", "1")
    assert code == 0
    data = json.loads(out)["data"]["rows"]
    vacuum = [r for r in data if r["externals"] == 0]
    assert sum(r["multiplicity"] for r in vacuum) == 3
    assert sorted(r["face_weight"] for r in data if r["flagged"]) == [6, 8]


def test_borel_euler(capsys):
    code, out, _ = run(capsys, "borel", "--euler", "--lambda", "0.1")
    assert code == 0
    assert abs(float(rows(out)[0]["borel_sum"]) - 0.91563) < 1e-5


def test_borel_rejects_pole_on_ray(capsys):
    code, _, err = run(capsys, "borel", "--euler", "--lambda", "-0.1")
    assert code == 2


def test_nelson(capsys):
    code, out, _ = run(capsys, "nelson", "--cutoff", "100", "--lambda", "0.1", "--a", "auto")
    assert code == 0
    d = json.loads(out)["data"]
    assert d["a"] == pytest.approx(0.14)
    assert "budget_ok" in d and d["restricted_ok"]


def test_config_file_and_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\ncutoff = 2\nformat = json\n")
    _, out, _ = run(capsys, "counterterms", "--config", str(cfg))
    d = json.loads(out)
    assert d["meta"]["cutoff"] == 2 and len(d["data"]["rows"]) == 3
    _, out, _ = run(capsys, "counterterms", "--config", str(cfg), "--cutoff", "4", "--format", "csv")
    assert len(rows(out)) == 5
    cfg.write_text("nonsense = 1\n")
    assert run(capsys, "counterterms", "--config", str(cfg))[0] == 2
    cfg.write_text("no equals sign\n")
    assert run(capsys, "counterterms", "--config", str(cfg))[0] == 2


def test_output_directory_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("NCPHI4_OUTPUT_DIR", str(tmp_path))
    code, out, _ = run(capsys, "counterterms", "--cutoff", "3")
    assert code == 0 and out == ""
    assert len(rows((tmp_path / "counterterms.csv").read_text())) == 4
    run(capsys, "counterterms", "--cutoff", "3", "-o", "sub/t.csv")
    assert (tmp_path / "sub" / "t.csv").exists()


def test_invalid_arguments_exit_two(capsys):
    assert run(capsys, "counterterms", "--cutoff", "0")[0] == 2
    assert run(capsys, "counterterms", "--theta", "-1")[0] == 2
    assert run(capsys, "nosuchcommand")[0] == 2
    assert run(capsys, "graphs", "--order", "9")[0] == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ncphi4", "counterterms", "--cutoff", "1"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    assert r.stdout.splitlines()[0] == "m,T_m"
