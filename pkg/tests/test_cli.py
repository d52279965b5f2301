import csv
import json

import pytest

from kadlab.cli import main


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestParsing:
    def test_help_lists_flags(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for flag in ("--profile", "--n", "--scheme", "--compare", "--churn",
                     "--lookups", "--runs", "--seed", "--out", "--config"):
            assert flag in out

    def test_unknown_flag(self, capsys):
        assert main(["simulate", "--bogus"]) == 1

    def test_invalid_profile(self):
        assert main(["simulate", "--profile", "chord"]) == 1

    def test_n_validation(self, tmp_path):
        assert main(["simulate", "--n", "0", "--out", str(tmp_path)]) == 1

    def test_runs_validation(self, tmp_path):
        assert main(["simulate", "--runs", "1", "--out", str(tmp_path)]) == 1

    def test_runtime_failure_exit_2(self, tmp_path):
        rc = main(["simulate", "--n", "20", "--runs", "2", "--lookups", "2",
                   "--churn", "-5", "--out", str(tmp_path)])
        assert rc == 2


class TestSimulate:
    def test_tiny_run_outputs(self, tmp_path):
        out = tmp_path / "o"
        rc = main(["simulate", "--profile", "kad", "--n", "60", "--runs", "2",
                   "--lookups", "10", "--seed", "1", "--out", str(out)])
        assert rc == 0
        rows = read_csv(out / "summary.csv")
        assert len(rows) == 1
        assert rows[0]["profile"] == "kad" and rows[0]["scheme"] == "standard"
        assert float(rows[0]["mean"]) >= 1.0
        cdf = read_csv(out / "cdf.csv")
        assert cdf[-1]["cumulative_fraction"] == "1"
        assert (out / "report.json").exists()

    def test_single_node_trivial(self, tmp_path):
        rc = main(["simulate", "--n", "1", "--runs", "2", "--lookups", "3",
                   "--out", str(tmp_path / "x")])
        assert rc == 0

    def test_compare_layout(self, tmp_path):
        out = tmp_path / "c"
        rc = main(["simulate", "--profile", "kad", "--n", "80", "--runs", "2",
                   "--lookups", "10", "--compare", "--out", str(out)])
        assert rc == 0
        rows = read_csv(out / "summary.csv")
        assert [r["scheme"] for r in rows] == ["standard", "diverse"]
        assert rows[1]["gain_pct"] != ""

    def test_byte_identical_rerun(self, tmp_path):
        args = ["simulate", "--profile", "kad", "--n", "60", "--runs", "2",
                "--lookups", "10", "--seed", "3"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        for name in ("summary.csv", "cdf.csv", "report.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_churn_flag_smoke(self, tmp_path):
        rc = main(["simulate", "--profile", "kad", "--n", "50", "--runs", "2",
                   "--lookups", "5", "--churn", "500", "--out", str(tmp_path / "ch")])
        assert rc == 0

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text('profile = "kad"\nn = 50\nruns = 2\nlookups = 5\nseed = 4\n')
        out = tmp_path / "cfg"
        rc = main(["simulate", "--config", str(cfg), "--lookups", "7", "--out", str(out)])
        assert rc == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["n"] == 50
        assert payload["lookups_per_run"] == 7  # flag overrides config

    def test_missing_config(self):
        assert main(["simulate", "--config", "/nope/missing.toml"]) == 1


class TestModelCmd:
    def test_h_max_one(self, tmp_path):
        out = tmp_path / "m"
        rc = main(["model", "--profile", "kad", "--n", "300", "--h-max", "1",
                   "--out", str(out)])
        assert rc == 0
        rows = read_csv(out / "model_cdf.csv")
        assert len(rows) == 1 and rows[0]["hops"] == "1"

    def test_summary_columns(self, tmp_path):
        out = tmp_path / "m2"
        rc = main(["model", "--profile", "kad", "--n", "300", "--scheme", "diverse",
                   "--h-max", "8", "--out", str(out)])
        assert rc == 0
        rows = read_csv(out / "model_summary.csv")
        assert list(rows[0]) == ["profile", "scheme", "n", "mean", "residual_mass"]
        assert rows[0]["scheme"] == "diverse"


class TestBoundsCmd:
    def test_single_point(self, tmp_path):
        out = tmp_path / "b"
        rc = main(["bounds", "--profile", "mdht", "--n-min", "5000", "--n-max", "5000",
                   "--points", "1", "--out", str(out)])
        assert rc == 0
        rows = read_csv(out / "bounds.csv")
        assert len(rows) == 1 and rows[0]["n"] == "5000"

    def test_empty_grid_usage_error(self, tmp_path):
        assert main(["bounds", "--points", "0", "--out", str(tmp_path)]) == 1


class TestCompareCmd:
    def test_self_join_zero_gap(self, tmp_path):
        out = tmp_path / "mm"
        assert main(["model", "--profile", "kad", "--n", "300", "--h-max", "8",
                     "--out", str(out)]) == 0
        # re-badge the model CDF as a simulation CDF
        rows = read_csv(out / "model_cdf.csv")
        sim = out / "sim_cdf.csv"
        with open(sim, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["profile", "scheme", "hops", "cumulative_fraction"])
            for r in rows:
                w.writerow([r["profile"], r["scheme"], r["hops"], r["cdf"]])
        rc = main(["compare", "--sim-cdf", str(sim),
                   "--model-cdf", str(out / "model_cdf.csv"), "--out", str(out)])
        assert rc == 0
        joined = read_csv(out / "model_vs_sim.csv")
        assert float(joined[0]["max_cdf_gap"]) == 0.0
        assert float(joined[0]["rel_mean_gap_pct"]) == 0.0

    def test_missing_input(self, tmp_path):
        assert main(["compare", "--sim-cdf", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path)]) == 1


class TestBitgainCmd:
    def test_values_and_dominance(self, tmp_path):
        out = tmp_path / "g"
        rc = main(["bitgain", "--l-min", "0", "--l-max", "2", "--k-set", "1,2,8",
                   "--out", str(out)])
        assert rc == 0
        rows = {(r["l"], r["k"]): r for r in read_csv(out / "bitgain.csv")}
        assert float(rows[("0", "2")]["bitgain_standard"]) == pytest.approx(5 / 3, abs=1e-6)
        assert float(rows[("0", "2")]["bitgain_diverse"]) == pytest.approx(2.0, abs=1e-6)
        assert all(r["dominant"] == "true" for r in rows.values())
        k1 = rows[("1", "1")]
        assert k1["bitgain_standard"] == k1["bitgain_diverse"]


class TestEnvAndDumps:
    def test_kadlab_threads_bound(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KADLAB_THREADS", "1")
        rc = main(["simulate", "--profile", "kad", "--n", "40", "--runs", "2",
                   "--lookups", "5", "--out", str(tmp_path / "t")])
        assert rc == 0

    def test_dump_tables(self, tmp_path):
        import json as _json

        out = tmp_path / "d"
        rc = main(["simulate", "--profile", "kad", "--n", "40", "--runs", "2",
                   "--lookups", "5", "--dump-tables", "3", "--out", str(out)])
        assert rc == 0
        lines = (out / "tables.jsonl").read_text().strip().splitlines()
        assert len(lines) == 3
        payload = _json.loads(lines[0])
        assert payload["scheme"] == "standard"
        from kadlab.routing import diversity_cdf_from_dumps
        diversity_cdf_from_dumps([_json.loads(l) for l in lines], 4)
