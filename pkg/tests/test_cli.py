import json

from dmle_lab.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


BASE = ("run", "--dataset", "two-arcs", "--arcs-n", "100", "--cycles", "3",
        "--k", "2", "--seeds", "2", "--epochs-per-cycle", "3")


class TestUsageErrors:
    def test_unknown_selection_lists_valid_values(self, capsys):
        code, _, err = run_cli(capsys, "run", "--selection", "topq")
        assert code == 1
        assert "ssms" in err

    def test_unknown_dataset_lists_valid_values(self, capsys):
        code, _, err = run_cli(capsys, "run", "--dataset", "cifar")
        assert code == 1
        assert "two-arcs" in err and "csv:<path>" in err

    def test_unknown_verify_suite(self, capsys):
        code, _, err = run_cli(capsys, "verify", "everything")
        assert code == 1
        assert "gumbel" in err


class TestRun:
    def test_tiny_matrix_through_the_client(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, *BASE, "--out-dir", str(tmp_path))
        assert code == 0
        assert out.count("ok") >= 4
        assert "paired comparison" in out
        assert (tmp_path / "two-arcs_entropy_ssms_k2_b1" /
                "comparison.json").exists()

    def test_failed_cells_exit_2(self, capsys, tmp_path):
        code, out, err = run_cli(capsys, "run", "--dataset", "two-arcs",
                                 "--arcs-n", "60", "--cycles", "500",
                                 "--seeds", "1", "--out-dir", str(tmp_path))
        assert code == 2
        assert "failed" in out + err

    def test_env_var_overrides_out_dir(self, capsys, tmp_path, monkeypatch):
        env_dir = tmp_path / "from-env"
        monkeypatch.setenv("DMLE_LAB_OUT", str(env_dir))
        code, _, _ = run_cli(capsys, *BASE, "--out-dir", str(tmp_path / "flag"))
        assert code == 0
        assert env_dir.exists()
        assert not (tmp_path / "flag").exists()

    def test_csv_dataset_via_flag(self, capsys, tmp_path):
        csv = tmp_path / "toy.csv"
        rows = ["f0,f1,label"]
        rows += [f"{i * 0.1},{(i % 3) * 0.5},{i % 2}" for i in range(40)]
        csv.write_text("\n".join(rows) + "\n")
        code, out, _ = run_cli(capsys, "run", "--dataset", f"csv:{csv}",
                               "--cycles", "2", "--k", "1", "--seeds", "1",
                               "--epochs-per-cycle", "2", "--estimator", "imle",
                               "--out-dir", str(tmp_path / "out"))
        assert code == 0


class TestConfigFile:
    def test_key_value_config(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("dataset=two-arcs\narcs-n=100\ncycles=3\nk=2\n"
                       "seeds=1\nepochs-per-cycle=2\nestimator=imle\n"
                       f"out-dir={tmp_path / 'out'}\n")
        code, out, _ = run_cli(capsys, "run", "--config", str(cfg))
        assert code == 0
        assert (tmp_path / "out").exists()

    def test_json_config_mirrors_flags(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({
            "dataset": "two-arcs", "arcs_n": 100, "cycles": 3, "k": 2,
            "seeds": 1, "epochs_per_cycle": 2, "estimator": "imle",
            "out_dir": str(tmp_path / "out")}))
        code, _, _ = run_cli(capsys, "run", "--config", str(cfg))
        assert code == 0
        assert (tmp_path / "out").exists()

    def test_explicit_flag_beats_config_value(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({
            "dataset": "two-arcs", "arcs_n": 100, "cycles": 3, "k": 2,
            "seeds": 1, "epochs_per_cycle": 2, "estimator": "imle",
            "out_dir": str(tmp_path / "ignored")}))
        code, _, _ = run_cli(capsys, "run", "--config", str(cfg),
                             "--out-dir", str(tmp_path / "flagged"))
        assert code == 0
        assert (tmp_path / "flagged").exists()
        assert not (tmp_path / "ignored").exists()

    def test_unknown_config_key_is_usage_error(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("no-such-flag=1\n")
        code, _, err = run_cli(capsys, "run", "--config", str(cfg))
        assert code == 1
        assert "no_such_flag" in err


class TestVerify:
    def test_failing_suite_exits_3(self, capsys, tmp_path, monkeypatch):
        from dmle_lab import verification

        def broken():
            return verification.SuiteReport("theorems", False,
                                            ["  FAIL synthetic: 1.0e+00"])
        monkeypatch.setattr(verification, "verify_theorems", broken)
        code, out, err = run_cli(capsys, "verify", "theorems",
                                 "--out-dir", str(tmp_path))
        assert code == 3
        assert "overall: FAIL" in out

    def test_theorems_pass_with_report_file(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "verify", "theorems",
                               "--out-dir", str(tmp_path))
        assert code == 0
        assert "overall: PASS" in out
        assert (tmp_path / "verification-theorems.txt").exists()

    def test_reports_are_byte_identical(self, capsys, tmp_path):
        run_cli(capsys, "verify", "theorems", "--out-dir", str(tmp_path / "a"))
        run_cli(capsys, "verify", "theorems", "--out-dir", str(tmp_path / "b"))
        a = (tmp_path / "a" / "verification-theorems.txt").read_bytes()
        b = (tmp_path / "b" / "verification-theorems.txt").read_bytes()
        assert a == b

    def test_verify_all_runs_every_suite_deterministically(self, capsys, tmp_path):
        code_a, out_a, _ = run_cli(capsys, "verify", "all",
                                   "--out-dir", str(tmp_path / "a"))
        code_b, out_b, _ = run_cli(capsys, "verify", "all",
                                   "--out-dir", str(tmp_path / "b"))
        assert code_a == code_b == 0
        assert out_a == out_b
        for suite in ("gumbel", "gradients", "theorems"):
            assert f"suite {suite}" in out_a
        a = (tmp_path / "a" / "verification-all.txt").read_bytes()
        b = (tmp_path / "b" / "verification-all.txt").read_bytes()
        assert a == b
