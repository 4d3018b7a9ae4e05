import hashlib
import json

import pytest

from ceqn.cli import (
    FetchError,
    GridSpec,
    build_compare_report,
    fetch_dataset,
    main,
    render_compare_text,
    select_winner,
)

from conftest import FIXTURE_LIBSVM


@pytest.fixture
def quadratic_config(tmp_path):
    path = tmp_path / "quad.json"
    path.write_text(json.dumps({
        "method": "CEQN",
        "problem": "quadratic",
        "dimension": 3,
        "approx_kind": "EXACT",
        "theta": 1.0,
        "max_iters": 50,
    }))
    return path


@pytest.fixture
def fixed_config(tmp_path):
    path = tmp_path / "fixed.json"
    path.write_text(json.dumps({
        "method": "FIXED",
        "dataset": str(FIXTURE_LIBSVM),
        "cubic": 10.0,
        "memory": 5,
        "max_iters": 30,
    }))
    return path


def strip_wall_seconds(text):
    rows = []
    for line in text.splitlines():
        parts = line.split(",")
        rows.append(",".join(parts[:1] + parts[2:]))
    return "\n".join(rows)


class TestRun:
    def test_quadratic_fixture_run(self, quadratic_config, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["run", "--config", str(quadratic_config), "--out", str(out)])
        assert code == 0
        run_dir = out / "ceqn-seed0"
        assert (run_dir / "trace.csv").exists()
        assert (run_dir / "summary.json").exists()
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["termination"] == "GRAD_TOL"
        assert summary["iterations"] == 1

    def test_broken_config_exits_nonzero(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"method": "FIXED"}))
        code = main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "dataset" in capsys.readouterr().err

    def test_equal_seeds_give_identical_traces_modulo_wall(
        self, fixed_config, tmp_path, capsys
    ):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main([
                "run", "--config", str(fixed_config), "--out", str(out),
                "--seed", "7", "--run-id", "r",
            ])
            assert code == 0
            outs.append((out / "r" / "trace.csv").read_text())
        assert strip_wall_seconds(outs[0]) == strip_wall_seconds(outs[1])
        assert outs[0].splitlines()[0] == outs[1].splitlines()[0]

    def test_override_changes_behavior(self, fixed_config, tmp_path, capsys):
        out = tmp_path / "out"
        code = main([
            "run", "--config", str(fixed_config), "--out", str(out),
            "--override", "max_iters=5", "--run-id", "short",
        ])
        assert code == 0
        summary = json.loads((out / "short" / "summary.json").read_text())
        assert summary["iterations"] == 5

    def test_numerical_failure_exits_nonzero(self, fixed_config, tmp_path, capsys):
        out = tmp_path / "out"
        code = main([
            "run", "--config", str(fixed_config), "--out", str(out),
            "--override", "cubic=1e-9", "--run-id", "boom",
        ])
        assert code == 1
        summary = json.loads((out / "boom" / "summary.json").read_text())
        assert summary["termination"] == "NUMERICAL_FAILURE"


class TestGrid:
    def test_degenerate_grid_equals_single_run(self, fixed_config, tmp_path, capsys):
        out = tmp_path / "grid"
        code = main([
            "grid", "--config", str(fixed_config), "--out", str(out),
            "--values", "10", "--seeds", "0",
        ])
        assert code == 0
        report = json.loads((out / "grid-report.json").read_text())
        assert len(report["rows"]) == 1
        assert report["winner"]["value"] == 10.0

        single = tmp_path / "single"
        main(["run", "--config", str(fixed_config), "--out", str(single),
              "--seed", "0", "--run-id", "solo"])
        grid_trace = (out / "fixed-cubic10-seed0" / "trace.csv").read_text()
        solo_trace = (single / "solo" / "trace.csv").read_text()
        assert strip_wall_seconds(grid_trace) == strip_wall_seconds(solo_trace)

    def test_diverging_value_recorded_not_fatal(self, fixed_config, tmp_path, capsys):
        out = tmp_path / "grid"
        code = main([
            "grid", "--config", str(fixed_config), "--out", str(out),
            "--values", "1e-9,10", "--seeds", "0,1",
        ])
        assert code == 0
        report = json.loads((out / "grid-report.json").read_text())
        assert len(report["rows"]) == 4
        statuses = {row["cubic"]: row["status"] for row in report["rows"]}
        assert statuses[1e-9] == "failed"
        assert report["winner"]["value"] == 10.0

    def test_winner_selection_is_pure(self, fixed_config, tmp_path, capsys):
        out = tmp_path / "grid"
        main([
            "grid", "--config", str(fixed_config), "--out", str(out),
            "--values", "3.16,10", "--seeds", "0,1,2",
        ])
        report = json.loads((out / "grid-report.json").read_text())
        again = select_winner(report["rows"], "cubic")
        assert again == report["winner"]

    def test_sweep_completeness(self, fixed_config, tmp_path, capsys):
        out = tmp_path / "grid"
        main([
            "grid", "--config", str(fixed_config), "--out", str(out),
            "--values", "1,10", "--seeds", "0,1,2", "--jobs", "2",
        ])
        report = json.loads((out / "grid-report.json").read_text())
        assert len(report["rows"]) == 6

    def test_concurrent_children_match_sequential(self, fixed_config, tmp_path, capsys):
        texts = {}
        for jobs, name in ((1, "seq"), (3, "par")):
            out = tmp_path / name
            main([
                "grid", "--config", str(fixed_config), "--out", str(out),
                "--values", "3.16,10", "--seeds", "0,1", "--jobs", str(jobs),
            ])
            texts[name] = strip_wall_seconds(
                (out / "fixed-cubic10-seed1" / "trace.csv").read_text()
            )
        assert texts["seq"] == texts["par"]

    def test_grid_spec_validation(self):
        with pytest.raises(ValueError):
            GridSpec("cubic", [])
        with pytest.raises(ValueError):
            GridSpec("cubic", [float("inf")])

    def test_builtin_presets_are_pinned(self):
        from ceqn.cli import GRID_PRESETS

        a9a = GRID_PRESETS["a9a-grid"]
        assert len(a9a) == 17
        assert a9a[0] == 1e-5 and a9a[-1] == 1e3
        assert a9a == sorted(a9a)
        realsim = GRID_PRESETS["realsim-grid"]
        assert len(realsim) == 15
        assert realsim[0] == 1e-5 and realsim[-1] == 20.0
        assert realsim == sorted(realsim)

    def test_sweeping_theta_for_closed_form(self, tmp_path, capsys):
        config = tmp_path / "ceqn.json"
        config.write_text(json.dumps({
            "method": "CEQN",
            "dataset": str(FIXTURE_LIBSVM),
            "cubic": 0.1,
            "max_iters": 10,
        }))
        out = tmp_path / "sweep"
        code = main([
            "grid", "--config", str(config), "--out", str(out),
            "--param", "theta", "--values", "1.0,2.0", "--seeds", "0",
        ])
        assert code == 0
        report = json.loads((out / "grid-report.json").read_text())
        assert {row["theta"] for row in report["rows"]} == {1.0, 2.0}


class TestCompare:
    def test_self_comparison_has_identical_columns(self, fixed_config, tmp_path, capsys):
        out = tmp_path / "runs"
        main(["run", "--config", str(fixed_config), "--out", str(out), "--run-id", "one"])
        report = build_compare_report([str(out), str(out)])
        assert len(report["methods"]) == 1
        text = render_compare_text(report)
        assert "FIXED" in text

    def test_compare_requires_two_sets(self, tmp_path, capsys):
        code = main(["compare", str(tmp_path)])
        assert code == 2

    def test_compare_cli_emits_json_and_text(self, fixed_config, quadratic_config, tmp_path, capsys):
        a = tmp_path / "a"
        b = tmp_path / "b"
        main(["run", "--config", str(fixed_config), "--out", str(a)])
        main(["run", "--config", str(quadratic_config), "--out", str(b)])
        code = main(["compare", str(a), str(b), "--out", str(tmp_path / "cmp.json")])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "methods" in stdout
        saved = json.loads((tmp_path / "cmp.json").read_text())
        assert {m["method"] for m in saved["methods"]} == {"FIXED", "CEQN"}

    def test_missing_trace_is_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad"
        bad.mkdir()
        (bad / "summary.json").write_text("{}")
        code = main(["compare", str(bad), str(bad)])
        assert code == 2


class TestFetch:
    def test_fetch_verifies_recorded_hash(self, tmp_path):
        payload = b"+1 1:1\n-1 2:1\n"
        digest = hashlib.sha256(payload).hexdigest()
        path = fetch_dataset(
            "tiny", tmp_path, url="memory://tiny",
            sha256=digest, fetcher=lambda url: payload,
        )
        assert path.read_bytes() == payload

    def test_fetch_rejects_mismatch(self, tmp_path):
        with pytest.raises(FetchError, match="hash mismatch"):
            fetch_dataset(
                "tiny", tmp_path, url="memory://tiny",
                sha256="0" * 64, fetcher=lambda url: b"data",
            )

    def test_fetch_records_hash_on_first_use(self, tmp_path):
        payload = b"contents"
        fetch_dataset("tiny", tmp_path, url="m://x", fetcher=lambda url: payload)
        recorded = (tmp_path / "tiny.sha256").read_text().strip()
        assert recorded == hashlib.sha256(payload).hexdigest()
        # second fetch with different bytes now fails verification
        with pytest.raises(FetchError):
            fetch_dataset("tiny", tmp_path, url="m://x", fetcher=lambda url: b"other")

    def test_unknown_dataset_without_url(self, tmp_path):
        with pytest.raises(FetchError, match="no URL"):
            fetch_dataset("mystery", tmp_path)

    def test_fetch_command_with_file_url(self, tmp_path, capsys):
        payload = b"+1 1:1\n-1 2:1\n"
        src = tmp_path / "src.libsvm"
        src.write_bytes(payload)
        digest = hashlib.sha256(payload).hexdigest()
        dest = tmp_path / "data"
        code = main([
            "fetch-data", "tiny", "--dest", str(dest),
            "--url", f"file://{src}", "--sha256", digest,
        ])
        assert code == 0
        assert (dest / "tiny").read_bytes() == payload
        code = main([
            "fetch-data", "tiny", "--dest", str(dest),
            "--url", f"file://{src}", "--sha256", "0" * 64,
        ])
        assert code == 1
        assert "hash mismatch" in capsys.readouterr().err
