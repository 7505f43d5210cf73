"""Command-line behavior: outputs, formats, exit codes."""

import io
import json

import pytest

from convbudget import zoo
from convbudget.cli import EXIT_INPUT, EXIT_OK, EXIT_VERIFICATION, main
from convbudget.notation import save_architecture


@pytest.fixture()
def arch_files(tmp_path, zoo_arch):
    paths = {}
    for name in ("A", "B", "E", "J"):
        path = tmp_path / f"{name.lower()}.arch"
        save_architecture(zoo_arch(name), path)
        paths[name] = str(path)
    return paths


def run(argv):
    out = io.StringIO()
    code = main(argv, out=out)
    return code, out.getvalue()


class TestAnalyze:
    def test_relative_one_against_self(self, arch_files):
        code, text = run(["analyze", arch_files["A"], "--baseline", arch_files["A"]])
        assert code == EXIT_OK
        assert "relative-to A 1.00" in text
        assert "total 854954688" in text

    def test_relative_j_vs_a(self, arch_files):
        code, text = run(["analyze", arch_files["J"], "--baseline", arch_files["A"]])
        assert code == EXIT_OK
        assert "0.97" in text  # exact 0.9702; printed at two decimals

    def test_json_round_trips_totals(self, arch_files):
        code, text = run(["analyze", arch_files["A"], "--baseline",
                          arch_files["A"], "--format", "json"])
        assert code == EXIT_OK
        payload = json.loads(text)
        assert payload["total"] == sum(row["term"] for row in payload["layers"])
        assert payload["relative"]["numerator"] == payload["relative"]["denominator"]
        assert payload["train_estimate"] == 3 * payload["total"]

    def test_parse_error_exits_2(self, tmp_path):
        bad = tmp_path / "broken.arch"
        bad.write_text("(7,64/2\n")
        code, _ = run(["analyze", str(bad)])
        assert code == EXIT_INPUT

    def test_missing_file_exits_2(self):
        code, _ = run(["analyze", "/nonexistent/x.arch"])
        assert code == EXIT_INPUT


class TestDiff:
    def test_identity(self, arch_files):
        code, text = run(["diff", arch_files["A"], arch_files["A"]])
        assert code == EXIT_OK
        assert "whole-model ratio 1.00" in text

    def test_a_vs_b_stage3(self, arch_files):
        code, text = run(["diff", arch_files["A"], arch_files["B"]])
        assert code == EXIT_OK
        assert "whole-model ratio 0.96" in text

    def test_e_vs_j_new_stage(self, arch_files):
        code, text = run(["diff", arch_files["E"], arch_files["J"], "--format", "json"])
        payload = json.loads(text)
        stage4 = [s for s in payload["stages"] if s["stage"] == 4][0]
        assert stage4["before"] == "-"
        assert payload["ratio"]["display"] == "0.98"


class TestRewrite:
    def test_scripted_a_to_j(self, arch_files, tmp_path):
        script = zoo.zoo_dir() / "scripts" / "a_to_j.rwr"
        out_path = tmp_path / "out.arch"
        code, text = run(["rewrite", arch_files["A"], "--script", str(script),
                          "-o", str(out_path)])
        assert code == EXIT_OK
        assert "PASS" in text
        from convbudget.notation import load_architecture, render_architecture
        produced = load_architecture(out_path)
        assert render_architecture(produced) == render_architecture(zoo.load("J"))

    def test_budget_increase_requires_flag(self, arch_files, tmp_path):
        script = tmp_path / "grow.rwr"
        script.write_text("append-depth count=2 filter=2 width=256\n")
        code, _ = run(["rewrite", arch_files["A"], "--script", str(script)])
        assert code == EXIT_INPUT
        code, text = run(["rewrite", arch_files["A"], "--script", str(script),
                          "--allow-budget-increase"])
        assert code == EXIT_VERIFICATION  # grew the budget beyond tolerance
        assert "FAIL" in text

    def test_tight_tolerance_fails_verification(self, arch_files, tmp_path):
        script = tmp_path / "c.rwr"
        script.write_text("factorize-filter stage=2 layer=0 scheme=5to3x3\n")
        code, _ = run(["rewrite", arch_files["A"], "--script", str(script),
                       "--tolerance", "0.001"])
        assert code == EXIT_VERIFICATION


class TestSearch:
    def test_zero_steps_echoes_baseline(self, arch_files):
        code, text = run(["search", "--baseline", arch_files["A"], "--steps", "0"])
        assert code == EXIT_OK
        assert "(7,64)/2 | P3/3 | (5,128) | P2/2 | (3,256)x3" in text

    def test_traces_are_emitted_and_replayable(self, arch_files, tmp_path):
        trace_dir = tmp_path / "traces"
        code, _ = run(["search", "--baseline", arch_files["A"], "--steps", "1",
                       "--beam", "4", "--top", "4",
                       "--emit-traces", str(trace_dir)])
        assert code == EXIT_OK
        files = sorted(trace_dir.glob("*.rwr"))
        assert files
        from convbudget.rewrite import parse_script, run_script
        from convbudget.notation import load_architecture
        baseline = load_architecture(arch_files["A"])
        for f in files:
            steps = parse_script(f.read_text())
            run_script(baseline, steps, allow_budget_increase=True)


class TestZooCommand:
    def test_list_names(self):
        code, text = run(["zoo"])
        assert code == EXIT_OK
        for name in ("A", "J'", "VGG-16-conv"):
            assert name in text.splitlines()

    def test_check_passes(self):
        code, text = run(["zoo", "--check"])
        assert code == EXIT_OK
        assert "FAIL" not in text
        assert "SKIP" in text  # the budget-scalar entry

    def test_show(self):
        code, text = run(["zoo", "--show", "J"])
        assert code == EXIT_OK
        assert "(2,2304)" in text

    def test_failed_check_prints_breakdown_and_exits_1(self, tmp_path, monkeypatch):
        # copy the shipped fixtures, then squeeze one band until it must fail
        import json
        import shutil

        src = zoo.zoo_dir()
        dst = tmp_path / "zoo"
        shutil.copytree(src, dst)
        manifest_path = dst / "data" / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        for entry in manifest["entries"]:
            if entry["name"] == "B":
                entry["tolerance"] = "0.0001"
        manifest_path.write_text(json.dumps(manifest))
        monkeypatch.setenv(zoo.ZOO_DIR_ENV, str(dst))
        code, text = run(["zoo", "--check"])
        assert code == EXIT_VERIFICATION
        assert "FAIL" in text
        assert "out of bounds" in text
        assert "n_prev" in text  # per-layer breakdown is printed, not hidden


class TestBenchCommand:
    def test_csv_columns(self, tmp_path, zoo_arch):
        small = tmp_path / "small.arch"
        small.write_text("# input_size: 32\n# input_channels: 3\n"
                         "(3,8) | P2/2 | (3,16)\n")
        csv_path = tmp_path / "out.csv"
        code, text = run(["bench", str(small), "--scale", "1", "--repeats", "5",
                          "--warmup", "1", "--csv", str(csv_path)])
        assert code == EXIT_OK
        header = csv_path.read_text().splitlines()[0]
        assert header == "layer,s,n_prev,n,m,theoretical,median_ns,ns_per_unit"
        assert "pooling wall total" in text
