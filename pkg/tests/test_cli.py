"""mixctl end-to-end behavior through main(argv)."""

import hashlib
import json

import numpy as np
import pytest

from conftest import additive_truth, grid_design
from mixlaw.cli import main, parse_mixture_flag
from mixlaw.core import validate_mixture
from mixlaw.errors import InvalidMixture
from mixlaw.laws import AdditiveParams, LawParams
from mixlaw.runstore import make_artifact, read_law, write_design, write_law, write_runs
from mixlaw.synthlab import NoiseModel, synth_runs


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Run file + design file + a couple of law artifacts used across tests."""
    root = tmp_path_factory.mktemp("cli")
    spec = grid_design(additive_truth(), n_sizes=2, n_checkpoints=4, seed=41)
    write_design(spec, root / "design.json")
    data = synth_runs(spec)
    write_runs(data, root / "runs.jsonl")

    worked = LawParams("additive", ("only",), AdditiveParams(
        E=1, A=4, B=9, alpha=1, beta=1, C=(1,), gamma=(1,)))
    write_law(make_artifact(worked, "quality", 0.0, 1e-3, 0, 1, 0.0),
              root / "worked.json")

    names = ("web", "code", "books")
    mk = lambda C, g: LawParams("additive", names, AdditiveParams(
        E=1.0, A=50.0, B=50.0, alpha=0.3, beta=0.3, C=C, gamma=g))
    for target, c, g in (
        ("web", (5.0, 0.8, 0.4), (0.5, 0.6, 0.7)),
        ("code", (0.6, 3.0, 1.1), (0.8, 0.45, 0.55)),
        ("books", (0.3, 0.9, 6.0), (0.65, 0.75, 0.5)),
    ):
        art = make_artifact(mk(c, g), target, 1e-9, 1e-3, 0, 10, 0.0)
        write_law(art, root / f"law_{target}.json")
    return root


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


class TestGrid:
    def test_k3_step01_min01_prints_36_lines(self, capsys):
        assert run_cli("grid", "--k", 3, "--step", 0.1, "--min", 0.1) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 36
        first = [float(x) for x in lines[0].split(",")]
        assert sum(first) == pytest.approx(1.0, abs=1e-9)

    def test_infeasible_grid_is_domain_error(self, capsys):
        assert run_cli("grid", "--k", 3, "--step", 0.1, "--min", 0.5) == 1
        assert "InfeasibleGrid" in capsys.readouterr().err


class TestExitCodes:
    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("grid", "--k", 3, "--step", 0.1, "--bogus", 1)
        assert exc.value.code == 2

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("frobnicate")
        assert exc.value.code == 2

    def test_missing_input_file_exits_1(self, tmp_path, capsys):
        code = run_cli("fit", "--runs", tmp_path / "nope.jsonl",
                       "--law", "additive", "--target", "q",
                       "--out", tmp_path / "law.json")
        assert code == 1
        assert "IoError" in capsys.readouterr().err


class TestPredict:
    def test_worked_example_prints_loss_and_flops(self, workdir, capsys):
        code = run_cli("predict", "--law", workdir / "worked.json",
                       "--n", 2, "--d", 3, "--mixture", "1.0")
        assert code == 0
        out = capsys.readouterr().out
        assert "loss=7.0" in out
        assert "flops=36.0" in out

    def test_named_mixture_style(self, workdir, capsys):
        code = run_cli("predict", "--law", workdir / "law_web.json",
                       "--n", 10**8, "--d", 10**9,
                       "--mixture", "code=0.2,web=0.5,books=0.3")
        assert code == 0
        assert "loss=" in capsys.readouterr().out

    def test_mixed_styles_rejected(self, workdir, capsys):
        code = run_cli("predict", "--law", workdir / "law_web.json",
                       "--n", 10**8, "--d", 10**9,
                       "--mixture", "0.5,code=0.3,0.2")
        assert code == 1
        assert "InvalidMixture" in capsys.readouterr().err


class TestParseMixtureFlag:
    def test_positional(self):
        m = parse_mixture_flag("0.5,0.5", ("a", "b"))
        assert m.weights == (0.5, 0.5)

    def test_named_reordered(self):
        m = parse_mixture_flag("b=0.75,a=0.25", ("a", "b"))
        assert m.weights == (0.25, 0.75)

    def test_wrong_count(self):
        with pytest.raises(InvalidMixture):
            parse_mixture_flag("0.5,0.4,0.1", ("a", "b"))

    def test_wrong_names(self):
        with pytest.raises(InvalidMixture):
            parse_mixture_flag("a=0.5,c=0.5", ("a", "b"))

    def test_duplicate_name(self):
        with pytest.raises(InvalidMixture):
            parse_mixture_flag("a=0.5,a=0.5", ("a", "b"))


class TestFitEvaluate:
    def test_fit_writes_artifact_and_reports(self, workdir, tmp_path, capsys,
                                             monkeypatch):
        monkeypatch.setenv("MIXLAW_THREADS", "1")
        out = tmp_path / "fit.json"
        code = run_cli("fit", "--runs", workdir / "runs.jsonl",
                       "--law", "additive", "--target", "quality",
                       "--out", out, "--seed", 7, "--restarts", 3,
                       "--hops", 8)
        assert code == 0
        text = capsys.readouterr().out
        assert text.startswith("huber=")
        assert "train_mre_percent=" in text
        art = read_law(out)
        assert art.family == "additive"
        assert art.fit_meta["seed"] == 7
        assert art.fit_meta["n_points"] == 288

    def test_evaluate_matches_stored_train_mre(self, workdir, tmp_path,
                                               capsys, monkeypatch):
        """fit then evaluate on the same file reproduces the artifact's
        train MRE to 1e-9."""
        monkeypatch.setenv("MIXLAW_THREADS", "1")
        out = tmp_path / "fit.json"
        assert run_cli("fit", "--runs", workdir / "runs.jsonl",
                       "--law", "additive", "--target", "quality",
                       "--out", out, "--seed", 7, "--restarts", 2,
                       "--hops", 5) == 0
        capsys.readouterr()
        assert run_cli("evaluate", "--law", out,
                       "--runs", workdir / "runs.jsonl") == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "target,n_points,mre_percent"
        target, n_points, mre = lines[1].split(",")
        assert target == "quality" and int(n_points) == 288
        stored = read_law(out).fit_meta["train_mre_percent"]
        assert abs(float(mre) - stored) <= 1e-9

    def test_fit_deterministic_given_seed(self, workdir, tmp_path,
                                          monkeypatch, capsys):
        monkeypatch.setenv("MIXLAW_THREADS", "1")
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert run_cli("fit", "--runs", workdir / "runs.jsonl",
                           "--law", "additive", "--target", "quality",
                           "--out", out, "--seed", 11, "--restarts", 2,
                           "--hops", 3) == 0
        capsys.readouterr()
        assert a.read_bytes() == b.read_bytes()

    def test_inputs_never_mutated(self, workdir, tmp_path, monkeypatch,
                                  capsys):
        monkeypatch.setenv("MIXLAW_THREADS", "1")
        before = hashlib.sha256((workdir / "runs.jsonl").read_bytes()).digest()
        assert run_cli("fit", "--runs", workdir / "runs.jsonl",
                       "--law", "chinchilla", "--target", "quality",
                       "--out", tmp_path / "c.json", "--restarts", 1,
                       "--hops", 0) == 0
        capsys.readouterr()
        after = hashlib.sha256((workdir / "runs.jsonl").read_bytes()).digest()
        assert before == after


class TestSimulate:
    def test_simulate_writes_runs(self, workdir, tmp_path, capsys):
        out = tmp_path / "sim.jsonl"
        assert run_cli("simulate", "--spec", workdir / "design.json",
                       "--out", out) == 0
        text = capsys.readouterr().out
        assert "records=288" in text
        assert out.exists()

    def test_pipeline_smoke(self, workdir, tmp_path, capsys, monkeypatch):
        """simulate -> fit -> evaluate on the same file: near-exact MRE."""
        monkeypatch.setenv("MIXLAW_THREADS", "1")
        sim = tmp_path / "sim.jsonl"
        art = tmp_path / "law.json"
        assert run_cli("simulate", "--spec", workdir / "design.json",
                       "--out", sim) == 0
        assert run_cli("fit", "--runs", sim, "--law", "additive",
                       "--target", "quality", "--out", art,
                       "--seed", 5, "--restarts", 6, "--hops", 25) == 0
        capsys.readouterr()
        assert run_cli("evaluate", "--law", art, "--runs", sim) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        mre = float(lines[1].split(",")[2])
        assert mre < 0.05


class TestOptimize:
    def test_prints_weights_and_objective(self, workdir, capsys):
        code = run_cli("optimize", "--laws", workdir / "law_web.json",
                       "--n", 10**8, "--d", 10**9, "--eta", 0.5)
        assert code == 0
        out = capsys.readouterr().out
        assert "objective=" in out and "domain,weight" in out
        rows = out.strip().splitlines()
        weights = [float(r.split(",")[1]) for r in rows[-3:]]
        assert sum(weights) == pytest.approx(1.0, abs=1e-9)

    def test_trace_and_plot_files(self, workdir, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        plot = tmp_path / "trace.png"
        code = run_cli("optimize",
                       "--laws", ",".join(str(workdir / f"law_{t}.json")
                                          for t in ("web", "code", "books")),
                       "--weights", "1,1,1",
                       "--n", 10**8, "--d", 10**9, "--eta", 0.5,
                       "--trace", trace, "--plot", plot)
        assert code == 0
        capsys.readouterr()
        header = trace.read_text().splitlines()[0]
        assert header == "iteration,h_web,h_code,h_books"
        assert plot.stat().st_size > 0

    def test_min_weight_floor(self, workdir, capsys):
        code = run_cli("optimize", "--laws", workdir / "law_web.json",
                       "--n", 10**8, "--d", 10**9, "--eta", 0.5,
                       "--min-weight", 0.01, "--tol", 1e-12)
        assert code == 0
        out = capsys.readouterr().out
        weights = [float(r.split(",")[1])
                   for r in out.strip().splitlines()[-3:]]
        assert min(weights) >= 0.01 - 1e-12


class TestAnalyze:
    def test_corners_table_and_plot(self, workdir, tmp_path, capsys):
        out = tmp_path / "corners.csv"
        plot = tmp_path / "corners.png"
        laws = ",".join(str(workdir / f"law_{t}.json")
                        for t in ("web", "code", "books"))
        assert run_cli("analyze", "corners", "--laws", laws,
                       "--n", 10**8, "--d", 10**9, "--eta", 0.5,
                       "--out", out, "--plot", plot) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "target,h_web,h_code,h_books"
        assert len(lines) == 4
        for line in lines[1:]:
            vals = [float(x) for x in line.split(",")[1:]]
            assert sum(vals) == pytest.approx(1.0, abs=1e-9)
        assert plot.stat().st_size > 0

    def test_fixed_points_table(self, workdir, tmp_path):
        out = tmp_path / "fp.csv"
        laws = ",".join(str(workdir / f"law_{t}.json")
                        for t in ("web", "code", "books"))
        assert run_cli("analyze", "fixed-points", "--laws", laws,
                       "--n", 10**8, "--d", 10**9, "--eta", 0.5,
                       "--grid-step", 0.5, "--out", out) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == ("w_web,w_code,w_books,"
                            "h_web,h_code,h_books,js,fixed")
        assert len(lines) == 1 + 6  # step 0.5, min 0: C(4,2) grid points

    def test_asymptotes_table(self, workdir, tmp_path):
        out = tmp_path / "asym.csv"
        laws = ",".join(str(workdir / f"law_{t}.json")
                        for t in ("web", "code", "books"))
        assert run_cli("analyze", "asymptotes", "--laws", laws,
                       "--n", 10**7, "--d", 10**8, "--mode", "both",
                       "--factor", 4, "--steps", 3, "--eta", 0.5,
                       "--out", out) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "model_params,tokens,flops,h_web,h_code,h_books"
        assert len(lines) == 4
        flops_col = [float(l.split(",")[2]) for l in lines[1:]]
        assert flops_col == sorted(flops_col)

    def test_runcount_table(self, workdir, tmp_path, monkeypatch):
        monkeypatch.setenv("MIXLAW_THREADS", "1")
        out = tmp_path / "rc.csv"
        assert run_cli("analyze", "runcount", "--runs", workdir / "runs.jsonl",
                       "--law", "additive", "--target", "quality",
                       "--q", "6,12", "--seeds", 2, "--restarts", 2,
                       "--hops", 2, "--out", out) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "q,mre_median,mre_q25,mre_q75,n_seeds"
        assert len(lines) == 3

    def test_compare_table(self, workdir, tmp_path, monkeypatch):
        monkeypatch.setenv("MIXLAW_THREADS", "1")
        out = tmp_path / "cmp.csv"
        data_n = 100000000
        assert run_cli("analyze", "compare", "--runs", workdir / "runs.jsonl",
                       "--target", "quality", "--n", data_n,
                       "--families", "additive-fixed-nd,ye-m2",
                       "--train-mixtures", 20, "--restarts", 2, "--hops", 3,
                       "--out", out) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == ("family,target,train_mre_percent,"
                            "test_mre_percent,huber,converged,fitted")
        assert len(lines) == 3
