"""End-to-end runs of the command-line tool on a deliberately tiny setup."""

import hashlib
import json

import numpy as np
import pytest

from descentdiff.cli import main
from descentdiff.dataset import load_dataset
from descentdiff.report import load_report
from descentdiff.scaling import RobustScale
from descentdiff.scvx import propagate

TINY = """\
K = 10
T = 20
hidden = 32
depth = 2
batch_size = 4
sample_budget = 200
sample_count = 12
warmstart_candidates = 4
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.cfg").write_text(TINY)
    cfg = str(d / "tiny.cfg")
    assert main(["gen-dataset", "--config", cfg, "--count", "8", "--seed", "1", "--out", str(d / "ds.tdf")]) == 0
    assert main(["train", "--config", cfg, "--dataset", str(d / "ds.tdf"), "--out", str(d / "m.ddck")]) == 0
    return d, cfg


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_dataset_outputs(work):
    d, _ = work
    plans, problems = load_dataset(d / "ds.tdf", expected_K=10)
    stats = json.loads((d / "ds.tdf.json").read_text())
    assert stats["converged"] == len(plans) >= 4
    assert stats["converged_fraction"] == pytest.approx(len(plans) / 8)
    sigmas = {s["index"]: s for s in stats["scenarios"]}
    assert len(sigmas) == 8
    for plan, problem in zip(plans, problems):
        assert plan.nodes == 10 and problem.K == 10


def test_stored_plans_are_feasible(work):
    d, _ = work
    plans, problems = load_dataset(d / "ds.tdf")
    stats = json.loads((d / "ds.tdf.json").read_text())["scenarios"]
    sigmas = [s["sigma"] for s in stats if s["converged"]]
    for plan, problem, sigma in zip(plans, problems, sigmas, strict=True):
        report = propagate(plan, sigma, problem)
        assert report.max_defect < 1e-4
        assert report.max_constraint_violation < 1e-6


def test_dataset_is_reproducible(tmp_path, work):
    _, cfg = work
    outs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.tdf"
        assert main(["gen-dataset", "--config", cfg, "--count", "3", "--seed", "4", "--out", str(out)]) == 0
        outs.append(_digest(out))
    assert outs[0] == outs[1]


def test_empty_request_fails(tmp_path, capsys):
    assert main(["gen-dataset", "--count", "0", "--out", str(tmp_path / "x.tdf")]) == 1
    assert "empty dataset" in capsys.readouterr().err


def test_training_outputs(work):
    d, _ = work
    curve = (d / "m.loss.csv").read_text().splitlines()
    assert curve[0] == "step,loss,smoothed" and len(curve) == 1 + 50
    assert RobustScale.load(d / "m.scale.json")


def test_resume_matches_uninterrupted(work, tmp_path):
    d, cfg = work
    part = tmp_path / "part.ddck"
    assert main(["train", "--config", cfg, "--dataset", str(d / "ds.tdf"), "--steps", "20", "--out", str(part)]) == 0
    rest = tmp_path / "rest.ddck"
    assert main(["train", "--config", cfg, "--dataset", str(d / "ds.tdf"), "--resume", str(part),
                 "--out", str(rest)]) == 0
    resumed = [line.split(",")[1] for line in rest.with_suffix(".loss.csv").read_text().splitlines()[1:]]
    full = [line.split(",")[1] for line in (d / "m.loss.csv").read_text().splitlines()[1:]]
    assert resumed == full


def test_sample_with_mask(work, tmp_path):
    d, cfg = work
    mask = tmp_path / "mask.txt"
    mask.write_text("r_z 0 2.5\nr_x 0 -1.0\nm 0 3.0\n")
    out = tmp_path / "s.npy"
    assert main(["sample", "--config", cfg, "--checkpoint", str(d / "m.ddck"), "--count", "6",
                 "--mask", str(mask), "--out", str(out)]) == 0
    plans = np.load(out)
    assert plans.shape == (6, 17, 10)
    assert np.allclose(plans[:, 0, 0], 2.5) and np.allclose(plans[:, 1, 0], -1.0) and np.allclose(plans[:, 13, 0], 3)


def test_mismatched_scaler_rejected(work, tmp_path, capsys):
    d, cfg = work
    other = RobustScale(np.zeros(17), np.ones(17))
    other.save(tmp_path / "other.json")
    rc = main(["sample", "--config", cfg, "--checkpoint", str(d / "m.ddck"), "--scale", str(tmp_path / "other.json"),
               "--out", str(tmp_path / "s.npy")])
    assert rc == 1 and "different scaler" in capsys.readouterr().err


@pytest.mark.parametrize("mode, extra", [
    ("glideslope", []),
    ("risk", ["--demo-obstacles"]),
    ("funnels", ["--dataset", "ds.tdf"]),
    ("energy", []),
])
def test_evaluate_modes(work, tmp_path, mode, extra):
    d, cfg = work
    extra = [str(d / e) if e.endswith(".tdf") else e for e in extra]
    out = tmp_path / f"{mode}.json"
    assert main(["evaluate", "--config", cfg, "--checkpoint", str(d / "m.ddck"), "--mode", mode,
                 "--out", str(out), *extra]) == 0
    report = load_report(out)
    assert report.config_hash and report.seed == 0
    assert getattr(report, mode)
    assert list(tmp_path.glob(f"{mode}_*.png"))
    if mode == "funnels":
        assert all(len(row) == 10 for row in report.funnels["diffusion"]["mean"])
    if mode == "glideslope":
        assert report.glideslope["unconditioned"]["segments"] == 12 * 9
    if mode == "energy":
        assert sorted(int(s) for s in report.energy["steps"]) == [0, 10, 19]


def test_evaluate_is_reproducible(work, tmp_path):
    d, cfg = work
    reports = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.json"
        assert main(["evaluate", "--config", cfg, "--checkpoint", str(d / "m.ddck"), "--mode", "glideslope",
                     "--seed", "9", "--out", str(out)]) == 0
        reports.append(load_report(out).without_timing())
    assert reports[0] == reports[1]


def test_risk_mode_needs_a_grid(work, tmp_path, capsys):
    d, cfg = work
    assert main(["evaluate", "--config", cfg, "--checkpoint", str(d / "m.ddck"), "--mode", "risk",
                 "--out", str(tmp_path / "r.json")]) == 1
    assert "risk mode needs" in capsys.readouterr().err


def test_warmstart_bench(work, tmp_path):
    d, cfg = work
    out = tmp_path / "w.json"
    assert main(["warmstart-bench", "--config", cfg, "--checkpoint", str(d / "m.ddck"), "--scenarios", "2",
                 "--out", str(out)]) == 0
    report = load_report(out)
    assert len(report.warmstart) == 2
    for r in report.warmstart:
        assert r.default_iterations >= 1 and r.sample_time >= 0
    assert "median_warm_iterations" in report.timing


def test_export_round_trip_and_usage_error(work, tmp_path):
    d, cfg = work
    src = tmp_path / "e.json"
    assert main(["evaluate", "--config", cfg, "--checkpoint", str(d / "m.ddck"), "--mode", "energy",
                 "--out", str(src)]) == 0
    again = tmp_path / "again.json"
    assert main(["export", "--report", str(src), "--format", "structured-text", "--out", str(again)]) == 0
    assert load_report(again) == load_report(src)
    assert main(["export", "--report", str(src), "--format", "tabular", "--out", str(tmp_path / "t.csv")]) == 0
    assert (tmp_path / "t_energy.csv").exists()
    with pytest.raises(SystemExit) as info:
        main(["export", "--report", str(src), "--format", "xml"])
    assert info.value.code == 2


def test_global_flags_before_subcommand(work, tmp_path):
    d, cfg = work
    out = tmp_path / "s.npy"
    assert main(["--config", cfg, "--seed", "3", "--out", str(out), "sample", "--checkpoint", str(d / "m.ddck"),
                 "--count", "2"]) == 0
    first = np.load(out)
    assert main(["sample", "--checkpoint", str(d / "m.ddck"), "--count", "2", "--config", cfg, "--seed", "3",
                 "--out", str(out)]) == 0
    assert np.array_equal(first, np.load(out))
