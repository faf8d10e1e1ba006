import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from depthmotion import fileio
from depthmotion.cli import main
from depthmotion.geometry import Pose, compose, invert
from depthmotion.objective import total_loss
from depthmotion.synthetic import circular_trajectory, perturb_translations


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def table(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture(scope="module")
def seq(tmp_path_factory):
    d = tmp_path_factory.mktemp("seq")
    assert main(["synth", str(d), "--seed", "3", "--frames", "5", "-o", str(d / "frames.csv")]) == 0
    return d


def test_synth_layout(seq):
    assert fileio.sequence_length(seq) == 5
    assert len(fileio.read_poses(seq / "poses.txt")) == 5
    assert len(fileio.read_snippet_groups(seq / "snippets.txt")) == 3
    assert (seq / fileio.match_name(1, 0)).exists() and (seq / fileio.match_name(3, 4)).exists()
    rows = table((seq / "frames.csv").read_text())
    assert [r["frame"] for r in rows] == ["0", "1", "2", "3", "4"]


def test_loss_at_truth_is_below_floor_and_deterministic(capsys, seq):
    code, first, _ = run(capsys, "loss", seq, "--center", 2)
    assert code == 0
    rows = {r["term"]: r for r in table(first)}
    assert list(rows) == ["pixel", "ssim", "smooth", "epi", "reproj", "depth", "multi", "total"]
    assert float(rows["total"]["value"]) < 0.02
    _, second, _ = run(capsys, "loss", seq, "--center", 2)
    assert first == second
    code, masked, _ = run(capsys, "loss", seq, "--refine", "--error-percentile", 80)
    assert code == 0 and masked != first


def test_truth_beats_random_perturbations(seq):
    inp = fileio.load_snippet(seq, 2)
    base = total_loss(inp, grads=False).total
    rng = np.random.default_rng(0)
    for i in range(20):
        p = perturb_translations(inp.pose_params, 0.1, seed=i) + 0.002 * rng.standard_normal((2, 6))
        d = inp.depths * (1 + 0.02 * rng.standard_normal(inp.depths.shape))
        assert total_loss(inp.with_params(d, p), grads=False).total > base


def test_gradcheck_passes_on_small_scene(capsys):
    code, out, err = run(capsys, "gradcheck", "--seed", 1, "--size", 24)
    assert code == 0
    rows = table(out)
    assert [r["term"] for r in rows][-1] == "total"
    assert all(r["passed"] == "1" for r in rows)


def test_gradcheck_failure_exit_status(capsys):
    code, _, _ = run(capsys, "gradcheck", "--seed", 1, "--size", 24, "--tol", 1e-12)
    assert code == 3


def test_refine_rows(capsys, seq, tmp_path):
    fig = tmp_path / "refine.png"
    code, out, _ = run(capsys, "refine", seq, "--seed", 0, "--steps", 3, "--perturb-translation", 0.05,
                       "--poses-only", "--figure", fig)
    assert code == 0
    rows = table(out)
    assert [int(r["step"]) for r in rows] == [0, 1, 2, 3]
    assert float(rows[0]["translation_error"]) > 0
    assert fig.stat().st_size > 0


def test_chain_then_evaluate_reproduces_truth(capsys, tmp_path):
    gt = circular_trajectory(30)
    fileio.write_poses(tmp_path / "gt.txt", gt)
    snippets = []
    for s in range(len(gt) - 2):
        origin = gt[s]
        snippets.extend(compose(invert(origin), gt[s + i]) for i in range(3))
    fileio.write_poses(tmp_path / "snip.txt", snippets)
    assert main(["chain", str(tmp_path / "snip.txt"), "-o", str(tmp_path / "est.txt")]) == 0
    code, out, _ = run(capsys, "evaluate", "--est", tmp_path / "est.txt", "--gt", tmp_path / "gt.txt")
    assert code == 0
    rows = {r["metric"]: float(r["value"]) for r in table(out)}
    assert rows["mape"] < 1e-6 and rows["ate_mean"] < 1e-6
    assert rows["frames"] == 30 and rows["snippets"] == 28


def test_evaluate_identical_files_gives_zero(capsys, tmp_path):
    fileio.write_poses(tmp_path / "gt.txt", circular_trajectory(20))
    code, out, _ = run(capsys, "evaluate", "--est", tmp_path / "gt.txt", "--gt", tmp_path / "gt.txt")
    assert code == 0
    rows = {r["metric"]: float(r["value"]) for r in table(out)}
    assert rows["ate_mean"] == 0.0
    assert rows["mape"] < 1e-12


def test_uncertainty_column_strictly_decreasing(capsys, tmp_path):
    code, out, _ = run(capsys, "uncertainty", "--density-dir", tmp_path / "dens")
    assert code == 0
    vals = [float(r["largest_eigenvalue"]) for r in table(out)]
    assert [float(r["angle_deg"]) for r in table(out)] == [5, 15, 30, 45, 60, 90]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert len(list((tmp_path / "dens").glob("posterior_*.csv"))) == 6


def test_usage_errors_exit_2(capsys, seq):
    for argv in (["synth", "x"],                             # --seed is required
                 ["loss", str(seq), "--alpha", "1.5"],
                 ["loss", str(seq), "--error-percentile", "100"],
                 ["refine", str(seq), "--seed", "0", "--lr", "-1"],
                 ["uncertainty", "--angles", "a,b"],
                 ["nonsense"]):
        with pytest.raises(SystemExit) as e:
            main(argv)
        assert e.value.code == 2
    capsys.readouterr()


def test_data_errors_exit_1(capsys, tmp_path):
    code, _, err = run(capsys, "loss", tmp_path / "missing")
    assert code == 1 and "error" in err
    (tmp_path / "bad.txt").write_text("1 0 0 0\n")
    code, _, err = run(capsys, "evaluate", "--est", tmp_path / "bad.txt", "--gt", tmp_path / "bad.txt")
    assert code == 1 and "line 1" in err
    line = [Pose(np.eye(3), [i, 0, 0]) for i in range(5)]
    fileio.write_poses(tmp_path / "line.txt", line)
    code, _, _ = run(capsys, "evaluate", "--est", tmp_path / "line.txt", "--gt", tmp_path / "line.txt")
    assert code == 1
    code, _, _ = run(capsys, "uncertainty", "--angles", "120")
    assert code == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "depthmotion", "uncertainty", "--angles", "30,90", "--cells", "128"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert res.stdout.splitlines()[0] == "angle_deg,largest_eigenvalue"
    res = subprocess.run([sys.executable, "-m", "depthmotion"], capture_output=True, text=True, check=False)
    assert res.returncode == 2
