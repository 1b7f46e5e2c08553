"""Command line interface: simulate -> track -> eval pipeline and exit codes."""

import json

import numpy as np
import pytest
import yaml

from tactrack.cli import main
from tactrack.episodes import NoiseSpec, TrajectorySpec
from tactrack.harness import SuiteConfig, SuiteObject


@pytest.fixture()
def suite_yaml(tmp_path):
    cfg = SuiteConfig(
        objects=[SuiteObject("sphere", {"type": "sphere", "radius": 6.35})],
        episodes_per_object=1,
        trajectories=[TrajectorySpec(steps=4, indent=1.0, length=0.5)],
        noise=NoiseSpec(),
        modes=["constvel"],
        master_seed=11,
    )
    path = tmp_path / "suite.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    return path


class TestSimulate:
    def test_writes_episodes_and_manifest(self, suite_yaml, tmp_path):
        out = tmp_path / "episodes"
        assert main(["simulate", "--config", str(suite_yaml),
                     "--out", str(out)]) == 0
        ep = out / "sphere" / "ep0000"
        assert (ep / "episode.json").exists()
        assert (ep / "normals_0000.pfm").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["objects"] == {"sphere": 1}

    def test_seed_override_changes_hash(self, suite_yaml, tmp_path):
        main(["simulate", "--config", str(suite_yaml),
              "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["simulate", "--config", str(suite_yaml),
              "--out", str(tmp_path / "b"), "--seed", "2"])
        ha = json.loads((tmp_path / "a" / "manifest.json").read_text())
        hb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert ha["config_hash"] != hb["config_hash"]

    def test_bad_config_exit_2(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("- not\n- a mapping\n")
        assert main(["simulate", "--config", str(path),
                     "--out", str(tmp_path / "out")]) == 2

    def test_missing_config_exit_2(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.yaml"),
                     "--out", str(tmp_path / "out")]) == 2


class TestPipeline:
    def test_simulate_track_eval(self, suite_yaml, tmp_path):
        episodes = tmp_path / "episodes"
        assert main(["simulate", "--config", str(suite_yaml),
                     "--out", str(episodes)]) == 0
        ep = episodes / "sphere" / "ep0000"
        run = tmp_path / "runs" / "sphere" / "ep0000" / "constvel"
        assert main(["track", "--episode", str(ep), "--mode", "constvel",
                     "--out", str(run)]) == 0
        metrics = json.loads((run / "metrics.json").read_text())
        assert np.isfinite(metrics["final_translation_error_mm"])

        report = tmp_path / "report.json"
        csv_path = tmp_path / "report.csv"
        assert main(["eval", "--runs", str(tmp_path / "runs"),
                     "--out", str(report), "--csv", str(csv_path)]) == 0
        payload = json.loads(report.read_text())
        rec = payload["results"]["sphere"]["constvel"]
        assert rec["translation_errors"] == [
            metrics["final_translation_error_mm"]]
        assert csv_path.exists()

    def test_track_with_tracker_yaml(self, suite_yaml, tmp_path):
        episodes = tmp_path / "episodes"
        main(["simulate", "--config", str(suite_yaml), "--out", str(episodes)])
        tracker_yaml = tmp_path / "tracker.yaml"
        tracker_yaml.write_text(yaml.safe_dump(
            {"tracker": {"fixed_lag": 4}}))
        run = tmp_path / "run"
        assert main(["track",
                     "--episode", str(episodes / "sphere" / "ep0000"),
                     "--mode", "constvel", "--config", str(tracker_yaml),
                     "--out", str(run)]) == 0

    def test_eval_empty_runs_exit_2(self, tmp_path):
        (tmp_path / "runs").mkdir()
        assert main(["eval", "--runs", str(tmp_path / "runs"),
                     "--out", str(tmp_path / "report.json")]) == 2

    def test_byte_identical_reruns(self, suite_yaml, tmp_path):
        outputs = []
        for name in ("a", "b"):
            episodes = tmp_path / name / "episodes"
            main(["simulate", "--config", str(suite_yaml),
                  "--out", str(episodes)])
            run = tmp_path / name / "run"
            main(["track", "--episode", str(episodes / "sphere" / "ep0000"),
                  "--mode", "constvel", "--out", str(run)])
            outputs.append((
                (episodes / "sphere" / "ep0000" / "normals_0000.pfm").read_bytes(),
                (run / "trajectory.json").read_bytes(),
                (run / "metrics.json").read_bytes()))
        assert outputs[0] == outputs[1]


class TestReconstruct:
    def test_reconstruct_episode_frame(self, suite_yaml, tmp_path):
        episodes = tmp_path / "episodes"
        main(["simulate", "--config", str(suite_yaml), "--out", str(episodes)])
        ep = episodes / "sphere" / "ep0000"
        gel = json.loads((ep / "episode.json").read_text())["gel"]
        depth_out = tmp_path / "depth.pfm"
        cloud_out = tmp_path / "cloud.ply"
        assert main(["reconstruct",
                     "--normals", str(ep / "normals_0000.pfm"),
                     "--mask", str(ep / "mask_0000.pgm"),
                     "--out-depth", str(depth_out),
                     "--out-cloud", str(cloud_out),
                     "--extent-x", str(gel["extent_x"]),
                     "--extent-y", str(gel["extent_y"]),
                     "--max-indent", str(gel["max_indent"])]) == 0
        from tactrack.imageio import read_pfm, read_ply

        depth = read_pfm(depth_out)
        points, normals = read_ply(cloud_out)
        assert depth.shape == tuple(
            json.loads((ep / "episode.json").read_text())["gel"][k]
            for k in ("height", "width"))
        assert len(points) == len(normals) > 0

    def test_mismatched_mask_exit_2(self, tmp_path):
        from tactrack.imageio import write_pfm, write_pgm_mask

        write_pfm(tmp_path / "n.pfm", np.zeros((4, 4, 3), dtype=np.float32))
        write_pgm_mask(tmp_path / "m.pgm", np.zeros((3, 3), dtype=bool))
        assert main(["reconstruct", "--normals", str(tmp_path / "n.pfm"),
                     "--mask", str(tmp_path / "m.pgm"),
                     "--out-depth", str(tmp_path / "d.pfm"),
                     "--out-cloud", str(tmp_path / "c.ply")]) == 2
