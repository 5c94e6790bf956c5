"""Round-trips and schema validation for the on-disk formats."""

import numpy as np
import pytest

from crowdmot.formats import (
    FormatError,
    read_detections_jsonl,
    read_grid,
    read_scene_jsonl,
    read_trajectories_jsonl,
    write_detections_jsonl,
    write_grid,
    write_pgm,
    write_scene_jsonl,
    write_trajectories_jsonl,
)
from crowdmot.geometry import GridSpec
from crowdmot.simulator import NoiseConfig, SimConfig, corrupt, gen_scene
from crowdmot.targets import DenseGrid2D
from crowdmot.tracker import TrackerConfig, run_sequence


@pytest.fixture()
def scene():
    return gen_scene(
        SimConfig(
            n_pedestrians=12,
            n_frames=8,
            area=(-30.0, 30.0, -20.0, 20.0),
            target_density2=2.0,
            seed=0,
        )
    )


class TestSceneJsonl:
    def test_round_trip(self, scene, tmp_path):
        path = tmp_path / "gt.jsonl"
        write_scene_jsonl(path, scene)
        loaded = read_scene_jsonl(path)
        assert loaded.timestamps == scene.timestamps
        for a, b in zip(scene.frames, loaded.frames):
            assert sorted(a, key=lambda o: o.instance_id) == list(b)

    def test_out_of_order_frames_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"frame":0,"timestamp":0.0,"objects":[]}\n'
            '{"frame":2,"timestamp":0.2,"objects":[]}\n'
        )
        with pytest.raises(FormatError):
            read_scene_jsonl(path)

    def test_missing_field_diagnoses_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"frame":0,"objects":[]}\n')
        with pytest.raises(FormatError, match="timestamp"):
            read_scene_jsonl(path)

    def test_invalid_json_diagnoses_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{nope}\n")
        with pytest.raises(FormatError, match="bad.jsonl:1"):
            read_scene_jsonl(path)


class TestDetectionsJsonl:
    def test_round_trip_with_relationships(self, scene, tmp_path):
        dets = corrupt(scene, NoiseConfig(pos_sigma=0.05, clutter_rate=0.5, emit_rel=True, seed=2))
        path = tmp_path / "det.jsonl"
        write_detections_jsonl(path, dets, scene.timestamps)
        loaded, timestamps = read_detections_jsonl(path)
        assert timestamps == scene.timestamps
        assert loaded == dets

    def test_detection_requires_score_and_offset(self, tmp_path):
        path = tmp_path / "det.jsonl"
        path.write_text(
            '{"frame":0,"timestamp":0.0,"objects":[{"id":0,"cx":0,"cy":0,"cz":0.8,'
            '"l":0.6,"w":0.6,"h":1.7,"yaw":0.0}]}\n'
        )
        with pytest.raises(FormatError, match="score"):
            read_detections_jsonl(path)


class TestTrajectoriesJsonl:
    def test_round_trip_through_tracker(self, scene, tmp_path):
        dets = corrupt(scene, NoiseConfig(seed=1))
        trajectories = run_sequence(dets, TrackerConfig())
        path = tmp_path / "traj.jsonl"
        write_trajectories_jsonl(path, trajectories, scene.timestamps)
        frames, timestamps = read_trajectories_jsonl(path)
        assert timestamps == scene.timestamps
        total = sum(len(f) for f in frames)
        assert total == sum(len(t.entries) for t in trajectories)
        boxes = {(f, tid): box for f, fr in enumerate(frames) for tid, box in fr}
        for t in trajectories:
            for frame, box, _ in t.entries:
                assert boxes[(frame, t.track_id)] == box


class TestGridFiles:
    def test_grid_round_trip_exact(self, tmp_path):
        grid = GridSpec(-3.0, 3.0, -1.5, 1.5, 0.5, 0.5)
        rng = np.random.default_rng(0)
        dense = DenseGrid2D(grid, rng.uniform(0, 3, (grid.nx, grid.ny)))
        path = tmp_path / "x.grid"
        write_grid(path, dense)
        loaded = read_grid(path)
        assert loaded.grid == grid
        np.testing.assert_array_equal(loaded.values, dense.values)

    def test_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "x.grid"
        path.write_text("2 2 0.5 0.5 0.0 0.0\n1.0 2.0\n")
        with pytest.raises(FormatError):
            read_grid(path)

    def test_pgm_shape_and_range(self, tmp_path):
        grid = GridSpec(0.0, 2.0, 0.0, 1.0, 0.5, 0.5)
        dense = DenseGrid2D(grid, np.array([[0.0, 1.0], [0.25, 0.5], [0.75, 1.0], [0.1, 0.0]]))
        path = tmp_path / "x.pgm"
        write_pgm(path, dense)
        lines = path.read_text().splitlines()
        assert lines[0] == "P2"
        assert lines[1] == "4 2"
        values = [int(v) for row in lines[3:] for v in row.split()]
        assert len(values) == 8 and max(values) == 255 and min(values) >= 0
