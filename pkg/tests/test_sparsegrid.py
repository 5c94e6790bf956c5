"""Voxelization, stride algebra, and the fusion topologies."""

import numpy as np
import pytest

from crowdmot.sparsegrid import (
    ChannelMap,
    PointCloud,
    SparseGrid,
    VoxelSpec,
    downsample,
    encoder_chain,
    fuse_hr,
    fuse_ms,
    topology_report,
    voxelize,
)

SPEC = VoxelSpec()


def cloud(rows):
    return PointCloud(np.array(rows, dtype=float))


def random_cloud(rng, n=400):
    pts = np.column_stack(
        [
            rng.uniform(-90, 90, n),
            rng.uniform(-45, 45, n),
            rng.uniform(-4.5, 2.5, n),
            rng.uniform(0, 1, n),
            rng.integers(0, 2, n).astype(float),
        ]
    )
    return PointCloud(pts)


class TestVoxelSpec:
    def test_default_dense_bound(self):
        assert SPEC.shape == (2560, 1280, 40)

    def test_strided_shapes(self):
        assert SPEC.strided_shape(8) == (320, 160, 5)

    def test_non_divisible_extent_rejected(self):
        with pytest.raises(ValueError):
            VoxelSpec(x_min=0.0, x_max=1.0, dx=0.3)


class TestPointCloud:
    def test_shape_enforced(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((4, 3)))

    def test_time_flag_enforced(self):
        bad = np.zeros((1, 5))
        bad[0, 4] = 0.5
        with pytest.raises(ValueError):
            PointCloud(bad)

    def test_two_frame_merge(self):
        curr = np.array([[0.0, 0.0, 0.0, 0.5]])
        prev = np.array([[1.0, 1.0, 0.0, 0.7], [2.0, 2.0, 0.0, 0.1]])
        pc = PointCloud.from_two_frames(curr, prev)
        assert len(pc) == 3
        assert pc.points[0, 4] == 0.0
        assert (pc.points[1:, 4] == 1.0).all()


class TestVoxelize:
    def test_origin_point_lands_in_expected_voxel(self):
        grid = voxelize(cloud([[0.0, 0.0, 0.0, 0.5, 0.0]]), SPEC)
        assert set(grid.cells) == {(1280, 640, 25)}
        assert grid.stride == 1 and grid.channels == 3

    def test_count_and_means(self):
        grid = voxelize(
            cloud(
                [
                    [0.01, 0.01, 0.01, 0.0, 0.0],
                    [0.02, 0.02, 0.02, 1.0, 1.0],
                ]
            ),
            SPEC,
        )
        feat = grid.cells[(1280, 640, 25)]
        assert feat[0] == 2.0
        assert feat[1] == 0.5
        assert feat[2] == 0.5

    def test_outside_points_dropped_and_counted(self):
        grid = voxelize(
            cloud(
                [
                    [0.0, 0.0, 0.0, 0.5, 0.0],
                    [500.0, 0.0, 0.0, 0.5, 0.0],
                    [0.0, 0.0, 3.0, 0.5, 0.0],  # z == z_max is outside
                ]
            ),
            SPEC,
        )
        assert len(grid) == 1 and grid.n_dropped == 2

    def test_every_point_round_trips_into_its_voxel(self):
        rng = np.random.default_rng(0)
        pc = random_cloud(rng)
        grid = voxelize(pc, SPEC)
        occupied = grid.occupancy
        for x, y, z, _, _ in pc.points:
            ix = int((x - SPEC.x_min) / SPEC.dx + 1e-9)
            iy = int((y - SPEC.y_min) / SPEC.dy + 1e-9)
            iz = int((z - SPEC.z_min) / SPEC.dz + 1e-9)
            assert (ix, iy, iz) in occupied
            assert SPEC.x_min + ix * SPEC.dx <= x + 1e-9
            assert x < SPEC.x_min + (ix + 1) * SPEC.dx + 1e-9

    def test_counts_conserve_points(self):
        rng = np.random.default_rng(1)
        pc = random_cloud(rng, n=700)
        grid = voxelize(pc, SPEC)
        assert sum(f[0] for f in grid.cells.values()) + grid.n_dropped == 700

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        pc = random_cloud(rng)
        a, b = voxelize(pc, SPEC), voxelize(pc, SPEC)
        assert a.cells.keys() == b.cells.keys()
        for key in a.cells:
            np.testing.assert_array_equal(a.cells[key], b.cells[key])


class TestDownsample:
    def test_coordinate_halving(self):
        grid = SparseGrid(SPEC, 1, 3, {(3, 3, 3): np.ones(3)})
        out = downsample(grid, ChannelMap.identity(3))
        assert set(out.cells) == {(1, 1, 1)}
        assert out.stride == 2

    def test_occupancy_never_increases(self):
        rng = np.random.default_rng(3)
        grid = voxelize(random_cloud(rng), SPEC)
        mix = ChannelMap.identity(3)
        while grid.stride < 8:
            out = downsample(grid, mix)
            assert len(out) <= len(grid)
            grid = out

    def test_feature_is_mapped_child_average(self):
        mix = ChannelMap.seeded(3, 5, seed=1)
        grid = SparseGrid(
            SPEC,
            1,
            3,
            {(0, 0, 0): np.array([1.0, 0.0, 0.0]), (1, 1, 1): np.array([3.0, 1.0, 0.0])},
        )
        out = downsample(grid, mix)
        np.testing.assert_allclose(
            out.cells[(0, 0, 0)], mix.apply(np.array([2.0, 0.5, 0.0]))
        )
        assert out.channels == 5

    def test_stride_overflow_rejected(self):
        grid = SparseGrid(SPEC, 8, 3, {})
        with pytest.raises(ValueError):
            downsample(grid, ChannelMap.identity(3))

    def test_resolution_tracks_stride(self):
        grid = SparseGrid(SPEC, 1, 3, {})
        for _ in range(3):
            grid = downsample(grid, ChannelMap.identity(3))
        assert grid.stride == 8
        assert grid.resolution == (0.6, 0.6, 1.6)


class TestEncoderChain:
    def test_strides_widths_resolutions(self):
        rng = np.random.default_rng(4)
        sf1, sf2, sf3, sf4 = encoder_chain(voxelize(random_cloud(rng), SPEC))
        assert [g.stride for g in (sf1, sf2, sf3, sf4)] == [1, 2, 4, 8]
        assert [g.channels for g in (sf1, sf2, sf3, sf4)] == [16, 32, 64, 128]
        assert sf4.resolution[0] == pytest.approx(0.6)
        assert sf4.bev_shape == (320, 160)


class TestFuseHr:
    def chain(self, seed=5):
        rng = np.random.default_rng(seed)
        return encoder_chain(voxelize(random_cloud(rng), SPEC))

    def test_output_resolution_and_bound(self):
        _, sf2, _, sf4 = self.chain()
        fused = fuse_hr(sf2, sf4)
        assert fused.stride == 4
        assert fused.resolution[0] == pytest.approx(0.3)
        assert fused.bev_shape == (640, 320)
        assert fused.channels == sf2.channels + sf4.channels

    def test_empty_inputs(self):
        empty2 = SparseGrid(SPEC, 2, 32, {})
        empty8 = SparseGrid(SPEC, 8, 128, {})
        assert len(fuse_hr(empty2, empty8)) == 0

    def test_occupancy_is_pooled_sf2_footprint(self):
        _, sf2, _, sf4 = self.chain()
        fused = fuse_hr(sf2, sf4)
        pooled = downsample(sf2, ChannelMap.identity(sf2.channels))
        assert fused.occupancy == pooled.occupancy

    def test_stride_mismatch_rejected(self):
        _, sf2, sf3, _ = self.chain()
        with pytest.raises(ValueError):
            fuse_hr(sf2, sf3)


class TestFuseMs:
    def chain(self, seed=6):
        rng = np.random.default_rng(seed)
        return encoder_chain(voxelize(random_cloud(rng), SPEC))

    def test_single_voxel_propagates_to_one_cell(self):
        base = voxelize(cloud([[0.0, 0.0, 0.0, 0.5, 0.0]]), SPEC)
        fused = fuse_ms(*encoder_chain(base))
        assert set(fused.cells) == {(320, 160, 6)}
        assert fused.stride == 4

    def test_channel_count_is_configured_width(self):
        sf1, sf2, sf3, sf4 = self.chain()
        assert fuse_ms(sf1, sf2, sf3, sf4, width=48).channels == 48
        empty = fuse_ms(
            SparseGrid(SPEC, 1, 16, {}),
            SparseGrid(SPEC, 2, 32, {}),
            SparseGrid(SPEC, 4, 64, {}),
            SparseGrid(SPEC, 8, 128, {}),
            width=48,
        )
        assert empty.channels == 48 and len(empty) == 0

    def test_occupancy_superset_of_fuse_hr(self):
        sf1, sf2, sf3, sf4 = self.chain()
        ms = fuse_ms(sf1, sf2, sf3, sf4)
        hr = fuse_hr(sf2, sf4)
        assert ms.occupancy >= hr.occupancy

    def test_deterministic(self):
        sf1, sf2, sf3, sf4 = self.chain()
        a = fuse_ms(sf1, sf2, sf3, sf4)
        b = fuse_ms(sf1, sf2, sf3, sf4)
        assert a.cells.keys() == b.cells.keys()
        for key in a.cells:
            np.testing.assert_array_equal(a.cells[key], b.cells[key])

    def test_wrong_strides_rejected(self):
        sf1, sf2, sf3, sf4 = self.chain()
        with pytest.raises(ValueError):
            fuse_ms(sf2, sf2, sf3, sf4)


class TestOccupancyPurity:
    def test_occupancy_ignores_feature_values(self):
        # Same occupied cells with different feature values must produce the
        # same occupancy through the chain and both fusions.
        rng = np.random.default_rng(9)
        coords = {
            (int(x), int(y), int(z))
            for x, y, z in zip(
                rng.integers(0, 2000, 60), rng.integers(0, 1000, 60), rng.integers(0, 40, 60)
            )
        }
        grids = [
            SparseGrid(SPEC, 1, 3, {c: rng.uniform(0, 9, 3) for c in coords})
            for _ in range(2)
        ]
        outputs = []
        for g in grids:
            sf1, sf2, sf3, sf4 = encoder_chain(g)
            outputs.append(
                (
                    sf4.occupancy,
                    fuse_hr(sf2, sf4).occupancy,
                    fuse_ms(sf1, sf2, sf3, sf4).occupancy,
                )
            )
        assert outputs[0] == outputs[1]


class TestTopologyReport:
    def test_rows_for_each_topology(self):
        rng = np.random.default_rng(7)
        pc = random_cloud(rng)
        for topology, res in (("a", 0.6), ("b", 0.3), ("c", 0.3)):
            rows = topology_report(pc, SPEC, topology=topology)
            assert rows[0]["name"] == "input" and rows[-1]["name"] == "output"
            assert rows[-1]["bev_resolution_m"] == pytest.approx(res)

    def test_unknown_topology_rejected(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ValueError):
            topology_report(random_cloud(rng), SPEC, topology="x")
