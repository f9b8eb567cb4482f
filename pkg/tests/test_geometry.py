import math

import numpy as np
import pytest

from dynpact.geometry import (
    TRITOM_ELEMENTS,
    TRITOM_RADIUS,
    TRITOM_SAMPLE_COUNT,
    TRITOM_SAMPLE_INTERVAL,
    TRITOM_SOUND_SPEED,
    VIEW_AZIMUTHS,
    ScanGeometry,
    TransducerArc,
    VoxelGrid,
    build_arc,
    pose_for_frame,
    rotation_z,
    standard_geometry,
)


class TestVoxelGrid:
    def test_centered_grid_is_symmetric_about_origin(self):
        grid = VoxelGrid.centered((5, 7, 3), 2e-4)
        assert np.allclose(grid.center, 0.0)
        pos = grid.positions()
        assert np.allclose(pos.mean(axis=0), 0.0)

    def test_positions_order_x_fastest(self):
        grid = VoxelGrid((0.0, 0.0, 0.0), 1.0, (2, 3, 2))
        pos = grid.positions()
        assert pos.shape == (12, 3)
        # first two nodes differ only in x
        assert np.array_equal(pos[0], [0, 0, 0])
        assert np.array_equal(pos[1], [1, 0, 0])
        assert np.array_equal(pos[2], [0, 1, 0])
        # index arithmetic matches the flattened ordering
        for ix in range(2):
            for iy in range(3):
                for iz in range(2):
                    n = grid.voxel_index(ix, iy, iz)
                    assert np.array_equal(pos[n], [ix, iy, iz])

    def test_voxel_index_bounds(self):
        grid = VoxelGrid.centered((4, 4, 2), 1e-3)
        with pytest.raises(ValueError):
            grid.voxel_index(4, 0, 0)
        with pytest.raises(ValueError):
            grid.voxel_index(0, -1, 0)

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            VoxelGrid((0, 0, 0), 0.0, (2, 2, 2))
        with pytest.raises(ValueError):
            VoxelGrid((0, 0, 0), 1e-3, (0, 2, 2))


class TestTransducerArc:
    def test_base_positions_on_sphere(self):
        arc = build_arc(0.065, 9)
        pos = arc.base_positions()
        assert pos.shape == (9, 3)
        assert np.allclose(np.linalg.norm(pos, axis=1), 0.065)

    def test_span_is_endpoint_inclusive_and_centered(self):
        arc = build_arc(1.0, 5, polar_span=math.pi / 2)
        angles = np.asarray(arc.polar_angles)
        assert angles[0] == pytest.approx(-math.pi / 4)
        assert angles[-1] == pytest.approx(math.pi / 4)
        assert np.allclose(angles + angles[::-1], 0.0)

    def test_single_element_sits_on_horizontal_plane(self):
        arc = build_arc(1.0, 1)
        assert arc.polar_angles == (0.0,)
        assert arc.base_positions()[0, 2] == 0.0

    def test_azimuth_offset_rotates_positions(self):
        flat = build_arc(1.0, 3, azimuth_offset=0.0)
        quarter = build_arc(1.0, 3, azimuth_offset=math.pi / 2)
        rotated = flat.base_positions() @ rotation_z(math.pi / 2).T
        assert np.allclose(rotated, quarter.base_positions(), atol=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            TransducerArc(0.0, (0.0,))
        with pytest.raises(ValueError):
            TransducerArc(1.0, ())
        with pytest.raises(ValueError):
            TransducerArc(1.0, (0.3, 0.1))


class TestScanGeometry:
    def test_standard_geometry_defaults_match_scanner(self):
        geo = standard_geometry(1)
        assert geo.views_per_frame == 1
        assert geo.channels_per_frame == TRITOM_ELEMENTS
        assert geo.sample_count == TRITOM_SAMPLE_COUNT
        assert geo.sound_speed == TRITOM_SOUND_SPEED
        assert geo.sample_interval == TRITOM_SAMPLE_INTERVAL
        assert geo.arcs[0].radius == TRITOM_RADIUS
        assert geo.frame_count == 360

    @pytest.mark.parametrize("views", [1, 2, 4])
    def test_view_patterns(self, views):
        geo = standard_geometry(views, elements_per_arc=5)
        assert geo.views_per_frame == views
        assert geo.channels_per_frame == 5 * views
        offsets = tuple(a.azimuth_offset for a in geo.arcs)
        assert offsets == VIEW_AZIMUTHS[views]

    def test_invalid_view_count_rejected(self):
        with pytest.raises(ValueError):
            standard_geometry(3)

    def test_samples_per_frame(self):
        geo = standard_geometry(2, elements_per_arc=4, sample_count=128)
        assert geo.samples_per_frame == 2 * 4 * 128

    def test_arc_azimuth_pattern_enforced(self):
        # two identical arcs at the same azimuth is not a valid 2-view layout
        arc = build_arc(0.05, 4)
        with pytest.raises(ValueError):
            ScanGeometry(
                arcs=(arc, arc),
                angular_step=0.1,
                frame_count=10,
                sample_count=64,
                sample_interval=4e-8,
            )


class TestPoses:
    def test_rotation_z_matrix(self):
        r = rotation_z(math.pi / 2)
        assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-15)
        assert np.allclose(r @ [0, 1, 0], [-1, 0, 0], atol=1e-15)
        assert np.allclose(r @ [0, 0, 1], [0, 0, 1])

    def test_frame_zero_pose_equals_base_positions(self):
        geo = standard_geometry(2, elements_per_arc=4, frame_count=8)
        pose = pose_for_frame(geo, 0)
        assert np.array_equal(pose.positions, geo.base_positions())

    def test_pose_rotation_angle_is_k_delta(self):
        step = math.radians(7.0)
        geo = standard_geometry(1, elements_per_arc=3, frame_count=20,
                                angular_step=step)
        k = 5
        pose = pose_for_frame(geo, k)
        expected = geo.base_positions() @ rotation_z(k * step).T
        assert np.allclose(pose.positions, expected, atol=1e-15)

    def test_pose_preserves_radius_and_elevation(self):
        geo = standard_geometry(4, elements_per_arc=6, frame_count=16,
                                angular_step=math.radians(11.0))
        base_z = np.sort(geo.base_positions()[:, 2])
        for k in (1, 7, 15):
            pose = pose_for_frame(geo, k)
            assert np.allclose(np.linalg.norm(pose.positions, axis=1),
                               geo.arcs[0].radius)
            assert np.allclose(np.sort(pose.positions[:, 2]), base_z)

    def test_pose_positions_read_only(self):
        geo = standard_geometry(1, elements_per_arc=3)
        pose = pose_for_frame(geo, 2)
        with pytest.raises(ValueError):
            pose.positions[0, 0] = 1.0

    def test_frame_index_out_of_range(self):
        geo = standard_geometry(1, elements_per_arc=3, frame_count=10)
        with pytest.raises(ValueError):
            pose_for_frame(geo, 10)
        with pytest.raises(ValueError):
            pose_for_frame(geo, -1)
