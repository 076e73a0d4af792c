import numpy as np
import pytest

from radialpose.errors import ArgumentError, EmptyAccumulatorError, ResourceError
from radialpose.geometry import PointCloud
from radialpose.keypoints import RadiiMatrix, gt_radii
from radialpose.voting import (
    Accumulator3D,
    cast_offset_vote,
    cast_radial_vote,
    cast_radial_votes,
    cast_radial_votes_partitioned,
    dump_accumulator,
    estimate_keypoints,
    estimate_keypoints_offset,
    extract_peak,
    load_accumulator,
    merge,
    merge_all,
    new_accumulator,
    shell_mask,
)


def _grid(rho=0.1, extent=1.0):
    return new_accumulator([-extent] * 3, [extent] * 3, rho)


class TestNewAccumulator:
    def test_dims_and_zero_counts(self):
        acc = _grid(0.1)
        assert acc.dims == (20, 20, 20)
        assert acc.counts.shape == (20, 20, 20)
        assert acc.total() == 0

    def test_partial_voxel_rounds_up(self):
        acc = new_accumulator([0.0, 0.0, 0.0], [1.0, 0.5, 0.25], 0.3)
        assert acc.dims == (4, 2, 1)
        assert acc.counts.shape == (1, 2, 4)

    def test_voxel_cap(self):
        with pytest.raises(ResourceError) as info:
            new_accumulator([-1.0] * 3, [1.0] * 3, 0.01, max_voxels=1000)
        assert info.value.to_dict()["max_voxels"] == 1000

    def test_inverted_bounds_rejected(self):
        with pytest.raises(ArgumentError):
            new_accumulator([0.0, 0.0, 0.0], [1.0, -1.0, 1.0], 0.1)

    def test_counts_shape_checked(self):
        with pytest.raises(ArgumentError):
            Accumulator3D(np.zeros(3), (2, 3, 4), 0.1, np.zeros((2, 3, 4), dtype=np.int64))


class TestRadialVote:
    def test_matches_full_grid_scan(self, rng):
        acc = _grid(0.1)
        for _ in range(40):
            voter = rng.uniform(-1.3, 1.3, size=3)
            radius = rng.uniform(0.0, 1.5)
            fresh = acc.empty_like()
            cast = cast_radial_vote(fresh, voter, radius)
            mask = shell_mask(fresh, voter, radius)
            np.testing.assert_array_equal(fresh.counts, mask.astype(np.int64))
            assert cast == int(mask.sum())

    def test_voxel_centred_voter_hits_exact_shell(self):
        acc = _grid(0.1)
        voter = acc.voxel_center(10, 10, 10)
        fresh = acc.empty_like()
        cast_radial_vote(fresh, voter, 0.3)
        np.testing.assert_array_equal(fresh.counts, shell_mask(fresh, voter, 0.3).astype(np.int64))
        # the six axis neighbours at exactly 3 voxels lie on the shell
        for ix, iy, iz in [(13, 10, 10), (7, 10, 10), (10, 13, 10), (10, 7, 10), (10, 10, 13), (10, 10, 7)]:
            assert fresh.count_at(ix, iy, iz) == 1

    def test_zero_radius_marks_own_voxel(self):
        acc = _grid(0.1)
        voter = acc.voxel_center(4, 5, 6)
        assert cast_radial_vote(acc, voter, 0.0) == 1
        assert acc.count_at(4, 5, 6) == 1

    def test_shell_outside_grid_casts_nothing(self):
        acc = _grid(0.1)
        assert cast_radial_vote(acc, [5.0, 5.0, 5.0], 0.5) == 0
        assert acc.total() == 0

    def test_negative_radius_rejected(self):
        with pytest.raises(ArgumentError):
            cast_radial_vote(_grid(0.1), [0.0, 0.0, 0.0], -0.1)

    def test_three_voters_intersect_at_keypoint(self):
        acc = _grid(0.05)
        keypoint = acc.voxel_center(20, 20, 20)
        voters = np.array([[0.5, 0.0, 0.0], [0.0, 0.6, 0.0], [0.0, 0.0, -0.7]])
        radii = np.linalg.norm(voters - keypoint, axis=1)
        cast_radial_votes(acc, voters, radii)
        assert acc.count_at(20, 20, 20) == 3
        assert acc.counts.max() == 3

    def test_reflected_voter_mirrors_shell(self, rng):
        acc = _grid(0.05, 1.25)
        mirrored = _grid(0.05, 1.25)
        for _ in range(5):
            voter = rng.uniform(-0.8, 0.8, size=3)
            radius = rng.uniform(0.1, 0.9)
            cast_radial_vote(acc, voter, radius)
            cast_radial_vote(mirrored, -voter, radius)
        np.testing.assert_array_equal(mirrored.counts, acc.counts[::-1, ::-1, ::-1])

    def test_partitioned_equals_sequential(self, rng):
        template = _grid(0.1)
        for _ in range(20):
            n = int(rng.integers(1, 30))
            voters = rng.uniform(-1.0, 1.0, size=(n, 3))
            radii = rng.uniform(0.0, 1.0, size=n)
            sequential = template.empty_like()
            cast_radial_votes(sequential, voters, radii)
            parts = int(rng.integers(1, 6))
            merged = cast_radial_votes_partitioned(template, voters, radii, parts)
            np.testing.assert_array_equal(merged.counts, sequential.counts)


class TestOffsetVote:
    def test_hits_target_voxel(self):
        acc = _grid(0.1)
        assert cast_offset_vote(acc, [0.0, 0.0, 0.0], [0.25, 0.05, -0.05])
        assert acc.count_at(12, 10, 9) == 1
        assert acc.total() == 1

    def test_outside_is_skipped(self):
        acc = _grid(0.1)
        assert not cast_offset_vote(acc, [0.9, 0.0, 0.0], [0.5, 0.0, 0.0])
        assert acc.total() == 0


class TestExtractPeak:
    def test_single_voxel_returns_its_centre(self):
        acc = _grid(0.1)
        acc.counts[3, 4, 5] = 7
        peak = extract_peak(acc)
        np.testing.assert_allclose(peak.position, acc.voxel_center(5, 4, 3))
        assert peak.score == 7

    def test_tie_goes_to_lowest_linear_index(self):
        acc = _grid(0.1)
        acc.counts[8, 8, 8] = 2
        acc.counts[2, 15, 15] = 2
        np.testing.assert_allclose(extract_peak(acc).position, acc.voxel_center(15, 15, 2))

    def test_centroid_refinement(self):
        acc = _grid(0.1)
        acc.counts[10, 10, 10] = 3
        acc.counts[10, 10, 11] = 1
        expected = (3 * acc.voxel_center(10, 10, 10) + acc.voxel_center(11, 10, 10)) / 4
        np.testing.assert_allclose(extract_peak(acc).position, expected)

    def test_corner_neighbourhood_is_clipped(self):
        acc = _grid(0.1)
        acc.counts[0, 0, 0] = 5
        np.testing.assert_allclose(extract_peak(acc).position, acc.voxel_center(0, 0, 0))

    def test_empty_accumulator(self):
        with pytest.raises(EmptyAccumulatorError):
            extract_peak(_grid(0.1))


class TestMerge:
    def test_merge_matches_single_accumulator(self, rng):
        template = _grid(0.1)
        for _ in range(20):
            voters = rng.uniform(-1.0, 1.0, size=(10, 3))
            radii = rng.uniform(0.1, 0.8, size=10)
            whole = template.empty_like()
            cast_radial_votes(whole, voters, radii)
            a, b = template.empty_like(), template.empty_like()
            cast_radial_votes(a, voters[:4], radii[:4])
            cast_radial_votes(b, voters[4:], radii[4:])
            np.testing.assert_array_equal(merge(a, b).counts, whole.counts)
            np.testing.assert_array_equal(merge(b, a).counts, whole.counts)

    def test_merge_all_empty_list(self):
        with pytest.raises(ArgumentError):
            merge_all([])

    def test_different_grids_rejected(self):
        with pytest.raises(ArgumentError):
            merge(_grid(0.1), _grid(0.2))


class TestEstimateKeypoints:
    def test_exact_radii_recover_keypoints(self, rng):
        keypoints = np.array([[0.31, 0.22, -0.13], [-0.42, 0.11, 0.23], [0.02, -0.51, 0.33]])
        points = PointCloud(rng.uniform(-1.0, 1.0, size=(60, 3)))
        radii = gt_radii(points, keypoints)
        est = estimate_keypoints(points, radii, 0.05, ([-1.25] * 3, [1.25] * 3))
        assert [e.keypoint_index for e in est] == [0, 1, 2]
        for e, k in zip(est, keypoints):
            assert np.linalg.norm(e.position - k) <= 2 * 0.05
            assert e.votes == 60

    def test_noisy_radii_stay_within_two_voxels(self):
        rho = 0.05
        keypoints = np.array([[0.31, 0.22, -0.13], [-0.42, 0.11, 0.23], [0.02, -0.51, 0.33]])
        errors = []
        for seed in range(100):
            trial = np.random.default_rng(seed)
            points = PointCloud(trial.uniform(-1.0, 1.0, size=(60, 3)))
            exact = gt_radii(points, keypoints).values
            radii = RadiiMatrix(np.maximum(exact + trial.normal(0.0, rho / 4, size=exact.shape), 0.0))
            est = estimate_keypoints(points, radii, rho, ([-1.25] * 3, [1.25] * 3))
            errors.extend(np.linalg.norm(e.position - k) for e, k in zip(est, keypoints))
        assert np.mean(np.array(errors) <= 2 * rho) >= 0.99

    def test_single_voter_zero_radius(self):
        centre = _grid(0.1).voxel_center(11, 6, 14)
        points = PointCloud([centre])
        radii = RadiiMatrix(np.zeros((1, 3)))
        est = estimate_keypoints(points, radii, 0.1, ([-1.0] * 3, [1.0] * 3))
        for e in est:
            np.testing.assert_allclose(e.position, centre)
            assert e.score == 1

    def test_row_count_mismatch(self):
        with pytest.raises(ArgumentError):
            estimate_keypoints(
                PointCloud(np.zeros((2, 3))), RadiiMatrix(np.zeros((3, 3))), 0.1, ([-1.0] * 3, [1.0] * 3)
            )

    def test_offset_voting_recovers_keypoints(self, rng):
        keypoints = np.array([[0.31, 0.22, -0.13], [-0.42, 0.11, 0.23], [0.02, -0.51, 0.33]])
        pts = rng.uniform(-1.0, 1.0, size=(30, 3))
        offsets = keypoints[None, :, :] - pts[:, None, :]
        est = estimate_keypoints_offset(PointCloud(pts), offsets, 0.05, ([-1.25] * 3, [1.25] * 3))
        for e, k in zip(est, keypoints):
            assert e.score == 30
            assert np.linalg.norm(e.position - k) <= 0.05 * np.sqrt(3) / 2 + 1e-12


class TestDump:
    def test_round_trip(self, rng, tmp_path):
        acc = _grid(0.1)
        cast_radial_votes(acc, rng.uniform(-1.0, 1.0, size=(5, 3)), rng.uniform(0.1, 0.8, size=5))
        path = tmp_path / "acc.rpac"
        dump_accumulator(acc, path)
        back = load_accumulator(path)
        assert back.same_grid(acc)
        np.testing.assert_array_equal(back.counts, acc.counts)

    def test_truncated_dump(self, tmp_path):
        path = tmp_path / "acc.rpac"
        dump_accumulator(_grid(0.5), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ArgumentError):
            load_accumulator(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "acc.rpac"
        path.write_bytes(b"\0" * 128)
        with pytest.raises(ArgumentError):
            load_accumulator(path)
