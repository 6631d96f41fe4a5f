"""φ / padding / pooling 인덱스 맵"""

import numpy as np
import pytest

from data_io import to_stacked
from diagnostics import (PAD_MASK_EXAMPLE, brute_force_pad, brute_force_phi,
                         check_index_maps_random, phi_selector)
from index_maps import (IndexMapError, accumulate_by_index, batch_offset_indices,
                       build_pad_index, build_phi_index, dump_index, gather, instance_vectors,
                       pad, pool_partition_index, replicate_instances, select_instances, unpad)


class TestPhiIndex:

    def test_small_example(self):
        phi = build_phi_index(3, 2, 1, 2, 1)
        np.testing.assert_array_equal(phi.one_based(), [1, 2, 4, 5, 2, 3, 5, 6])
        assert (phi.rows, phi.columns) == (4, 2)

    def test_length(self):
        phi = build_phi_index(7, 5, 3, 3, 2)
        assert phi.indices.size == 3 * 3 * 3 * phi.a_out * phi.b_out
        assert (phi.a_out, phi.b_out) == (3, 2)

    def test_unit_filter_is_identity(self):
        phi = build_phi_index(4, 3, 2, 1, 1)
        np.testing.assert_array_equal(phi.indices, np.arange(4 * 3 * 2))

    def test_indices_in_range(self):
        phi = build_phi_index(6, 6, 3, 3, 2)
        assert phi.indices.min() >= 0
        assert phi.indices.max() < phi.input_volume

    @pytest.mark.parametrize("a, b, d, h, s", [(5, 4, 2, 3, 1), (6, 6, 1, 2, 2), (7, 5, 3, 3, 2), (4, 4, 1, 4, 1)])
    def test_gather_matches_loop(self, a, b, d, h, s):
        rng = np.random.default_rng(0)
        images = rng.integers(-5, 6, size=(2, a, b, d)).astype(np.float64)
        phi = build_phi_index(a, b, d, h, s)
        gathered = gather(phi, to_stacked(images))
        for i in range(2):
            block = gathered[:, i * phi.columns:(i + 1) * phi.columns]
            np.testing.assert_array_equal(block, brute_force_phi(images[i], h, s))

    def test_filter_too_large(self):
        with pytest.raises(IndexMapError):
            build_phi_index(3, 3, 1, 4, 1)

    def test_gather_shape_mismatch(self):
        phi = build_phi_index(4, 4, 2, 2, 1)
        with pytest.raises(IndexMapError):
            gather(phi, np.zeros((3, 16)))


class TestPadIndex:

    def test_three_by_three_in_five_by_five_mask_positions(self):
        # 마스크의 1 위치 (예시 목록 11, 16이 아니라 12, 17)
        pad_index = build_pad_index(3, 3, 1, 1)
        np.testing.assert_array_equal(pad_index.one_based(), [7, 8, 9, 12, 13, 14, 17, 18, 19])

    def test_matches_mask_picture(self):
        pad_index = build_pad_index(3, 3, 1, 1)
        from_mask = np.flatnonzero(PAD_MASK_EXAMPLE.ravel(order="F")) + 1
        np.testing.assert_array_equal(pad_index.one_based(), from_mask)

    def test_single_pixel(self):
        np.testing.assert_array_equal(build_pad_index(1, 1, 1, 1).one_based(), [5])

    def test_zero_pad_is_identity(self):
        pad_index = build_pad_index(3, 4, 2, 0)
        np.testing.assert_array_equal(pad_index.indices, np.arange(24))
        batch = np.arange(2 * 12 * 3, dtype=np.float64).reshape(2, 36)
        np.testing.assert_array_equal(pad(batch, pad_index), batch)

    def test_pad_matches_loop(self):
        rng = np.random.default_rng(1)
        images = rng.standard_normal((3, 4, 5, 2))
        pad_index = build_pad_index(4, 5, 2, 2)
        padded = pad(to_stacked(images), pad_index)
        expected = to_stacked(np.stack([brute_force_pad(image, 2) for image in images]))
        np.testing.assert_array_equal(padded, expected)

    def test_unpad_inverts_pad(self):
        rng = np.random.default_rng(2)
        batch = rng.standard_normal((3, 4 * 4 * 2))
        pad_index = build_pad_index(4, 4, 3, 1)
        np.testing.assert_array_equal(unpad(pad(batch, pad_index), pad_index), batch)

    def test_negative_pad(self):
        with pytest.raises(IndexMapError):
            build_pad_index(3, 3, 1, -1)


class TestAccumulate:

    def test_small_example(self):
        phi = build_phi_index(3, 2, 1, 2, 1)
        values = np.arange(1.0, 9.0)
        out = accumulate_by_index(values, phi.indices, 6)
        np.testing.assert_array_equal(out, [1, 2 + 5, 6, 3, 4 + 7, 8])

    def test_is_transpose_of_gather(self):
        rng = np.random.default_rng(3)
        phi = build_phi_index(6, 5, 2, 3, 1)
        z = rng.standard_normal(phi.input_volume)
        v = rng.standard_normal(phi.indices.size)
        lhs = np.dot(z[phi.indices], v)
        rhs = np.dot(z, accumulate_by_index(v, phi.indices, phi.input_volume))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_matches_sparse_transpose(self):
        phi = build_phi_index(5, 5, 2, 2, 1)
        values = np.random.default_rng(4).integers(-9, 10, size=phi.indices.size).astype(np.float64)
        np.testing.assert_array_equal(accumulate_by_index(values, phi.indices, phi.input_volume),
                                      phi_selector(phi).T @ values)

    def test_out_of_range(self):
        with pytest.raises(IndexMapError):
            accumulate_by_index(np.ones(2), np.array([0, 4]), 4)

    def test_out_of_range_message(self):
        with pytest.raises(IndexMapError, match=r"\[0, 3\)"):
            accumulate_by_index(np.ones(2), np.array([0, 3]), 3)

    def test_length_mismatch(self):
        with pytest.raises(IndexMapError):
            accumulate_by_index(np.ones(3), np.array([0, 1]), 4)


class TestBatchOffsets:

    def test_shared_base(self):
        found = batch_offset_indices(np.array([0, 1]), 4, 2) + 1
        np.testing.assert_array_equal(found, [1, 2, 5, 6])

    def test_per_copy_base(self):
        base = np.array([[0, 3], [1, 2]])
        np.testing.assert_array_equal(batch_offset_indices(base, 4, 2), [0, 1, 7, 6])

    def test_base_exceeds_block(self):
        with pytest.raises(IndexMapError):
            batch_offset_indices(np.array([0, 4]), 4, 2)

    def test_gather_over_batch_equals_offsets(self):
        rng = np.random.default_rng(5)
        images = rng.standard_normal((3, 4, 4, 1))
        phi = build_phi_index(4, 4, 1, 2, 1)
        vec = to_stacked(images).ravel(order="F")
        offsets = batch_offset_indices(phi, phi.input_volume, 3)
        np.testing.assert_array_equal(vec[offsets], gather(phi, to_stacked(images)).ravel(order="F"))


class TestInstanceBlocks:

    def test_instance_vectors(self):
        batch = np.arange(12, dtype=np.float64).reshape((2, 6), order="F")
        vectors = instance_vectors(batch, 4)
        np.testing.assert_array_equal(vectors[:, 1], [4, 5, 6, 7])

    def test_select_instances(self):
        batch = np.arange(12).reshape(2, 6)
        picked = select_instances(batch, 3, np.array([2, 0]))
        np.testing.assert_array_equal(picked, [[4, 5, 0, 1], [10, 11, 6, 7]])

    def test_replicate_instances(self):
        batch = np.array([[1, 2, 3, 4]])
        np.testing.assert_array_equal(replicate_instances(batch, 2, 2), [[1, 2, 1, 2, 3, 4, 3, 4]])
        assert replicate_instances(batch, 2, 1) is batch


class TestPoolPartition:

    def test_is_phi_with_stride_h(self):
        partition = pool_partition_index(4, 4, 1, 2)
        np.testing.assert_array_equal(partition.indices, build_phi_index(4, 4, 1, 2, 2).indices)
        np.testing.assert_array_equal(partition.one_based()[:4], [1, 2, 5, 6])

    def test_regions_disjoint(self):
        partition = pool_partition_index(6, 4, 2, 2)
        assert np.unique(partition.indices).size == partition.indices.size


def test_random_shapes_against_oracles():
    result = check_index_maps_random(configs=50, seed=11)
    assert result.passed, result.detail


def test_dump_index(tmp_path):
    path = tmp_path / "phi.txt"
    dump_index(build_phi_index(3, 2, 1, 2, 1), str(path))
    assert path.read_text().split() == ["1", "2", "4", "5", "2", "3", "5", "6"]
