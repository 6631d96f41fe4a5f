"""메모리 / 연산량 추정"""

import os

from model_config import LayerSpec, ModelConfig, derive_shapes, load_config
from resources import (BYTES_PER_REAL, batch_size_for_budget, estimate_resources,
                       format_resources)


class TestTinyNetwork:
    """8x8x2 → conv 3x3x4 (6x6, pool 3x3) → fc 36 → 3"""

    def test_counts(self, tiny_config):
        report = estimate_resources(tiny_config, 5, 2)
        assert report.params == 187
        assert report.z_per_instance == 128 + 36 + 3
        assert report.function_memory == 5 * 167
        assert report.jacobian_memory == 2 * 3 * (4 * 36 + 3)
        assert report.phi_index == 18 * 36

    def test_flops(self, tiny_config):
        report = estimate_resources(tiny_config, 5, 2)
        core = 3 * 3 * 2 * 4 * 36 + 3 * 36
        assert report.function_flops == 5 * core
        assert report.gradient_flops == 2 * 5 * core
        assert report.jacobian_flops == 2 * 3 * core
        assert report.gv_flops == 2 * 2 * core
        assert report.line_search_flops == report.function_flops

    def test_budget(self, tiny_config):
        per_instance = BYTES_PER_REAL * (167 + 18 * 36)
        assert batch_size_for_budget(tiny_config, 1.0) == (1024 * 1024) // per_instance
        assert batch_size_for_budget(tiny_config, 1e-6) == 1


def test_mnist_against_closed_forms(configs_dir):
    config = load_config(os.path.join(configs_dir, "mnist_3layer.txt"))
    shapes = derive_shapes(config)
    K = shapes.num_classes

    z_total = 0
    j_total = 0
    for shape in shapes:
        if shape.is_conv:
            z_total += shape.d_in * shape.a_in * shape.b_in
            j_total += shape.d_out * shape.a_conv * shape.b_conv
        else:
            z_total += shape.n_in
            j_total += shape.n_out
    z_total += K

    report = estimate_resources(config, 60000, 3000)
    assert report.function_memory == 60000 * z_total
    assert report.jacobian_memory == 3000 * K * j_total
    assert z_total == 784 + 32 * 12 * 12 + 64 * 6 * 6 + 576 + 10
    assert j_total == 32 * 24 * 24 + 64 * 12 * 12 + 64 * 6 * 6 + 10


def test_jacobian_to_z_ratio_for_fc_stack():
    """conv가 없으면 J/Z 메모리 비는 |S|·K·Σ n_{m+1} / (l·Σ n_m)"""
    config = ModelConfig(input_dims=(10, 1, 1), layers=(LayerSpec.fc(10), LayerSpec.fc(10), LayerSpec.fc(10)))
    report = estimate_resources(config, 100, 100)
    # Z: 4 층 x 10, J: 10 x 3 층 x 10
    assert report.jacobian_memory * 4 == report.function_memory * 10 * 3


def test_format(tiny_config):
    text = format_resources(estimate_resources(tiny_config, 5, 2))
    assert "Parameters:          187" in text
    assert "Jacobian cache" in text
    assert len(estimate_resources(tiny_config, 5, 2).to_frame()) == 2
