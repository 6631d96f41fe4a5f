"""
Network
ModelConfig로부터 층 객체와 θ 배치를 만든다
"""

from typing import List

import numpy as np

from layers import BaseLayer, LayerFactory
from model_config import ModelConfig, ParamLayout, ParamVector, ShapeTable, derive_shapes, init_params


class Network:
    """층 목록 + 파라미터 배치. 값(θ)은 갖지 않는다"""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.shapes: ShapeTable = derive_shapes(config)
        self.layout = ParamLayout.from_shapes(self.shapes)
        self.layers: List[BaseLayer] = LayerFactory.create_layers(self.shapes)

    @property
    def input_dims(self):
        return self.config.input_dims

    @property
    def num_classes(self) -> int:
        return self.shapes.num_classes

    @property
    def num_params(self) -> int:
        return self.layout.size

    def weights(self, theta: np.ndarray, m: int) -> np.ndarray:
        return self.layout.weights(theta, m)

    def bias(self, theta: np.ndarray, m: int) -> np.ndarray:
        return self.layout.bias(theta, m)

    def init_params(self, seed: int) -> ParamVector:
        return init_params(self.config, seed)

    def describe(self) -> List[str]:
        lines = []
        for layer, seg in zip(self.layers, self.layout.segments):
            shape = layer.shape
            if shape.is_conv:
                pool = f", pool {shape.pool}" if shape.pool else ""
                lines.append(
                    f"conv {shape.filter_size}x{shape.filter_size}x{shape.d_in} -> {shape.d_out} "
                    f"({shape.a_in}x{shape.b_in} -> {shape.a_conv}x{shape.b_conv}{pool} -> "
                    f"{shape.a_out}x{shape.b_out}), {seg.size} params")
            else:
                lines.append(f"fc {shape.n_in} -> {shape.n_out}, {seg.size} params")
        return lines


def build_network(config: ModelConfig) -> Network:
    return Network(config)
