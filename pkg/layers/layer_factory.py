"""
Layer Factory
층 모양에 따라 적절한 층 객체 생성
"""

from typing import List

from model_config import ConfigError, ShapeTable

from .base_layer import BaseLayer
from .conv_layer import ConvLayer
from .fc_layer import FullLayer


class LayerFactory:
    """층 팩토리 - ShapeTable의 각 항목에 맞는 층 생성"""

    @staticmethod
    def create_layer(shapes: ShapeTable, m: int) -> BaseLayer:
        shape = shapes[m]
        is_last = m == len(shapes) - 1
        input_rows = shapes.input_dims[2] if m == 0 else shapes[m - 1].d_out

        if shape.is_conv:
            return ConvLayer(shape, is_last, input_rows)
        elif shape.kind == "fc":
            return FullLayer(shape, is_last, input_rows)
        else:
            raise ConfigError(f"layer {m + 1}: unknown layer kind '{shape.kind}'")

    @staticmethod
    def create_layers(shapes: ShapeTable) -> List[BaseLayer]:
        """학습 가능한 네트워크는 선형 fc 층으로 끝나야 한다"""
        if not shapes.fc_layers:
            raise ConfigError("a trainable network needs at least one fc layer (the last layer is linear fc)")
        return [LayerFactory.create_layer(shapes, m) for m in range(len(shapes))]
