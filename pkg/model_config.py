"""
Model Config
네트워크 구조 정의, 층별 차원 계산, 평탄화된 파라미터 벡터 θ의 배치 및 초기화

설정 파일 형식:
    # 주석
    input height=28 width=28 channels=1
    conv h=5 out=32 stride=1 pad=0 pool=2
    conv h=3 out=64 pool=2
    fc out=10
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np


class ConfigError(ValueError):
    """구조 설정 오류 (설정 파일에서 읽은 경우 줄 번호 포함)"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LayerSpec:
    """한 층의 정의 (conv 또는 fc)"""

    kind: str
    filter_size: int = 0
    out_channels: int = 0
    stride: int = 1
    pad: int = 0
    pool: Optional[int] = None
    out_neurons: int = 0

    @classmethod
    def conv(cls, filter_size: int, out_channels: int, stride: int = 1,
             pad: int = 0, pool: Optional[int] = None) -> "LayerSpec":
        return cls("conv", filter_size=filter_size, out_channels=out_channels,
                   stride=stride, pad=pad, pool=pool)

    @classmethod
    def fc(cls, out_neurons: int) -> "LayerSpec":
        return cls("fc", out_neurons=out_neurons)

    @property
    def is_conv(self) -> bool:
        return self.kind == "conv"

    def validate(self, line: Optional[int] = None):
        if self.kind == "conv":
            if self.filter_size < 1:
                raise ConfigError(f"conv filter size must be positive, got h={self.filter_size}", line)
            if self.out_channels < 1:
                raise ConfigError(f"conv out channels must be positive, got out={self.out_channels}", line)
            if self.stride < 1:
                raise ConfigError(f"conv stride must be positive, got stride={self.stride}", line)
            if self.pad < 0:
                raise ConfigError(f"conv pad must be non-negative, got pad={self.pad}", line)
            if self.pool is not None and self.pool < 1:
                raise ConfigError(f"pool window must be positive, got pool={self.pool}", line)
        elif self.kind == "fc":
            if self.out_neurons < 1:
                raise ConfigError(f"fc out must be positive, got out={self.out_neurons}", line)
        else:
            raise ConfigError(f"unknown layer kind '{self.kind}'", line)


@dataclass(frozen=True)
class ModelConfig:
    """입력 크기 (a, b, d)와 층 목록. conv 층은 모두 fc 층보다 앞에 온다."""

    input_dims: Tuple[int, int, int]
    layers: Tuple[LayerSpec, ...]
    # 설정 파일의 줄 번호 (오류 메시지용)
    lines: Tuple[int, ...] = field(default=(), compare=False)

    def line_of(self, m: int) -> Optional[int]:
        if m < len(self.lines):
            return self.lines[m]
        return None

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_conv(self) -> int:
        return sum(1 for spec in self.layers if spec.is_conv)

    @property
    def num_classes(self) -> int:
        return derive_shapes(self).num_classes

    def validate(self):
        a, b, d = self.input_dims
        if min(a, b, d) < 1:
            raise ConfigError(f"input dims must be positive, got {self.input_dims}")
        if not self.layers:
            raise ConfigError("config has no layers")
        seen_fc = False
        for m, spec in enumerate(self.layers):
            spec.validate(self.line_of(m))
            if spec.is_conv and seen_fc:
                raise ConfigError(f"layer {m + 1}: conv layer after a fc layer", self.line_of(m))
            seen_fc = seen_fc or not spec.is_conv


@dataclass(frozen=True)
class LayerShape:
    """
    한 층의 모든 차원

    fc 층은 a = b = 1, d = n 으로 두어 conv 층과 같은 코드 경로를 탄다.
    """

    kind: str
    index: int
    d_in: int
    a_in: int
    b_in: int
    d_out: int
    a_conv: int = 1
    b_conv: int = 1
    a_out: int = 1
    b_out: int = 1
    a_pad: int = 1
    b_pad: int = 1
    filter_size: int = 1
    stride: int = 1
    pad: int = 0
    pool: Optional[int] = None

    @property
    def is_conv(self) -> bool:
        return self.kind == "conv"

    @property
    def n_in(self) -> int:
        return self.d_in * self.a_in * self.b_in

    @property
    def n_out(self) -> int:
        return self.d_out * self.a_out * self.b_out

    @property
    def positions(self) -> int:
        """인스턴스당 출력 위치 수 (a_conv·b_conv, fc는 1)"""
        return self.a_conv * self.b_conv

    @property
    def fan_in(self) -> int:
        if self.is_conv:
            return self.filter_size * self.filter_size * self.d_in
        return self.n_in

    @property
    def weight_shape(self) -> Tuple[int, int]:
        return (self.d_out, self.fan_in)

    @property
    def segment_size(self) -> int:
        return self.d_out * (self.fan_in + 1)

    @property
    def padded_volume(self) -> int:
        return self.d_in * self.a_pad * self.b_pad

    @property
    def conv_volume(self) -> int:
        """σ(S^m) 한 장의 원소 수 d^{m+1} a_conv b_conv"""
        return self.d_out * self.a_conv * self.b_conv


@dataclass(frozen=True)
class ShapeTable:
    input_dims: Tuple[int, int, int]
    layers: Tuple[LayerShape, ...]

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, m: int) -> LayerShape:
        return self.layers[m]

    def __iter__(self):
        return iter(self.layers)

    @property
    def num_classes(self) -> int:
        return self.layers[-1].n_out

    @property
    def conv_layers(self) -> List[LayerShape]:
        return [shape for shape in self.layers if shape.is_conv]

    @property
    def fc_layers(self) -> List[LayerShape]:
        return [shape for shape in self.layers if not shape.is_conv]


def derive_shapes(config: ModelConfig) -> ShapeTable:
    """설정으로부터 층별 a, b, d, a_pad, a_conv, n 계산"""
    config.validate()
    a, b, d = config.input_dims
    shapes = []

    for m, spec in enumerate(config.layers):
        line = config.line_of(m)
        if spec.is_conv:
            h, s = spec.filter_size, spec.stride
            a_pad, b_pad = a + 2 * spec.pad, b + 2 * spec.pad
            if h > a_pad or h > b_pad:
                raise ConfigError(
                    f"layer {m + 1}: filter {h}x{h} larger than padded input {a_pad}x{b_pad}", line)
            a_conv = (a_pad - h) // s + 1
            b_conv = (b_pad - h) // s + 1
            a_out, b_out = a_conv, b_conv
            if spec.pool is not None:
                a_out, b_out = a_conv // spec.pool, b_conv // spec.pool
                if a_out < 1 or b_out < 1:
                    raise ConfigError(
                        f"layer {m + 1}: pool window {spec.pool} larger than conv output {a_conv}x{b_conv}",
                        line)
            shape = LayerShape(
                kind="conv", index=m, d_in=d, a_in=a, b_in=b, d_out=spec.out_channels,
                a_conv=a_conv, b_conv=b_conv, a_out=a_out, b_out=b_out,
                a_pad=a_pad, b_pad=b_pad, filter_size=h, stride=s,
                pad=spec.pad, pool=spec.pool,
            )
            a, b, d = a_out, b_out, spec.out_channels
        else:
            # 첫 fc 층의 입력은 vec(Z): n = d a b
            shape = LayerShape(kind="fc", index=m, d_in=d * a * b, a_in=1, b_in=1,
                               d_out=spec.out_neurons)
            a, b, d = 1, 1, spec.out_neurons
        shapes.append(shape)

    return ShapeTable(input_dims=tuple(config.input_dims), layers=tuple(shapes))


def param_count(config: ModelConfig) -> int:
    """n = Σ_conv d^{m+1}(h h d^m + 1) + Σ_fc n_{m+1}(n_m + 1)"""
    return sum(shape.segment_size for shape in derive_shapes(config))


@dataclass(frozen=True)
class Segment:
    offset: int
    rows: int
    cols: int

    @property
    def weight_size(self) -> int:
        return self.rows * self.cols

    @property
    def size(self) -> int:
        return self.rows * (self.cols + 1)

    @property
    def end(self) -> int:
        return self.offset + self.size


@dataclass(frozen=True)
class ParamLayout:
    """θ 안에서 층별 [vec(W^m); b^m] 구간"""

    segments: Tuple[Segment, ...]

    @classmethod
    def from_shapes(cls, shapes: ShapeTable) -> "ParamLayout":
        segments = []
        offset = 0
        for shape in shapes:
            rows, cols = shape.weight_shape
            segments.append(Segment(offset, rows, cols))
            offset += rows * (cols + 1)
        return cls(tuple(segments))

    @property
    def size(self) -> int:
        return self.segments[-1].end if self.segments else 0

    @property
    def segment_sizes(self) -> List[int]:
        return [seg.size for seg in self.segments]

    def weights(self, data: np.ndarray, m: int) -> np.ndarray:
        seg = self.segments[m]
        return data[seg.offset:seg.offset + seg.weight_size].reshape((seg.rows, seg.cols), order="F")

    def bias(self, data: np.ndarray, m: int) -> np.ndarray:
        seg = self.segments[m]
        return data[seg.offset + seg.weight_size:seg.end]

    def segment(self, data: np.ndarray, m: int) -> np.ndarray:
        """mat(v^m) = [W^m b^m] (d^{m+1} × (fan_in + 1))"""
        seg = self.segments[m]
        return data[seg.offset:seg.end].reshape((seg.rows, seg.cols + 1), order="F")

    def pack(self, blocks: List[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        """층별 (W, b) 목록을 평탄화된 벡터로"""
        out = np.empty(self.size)
        for seg, (W, bias) in zip(self.segments, blocks):
            out[seg.offset:seg.offset + seg.weight_size] = np.ravel(W, order="F")
            out[seg.offset + seg.weight_size:seg.end] = bias
        return out


class ParamVector:
    """평탄화된 파라미터 벡터 θ. weights()/bias()는 data와 저장 공간을 공유하는 view"""

    def __init__(self, data: np.ndarray, layout: ParamLayout):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 1 or data.size != layout.size:
            raise ValueError(f"parameter vector has {data.size} entries, layout needs {layout.size}")
        self.data = data
        self.layout = layout

    def __len__(self) -> int:
        return self.data.size

    def weights(self, m: int) -> np.ndarray:
        return self.layout.weights(self.data, m)

    def bias(self, m: int) -> np.ndarray:
        return self.layout.bias(self.data, m)

    def copy(self) -> "ParamVector":
        return ParamVector(self.data.copy(), self.layout)


# 기울기도 같은 배치를 따른다
GradVector = ParamVector


def init_params(config: ModelConfig, seed: int) -> ParamVector:
    """He 초기화: W ~ N(0,1)·sqrt(2/n_in), b = 0"""
    shapes = derive_shapes(config)
    layout = ParamLayout.from_shapes(shapes)
    rng = np.random.default_rng(seed)
    data = np.zeros(layout.size)

    for shape, seg in zip(shapes, layout.segments):
        scale = math.sqrt(2.0 / shape.fan_in)
        data[seg.offset:seg.offset + seg.weight_size] = rng.standard_normal(seg.weight_size) * scale

    return ParamVector(data, layout)


_CONV_KEYS = {"h": "filter_size", "out": "out_channels", "stride": "stride",
              "pad": "pad", "pool": "pool"}
_INPUT_KEYS = ("height", "width", "channels")


def _parse_fields(tokens: List[str], line: int) -> Dict[str, int]:
    fields = {}
    for token in tokens:
        if "=" not in token:
            raise ConfigError(f"expected key=value, got '{token}'", line)
        key, value = token.split("=", 1)
        if key in fields:
            raise ConfigError(f"duplicate key '{key}'", line)
        try:
            fields[key] = int(value)
        except ValueError:
            raise ConfigError(f"value of '{key}' must be an integer, got '{value}'", line)
    return fields


def parse_config_text(text: str) -> ModelConfig:
    """구조 설정 텍스트 파싱. 오류는 줄 번호와 함께 ConfigError"""
    input_dims = None
    layers = []
    lines = []

    for number, raw in enumerate(text.splitlines(), 1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        kind, *tokens = content.split()
        kind = kind.lower()
        fields = _parse_fields(tokens, number)

        if kind == "input":
            if input_dims is not None:
                raise ConfigError("duplicate input line", number)
            unknown = set(fields) - set(_INPUT_KEYS)
            if unknown:
                raise ConfigError(f"unknown input key(s): {', '.join(sorted(unknown))}", number)
            missing = [key for key in _INPUT_KEYS if key not in fields]
            if missing:
                raise ConfigError(f"input line missing: {', '.join(missing)}", number)
            input_dims = tuple(fields[key] for key in _INPUT_KEYS)
        elif kind == "conv":
            unknown = set(fields) - set(_CONV_KEYS)
            if unknown:
                raise ConfigError(f"unknown conv key(s): {', '.join(sorted(unknown))}", number)
            for required in ("h", "out"):
                if required not in fields:
                    raise ConfigError(f"conv line missing '{required}'", number)
            spec = LayerSpec.conv(**{_CONV_KEYS[key]: value for key, value in fields.items()})
            spec.validate(number)
            layers.append(spec)
            lines.append(number)
        elif kind == "fc":
            unknown = set(fields) - {"out"}
            if unknown:
                raise ConfigError(f"unknown fc key(s): {', '.join(sorted(unknown))}", number)
            if "out" not in fields:
                raise ConfigError("fc line missing 'out'", number)
            spec = LayerSpec.fc(fields["out"])
            spec.validate(number)
            layers.append(spec)
            lines.append(number)
        else:
            raise ConfigError(f"unknown line kind '{kind}' (expected input, conv or fc)", number)

    if input_dims is None:
        raise ConfigError("missing 'input height=.. width=.. channels=..' line")

    config = ModelConfig(input_dims=input_dims, layers=tuple(layers), lines=tuple(lines))
    # 차원 검사까지 로드 시점에 끝낸다
    derive_shapes(config)
    return config


def load_config(path: str) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def format_config(config: ModelConfig) -> str:
    a, b, d = config.input_dims
    out = [f"input height={a} width={b} channels={d}"]
    for spec in config.layers:
        if spec.is_conv:
            line = f"conv h={spec.filter_size} out={spec.out_channels} stride={spec.stride} pad={spec.pad}"
            if spec.pool is not None:
                line += f" pool={spec.pool}"
        else:
            line = f"fc out={spec.out_neurons}"
        out.append(line)
    return "\n".join(out) + "\n"
