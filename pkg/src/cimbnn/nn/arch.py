"""Network descriptors: ordered layer lists plus shape inference.

Weighted layers are ``conv`` and ``fc``. ``pool`` is a non-overlapping max
pool on bits, ``avgpool`` a global average pool, ``flatten`` reshapes to
vectors. ``shortcut-add`` closes a residual block spanning the previous
``span`` convolutions; its shortcut path (identity or 1x1 projection, both
followed by batch norm) is full precision and computed digitally.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..errors import DimensionError, ValidationError

KINDS = ("conv", "fc", "pool", "avgpool", "flatten", "shortcut-add")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    precision: str = "binary"
    split: str = "cim"
    span: int = 0

    @property
    def weighted(self):
        return self.kind in ("conv", "fc")

    @property
    def input_size(self):
        """Rows of the weight matrix (inputs feeding one output)."""
        if self.kind == "conv":
            return self.kernel * self.kernel * self.in_channels
        if self.kind == "fc":
            return self.in_channels
        raise ValueError(f"{self.kind} has no weight matrix")

    @property
    def input_label(self):
        if self.kind == "conv":
            return f"{self.kernel}x{self.kernel}x{self.in_channels}"
        return str(self.in_channels)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: tuple
    num_classes: int
    layers: tuple = field(default_factory=tuple)

    def to_dict(self):
        return {"name": self.name, "input_shape": list(self.input_shape), "num_classes": self.num_classes,
                "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple(d["input_shape"]), int(d["num_classes"]),
                   tuple(LayerSpec(**l) for l in d["layers"]))

    def weighted_indices(self):
        return [i for i, l in enumerate(self.layers) if l.weighted]

    def validate(self):
        if any(l.kind not in KINDS for l in self.layers):
            raise ValidationError(f"unknown layer kind in {self.name}")
        w = self.weighted_indices()
        if len(w) < 2:
            raise ValidationError("a network needs at least a first and a last weighted layer")
        for i in (w[0], w[-1]):
            l = self.layers[i]
            if l.precision != "full" or l.split != "digital":
                raise ValidationError(f"layer {i} ({l.kind}) must be full precision and digital")
        for i in w[1:-1]:
            l = self.layers[i]
            if (l.precision, l.split) not in (("binary", "cim"), ("full", "digital")):
                raise ValidationError(f"layer {i}: unsupported precision/split {l.precision}/{l.split}")
        if self.layers[w[-1]].kind != "fc" or self.layers[w[-1]].out_channels != self.num_classes:
            raise ValidationError("last weighted layer must be fc producing num_classes scores")
        infer_shapes(self)
        return self


def infer_shapes(spec: NetworkSpec):
    """Input shape of every layer, followed by the output shape."""
    shape = tuple(spec.input_shape)
    shapes = []
    block_in = []
    for i, l in enumerate(spec.layers):
        shapes.append(shape)
        if l.kind == "conv":
            if len(shape) != 3 or shape[0] != l.in_channels:
                raise DimensionError(f"layer {i}: conv expects {l.in_channels} channels, gets {shape}")
            c, h, w = shape
            oh = (h + 2 * l.pad - l.kernel) // l.stride + 1
            ow = (w + 2 * l.pad - l.kernel) // l.stride + 1
            if oh <= 0 or ow <= 0:
                raise DimensionError(f"layer {i}: empty conv output")
            shape = (l.out_channels, oh, ow)
        elif l.kind == "fc":
            if len(shape) != 1 or shape[0] != l.in_channels:
                raise DimensionError(f"layer {i}: fc expects {l.in_channels} features, gets {shape}")
            shape = (l.out_channels,)
        elif l.kind == "pool":
            c, h, w = shape
            if h % l.kernel or w % l.kernel:
                raise DimensionError(f"layer {i}: {h}x{w} not divisible by pool {l.kernel}")
            shape = (c, h // l.kernel, w // l.kernel)
        elif l.kind == "avgpool":
            shape = (shape[0],)
        elif l.kind == "flatten":
            n = 1
            for s in shape:
                n *= s
            shape = (n,)
        elif l.kind == "shortcut-add":
            convs = [j for j in range(i) if spec.layers[j].kind == "conv"]
            if l.span < 1 or len(convs) < l.span:
                raise DimensionError(f"layer {i}: shortcut span {l.span} invalid")
            first = convs[-l.span]
            if convs[-l.span:] != list(range(first, i)):
                raise DimensionError(f"layer {i}: shortcut must follow {l.span} consecutive convs")
            src = shapes[first]
            if src[1] % shape[1] or src[2] % shape[2] or src[1] // shape[1] != src[2] // shape[2]:
                raise DimensionError(f"layer {i}: shortcut cannot map {src} to {shape}")
            block_in.append(src)
    shapes.append(shape)
    return shapes


def shortcut_geometry(spec: NetworkSpec, index):
    """(in_channels, out_channels, stride) of the shortcut closed at ``index``."""
    shapes = infer_shapes(spec)
    l = spec.layers[index]
    src = shapes[index - l.span]
    dst = shapes[index]
    return src[0], dst[0], src[1] // dst[1]


def _conv(cin, cout, binary=True, stride=1):
    return LayerSpec("conv", cin, cout, 3, stride, 1,
                     "binary" if binary else "full", "cim" if binary else "digital")


def _fc(cin, cout, binary=True):
    return LayerSpec("fc", cin, cout, precision="binary" if binary else "full", split="cim" if binary else "digital")


def vgg9(num_classes=10) -> NetworkSpec:
    pool = LayerSpec("pool", kernel=2, stride=2, precision="full", split="digital")
    layers = (
        _conv(3, 128, binary=False), _conv(128, 128), pool,
        _conv(128, 256), _conv(256, 256), pool,
        _conv(256, 512), _conv(512, 512), pool,
        LayerSpec("flatten", precision="full", split="digital"),
        _fc(8192, 1024), _fc(1024, 1024), _fc(1024, num_classes, binary=False),
    )
    return NetworkSpec("vgg9", (3, 32, 32), num_classes, layers).validate()


def resnet18(num_classes=10) -> NetworkSpec:
    """3-stage 16/32/64 residual net with 19 convolutions and one fc (20 weighted layers).

    Channel widening happens in the last convolution of a stage, and the first
    convolution of the next stage downsamples, so every convolution of stage s
    reads the stage's own width; this matches the input counts per layer of the
    reference split table (3x3x16 for layers 2-7, 3x3x32 for 8-13, 3x3x64 for 14-19).
    """
    add = LayerSpec("shortcut-add", span=2, precision="full", split="digital")
    layers = [_conv(3, 16, binary=False)]
    widths = (16, 32, 64)
    for s, c in enumerate(widths):
        c_next = widths[s + 1] if s + 1 < len(widths) else c
        for b in range(3):
            stride = 2 if (s > 0 and b == 0) else 1
            c_out = c_next if b == 2 else c
            layers += [_conv(c, c, stride=stride), _conv(c, c_out), add]
    layers += [LayerSpec("avgpool", precision="full", split="digital"), _fc(64, num_classes, binary=False)]
    return NetworkSpec("resnet18", (3, 32, 32), num_classes, tuple(layers)).validate()


def tiny(num_classes=10, width=16, input_hw=8, in_channels=3) -> NetworkSpec:
    """Digital stem, two binary convs (each followed by 2x2 pooling), one binary fc, digital classifier."""
    pool = LayerSpec("pool", kernel=2, stride=2, precision="full", split="digital")
    spatial = input_hw // 4
    layers = (
        _conv(in_channels, width, binary=False),
        _conv(width, width), pool,
        _conv(width, 2 * width), pool,
        LayerSpec("flatten", precision="full", split="digital"),
        _fc(2 * width * spatial * spatial, 4 * width),
        _fc(4 * width, num_classes, binary=False),
    )
    return NetworkSpec("tiny", (in_channels, input_hw, input_hw), num_classes, layers).validate()


ARCHITECTURES = {"vgg9": vgg9, "resnet18": resnet18, "tiny": tiny}


def get_arch(name: str, **kwargs) -> NetworkSpec:
    try:
        return ARCHITECTURES[name](**kwargs)
    except KeyError:
        raise ValidationError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}") from None
