"""Architecture builders.

Four CNN families over small images, all ending in global average pooling and
a single linear classifier so the classifier input width equals the final
channel count.  Prunable convolutions per family:

* vgg_small / vgg16: every convolution.
* resnet_basic: only the first convolution of each basic block; the second
  conv and any projection shortcut keep their widths so residual adds stay
  aligned.
* inception_small: only the internal convolutions of the 2-conv and 3-conv
  branches; branch-final convolutions keep the concat arity intact.

Attention taps sit at the end of the three deepest resolution stages.
"""

from __future__ import annotations

import copy

from .graph import INPUT, GraphError, GraphNet, LayerSpec, NetworkDescriptor, check_structure

VGG16_PLAN = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")
VGG_SMALL_PLAN = (16, 16, "M", 32, 32, "M", 96, 96, "M", 192, 192, "M")

ARCH_NAMES = ("vgg_small", "vgg16", "resnet_basic", "inception_small")


class _Assembler:
    """Incremental descriptor builder tracking the current stream."""

    def __init__(self, in_channels: int):
        self.layers: list[LayerSpec] = []
        self.prunable: list[int] = []
        self.width = {INPUT: in_channels}
        self.last = INPUT

    def _push(self, spec: LayerSpec) -> int:
        self.layers.append(spec)
        idx = len(self.layers) - 1
        self.width[idx] = spec.out_channels
        self.last = idx
        return idx

    def conv(self, out_channels, kernel=3, stride=1, padding=None, prunable=False,
             connection="sequential", source=None):
        src = self.last if source is None else source
        if padding is None:
            padding = kernel // 2
        idx = self._push(LayerSpec(
            kind="conv", inputs=(src,), in_channels=self.width[src],
            out_channels=out_channels, kernel_size=kernel, stride=stride,
            padding=padding, connection=connection,
        ))
        if prunable:
            self.prunable.append(idx)
        return idx

    def bn(self, connection="sequential"):
        c = self.width[self.last]
        return self._push(LayerSpec(
            kind="batchnorm", inputs=(self.last,), in_channels=c, out_channels=c,
            connection=connection,
        ))

    def relu(self, connection="sequential"):
        c = self.width[self.last]
        return self._push(LayerSpec(
            kind="activation", inputs=(self.last,), in_channels=c, out_channels=c,
            op="relu", connection=connection,
        ))

    def maxpool(self, kernel=2, stride=None, padding=0, source=None, connection="sequential"):
        src = self.last if source is None else source
        c = self.width[src]
        return self._push(LayerSpec(
            kind="pool", inputs=(src,), in_channels=c, out_channels=c,
            kernel_size=kernel, stride=stride if stride is not None else kernel,
            padding=padding, op="max", connection=connection,
        ))

    def global_avg(self):
        c = self.width[self.last]
        return self._push(LayerSpec(
            kind="pool", inputs=(self.last,), in_channels=c, out_channels=c, op="global_avg",
        ))

    def linear(self, out_features):
        c = self.width[self.last]
        return self._push(LayerSpec(
            kind="linear", inputs=(self.last,), in_channels=c, out_channels=out_features,
        ))

    def add(self, a, b, connection="residual-branch"):
        c = self.width[a]
        return self._push(LayerSpec(
            kind="add", inputs=(a, b), in_channels=c, out_channels=c, connection=connection,
        ))

    def concat(self, sources, connection="inception-branch"):
        total = sum(self.width[s] for s in sources)
        return self._push(LayerSpec(
            kind="concat", inputs=tuple(sources), in_channels=total, out_channels=total,
            connection=connection,
        ))

    def conv_bn_relu(self, out_channels, kernel=3, stride=1, padding=None, prunable=False,
                     connection="sequential", source=None):
        self.conv(out_channels, kernel, stride, padding, prunable, connection, source)
        self.bn(connection)
        return self.relu(connection)


def _finish(assembler, name, taps, input_shape, num_classes) -> NetworkDescriptor:
    assembler.global_avg()
    assembler.linear(num_classes)
    desc = NetworkDescriptor(
        name=name,
        layers=tuple(assembler.layers),
        attention_taps=tuple(taps),
        prunable_layers=tuple(assembler.prunable),
        input_shape=tuple(input_shape),
        num_classes=num_classes,
    )
    problems = check_structure(desc)
    if problems:
        raise GraphError(f"{name}: " + "; ".join(problems))
    return desc


def _vgg(name, plan, input_shape, num_classes) -> NetworkDescriptor:
    a = _Assembler(input_shape[0])
    stage_ends = []
    spatial = input_shape[1]
    for token in plan:
        if token == "M":
            if spatial < 2:
                raise GraphError(f"{name}: input {input_shape} too small for pooling depth")
            stage_ends.append(a.last)
            a.maxpool()
            spatial //= 2
        else:
            a.conv_bn_relu(int(token), prunable=True)
    if a.last not in stage_ends and a.layers[a.last].kind == "activation":
        stage_ends.append(a.last)  # trailing stage without a closing pool
    taps = stage_ends[-3:]
    return _finish(a, name, taps, input_shape, num_classes)


def _resnet_basic(depth, input_shape, num_classes) -> NetworkDescriptor:
    if depth < 8 or (depth - 2) % 6 != 0:
        raise GraphError(f"resnet_basic depth must be 6n+2 with n >= 1, got {depth}")
    blocks_per_stage = (depth - 2) // 6
    a = _Assembler(input_shape[0])
    a.conv_bn_relu(16)
    taps = []
    for stage, channels in enumerate((16, 32, 64)):
        for block in range(blocks_per_stage):
            stride = 2 if stage > 0 and block == 0 else 1
            entry = a.last
            a.conv_bn_relu(channels, stride=stride, prunable=True, connection="residual-branch")
            a.conv(channels, connection="residual-branch")
            main = a.bn(connection="residual-branch")
            if stride != 1 or a.width[entry] != channels:
                a.conv(channels, kernel=1, stride=stride, padding=0,
                       source=entry, connection="residual-branch")
                skip = a.bn(connection="residual-branch")
            else:
                skip = entry
            a.add(main, skip)
            a.relu(connection="residual-branch")
        taps.append(a.last)
    return _finish(a, f"resnet{depth}", taps, input_shape, num_classes)


def _inception_small(input_shape, num_classes) -> NetworkDescriptor:
    a = _Assembler(input_shape[0])
    a.conv_bn_relu(32)
    stem = a.conv_bn_relu(64)
    taps = [stem]
    a.maxpool()
    # (single-conv, 2-conv reduce, 3-conv reduce/mid, pool-branch) widths
    modules = ((32, 48, 64, 16, 32, 32, 32), (64, 80, 96, 32, 48, 48, 48))
    for m, (n1, r2, n2, r3, m3, n3, n4) in enumerate(modules):
        module_in = a.last
        b1 = a.conv_bn_relu(n1, kernel=1, source=module_in, connection="inception-branch")
        a.conv_bn_relu(r2, kernel=1, source=module_in, prunable=True, connection="inception-branch")
        b2 = a.conv_bn_relu(n2, connection="inception-branch")
        a.conv_bn_relu(r3, kernel=1, source=module_in, prunable=True, connection="inception-branch")
        a.conv_bn_relu(m3, prunable=True, connection="inception-branch")
        b3 = a.conv_bn_relu(n3, connection="inception-branch")
        a.maxpool(kernel=3, stride=1, padding=1, source=module_in, connection="inception-branch")
        b4 = a.conv_bn_relu(n4, kernel=1, connection="inception-branch")
        taps.append(a.concat((b1, b2, b3, b4)))
        if m + 1 < len(modules):
            a.maxpool()
    return _finish(a, "inception_small", taps, input_shape, num_classes)


def build(arch: str, *, num_classes=10, input_shape=(3, 32, 32), seed=0,
          depth=20, plan=None) -> GraphNet:
    """Construct a named architecture with deterministic, seeded parameters.

    ``plan`` overrides the vgg_small stage plan (ints are conv widths, "M"
    is a 2x2 max pool); ``depth`` selects the resnet_basic depth (6n+2).
    """
    if arch not in ARCH_NAMES:
        raise GraphError(f"unknown architecture {arch!r}; expected one of {ARCH_NAMES}")
    if num_classes < 1:
        raise GraphError("num_classes must be >= 1")
    if len(input_shape) != 3 or min(input_shape) < 1:
        raise GraphError(f"bad input_shape {input_shape}")

    if arch == "vgg16":
        desc = _vgg("vgg16", VGG16_PLAN, input_shape, num_classes)
    elif arch == "vgg_small":
        desc = _vgg("vgg_small", tuple(plan) if plan is not None else VGG_SMALL_PLAN,
                    input_shape, num_classes)
    elif arch == "resnet_basic":
        desc = _resnet_basic(depth, input_shape, num_classes)
    else:
        desc = _inception_small(input_shape, num_classes)
    return GraphNet(desc, seed=seed)


def clone_as_student(net: GraphNet) -> GraphNet:
    """Structurally identical network with independently copied parameters."""
    student = GraphNet(net.descriptor)
    student.load_state_dict(copy.deepcopy(net.state_dict()))
    return student
