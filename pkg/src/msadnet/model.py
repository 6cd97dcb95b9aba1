"""Declarative layer specs and the MSAD-Net graph builder.

The network is a flat list of nodes in topological order. Each node carries
a :class:`LayerSpec`, the names of the nodes feeding it, and its parameter
tensors. ``ModelGraph.forward`` evaluates the list once and keeps every
intermediate output addressable by name, which is what skip wiring and
Grad-CAM need.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Iterator

import numpy as np

from . import ops
from .errors import ConfigError, ContractError
from .tensor import Tensor, resolve_dtype

LAYER_KINDS = (
    "input",
    "conv3x3",
    "conv5x5",
    "conv1x1",
    "dwsc",
    "dilconv",
    "batchnorm",
    "relu",
    "maxpool",
    "gap",
    "concat",
    "add",
    "dense_softmax",
)

DENSE_STAGE_KINDS = ("dwsc", "conv3x3", "conv1x1", "conv3x3", "dwsc", "dwsc")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    padding: str = "same"
    dilation: int = 1
    sources: tuple[str, ...] = ()
    path: str = "base"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dilconv" and (self.dilation < 2 or self.kernel != 3):
            raise ConfigError("dilconv requires a 3x3 kernel and dilation rate >= 2")
        if self.kind != "input" and not self.sources:
            raise ConfigError(f"{self.kind} layer needs at least one source")
        if self.kind in ("concat", "add") and len(self.sources) < 2:
            raise ConfigError(f"{self.kind} layer needs at least two sources")


@dataclass
class ModelConfig:
    input_size: int = 224
    input_channels: int = 1
    num_classes: int = 4
    block_filters: tuple[int, int, int] = (32, 64, 96)
    dense1_plan: tuple[int, ...] = (128, 128, 64, 160, 160, 160)
    dense2_plan: tuple[int, ...] = (192, 192, 96, 224, 224, 224)
    sam_filters: int = 96
    dilation_rate: int = 2
    enable_skip1: bool = True
    enable_sam: bool = True
    sam_uses_plain_conv5x5: bool = False
    # index into dense module 1 whose (post-ReLU) output feeds the attention branch
    sam_tap_stage: int = 2
    bn_momentum: float = ops.BN_MOMENTUM
    bn_eps: float = ops.BN_EPS
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        self.block_filters = tuple(int(v) for v in self.block_filters)
        self.dense1_plan = tuple(int(v) for v in self.dense1_plan)
        self.dense2_plan = tuple(int(v) for v in self.dense2_plan)
        self.validate()

    def validate(self) -> None:
        if len(self.block_filters) != 3:
            raise ConfigError(f"block_filters needs 3 entries, got {len(self.block_filters)}")
        for name in ("dense1_plan", "dense2_plan"):
            plan = getattr(self, name)
            if len(plan) != len(DENSE_STAGE_KINDS):
                raise ConfigError(f"{name} needs {len(DENSE_STAGE_KINDS)} stages, got {len(plan)}")
        widths = self.block_filters + self.dense1_plan + self.dense2_plan + (self.sam_filters,)
        if any(w < 1 for w in widths):
            raise ConfigError("all filter counts must be positive")
        if self.input_channels not in (1, 3):
            raise ConfigError("input_channels must be 1 or 3")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.dilation_rate < 2:
            raise ConfigError("dilation_rate must be >= 2")
        if not 0 <= self.sam_tap_stage < len(DENSE_STAGE_KINDS):
            raise ConfigError("sam_tap_stage must index one of the six dense-module stages")
        if self.sam_uses_plain_conv5x5 and not self.enable_sam:
            raise ConfigError("sam_uses_plain_conv5x5 requires enable_sam")
        try:
            resolve_dtype(self.precision)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 <= self.bn_momentum < 1.0 or self.bn_eps <= 0:
            raise ConfigError("bn_momentum must lie in [0, 1) and bn_eps must be positive")
        if self.input_size < 32:
            raise ConfigError("input_size must be >= 32 to survive five 2x2 pools")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        d = self.to_dict()
        d.update(changes)
        return ModelConfig.from_dict(d)


@dataclass
class Node:
    name: str
    spec: LayerSpec
    in_channels: int
    out_shape: tuple[int, ...]  # (C, H, W) or (C,)
    params: dict[str, Tensor] = field(default_factory=dict)
    bn: ops.BatchNormState | None = None

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


class ModelGraph:
    """An evaluated-in-order node list with named taps."""

    def __init__(self, nodes: list[Node], output: str, config: ModelConfig, aliases: dict[str, str]):
        self.nodes = nodes
        self.output = output
        self.config = config
        self.aliases = dict(aliases)
        self._by_name = {n.name: n for n in nodes}
        self.activations: dict[str, Tensor] = {}

    # -- introspection ----------------------------------------------------
    def node(self, name: str) -> Node:
        return self._by_name[self.aliases.get(name, name)]

    def tap_names(self) -> list[str]:
        return sorted(self.aliases) + [n.name for n in self.nodes]

    def resolve_tap(self, name: str) -> str:
        real = self.aliases.get(name, name)
        if real not in self._by_name:
            raise KeyError(f"unknown tap {name!r}; available: {', '.join(sorted(self.aliases))} or any node name")
        return real

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for n in self.nodes:
            for pname, t in n.params.items():
                yield f"{n.name}.{pname}", t

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for n in self.nodes:
            if n.bn is not None:
                yield f"{n.name}.running_mean", n.bn.running_mean
                yield f"{n.name}.running_var", n.bn.running_var

    def num_trainable(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def pools_on_path(self, path: str = "base") -> list[Node]:
        return [n for n in self.nodes if n.spec.kind == "maxpool" and n.spec.path == path]

    @property
    def dtype(self) -> np.dtype:
        return resolve_dtype(self.config.precision)

    # -- state transfer ---------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        targets = {name: t.data for name, t in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = set(targets) - set(state)
        if missing:
            raise ContractError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, arr in targets.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise ContractError(f"shape mismatch for {name}: {src.shape} vs {arr.shape}")
            arr[...] = src

    # -- evaluation -------------------------------------------------------
    def forward(self, batch, mode: str = "infer") -> Tensor:
        """Run the graph; returns the output node (class probabilities for full models)."""
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=self.dtype))
        inp = self.nodes[0]
        if x.ndim != 4 or tuple(x.shape[1:]) != inp.out_shape:
            raise ContractError(f"expected input of shape (N, {', '.join(map(str, inp.out_shape))}); got {x.shape}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)
        acts: dict[str, Tensor] = {inp.name: x}
        for node in self.nodes[1:]:
            acts[node.name] = self._eval(node, acts, mode)
            if node.name == self.output:
                break
        self.activations = acts
        return acts[self.output]

    __call__ = forward

    def predict_proba(self, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
        from .tensor import no_grad

        out = []
        with no_grad():
            for i in range(0, len(x), batch_size):
                out.append(self.forward(x[i : i + batch_size], mode="infer").data)
        return np.concatenate(out, axis=0)

    def _eval(self, node: Node, acts: dict[str, Tensor], mode: str) -> Tensor:
        s = node.spec
        p = node.params
        src = [acts[name] for name in s.sources]
        kind = s.kind
        if kind in ("conv3x3", "conv5x5", "dilconv"):
            return ops.conv2d(src[0], p["kernel"], p["bias"], stride=s.stride, padding=s.padding, dilation=s.dilation)
        if kind == "conv1x1":
            return ops.conv1x1(src[0], p["kernel"], p["bias"])
        if kind == "dwsc":
            return ops.depthwise_conv2d(src[0], p["depth"], p["point"], p["bias"], padding=s.padding)
        if kind == "batchnorm":
            return ops.batch_norm(src[0], node.bn, mode)
        if kind == "relu":
            return ops.relu(src[0])
        if kind == "maxpool":
            return ops.max_pool2d(src[0], window=2)
        if kind == "gap":
            return ops.global_avg_pool(src[0])
        if kind == "concat":
            return ops.concat_channels(*src)
        if kind == "add":
            out = src[0]
            for t in src[1:]:
                out = ops.add(out, t)
            return out
        if kind == "dense_softmax":
            logits = ops.linear(src[0], p["weights"], p["bias"])
            acts["logits"] = logits
            return ops.softmax(logits)
        raise ContractError(f"cannot evaluate node kind {kind!r}")


# ---------------------------------------------------------------------------
# construction


def _node_rng(seed: int, name: str) -> np.random.Generator:
    # per-node streams keep each layer's initial values independent of which
    # other layers the ablation toggles add or remove
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class GraphBuilder:
    """Accumulates nodes, tracks shapes, and initializes parameters."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.dtype = resolve_dtype(config.precision)
        self.nodes: list[Node] = []
        self.shapes: dict[str, tuple[int, ...]] = {}
        self.aliases: dict[str, str] = {}
        c = config
        self._add_node(Node("input", LayerSpec("input"), 0, (c.input_channels, c.input_size, c.input_size)))

    def _add_node(self, node: Node) -> str:
        if node.name in self.shapes:
            raise ConfigError(f"duplicate node name {node.name!r}")
        for pname, t in node.params.items():
            t.name = f"{node.name}.{pname}"
        self.nodes.append(node)
        self.shapes[node.name] = node.out_shape
        return node.name

    def add(self, name: str, spec: LayerSpec) -> str:
        in_shape = self.shapes[spec.sources[0]]
        C = in_shape[0]
        rng = _node_rng(self.config.seed, name)
        dt = self.dtype
        params: dict[str, Tensor] = {}
        bn = None
        kind = spec.kind
        if kind in ("conv3x3", "conv5x5", "dilconv", "conv1x1", "dwsc"):
            k = spec.kernel
            F = spec.filters
            _, H, W = in_shape
            Ho = ops.conv_output_size(H, k, spec.stride, spec.padding, spec.dilation)
            Wo = ops.conv_output_size(W, k, spec.stride, spec.padding, spec.dilation)
            if Ho < 1 or Wo < 1:
                raise ConfigError(
                    f"layer {name}: input {H}x{W} is too small for a {k}x{k} kernel "
                    f"(dilation {spec.dilation}, padding {spec.padding})"
                )
            out_shape = (F, Ho, Wo)
            if kind == "dwsc":
                # no activation sits between the depthwise and pointwise stages, so
                # the depthwise planes get unit-gain (fan-in) scaling, not ReLU gain
                limit = np.sqrt(3.0 / (k * k))
                depth = rng.uniform(-limit, limit, size=(C, k, k)).astype(dt)
                params["depth"] = Tensor(depth, requires_grad=True)
                params["point"] = Tensor(_he_uniform(rng, (F, C, 1, 1), C, dt), requires_grad=True)
            else:
                params["kernel"] = Tensor(_he_uniform(rng, (F, C, k, k), C * k * k, dt), requires_grad=True)
            params["bias"] = Tensor(np.zeros(F, dtype=dt), requires_grad=True)
        elif kind == "batchnorm":
            bn = ops.BatchNormState.create(C, dtype=dt, eps=self.config.bn_eps, momentum=self.config.bn_momentum)
            params = {"gamma": bn.gamma, "beta": bn.beta}
            out_shape = in_shape
        elif kind == "relu":
            out_shape = in_shape
        elif kind == "maxpool":
            _, H, W = in_shape
            if H < 2 or W < 2:
                raise ConfigError(f"layer {name}: cannot pool a {H}x{W} map")
            out_shape = (C, H // 2, W // 2)
        elif kind == "gap":
            out_shape = (C,)
        elif kind == "concat":
            shapes = [self.shapes[s] for s in spec.sources]
            if any(len(s) != len(shapes[0]) or s[1:] != shapes[0][1:] for s in shapes):
                raise ConfigError(f"layer {name}: concat sources disagree outside the channel axis: {shapes}")
            out_shape = (sum(s[0] for s in shapes),) + shapes[0][1:]
        elif kind == "add":
            shapes = [self.shapes[s] for s in spec.sources]
            if any(s != shapes[0] for s in shapes):
                raise ConfigError(f"layer {name}: add sources have different shapes: {shapes}")
            out_shape = shapes[0]
        elif kind == "dense_softmax":
            if len(in_shape) != 1:
                raise ConfigError(f"layer {name}: classifier needs a feature vector, got shape {in_shape}")
            K, D = spec.filters, C
            limit = np.sqrt(1.0 / D)
            params["weights"] = Tensor(rng.uniform(-limit, limit, size=(K, D)).astype(dt), requires_grad=True)
            params["bias"] = Tensor(np.zeros(K, dtype=dt), requires_grad=True)
            out_shape = (K,)
        else:
            raise ConfigError(f"unsupported layer kind {kind!r}")
        for pname, t in params.items():
            t.name = f"{name}.{pname}"
        return self._add_node(Node(name, spec, C, out_shape, params, bn))

    def channels(self, name: str) -> int:
        return self.shapes[name][0]

    def alias(self, tap: str, node: str) -> None:
        self.aliases[tap] = node

    def finish(self, output: str) -> ModelGraph:
        return ModelGraph(list(self.nodes), output, self.config, self.aliases)


def build_block123(builder: GraphBuilder, source: str = "input") -> str:
    """Blocks 1-3: conv3x3(same) -> ReLU -> BN -> maxpool, with the configured widths."""
    x = source
    for i, f in enumerate(builder.config.block_filters, start=1):
        p = f"b{i}"
        x = builder.add(f"{p}.conv", LayerSpec("conv3x3", filters=f, kernel=3, sources=(x,)))
        x = builder.add(f"{p}.relu", LayerSpec("relu", sources=(x,)))
        x = builder.add(f"{p}.bn", LayerSpec("batchnorm", sources=(x,)))
        x = builder.add(f"{p}.pool", LayerSpec("maxpool", sources=(x,)))
        builder.alias(f"block{i}_out", x)
    return x


def build_dense_module(builder: GraphBuilder, source: str, plan, prefix: str) -> list[str]:
    """Six-stage dense module with no internal pooling.

    Stages are DWSC, conv3x3, conv1x1 bottleneck, conv3x3, DWSC, DWSC, each
    followed by ReLU, all with same padding. Returns the post-ReLU node name
    of every stage (the last entry is the module output).
    """
    plan = tuple(plan)
    if len(plan) != len(DENSE_STAGE_KINDS):
        raise ConfigError(f"dense module plan needs {len(DENSE_STAGE_KINDS)} stages, got {len(plan)}")
    outs = []
    x = source
    for i, (kind, f) in enumerate(zip(DENSE_STAGE_KINDS, plan)):
        k = 1 if kind == "conv1x1" else 3
        x = builder.add(f"{prefix}.s{i}.{kind}", LayerSpec(kind, filters=f, kernel=k, sources=(x,)))
        x = builder.add(f"{prefix}.s{i}.relu", LayerSpec("relu", sources=(x,)))
        outs.append(x)
    return outs


def build_sam(builder: GraphBuilder, source: str, filters: int, use_dilated: bool = True) -> str:
    """Attention branch: DWSC5(valid) -> DilConv -> BN -> pool -> DWSC5(valid) -> BN.

    Every convolution is followed by ReLU; the branch contains no sigmoid.
    With ``use_dilated=False`` the dilated 3x3 stage becomes a plain 5x5 conv.
    """
    if filters < 1:
        raise ConfigError("attention branch needs at least one filter")
    c = builder.config
    C = builder.channels(source)
    sam = "sam"
    try:
        x = builder.add(
            f"{sam}.dwsc1", LayerSpec("dwsc", filters=C, kernel=5, padding="valid", sources=(source,), path=sam)
        )
        x = builder.add(f"{sam}.relu1", LayerSpec("relu", sources=(x,), path=sam))
        if use_dilated:
            spec = LayerSpec("dilconv", filters=filters, kernel=3, dilation=c.dilation_rate, sources=(x,), path=sam)
            x = builder.add(f"{sam}.dilconv", spec)
        else:
            x = builder.add(f"{sam}.conv5x5", LayerSpec("conv5x5", filters=filters, kernel=5, sources=(x,), path=sam))
        x = builder.add(f"{sam}.relu2", LayerSpec("relu", sources=(x,), path=sam))
        x = builder.add(f"{sam}.bn1", LayerSpec("batchnorm", sources=(x,), path=sam))
        x = builder.add(f"{sam}.pool", LayerSpec("maxpool", sources=(x,), path=sam))
        x = builder.add(
            f"{sam}.dwsc2", LayerSpec("dwsc", filters=filters, kernel=5, padding="valid", sources=(x,), path=sam)
        )
        x = builder.add(f"{sam}.relu3", LayerSpec("relu", sources=(x,), path=sam))
        x = builder.add(f"{sam}.bn2", LayerSpec("batchnorm", sources=(x,), path=sam))
    except ConfigError as exc:
        raise ConfigError(
            f"attention branch input {builder.shapes[source][1:]} is spatially too small for two valid 5x5 "
            f"stages and a pool: {exc}"
        ) from exc
    builder.alias("sam_out", x)
    return x


def build_msadnet(config: ModelConfig | None = None) -> ModelGraph:
    config = config or ModelConfig()
    b = GraphBuilder(config)
    x = build_block123(b, "input")
    block3 = x

    dm1 = build_dense_module(b, x, config.dense1_plan, "b4")
    b.alias("block4_mid", dm1[2])
    x = b.add("b4.pool", LayerSpec("maxpool", sources=(dm1[-1],)))
    b.alias("block4_out", x)

    if config.enable_skip1:
        s = b.add("skip1.pool", LayerSpec("maxpool", sources=(block3,), path="skip1"))
        s = b.add(
            "skip1.proj", LayerSpec("conv1x1", filters=b.channels(x), kernel=1, sources=(s,), path="skip1")
        )
        x = b.add("skip1.add", LayerSpec("add", sources=(x, s), path="skip1"))
    b.alias("block5_in", x)

    dm2 = build_dense_module(b, x, config.dense2_plan, "b5")
    b.alias("block5_conv", dm2[-1])
    x = b.add("b5.pool", LayerSpec("maxpool", sources=(dm2[-1],)))
    b.alias("block5_out", x)
    feats = b.add("gap", LayerSpec("gap", sources=(x,)))
    b.alias("base_gap", feats)

    if config.enable_sam:
        tap = dm1[config.sam_tap_stage]
        b.alias("sam_in", tap)
        sam = build_sam(b, tap, config.sam_filters, use_dilated=not config.sam_uses_plain_conv5x5)
        sam_gap = b.add("sam.gap", LayerSpec("gap", sources=(sam,), path="sam"))
        feats = b.add("concat", LayerSpec("concat", sources=(feats, sam_gap), path="head"))
    b.alias("gap_out", feats)
    out = b.add("classifier", LayerSpec("dense_softmax", filters=config.num_classes, sources=(feats,), path="head"))
    return b.finish(out)


def classifier_width(model: ModelGraph) -> int:
    return model.node("classifier").in_channels


def spatial_trace(model: ModelGraph, path: str = "base") -> list[int]:
    """Input size followed by the output size of every pool on ``path``."""
    sizes = [model.nodes[0].out_shape[1]]
    sizes += [n.out_shape[1] for n in model.pools_on_path(path)]
    return sizes
