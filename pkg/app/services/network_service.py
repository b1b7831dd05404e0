"""Two-stage segmentation network: residual encoder-decoder backbone with a
segmentation head and a parallel Gaussian-parameter head."""

from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union
import logging
import math

import numpy as np

from app.models import NetworkConfig, TrainingConfig
from app.services.attention_service import (
    AttentionMap,
    AttentionService,
    GaussianParamMap,
    RenderMode,
    SIGMA_MIN,
)
from app.services.optimizer_service import AdamState, OptimizerService
from app.services.tensor_service import (
    Graph,
    Tensor,
    add,
    concat_channels,
    conv2d,
    cross_entropy,
    logistic,
    relu,
    scale,
    upsample2x,
    zero_grad,
)

logger = logging.getLogger(__name__)

# sigma_min + softplus(b) = 1.0
SIGMA_BIAS = math.log(math.expm1(1.0 - SIGMA_MIN))
PREDICTION_THRESHOLD = 0.5


@dataclass
class SVSNetwork:
    config: NetworkConfig
    params: "OrderedDict[str, Tensor]"

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameter_count(self) -> int:
        return sum(tensor.data.size for tensor in self.params.values())


@dataclass
class ForwardResult:
    logits: Tensor
    backbone_prob: Tensor
    param_map: GaussianParamMap
    attention: AttentionMap
    final_prob: Tensor


@dataclass
class StepResult:
    loss: float
    main_loss: float
    aux_loss: float

    def __float__(self) -> float:
        return self.loss


def _channels(cfg: NetworkConfig, level: int) -> int:
    return cfg.base_channels * 2 ** level


class NetworkService:
    """Build, run and train the segmentation network"""

    @staticmethod
    def conv_layout(cfg: NetworkConfig) -> List[Tuple[str, int, int, int]]:
        """(name, kernel size, in channels, out channels) in parameter order."""
        layout: List[Tuple[str, int, int, int]] = []

        def residual(name: str, cin: int, cout: int) -> None:
            layout.append((f"{name}.conv1", 3, cin, cout))
            layout.append((f"{name}.conv2", 3, cout, cout))
            if cin != cout:
                layout.append((f"{name}.proj", 1, cin, cout))

        base = cfg.base_channels
        layout.append(("stem", 3, 1, base))
        for level in range(cfg.depth):
            width = _channels(cfg, level)
            residual(f"enc{level}.block", width, width)
            layout.append((f"enc{level}.down", 3, width, 2 * width))
        bottom = _channels(cfg, cfg.depth)
        residual("bottleneck", bottom, bottom)
        for level in reversed(range(cfg.depth)):
            width = _channels(cfg, level)
            layout.append((f"dec{level}.up", 3, 2 * width, width))
            residual(f"dec{level}.block", 2 * width, width)
        layout.append(("head.seg", 1, base, 1))
        layout.append(("head.att_hidden", 3, base, base))
        layout.append(("head.att_out", 1, base, 6))
        return layout

    @staticmethod
    def parameter_shapes(cfg: NetworkConfig) -> "OrderedDict[str, Tuple[int, ...]]":
        shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
        for name, size, cin, cout in NetworkService.conv_layout(cfg):
            shapes[f"{name}.kernel"] = (size, size, cin, cout)
            shapes[f"{name}.bias"] = (cout,)
        return shapes

    @staticmethod
    def build_network(cfg: NetworkConfig, dtype=np.float32) -> SVSNetwork:
        """Create He-initialised parameters in a fixed order derived from ``cfg``."""
        if cfg.input_size % (2 ** cfg.depth) != 0:
            raise ValueError(
                f"input_size {cfg.input_size} is not divisible by 2**depth = {2 ** cfg.depth}"
            )
        rng = np.random.default_rng(cfg.seed)
        params: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, size, cin, cout in NetworkService.conv_layout(cfg):
            std = math.sqrt(2.0 / (size * size * cin))
            kernel = rng.normal(0.0, std, size=(size, size, cin, cout)).astype(dtype)
            params[f"{name}.kernel"] = Tensor(kernel, requires_grad=True, name=f"{name}.kernel")
            params[f"{name}.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True,
                                            name=f"{name}.bias")

        out_bias = params["head.att_out.bias"].data
        out_bias[3] = SIGMA_BIAS
        out_bias[4] = SIGMA_BIAS

        network = SVSNetwork(config=cfg, params=params)
        logger.info(
            f"Built network depth={cfg.depth} base={cfg.base_channels} "
            f"size={cfg.input_size} with {network.parameter_count()} parameters"
        )
        return network

    @staticmethod
    def _conv(net: SVSNetwork, name: str, x: Tensor, stride: int = 1) -> Tensor:
        kernel = net.params[f"{name}.kernel"]
        padding = kernel.shape[0] // 2
        return conv2d(x, kernel, net.params[f"{name}.bias"], stride=stride, padding=padding)

    @staticmethod
    def _residual(net: SVSNetwork, name: str, x: Tensor) -> Tensor:
        hidden = relu(NetworkService._conv(net, f"{name}.conv1", x))
        hidden = NetworkService._conv(net, f"{name}.conv2", hidden)
        if f"{name}.proj.kernel" in net.params:
            skip = NetworkService._conv(net, f"{name}.proj", x)
        else:
            skip = x
        return relu(add(hidden, skip))

    @staticmethod
    def as_input(net: SVSNetwork, image: Union[Tensor, np.ndarray]) -> Tensor:
        """Validate and reshape an image batch to (B, H, W, 1) in the network dtype."""
        data = image.data if isinstance(image, Tensor) else np.asarray(image)
        if data.ndim == 3:
            data = data[..., None]
        size = net.config.input_size
        if data.ndim != 4 or data.shape[1:] != (size, size, 1):
            raise ValueError(f"expected images of shape (B, {size}, {size}, 1), got {data.shape}")
        if np.any(data < 0) or np.any(data > 1):
            raise ValueError("image values must be pre-scaled to [0, 1]")
        return Tensor(data.astype(net.dtype, copy=False), name="image")

    @staticmethod
    def forward(net: SVSNetwork, image: Union[Tensor, np.ndarray],
                mode: Optional[RenderMode] = None) -> ForwardResult:
        x = NetworkService.as_input(net, image)
        cfg = net.config

        h = relu(NetworkService._conv(net, "stem", x))
        skips = []
        for level in range(cfg.depth):
            h = NetworkService._residual(net, f"enc{level}.block", h)
            skips.append(h)
            h = relu(NetworkService._conv(net, f"enc{level}.down", h, stride=2))
        h = NetworkService._residual(net, "bottleneck", h)
        for level in reversed(range(cfg.depth)):
            h = relu(NetworkService._conv(net, f"dec{level}.up", upsample2x(h)))
            h = concat_channels(h, skips[level])
            h = NetworkService._residual(net, f"dec{level}.block", h)

        logits = NetworkService._conv(net, "head.seg", h)
        backbone_prob = logistic(logits)

        hidden = relu(NetworkService._conv(net, "head.att_hidden", h))
        raw = NetworkService._conv(net, "head.att_out", hidden)
        param_map = AttentionService.activate_params(raw)
        attention = AttentionService.render_attention(param_map, mode)
        final_prob = AttentionService.apply_attention(backbone_prob, attention)

        return ForwardResult(
            logits=logits,
            backbone_prob=backbone_prob,
            param_map=param_map,
            attention=attention,
            final_prob=final_prob,
        )

    @staticmethod
    def compute_loss(result: ForwardResult, masks: Tensor, aux_weight: float) -> Tuple[Tensor, Tensor, Tensor]:
        """CE on the final probability plus weighted CE on the backbone probability."""
        main = cross_entropy(result.final_prob, masks)
        aux = cross_entropy(result.backbone_prob, masks)
        total = add(main, scale(aux, aux_weight))
        return total, main, aux

    @staticmethod
    def as_masks(net: SVSNetwork, masks: np.ndarray) -> Tensor:
        data = np.asarray(masks)
        if data.ndim == 3:
            data = data[..., None]
        if not np.all((data == 0) | (data == 1)):
            raise ValueError("training masks must be binary {0, 1}")
        return Tensor(data.astype(net.dtype), name="mask")

    @staticmethod
    def train_step(net: SVSNetwork, images: np.ndarray, masks: np.ndarray,
                   opt: AdamState, cfg: TrainingConfig,
                   mode: Optional[RenderMode] = None) -> StepResult:
        """One forward, backward and Adam update; returns the pre-update loss."""
        if len(images) != cfg.batch_size:
            raise ValueError(f"batch has {len(images)} images, config expects {cfg.batch_size}")
        targets = NetworkService.as_masks(net, masks)

        zero_grad(net.params)
        with Graph() as graph:
            result = NetworkService.forward(net, images, mode)
            total, main, aux = NetworkService.compute_loss(
                result, targets, net.config.aux_loss_weight
            )
            graph.backward(total)

        OptimizerService.adam_step(net.params, opt)
        for name, tensor in net.params.items():
            if not np.all(np.isfinite(tensor.data)):
                raise FloatingPointError(f"non-finite values in parameter '{name}' after update")

        return StepResult(loss=total.item(), main_loss=main.item(), aux_loss=aux.item())

    @staticmethod
    def binarize(final_prob: np.ndarray) -> np.ndarray:
        return (np.asarray(final_prob) >= PREDICTION_THRESHOLD).astype(np.uint8)

    @staticmethod
    def predict_mask(net: SVSNetwork, image: np.ndarray,
                     mode: Optional[RenderMode] = None) -> np.ndarray:
        """Binary vessel mask (B, H, W) with 1 where final_prob >= 0.5."""
        result = NetworkService.forward(net, image, mode)
        return NetworkService.binarize(result.final_prob.data[..., 0])

