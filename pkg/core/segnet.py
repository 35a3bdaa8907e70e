"""
Networks for sdmseg
Dual-head V-Net segmenter (probability map + signed distance map) and the
volume/SDM discriminator, plus parameter archives and volume inference
"""
import itertools
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from core.errors import ConfigurationError, ShapeMismatchError, ValidationError

ARCHIVE_FORMAT_VERSION = 1

NORMS = ('instance', 'group', 'batch', 'none')
ACTIVATIONS = ('relu', 'prelu', 'leaky_relu')


@dataclass
class SegmenterConfig:
    in_channels: int = 1
    base_channels: int = 8
    levels: int = 3
    norm: str = 'instance'
    activation: str = 'relu'
    with_sdm_head: bool = True
    zero_init_heads: bool = False

    def __post_init__(self):
        if self.in_channels != 1:
            raise ConfigurationError('in_channels', f"must be 1, got {self.in_channels}")
        if self.levels < 2:
            raise ConfigurationError('levels', f"must be at least 2, got {self.levels}")
        if self.base_channels < 4:
            raise ConfigurationError('base_channels', f"must be at least 4, got {self.base_channels}")
        if self.norm not in NORMS:
            raise ConfigurationError('norm', f"must be one of {NORMS}, got {self.norm!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError('activation', f"must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def divisor(self) -> int:
        """Spatial dims must be multiples of this"""
        return 2 ** (self.levels - 1)

    @staticmethod
    def full_size() -> 'SegmenterConfig':
        """Full-capacity backbone: five levels from 16 channels"""
        return SegmenterConfig(base_channels=16, levels=5)


@dataclass
class DiscriminatorConfig:
    in_channels: int = 2
    conv_channels: List[int] = field(default_factory=lambda: [16, 32, 64, 128, 256])
    kernel: int = 4
    stride: int = 2
    mlp_hidden: int = 64
    zero_init_output: bool = False

    def __post_init__(self):
        if len(self.conv_channels) != 5:
            raise ConfigurationError('disc_channels', f"needs exactly 5 entries, got {len(self.conv_channels)}")
        if any(c < 1 for c in self.conv_channels):
            raise ConfigurationError('disc_channels', "entries must be positive")
        if self.mlp_hidden < 1:
            raise ConfigurationError('mlp_hidden', f"must be positive, got {self.mlp_hidden}")


def _norm(kind: str, channels: int) -> nn.Module:
    if kind == 'instance':
        return nn.InstanceNorm3d(channels, affine=True)
    if kind == 'group':
        return nn.GroupNorm(math.gcd(4, channels), channels)
    if kind == 'batch':
        return nn.BatchNorm3d(channels)
    return nn.Identity()


def _activation(kind: str, channels: int) -> nn.Module:
    if kind == 'prelu':
        return nn.PReLU(channels)
    if kind == 'leaky_relu':
        return nn.LeakyReLU(0.2, inplace=True)
    return nn.ReLU(inplace=True)


class ConvBlock(nn.Module):
    """``n_convs`` 3x3x3 conv + norm + activation layers, residual when widths match"""

    def __init__(self, n_convs: int, in_channels: int, out_channels: int, norm: str, activation: str):
        super().__init__()
        layers = []
        for i in range(n_convs):
            layers += [
                nn.Conv3d(in_channels if i == 0 else out_channels, out_channels, kernel_size=3, padding=1),
                _norm(norm, out_channels),
                _activation(activation, out_channels),
            ]
        self.conv = nn.Sequential(*layers)
        self.residual = in_channels == out_channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.conv(x)
        return out + x if self.residual else out


class DownBlock(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int, norm: str, activation: str):
        super().__init__(
            nn.Conv3d(in_channels, out_channels, kernel_size=2, stride=2),
            _norm(norm, out_channels),
            _activation(activation, out_channels),
        )


class UpBlock(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int, norm: str, activation: str):
        super().__init__(
            nn.ConvTranspose3d(in_channels, out_channels, kernel_size=2, stride=2),
            _norm(norm, out_channels),
            _activation(activation, out_channels),
        )


class ShapeAwareVNet(nn.Module):
    """
    V-Net encoder/decoder with a segmentation head and an SDM head

    Both heads read the same final decoder features. The segmentation head is
    a 1x1x1 conv with sigmoid; the SDM head is a 3x3x3 conv block followed by
    a 1x1x1 conv with tanh.
    """

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        c, norm, act = config.base_channels, config.norm, config.activation
        widths = [c * 2 ** level for level in range(config.levels)]

        self.encoders = nn.ModuleList()
        self.downs = nn.ModuleList()
        for level, width in enumerate(widths):
            n_convs = min(level + 1, 3)
            in_ch = config.in_channels if level == 0 else width
            self.encoders.append(ConvBlock(n_convs, in_ch, width, norm, act))
            if level < config.levels - 1:
                self.downs.append(DownBlock(width, widths[level + 1], norm, act))

        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for level in reversed(range(config.levels - 1)):
            self.ups.append(UpBlock(widths[level + 1], widths[level], norm, act))
            self.decoders.append(ConvBlock(min(level + 1, 3), widths[level], widths[level], norm, act))

        self.seg_head = nn.Conv3d(c, 1, kernel_size=1)
        if config.with_sdm_head:
            self.sdm_block = ConvBlock(1, c, c, norm, act)
            self.sdm_head = nn.Conv3d(c, 1, kernel_size=1)
        else:
            self.sdm_block = None
            self.sdm_head = None

    def check_input(self, x: torch.Tensor):
        if x.dim() != 5 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatchError(
                f"expected input of shape (B, {self.config.in_channels}, D, H, W), got {tuple(x.shape)}"
            )
        divisor = self.config.divisor
        if any(s % divisor for s in x.shape[2:]):
            raise ConfigurationError(
                'levels', f"spatial dims {tuple(x.shape[2:])} must be divisible by {divisor}"
            )

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Shared decoder output"""
        skips = []
        for level, encoder in enumerate(self.encoders):
            x = encoder(x)
            if level < len(self.downs):
                skips.append(x)
                x = self.downs[level](x)
        for up, decoder in zip(self.ups, self.decoders):
            x = decoder(up(x) + skips.pop())
        return x

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        """
        Args:
            x: (B, 1, D, H, W) volumes

        Returns:
            Tuple: probability map in [0, 1] and SDM in (-1, 1), both
            (B, 1, D, H, W); the SDM is None without an SDM head
        """
        self.check_input(x)
        shared = self.features(x)
        m = torch.sigmoid(self.seg_head(shared))
        if self.sdm_head is None:
            return m, None
        s = torch.tanh(self.sdm_head(self.sdm_block(shared)))
        return m, s


class SdmDiscriminator(nn.Module):
    """
    Classifies (volume, SDM) pairs as coming from labeled data

    The pair is concatenated on the channel axis and passed through five
    strided 4x4x4 conv stages, global average pooling and an MLP.
    """

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        stages = []
        in_ch = config.in_channels
        for out_ch in config.conv_channels:
            stages.append(nn.Sequential(
                nn.Conv3d(in_ch, out_ch, kernel_size=config.kernel, stride=config.stride, padding=1),
                nn.LeakyReLU(0.2, inplace=True),
            ))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.mlp = nn.Sequential(
            nn.Linear(in_ch, config.mlp_hidden),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(config.mlp_hidden, 1),
        )

    @staticmethod
    def _pad_small(x: torch.Tensor, minimum: int = 2) -> torch.Tensor:
        # a size-1 dim would vanish under kernel 4 / stride 2 / padding 1
        pads = []
        for size in reversed(x.shape[2:]):
            pads += [0, max(0, minimum - size)]
        return F.pad(x, pads) if any(pads) else x

    def forward(self, x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
        """
        Args:
            x: (B, 1, D, H, W) volumes
            s: (B, 1, D, H, W) SDMs

        Returns:
            torch.Tensor: (B,) probabilities in (0, 1)
        """
        if x.shape != s.shape:
            raise ShapeMismatchError(f"volume {tuple(x.shape)} and SDM {tuple(s.shape)} differ in shape")
        h = torch.cat([x, s], dim=1)
        for stage in self.stages:
            h = stage(self._pad_small(h))
        logits = self.mlp(torch.flatten(self.pool(h), 1))
        return torch.sigmoid(logits).squeeze(1)


def _init_weights(module: nn.Module):
    if isinstance(module, (nn.Conv3d, nn.ConvTranspose3d)):
        nn.init.kaiming_normal_(module.weight, mode='fan_out', nonlinearity='relu')
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Linear):
        nn.init.kaiming_uniform_(module.weight, a=0.2, nonlinearity='leaky_relu')
        nn.init.zeros_(module.bias)


def init_params(config, rng_seed: int) -> nn.Module:
    """
    Build a network with seeded fan-based initialisation

    Args:
        config: SegmenterConfig or DiscriminatorConfig
        rng_seed: Initialisation seed; the global torch RNG is left untouched

    Returns:
        nn.Module: ShapeAwareVNet or SdmDiscriminator
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(rng_seed)
        if isinstance(config, SegmenterConfig):
            model = ShapeAwareVNet(config)
            model.apply(_init_weights)
            if config.zero_init_heads:
                heads = [model.seg_head] + ([model.sdm_head] if model.sdm_head is not None else [])
                for head in heads:
                    nn.init.zeros_(head.weight)
                    nn.init.zeros_(head.bias)
        elif isinstance(config, DiscriminatorConfig):
            model = SdmDiscriminator(config)
            model.apply(_init_weights)
            if config.zero_init_output:
                nn.init.zeros_(model.mlp[-1].weight)
                nn.init.zeros_(model.mlp[-1].bias)
        else:
            raise ValidationError(f"unsupported network config {type(config).__name__}")
    return model


def count_parameters(model: Optional[nn.Module]) -> int:
    if model is None:
        return 0
    return sum(p.numel() for p in model.parameters())


# Archives

def save_params(path, model: nn.Module):
    """Single-file archive: format version, config echo and named tensors"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    temp = target.with_name(target.name + '.tmp')
    torch.save(archive_dict(model), temp)
    temp.replace(target)


def model_from_archive(archive: dict) -> nn.Module:
    """Rebuild a network from an archive dict (or a checkpoint's network entry)"""
    version = archive.get('format_version')
    if version != ARCHIVE_FORMAT_VERSION:
        raise ValidationError(f"unsupported archive format version {version!r}")
    if archive['kind'] == 'segmenter':
        model = ShapeAwareVNet(SegmenterConfig(**archive['config']))
    elif archive['kind'] == 'discriminator':
        model = SdmDiscriminator(DiscriminatorConfig(**archive['config']))
    else:
        raise ValidationError(f"unknown archive kind {archive['kind']!r}")
    model.load_state_dict(archive['params'])
    return model


def load_params(path) -> nn.Module:
    return model_from_archive(torch.load(path, map_location='cpu', weights_only=False))


# Inference

def _window_starts(size: int, patch: int, stride: int) -> List[int]:
    starts = list(range(0, size - patch + 1, stride))
    if starts[-1] != size - patch:
        starts.append(size - patch)
    return starts


@torch.no_grad()
def predict_volume(model: ShapeAwareVNet, volume: np.ndarray, patch: Optional[Tuple[int, int, int]] = None,
                   stride: Optional[Tuple[int, int, int]] = None, device='cpu') -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Probability map and SDM for a whole volume

    Without ``patch`` the volume is processed in one pass and its dims must be
    divisible by the network stride. With ``patch`` overlapping windows
    (default stride: half the patch) are averaged.

    Returns:
        Tuple[np.ndarray, Optional[np.ndarray]]: float32 (d, h, w) grids
    """
    was_training = model.training
    model.eval()
    try:
        grid = torch.as_tensor(np.ascontiguousarray(volume), dtype=torch.float32, device=device)
        if patch is None:
            m, s = model(grid[None, None])
            return m[0, 0].cpu().numpy(), None if s is None else s[0, 0].cpu().numpy()

        patch = tuple(int(p) for p in patch)
        if any(p > g for p, g in zip(patch, grid.shape)):
            raise ShapeMismatchError(f"patch {patch} is larger than volume {tuple(grid.shape)}")
        stride = tuple(int(v) for v in stride) if stride else tuple(max(1, p // 2) for p in patch)

        prob = torch.zeros_like(grid)
        sdm = torch.zeros_like(grid)
        hits = torch.zeros_like(grid)
        starts = [_window_starts(g, p, st) for g, p, st in zip(grid.shape, patch, stride)]
        for d, h, w in itertools.product(*starts):
            window = (slice(d, d + patch[0]), slice(h, h + patch[1]), slice(w, w + patch[2]))
            m, s = model(grid[window][None, None])
            prob[window] += m[0, 0]
            if s is not None:
                sdm[window] += s[0, 0]
            hits[window] += 1
        prob = (prob / hits).cpu().numpy()
        if model.sdm_head is None:
            return prob, None
        return prob, (sdm / hits).cpu().numpy()
    finally:
        model.train(was_training)


def load_segmenter(path) -> ShapeAwareVNet:
    """Segmenter from a parameter archive or a training checkpoint"""
    archive = torch.load(path, map_location='cpu', weights_only=False)
    if 'segmenter' in archive:
        archive = archive['segmenter']
    model = model_from_archive(archive)
    if not isinstance(model, ShapeAwareVNet):
        raise ValidationError(f"{path} does not hold a segmenter")
    return model


def archive_dict(model: nn.Module) -> dict:
    kind = 'segmenter' if isinstance(model, ShapeAwareVNet) else 'discriminator'
    return {
        'format_version': ARCHIVE_FORMAT_VERSION,
        'kind': kind,
        'config': asdict(model.config),
        'params': model.state_dict(),
    }
