"""Dense-UNet separator with multi-resolution decoder taps, and the
speaker-counting variant built on the same encoder.

The separator maps 15 input feature channels (real/imaginary STFT planes of
7 microphones plus the reference-mic magnitude) to 4 output channels, the
real/imaginary planes of two speaker estimates. The encoder stacks K_e dense
blocks with a strided 2x2 depthwise-convolution downsampler between
consecutive blocks; the decoder stacks K_d = K_e - 1 dense blocks, each
followed by a strided 2x2 depthwise upsampler, so the bottleneck sits at
1/2^(K_e-1) resolution and the head returns to full resolution. Encoder
outputs are added (not concatenated) to the same-resolution decoder inputs;
the additive skips keep the default profile at ~6.9 M parameters.

At every decoder layer below the last, the upsampled feature maps are split
along channels into four groups (speaker 1 real/imag, speaker 2 real/imag)
and averaged per group, yielding low-resolution complex estimates used by the
multi-resolution loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigurationError, InvalidInputError


@dataclass(frozen=True)
class SeparatorConfig:
    encoder_layers: int = 5
    decoder_layers: int = 4
    dense_layers_per_block: int = 5
    channels_per_dense_layer: int = 76
    kernel: int = 3
    input_channels: int = 15
    output_channels: int = 4

    def __post_init__(self):
        if self.decoder_layers != self.encoder_layers - 1:
            raise ConfigurationError(
                "decoder_layers must equal encoder_layers - 1 so the decoder "
                "returns to full resolution"
            )
        if self.output_channels != 4:
            raise ConfigurationError("output_channels is fixed at 4 (2 speakers x RI)")
        if self.channels_per_dense_layer < 4:
            raise ConfigurationError("need at least 4 channels to split into RI groups")

    @property
    def downsample_factor(self) -> int:
        """Total spatial reduction at the bottleneck, 2^(K_e - 1)."""
        return 2 ** (self.encoder_layers - 1)


TOY_CONFIG = SeparatorConfig(
    encoder_layers=3,
    decoder_layers=2,
    dense_layers_per_block=3,
    channels_per_dense_layer=16,
)

PROFILES = {"paper": SeparatorConfig(), "toy": TOY_CONFIG}


@dataclass
class SeparatorOutput:
    """Final complex estimates plus low-resolution decoder-tap estimates.

    final: complex [..., 2, T, F]; taps[k-1] holds the layer-k estimate at
    1/2^(K_d - k) of the final resolution, for k = 1 .. K_d - 1.
    """

    final: torch.Tensor
    taps: list[torch.Tensor] = field(default_factory=list)


def split_channel_groups(num_channels: int, groups: int = 4) -> list[slice]:
    """Contiguous channel slices of near-equal size; earlier groups take the
    remainder when the count is not divisible."""
    base, extra = divmod(num_channels, groups)
    slices, start = [], 0
    for g in range(groups):
        size = base + (1 if g < extra else 0)
        slices.append(slice(start, start + size))
        start += size
    return slices


class DenseLayer(nn.Module):
    def __init__(self, in_channels: int, growth: int, kernel: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, growth, kernel, padding=kernel // 2)
        self.norm = nn.InstanceNorm2d(growth, affine=True)
        self.act = nn.ELU()

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class DenseBlock(nn.Module):
    """Densely connected convolutional block; returns the last layer's maps."""

    def __init__(self, in_channels: int, growth: int, layers: int, kernel: int):
        super().__init__()
        self.layers = nn.ModuleList(
            DenseLayer(in_channels + i * growth, growth, kernel) for i in range(layers)
        )

    def forward(self, x):
        feats = [x]
        out = x
        for layer in self.layers:
            out = layer(torch.cat(feats, dim=1))
            feats.append(out)
        return out


def _downsampler(channels: int) -> nn.Module:
    return nn.Conv2d(channels, channels, kernel_size=2, stride=2, groups=channels)


def _upsampler(channels: int) -> nn.Module:
    return nn.ConvTranspose2d(channels, channels, kernel_size=2, stride=2, groups=channels)


class DenseUNetSeparator(nn.Module):
    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels_per_dense_layer
        self.encoder_blocks = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        in_ch = cfg.input_channels
        for k in range(cfg.encoder_layers):
            self.encoder_blocks.append(
                DenseBlock(in_ch, c, cfg.dense_layers_per_block, cfg.kernel)
            )
            in_ch = c
            if k < cfg.encoder_layers - 1:
                self.downsamplers.append(_downsampler(c))
        self.decoder_blocks = nn.ModuleList(
            DenseBlock(c, c, cfg.dense_layers_per_block, cfg.kernel)
            for _ in range(cfg.decoder_layers)
        )
        self.upsamplers = nn.ModuleList(
            _upsampler(c) for _ in range(cfg.decoder_layers)
        )
        self.head = nn.Conv2d(c, cfg.output_channels, kernel_size=1)

    def _check_divisible(self, features: torch.Tensor) -> None:
        factor = self.cfg.downsample_factor
        for name, size in (("time", features.shape[-2]), ("frequency", features.shape[-1])):
            if size % factor != 0:
                raise InvalidInputError(
                    f"{name} axis of size {size} is not divisible by {factor}; "
                    "pad the features first"
                )

    @staticmethod
    def _to_complex(maps: torch.Tensor) -> torch.Tensor:
        """[..., 4, T, F] real planes -> [..., 2, T, F] complex estimates."""
        return torch.complex(maps[..., 0::2, :, :], maps[..., 1::2, :, :])

    def _tap_estimate(self, features: torch.Tensor) -> torch.Tensor:
        groups = split_channel_groups(features.shape[-3])
        means = torch.stack(
            [features[..., g, :, :].mean(dim=-3) for g in groups], dim=-3
        )
        return self._to_complex(means)

    def forward(self, features: torch.Tensor) -> SeparatorOutput:
        if features.shape[-3] != self.cfg.input_channels:
            raise InvalidInputError(
                f"expected {self.cfg.input_channels} feature channels, "
                f"got {features.shape[-3]}"
            )
        self._check_divisible(features)
        squeeze = features.dim() == 3
        if squeeze:
            features = features.unsqueeze(0)

        skips = []
        x = features
        for k, block in enumerate(self.encoder_blocks):
            x = block(x)
            skips.append(x)
            if k < len(self.downsamplers):
                x = self.downsamplers[k](x)

        taps = []
        x = skips[-1]
        for k, (block, up) in enumerate(zip(self.decoder_blocks, self.upsamplers)):
            x = up(block(x))
            if k < self.cfg.decoder_layers - 1:
                taps.append(self._tap_estimate(x))
                x = x + skips[-(k + 2)]
        x = x + skips[0]
        final = self._to_complex(self.head(x))

        if squeeze:
            final = final.squeeze(0)
            taps = [t.squeeze(0) for t in taps]
        return SeparatorOutput(final=final, taps=taps)


def build_separator(cfg: SeparatorConfig, seed: int | None = None) -> DenseUNetSeparator:
    """Construct a separator; a seed makes the initialization reproducible."""
    if seed is None:
        return DenseUNetSeparator(cfg)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return DenseUNetSeparator(cfg)


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# speaker counting


@dataclass(frozen=True)
class CounterConfig:
    encoder: SeparatorConfig = SeparatorConfig()
    recurrent_layers: int = 2
    hidden_size: int = 128
    classes: int = 3
    num_bins: int = 257

    @property
    def pool_factor(self) -> int:
        """STFT frames per counter frame (the encoder's time reduction)."""
        return self.encoder.downsample_factor

    def padded_bins(self) -> int:
        factor = self.encoder.downsample_factor
        return -(-self.num_bins // factor) * factor


class SpeakerCounter(nn.Module):
    """Separator encoder followed by a bidirectional recurrent classifier
    producing per-frame probabilities for 0, 1 or 2 active speakers."""

    def __init__(self, cfg: CounterConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        c = enc.channels_per_dense_layer
        self.encoder_blocks = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        in_ch = enc.input_channels
        for k in range(enc.encoder_layers):
            self.encoder_blocks.append(
                DenseBlock(in_ch, c, enc.dense_layers_per_block, enc.kernel)
            )
            in_ch = c
            if k < enc.encoder_layers - 1:
                self.downsamplers.append(_downsampler(c))
        feat_dim = c * (cfg.padded_bins() // enc.downsample_factor)
        self.recurrent = nn.LSTM(
            input_size=feat_dim,
            hidden_size=cfg.hidden_size,
            num_layers=cfg.recurrent_layers,
            batch_first=True,
            bidirectional=True,
        )
        self.classifier = nn.Linear(2 * cfg.hidden_size, cfg.classes)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """features [B?, C, T, F] -> probabilities [B?, T_enc, classes]."""
        squeeze = features.dim() == 3
        if squeeze:
            features = features.unsqueeze(0)
        x = features
        for k, block in enumerate(self.encoder_blocks):
            x = block(x)
            if k < len(self.downsamplers):
                x = self.downsamplers[k](x)
        b, c, t, f = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t, c * f)
        x, _ = self.recurrent(x)
        probs = torch.softmax(self.classifier(x), dim=-1)
        return probs.squeeze(0) if squeeze else probs


def build_counter(cfg: CounterConfig, seed: int | None = None) -> SpeakerCounter:
    if seed is None:
        return SpeakerCounter(cfg)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return SpeakerCounter(cfg)


def forward_counter(counter: SpeakerCounter, features: torch.Tensor) -> torch.Tensor:
    return counter(features)


# ---------------------------------------------------------------------------
# padding helpers shared by training and inference


def pad_to_multiple(features: torch.Tensor, factor: int) -> torch.Tensor:
    """Zero-pad the trailing time/frequency axes up to multiples of factor."""
    t, f = features.shape[-2], features.shape[-1]
    pad_t = (-t) % factor
    pad_f = (-f) % factor
    if pad_t == 0 and pad_f == 0:
        return features
    return torch.nn.functional.pad(features, (0, pad_f, 0, pad_t))


def crop_spec(spec: torch.Tensor, num_frames: int, num_bins: int) -> torch.Tensor:
    """Crop padded [..., T_pad, F_pad] estimates back to [..., T, F]."""
    return spec[..., :num_frames, :num_bins]
