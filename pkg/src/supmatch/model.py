"""The support-matching network.

One shared trunk maps x to a single encoding whose two slices are z (the
subgroup-invariant code) and s-tilde (the subgroup code); a decoder inverts
the pair back to input space; linear predictors read the class from z and
the subgroup from s-tilde; and a permutation-invariant discriminator judges
whether a bag of z vectors came from the training or the deployment set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import attention_pool, make_attention
from .exceptions import ValidationError


@dataclass
class EncoderOutput:
    z: torch.Tensor
    s_tilde: torch.Tensor

    @property
    def full(self) -> torch.Tensor:
        return torch.cat([self.z, self.s_tilde], dim=-1)


@dataclass
class DiscriminatorOutput:
    logit: torch.Tensor

    @property
    def probability(self) -> torch.Tensor:
        return torch.sigmoid(self.logit)


def s_code_width(n_s: int) -> int:
    return max(1, math.ceil(math.log2(n_s)))


class _BinarizeST(torch.autograd.Function):
    """Hard threshold at 0 with straight-through gradients."""

    @staticmethod
    def forward(ctx, x):
        return (x > 0).float()

    @staticmethod
    def backward(ctx, grad):
        return grad


def _mlp(sizes, activation=nn.GELU, final_activation=False):
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2 or final_activation:
            layers.append(activation())
    return nn.Sequential(*layers)


class ConvEncoder(nn.Module):
    """Strided-convolution stack: one downsampling conv per level plus
    (depth - 1) stride-1 convs, then a linear head to the encoding."""

    def __init__(self, in_channels, input_size, hidden_channels, level_depth, encoding_size):
        super().__init__()
        layers = []
        channels = in_channels
        size = input_size
        for width in hidden_channels:
            layers += [nn.Conv2d(channels, width, 3, stride=2, padding=1), nn.GELU()]
            for _ in range(level_depth - 1):
                layers += [nn.Conv2d(width, width, 3, stride=1, padding=1), nn.GELU()]
            channels, size = width, (size + 1) // 2
        self.body = nn.Sequential(*layers)
        self.out_shape = (channels, size, size)
        self.head = nn.Linear(channels * size * size, encoding_size)

    def forward(self, x):
        return self.head(self.body(x).flatten(1))


class ConvDecoder(nn.Module):
    def __init__(self, out_channels, bottleneck_shape, hidden_channels, level_depth, encoding_size):
        super().__init__()
        channels, size, _ = bottleneck_shape
        self.bottleneck_shape = bottleneck_shape
        self.head = nn.Linear(encoding_size, channels * size * size)
        layers = []
        widths = list(hidden_channels)[::-1][1:] + [out_channels]
        current = channels
        for i, width in enumerate(widths):
            last = i == len(widths) - 1
            layers += [
                nn.ConvTranspose2d(current, width, 4, stride=2, padding=1),
            ]
            if not last:
                layers.append(nn.GELU())
                for _ in range(level_depth - 1):
                    layers += [nn.Conv2d(width, width, 3, stride=1, padding=1), nn.GELU()]
            current = width
        self.body = nn.Sequential(*layers)

    def forward(self, encoding):
        x = self.head(encoding).view(-1, *self.bottleneck_shape)
        return torch.sigmoid(self.body(x))


class MlpEncoder(nn.Module):
    def __init__(self, in_dim, hidden, encoding_size):
        super().__init__()
        self.body = _mlp([in_dim, *hidden, encoding_size])

    def forward(self, x):
        return self.body(x)


class MlpDecoder(nn.Module):
    """Tabular decoder emitting raw feature-space outputs (logits for
    categorical blocks, values for continuous ones)."""

    def __init__(self, out_dim, hidden, encoding_size):
        super().__init__()
        self.body = _mlp([encoding_size, *reversed(hidden), out_dim])

    def forward(self, encoding):
        return self.body(encoding)


class ImageReconLoss(nn.Module):
    def forward(self, recon, target):
        return F.mse_loss(recon, target)


class MixedReconLoss(nn.Module):
    """Cross-entropy on categorical blocks, MSE on the continuous block."""

    def __init__(self, feature_blocks):
        super().__init__()
        self.feature_blocks = list(feature_blocks)

    def forward(self, recon, target):
        total = recon.new_zeros(())
        for kind, start, stop in self.feature_blocks:
            if kind == "continuous":
                total = total + F.mse_loss(recon[:, start:stop], target[:, start:stop])
            elif stop - start == 1:
                total = total + F.binary_cross_entropy_with_logits(
                    recon[:, start], target[:, start]
                )
            else:
                labels = target[:, start:stop].argmax(dim=1)
                total = total + F.cross_entropy(recon[:, start:stop], labels)
        return total / len(self.feature_blocks)


class SplitAutoencoder(nn.Module):
    """Shared-trunk encoder pair (f, t), decoder g, and predictors.

    ``encode`` slices one trunk output into (z, s_tilde); because both
    slices come from the same trunk, f and t share every trunk parameter.
    """

    def __init__(
        self,
        encoder: nn.Module,
        decoder: nn.Module,
        encoding_size: int,
        n_s: int,
        n_y: int,
        binarize_s: bool = False,
        recon_loss: nn.Module = None,
    ):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder
        self.encoding_size = encoding_size
        self.n_s = n_s
        self.n_y = n_y
        self.binarize_s = binarize_s
        self.s_width = s_code_width(n_s)
        if self.s_width >= encoding_size:
            raise ValidationError("encoding_size must exceed the subgroup-code width")
        self.z_width = encoding_size - self.s_width
        self.recon_loss = recon_loss if recon_loss is not None else ImageReconLoss()
        self.y_predictor = nn.Linear(self.z_width, n_y)
        # The subgroup predictor is the identity for binary subgroups; a
        # linear readout is added only when more than one bit is needed.
        self.s_readout = nn.Linear(self.s_width, n_s) if n_s > 2 else None

    def encode(self, x) -> EncoderOutput:
        full = self.encoder(x)
        z, s_tilde = full[:, : self.z_width], full[:, self.z_width :]
        if self.binarize_s:
            s_tilde = _BinarizeST.apply(s_tilde)
        return EncoderOutput(z=z, s_tilde=s_tilde)

    def decode(self, z, s_tilde) -> torch.Tensor:
        return self.decoder(torch.cat([z, s_tilde], dim=-1))

    def reconstruct(self, x) -> torch.Tensor:
        out = self.encode(x)
        return self.decode(out.z, out.s_tilde)

    def y_logits(self, z) -> torch.Tensor:
        return self.y_predictor(z)

    def predict_y(self, z) -> torch.Tensor:
        return F.softmax(self.y_logits(z), dim=-1)

    def s_logits(self, s_tilde) -> torch.Tensor:
        if self.s_readout is not None:
            return self.s_readout(s_tilde)
        return s_tilde.squeeze(-1)

    def predict_s(self, s_tilde) -> torch.Tensor:
        logits = self.s_logits(s_tilde)
        if self.s_readout is not None:
            return F.softmax(logits, dim=-1)
        p = torch.sigmoid(logits)
        return torch.stack([1 - p, p], dim=-1)

    def supervised_s_loss(self, s_tilde, s: torch.Tensor) -> torch.Tensor:
        logits = self.s_logits(s_tilde)
        if self.s_readout is not None:
            return F.cross_entropy(logits, s)
        return F.binary_cross_entropy_with_logits(logits, s.float())


def build_image_model(
    input_channels=3,
    input_size=32,
    hidden_channels=(32, 64, 128, 256),
    level_depth=2,
    encoding_size=128,
    n_s=2,
    n_y=2,
    binarize_s=False,
) -> SplitAutoencoder:
    encoder = ConvEncoder(input_channels, input_size, hidden_channels, level_depth, encoding_size)
    decoder = ConvDecoder(
        input_channels, encoder.out_shape, hidden_channels, level_depth, encoding_size
    )
    return SplitAutoencoder(encoder, decoder, encoding_size, n_s, n_y, binarize_s)


def build_tabular_model(
    input_dim,
    hidden=(61,),
    encoding_size=35,
    n_s=2,
    n_y=2,
    binarize_s=False,
    feature_blocks=None,
) -> SplitAutoencoder:
    encoder = MlpEncoder(input_dim, list(hidden), encoding_size)
    decoder = MlpDecoder(input_dim, list(hidden), encoding_size)
    recon = MixedReconLoss(feature_blocks) if feature_blocks else None
    return SplitAutoencoder(encoder, decoder, encoding_size, n_s, n_y, binarize_s, recon)


class BagDiscriminator(nn.Module):
    """Set classifier: per-element trunk, attention-weighted pooling, then
    a post-aggregation trunk to a single origin logit per bag."""

    def __init__(
        self,
        input_dim: int,
        pre_hidden=(256, 256),
        post_hidden=(256, 256),
        attention_kind: str = "gated",
        attention_embed_dim: int = 32,
    ):
        super().__init__()
        self.pre = _mlp([input_dim, *pre_hidden], final_activation=True) if pre_hidden else nn.Identity()
        feature_dim = pre_hidden[-1] if pre_hidden else input_dim
        self.attention = make_attention(attention_kind, feature_dim, attention_embed_dim)
        self.attention_kind = attention_kind
        self.post = _mlp([feature_dim, *post_hidden, 1])

    def attention_weights(self, bag_z: torch.Tensor) -> torch.Tensor:
        return self.attention(self.pre(bag_z))

    def forward(self, bag_z: torch.Tensor) -> DiscriminatorOutput:
        # bag_z: (n, d) for a single bag or (b, n, d) for a batch of bags
        features = self.pre(bag_z)
        weights = self.attention(features)
        pooled = attention_pool(weights, features)
        return DiscriminatorOutput(logit=self.post(pooled).squeeze(-1))


class InstanceDiscriminator(nn.Module):
    """Ablation variant: per-sample origin logits, no aggregation."""

    def __init__(self, input_dim: int, hidden=(256, 256)):
        super().__init__()
        self.body = _mlp([input_dim, *hidden, 1])

    def forward(self, z: torch.Tensor) -> DiscriminatorOutput:
        return DiscriminatorOutput(logit=self.body(z).squeeze(-1))


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(directory, modules: dict, step: int, config_hash: str = "", extras: dict = None):
    """Write named flat parameter tensors plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"step": int(step), "config_hash": config_hash, "tensors": {}}
    for mod_name, module in modules.items():
        for param_name, tensor in module.state_dict().items():
            fname = f"{mod_name}__{param_name.replace('.', '_')}.npy"
            array = tensor.detach().cpu().numpy()
            np.save(directory / fname, array)
            manifest["tensors"][f"{mod_name}.{param_name}"] = {
                "file": fname,
                "shape": list(array.shape),
            }
    if extras:
        manifest["extras"] = extras
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory, modules: dict) -> dict:
    """Restore modules in place; returns the manifest."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    for mod_name, module in modules.items():
        state = {}
        for key, info in manifest["tensors"].items():
            owner, _, param_name = key.partition(".")
            if owner == mod_name:
                state[param_name] = torch.from_numpy(np.load(directory / info["file"]))
        module.load_state_dict(state)
    return manifest
