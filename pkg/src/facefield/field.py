"""Conditioned radiance field.

A single network maps (position, view direction, shape code, appearance code,
expression code) to (density, color).  Geometry is a function of position,
shape and expression only; the view direction and the appearance code enter
the color branch exclusively, so density is invariant to both by construction.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigError, InvalidInputError


@dataclass(frozen=True)
class FieldConfig:
    """Dimensions and architecture knobs of the conditioned field.

    ``d_expr = 0`` selects the expressionless variant: the expression input and
    its identity modulation are removed entirely.
    """

    d_shape: int = 50
    d_expr: int = 32
    d_appear: int = 256
    trunk_depth: int = 8
    trunk_width: int = 256
    skip_layers: tuple[int, ...] = (4,)
    freq_pos: int = 10
    freq_dir: int = 4
    ism_hidden: int = 64
    texture_size: int = 512
    scene_bound: float = 1.0

    def __post_init__(self):
        if self.d_shape < 1 or self.d_appear < 1 or self.d_expr < 0:
            raise ConfigError(f"bad code dims: {self}")
        if self.trunk_depth < 2 or self.trunk_width < 4:
            raise ConfigError(f"bad trunk size: {self}")
        size = self.texture_size
        if size < 128 or (size & (size - 1)) != 0:
            raise ConfigError(f"texture_size must be a power of two >= 128, got {size}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["skip_layers"] = list(self.skip_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        d = dict(d)
        d["skip_layers"] = tuple(d.get("skip_layers", (4,)))
        return cls(**d)


@dataclass
class FaceCodes:
    """The (shape, appearance, expression) triple parameterizing one face."""

    beta: Tensor
    alpha: Tensor
    eps: Tensor

    def validate(self, config: FieldConfig):
        if self.beta.shape[-1] != config.d_shape:
            raise ConfigError(f"shape code has dim {self.beta.shape[-1]}, expected {config.d_shape}")
        if self.alpha.shape[-1] != config.d_appear:
            raise ConfigError(f"appearance code has dim {self.alpha.shape[-1]}, expected {config.d_appear}")
        if self.eps.shape[-1] != config.d_expr and config.d_expr > 0:
            raise ConfigError(f"expression code has dim {self.eps.shape[-1]}, expected {config.d_expr}")
        for name, t in (("beta", self.beta), ("alpha", self.alpha), ("eps", self.eps)):
            if t.numel() and not torch.isfinite(t).all():
                raise InvalidInputError(f"non-finite entries in {name}")

    def clone(self) -> "FaceCodes":
        return FaceCodes(self.beta.clone(), self.alpha.clone(), self.eps.clone())

    def to_jsonable(self) -> dict:
        return {
            "beta": [float(v) for v in self.beta.reshape(-1)],
            "alpha": [float(v) for v in self.alpha.reshape(-1)],
            "eps": [float(v) for v in self.eps.reshape(-1)],
        }

    @classmethod
    def from_jsonable(cls, d: dict, dtype=torch.float32) -> "FaceCodes":
        return cls(
            beta=torch.tensor(d["beta"], dtype=dtype),
            alpha=torch.tensor(d["alpha"], dtype=dtype),
            eps=torch.tensor(d.get("eps", []), dtype=dtype),
        )


def positional_encode(p: Tensor, n_freqs: int) -> Tensor:
    """Sinusoidal encoding [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{L-1} pi p), cos(2^{L-1} pi p)].

    Each sin/cos block applies componentwise, so the output has
    ``p.shape[-1] * (1 + 2 * n_freqs)`` features along the last axis.
    """
    if n_freqs < 0:
        raise InvalidInputError(f"frequency count must be >= 0, got {n_freqs}")
    if not torch.isfinite(p).all():
        raise InvalidInputError("positional_encode: non-finite input")
    parts = [p]
    for k in range(n_freqs):
        freq = (2.0**k) * math.pi
        parts.append(torch.sin(freq * p))
        parts.append(torch.cos(freq * p))
    return torch.cat(parts, dim=-1)


class IdentityModulation(nn.Module):
    """Affine adjustment of the expression code driven by the shape code.

    Two shallow two-layer networks predict a per-dimension scale and bias from
    the shape code; the modulated expression is ``scale(beta) * eps + bias(beta)``.
    """

    def __init__(self, d_shape: int, d_expr: int, hidden: int = 64):
        super().__init__()
        self.scale = nn.Sequential(nn.Linear(d_shape, hidden), nn.ReLU(), nn.Linear(hidden, d_expr))
        self.bias = nn.Sequential(nn.Linear(d_shape, hidden), nn.ReLU(), nn.Linear(hidden, d_expr))

    def forward(self, beta: Tensor, eps: Tensor) -> Tensor:
        return self.scale(beta) * eps + self.bias(beta)


def ism_modulate(beta: Tensor, eps: Tensor, module: IdentityModulation) -> Tensor:
    """Apply identity-specific modulation with dimension checks."""
    d_shape = module.scale[0].in_features
    d_expr = module.scale[2].out_features
    if beta.shape[-1] != d_shape:
        raise ConfigError(f"shape code has dim {beta.shape[-1]}, expected {d_shape}")
    if eps.shape[-1] != d_expr:
        raise ConfigError(f"expression code has dim {eps.shape[-1]}, expected {d_expr}")
    return module(beta, eps)


class TextureEncoder(nn.Module):
    """Convolutional encoder turning a UV texture atlas into an appearance code.

    Seven stride-2 convolutions (kernel 4, padding 1, channels
    32,32,32,32,64,128,256) reduce the atlas to a 4x4 map for a 512 input,
    followed by flatten, a 512-wide linear, and two linear heads producing the
    mean and log standard deviation of a 256-dim latent.  The latent (sampled
    when ``stochastic``, the mean otherwise) passes through three further
    256-wide linear layers.  Convolutions use leaky rectification with slope
    0.2, linears slope 0.1; the mean/log-std heads are linear.
    """

    CHANNELS = (32, 32, 32, 32, 64, 128, 256)

    def __init__(self, texture_size: int = 512, d_appear: int = 256):
        super().__init__()
        if texture_size < 128 or (texture_size & (texture_size - 1)) != 0:
            raise ConfigError(f"texture size must be a power of two >= 128, got {texture_size}")
        self.texture_size = texture_size
        self.d_appear = d_appear
        convs = []
        in_ch = 3
        for out_ch in self.CHANNELS:
            convs.append(nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        final_spatial = texture_size // 2 ** len(self.CHANNELS)
        self.flat_dim = self.CHANNELS[-1] * final_spatial * final_spatial
        self.line1 = nn.Linear(self.flat_dim, 512)
        self.mu = nn.Linear(512, d_appear)
        self.logstd = nn.Linear(512, d_appear)
        self.line2 = nn.Linear(d_appear, d_appear)
        self.line3 = nn.Linear(d_appear, d_appear)
        self.app = nn.Linear(d_appear, d_appear)

    def forward(
        self,
        texture: Tensor,
        stochastic: bool = False,
        generator: torch.Generator | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Encode an (H, W, 3) or (B, H, W, 3) texture; returns (alpha, mu, logstd)."""
        squeeze = texture.dim() == 3
        if squeeze:
            texture = texture[None]
        if texture.dim() != 4 or texture.shape[-1] != 3:
            raise InvalidInputError(f"texture must be (..., H, W, 3), got {tuple(texture.shape)}")
        h, w = texture.shape[1], texture.shape[2]
        if h != w or h != self.texture_size:
            raise InvalidInputError(
                f"texture must be square {self.texture_size}x{self.texture_size}, got {h}x{w}"
            )
        x = texture.permute(0, 3, 1, 2)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        x = F.leaky_relu(self.line1(x.flatten(1)), 0.1)
        mu = self.mu(x)
        logstd = self.logstd(x)
        if stochastic:
            noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
            z = mu + torch.exp(logstd) * noise
        else:
            z = mu
        z = F.leaky_relu(self.line2(z), 0.1)
        z = F.leaky_relu(self.line3(z), 0.1)
        alpha = F.leaky_relu(self.app(z), 0.1)
        if squeeze:
            return alpha[0], mu[0], logstd[0]
        return alpha, mu, logstd


def tem_encode(
    texture: Tensor,
    encoder: TextureEncoder,
    stochastic: bool = False,
    generator: torch.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Encode a texture map after validating its invariants."""
    if not torch.isfinite(texture).all():
        raise InvalidInputError("texture has non-finite values")
    if texture.min() < 0 or texture.max() > 1:
        raise InvalidInputError("texture values must lie in [0, 1]")
    return encoder(texture, stochastic=stochastic, generator=generator)


class RadianceField(nn.Module):
    """The conditioned field F(x, d, beta, alpha, eps) -> (sigma, rgb).

    The trunk consumes [encode(x), beta, modulated eps] with a skip
    re-injection of its input at the configured layers.  Density comes from
    trunk features alone through a softplus head; color additionally sees the
    encoded view direction and the appearance code and ends in a sigmoid.
    """

    def __init__(self, config: FieldConfig):
        super().__init__()
        self.config = config
        d_pos = 3 * (1 + 2 * config.freq_pos)
        d_dir = 3 * (1 + 2 * config.freq_dir)
        in_dim = d_pos + config.d_shape + config.d_expr
        width = config.trunk_width
        layers = []
        for i in range(config.trunk_depth):
            if i == 0:
                layers.append(nn.Linear(in_dim, width))
            elif i in config.skip_layers:
                layers.append(nn.Linear(width + in_dim, width))
            else:
                layers.append(nn.Linear(width, width))
        self.trunk = nn.ModuleList(layers)
        self.density_head = nn.Linear(width, 1)
        self.ism = IdentityModulation(config.d_shape, config.d_expr, config.ism_hidden) if config.d_expr else None
        self.color_hidden = nn.Linear(width + d_dir + config.d_appear, width // 2)
        self.color_out = nn.Linear(width // 2, 3)

    def forward(
        self, x: Tensor, d: Tensor, beta: Tensor, alpha: Tensor, eps: Tensor | None = None
    ) -> tuple[Tensor, Tensor]:
        """Evaluate the field at points ``x`` (N, 3) viewed along ``d`` (N, 3).

        Codes may be single vectors (broadcast over points) or per-point rows.
        Returns (sigma (N,), rgb (N, 3)).
        """
        n = x.shape[0]
        beta = beta.expand(n, -1) if beta.dim() == 1 else beta
        alpha = alpha.expand(n, -1) if alpha.dim() == 1 else alpha
        if self.ism is not None:
            eps = eps.expand(n, -1) if eps.dim() == 1 else eps
            cond = torch.cat([beta, self.ism(beta, eps)], dim=-1)
        else:
            cond = beta
        inp = torch.cat([positional_encode(x, self.config.freq_pos), cond], dim=-1)
        h = inp
        for i, layer in enumerate(self.trunk):
            if i in self.config.skip_layers:
                h = torch.cat([h, inp], dim=-1)
            h = F.relu(layer(h))
        sigma = F.softplus(self.density_head(h)).squeeze(-1)
        ch = torch.cat([h, positional_encode(d, self.config.freq_dir), alpha], dim=-1)
        rgb = torch.sigmoid(self.color_out(F.relu(self.color_hidden(ch))))
        return sigma, rgb


def evaluate_field(
    field: RadianceField, x: Tensor, d: Tensor, codes: FaceCodes
) -> tuple[Tensor, Tensor]:
    """Validated field evaluation; returns (sigma, rgb) for points x and directions d."""
    codes.validate(field.config)
    if not torch.isfinite(x).all() or not torch.isfinite(d).all():
        raise InvalidInputError("non-finite position or direction")
    norms = torch.linalg.norm(d, dim=-1)
    if not torch.all((norms - 1.0).abs() <= 1e-6):
        raise InvalidInputError("view directions must be unit length")
    bound = field.config.scene_bound
    if x.abs().max() > bound:
        raise InvalidInputError(f"positions must lie within [-{bound}, {bound}]^3")
    return field(x, d, codes.beta, codes.alpha, codes.eps)


class FaceFieldModel(nn.Module):
    """Checkpointable bundle: coarse field, fine field, and the texture encoder."""

    def __init__(self, config: FieldConfig):
        super().__init__()
        self.config = config
        self.coarse = RadianceField(config)
        self.fine = RadianceField(config)
        self.tem = TextureEncoder(config.texture_size, config.d_appear)

    def field(self, which: str = "fine") -> RadianceField:
        if which not in ("coarse", "fine"):
            raise ConfigError(f"unknown field '{which}'")
        return self.coarse if which == "coarse" else self.fine
