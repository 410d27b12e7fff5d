"""Three-stage selective-scan U-net with wavelet-guided skip augmentation.

The encoder embeds the image at quarter resolution and runs three stages
of residual selective-scan blocks at widths C, 2C, 4C.  Shallow features
optionally pass through the wavelet high-frequency module; the deepest
features are optionally fused with them under dual attention.  The fused
map feeds every decoder level through 1x1-conv projections, added to (or
replacing) the plain encoder skips.  A mirrored decoder and a x4 expand
head return one logit map at input resolution.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .daff import DualAttentionFusion
from .errors import ConfigError, DimensionError
from .layers import Conv2d, Module, count_params
from .ssm import Downsample2, FinalExpand4, PatchEmbed, Upsample2, VSSBlock
from .whf import WhfModule

_SKIP_MODES = ("combine", "replace")


def _parse_int(key, value):
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None


@dataclass
class ModelConfig:
    base_channels: int = 32
    vss_blocks_per_stage: tuple = (2, 2, 2)
    ssm_state: int = 8
    reduction: int = 16
    input_size: tuple = (224, 224)
    in_channels: int = 1
    seed: int = 0
    use_whf: bool = True
    use_daff: bool = True
    skip_mode: str = "combine"

    def validate(self):
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be positive, got {self.base_channels}")
        blocks = tuple(self.vss_blocks_per_stage)
        if len(blocks) != 3 or any(b < 1 for b in blocks):
            raise ConfigError(f"vss_blocks_per_stage needs three positive entries, got {blocks}")
        if self.ssm_state < 1:
            raise ConfigError(f"ssm_state must be positive, got {self.ssm_state}")
        if (4 * self.base_channels) % self.reduction:
            raise ConfigError(
                f"reduction {self.reduction} must divide 4x base_channels "
                f"{4 * self.base_channels}")
        h, w = self.input_size
        if h % 16 or w % 16 or h < 32 or w < 32:
            raise ConfigError(f"input_size must be multiples of 16, at least 32, got {h}x{w}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be positive, got {self.in_channels}")
        if self.skip_mode not in _SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {_SKIP_MODES}, got {self.skip_mode!r}")
        if self.skip_mode == "replace" and not (self.use_whf or self.use_daff):
            raise ConfigError("skip_mode 'replace' needs an augmentation source enabled")

    def to_dict(self):
        return {
            "base_channels": self.base_channels,
            "vss_blocks_per_stage": ",".join(str(b) for b in self.vss_blocks_per_stage),
            "ssm_state": self.ssm_state,
            "reduction": self.reduction,
            "input_size": ",".join(str(s) for s in self.input_size),
            "in_channels": self.in_channels,
            "seed": self.seed,
            "use_whf": self.use_whf,
            "use_daff": self.use_daff,
            "skip_mode": self.skip_mode,
        }

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.to_dict().items()))

    @classmethod
    def from_text(cls, text):
        raw = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        ints = ("base_channels", "ssm_state", "reduction", "in_channels", "seed")
        bools = ("use_whf", "use_daff")
        tuples = ("vss_blocks_per_stage", "input_size")
        kwargs = {}
        for key, value in raw.items():
            value = str(value)
            if key in ints:
                kwargs[key] = _parse_int(key, value)
            elif key in bools:
                if value.lower() not in ("true", "false"):
                    raise ConfigError(f"{key} must be true or false, got {value!r}")
                kwargs[key] = value.lower() == "true"
            elif key in tuples:
                parts = value.strip("()").split(",")
                kwargs[key] = tuple(_parse_int(key, v.strip()) for v in parts)
            elif key == "skip_mode":
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown model config key {key!r}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


class SegmentationModel(Module):
    """Deterministically built from the config's seed; attribute creation
    order fixes both RNG consumption and parameter naming."""

    def __init__(self, cfg):
        cfg.validate()
        self.config = cfg
        c = cfg.base_channels
        s = cfg.ssm_state
        n1, n2, n3 = cfg.vss_blocks_per_stage
        rng = np.random.default_rng(cfg.seed)

        self.patch_embed = PatchEmbed(cfg.in_channels, c, rng)
        self.enc1 = [VSSBlock(c, s, rng) for _ in range(n1)]
        self.down1 = Downsample2(c, rng)
        self.enc2 = [VSSBlock(2 * c, s, rng) for _ in range(n2)]
        self.down2 = Downsample2(2 * c, rng)
        self.enc3 = [VSSBlock(4 * c, s, rng) for _ in range(n3)]

        if cfg.use_whf:
            self.whf = WhfModule(c, rng)
        if cfg.use_daff:
            self.daff = DualAttentionFusion(c, cfg.reduction, rng)
        elif cfg.use_whf:
            self.whf_skip = Conv2d(c, 4 * c, 1, rng)
        if cfg.use_whf or cfg.use_daff:
            self.proj3 = Conv2d(4 * c, 4 * c, 1, rng)
            self.proj2 = Conv2d(4 * c, 2 * c, 1, rng)
            self.proj1 = Conv2d(4 * c, c, 1, rng)

        self.dec3 = [VSSBlock(4 * c, s, rng) for _ in range(n3)]
        self.up3 = Upsample2(4 * c, rng)
        self.dec2 = [VSSBlock(2 * c, s, rng) for _ in range(n2)]
        self.up2 = Upsample2(2 * c, rng)
        self.dec1 = [VSSBlock(c, s, rng) for _ in range(n1)]
        self.head = FinalExpand4(c, rng)

    @staticmethod
    def _stage(blocks, x):
        for block in blocks:
            x = block(x)
        return x

    def forward(self, x):
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels \
                or x.shape[2:] != tuple(cfg.input_size):
            raise DimensionError(
                f"expected N x {cfg.in_channels} x {cfg.input_size[0]} x "
                f"{cfg.input_size[1]} input, got {x.shape}")

        p = self.patch_embed(x)
        e1 = self._stage(self.enc1, p)
        e2 = self._stage(self.enc2, self.down1(e1))
        e3 = self._stage(self.enc3, self.down2(e2))

        source = None
        if cfg.use_whf and cfg.use_daff:
            source = self.daff(self.whf(p), e3)
        elif cfg.use_daff:
            source = self.daff(p, e3)
        elif cfg.use_whf:
            source = self.whf_skip(T.pool2d(self.whf(p), "max", 4))

        def skip(encoder_term, proj, factor):
            if source is None:
                return encoder_term
            term = proj(source)
            if factor > 1:
                term = T.bilinear_upsample(term, factor)
            if cfg.skip_mode == "replace":
                return term
            return T.add(encoder_term, term)

        d3 = self._stage(self.dec3, skip(e3, getattr(self, "proj3", None), 1))
        d2 = self._stage(self.dec2, T.add(self.up3(d3), skip(e2, getattr(self, "proj2", None), 2)))
        d1 = self._stage(self.dec1, T.add(self.up2(d2), skip(e1, getattr(self, "proj1", None), 4)))
        return self.head(d1)

    __call__ = forward

    def param_report(self):
        """Learnable-scalar counts grouped by top-level submodule."""
        report = {}
        for name, value in vars(self).items():
            if isinstance(value, Module) or (isinstance(value, list)
                                             and value and isinstance(value[0], Module)):
                group = count_params(value) if isinstance(value, Module) \
                    else sum(count_params(m) for m in value)
                report[name] = group
        report["total"] = count_params(self)
        return report


def build_model(cfg):
    return SegmentationModel(cfg)
