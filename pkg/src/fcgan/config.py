"""Run configuration: a flat `key = value` text file (UTF-8, # comments).

Every training/evaluation knob lives here, including the network spec
fields, so a resolved config fully determines a run. `batch_g` defaults to
twice `batch_d`; overriding that ratio is allowed but logged.
"""

import hashlib
import logging
from dataclasses import dataclass, fields
from pathlib import Path

from .losses import LossKind, Objective
from .networks import NetworkSpec

logger = logging.getLogger(__name__)

LOSS_NAMES = {"vanilla": LossKind.VANILLA, "hinge": LossKind.HINGE,
              "ns-logistic-r1": LossKind.NS_LOGISTIC_R1}


@dataclass
class RunConfig:
    # network spec
    block_kind: str = "fcb"
    g_channels: int = 256
    d_channels: int = 128
    latent_dim: int = 128
    depth: int = 3
    base_size: int = 4
    img_channels: int = 3
    net_seed: int | None = None
    # objective
    loss: str = "hinge"
    gamma: float = 1.0
    lazy_interval: int = 16
    # optimizer
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    # loop
    n_dis: int = 5
    batch_d: int = 64
    batch_g: int | None = None
    total_g_iters: int = 1000
    eval_every: int = 0
    n_eval: int = 10000
    knn_k: int = 3
    embedder: str = "randconv"
    data: str = "gauss-blobs"
    seed: int = 0
    determinism: bool = False
    out_dir: str = "runs/out"

    def __post_init__(self):
        if self.loss not in LOSS_NAMES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {sorted(LOSS_NAMES)}")
        for name in ("lazy_interval", "n_dis", "batch_d", "total_g_iters", "n_eval", "knn_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0 (0 disables periodic eval)")
        if self.lr <= 0 or self.gamma < 0:
            raise ValueError("lr must be > 0 and gamma >= 0")
        if self.net_seed is None:
            self.net_seed = self.seed
        if self.batch_g is None:
            self.batch_g = 2 * self.batch_d
        elif self.batch_g != 2 * self.batch_d:
            logger.warning("batch_g=%d deviates from the default 2*batch_d=%d",
                           self.batch_g, 2 * self.batch_d)
        if self.batch_g < 1:
            raise ValueError("batch_g must be >= 1")

    @property
    def loss_kind(self) -> LossKind:
        return LOSS_NAMES[self.loss]

    def objective(self) -> Objective:
        return Objective(kind=self.loss_kind, gamma=self.gamma,
                         lazy_interval=self.lazy_interval)

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(block_kind=self.block_kind, g_channels=self.g_channels,
                           d_channels=self.d_channels, latent_dim=self.latent_dim,
                           depth=self.depth, base_size=self.base_size,
                           img_channels=self.img_channels, seed=self.net_seed)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = str(value).lower() if isinstance(value, bool) else str(value)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, value in raw.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _parse_value(key, value)
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = [f"{key} = {value}" for key, value in self.to_dict().items()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(parse_config_text(Path(path).read_text(encoding="utf-8")))

    def config_hash(self) -> str:
        """Digest of every computation-determining key (out_dir excluded)."""
        items = sorted((k, v) for k, v in self.to_dict().items() if k != "out_dir")
        canonical = "\n".join(f"{k} = {v}" for k, v in items)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


_INT_KEYS = {"g_channels", "d_channels", "latent_dim", "depth", "base_size",
             "img_channels", "net_seed", "lazy_interval", "n_dis", "batch_d",
             "batch_g", "total_g_iters", "eval_every", "n_eval", "knn_k", "seed"}
_FLOAT_KEYS = {"gamma", "lr", "beta1", "beta2", "adam_eps"}
_BOOL_KEYS = {"determinism"}


def _parse_value(key: str, value: str):
    value = value.strip()
    if key in _BOOL_KEYS:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; '#' starts a comment, blanks are skipped."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw
