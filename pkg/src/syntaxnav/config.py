"""Training/model configuration with a flat ``key = value`` text format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

ENCODERS = ("tree", "chain", "chain2", "meanpool")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    encoder: str = "tree"
    embed_dim: int = 256
    bilstm_hidden: int = 256  # per direction; concatenated width feeds the tree encoder
    tree_hidden: int = 512
    action_dim: int = 128
    decoder_hidden: int = 512
    value_hidden: int = 512
    feature_dim: int = 64  # base view feature width; the orientation block adds 4

    @property
    def memory_dim(self) -> int:
        """Width of the attention memory (node states) produced by the encoder."""
        return self.tree_hidden if self.encoder == "tree" else 2 * self.bilstm_hidden

    @property
    def view_dim(self) -> int:
        return self.feature_dim + 4


@dataclass(frozen=True)
class TrainConfig:
    # objective
    lambda_il: float = 0.2
    gamma: float = 0.9
    eta: float = 0.01
    il_only: bool = False
    success_radius: float = 3.0
    # optimisation
    lr: float = 1e-3
    rms_rho: float = 0.9
    rms_eps: float = 1e-8
    clip: float = 0.0  # global-norm clip; 0 disables
    batch_size: int = 8
    iterations: int = 3000
    max_steps: int = 20
    # bookkeeping
    eval_every: int = 500
    eval_episodes: int = 50
    ckpt_every: int = 0
    # model
    encoder: str = "tree"
    embed_dim: int = 32
    bilstm_hidden: int = 32
    tree_hidden: int = 64
    action_dim: int = 16
    decoder_hidden: int = 64
    value_hidden: int = 32

    def validate(self) -> "TrainConfig":
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.lambda_il < 0:
            raise ConfigError("lambda_il must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")
        if self.lr <= 0 or self.batch_size < 1 or self.iterations < 0 or self.max_steps < 1:
            raise ConfigError("lr, batch_size and max_steps must be positive; iterations >= 0")
        return self

    def model(self, feature_dim: int) -> ModelConfig:
        return ModelConfig(self.encoder, self.embed_dim, self.bilstm_hidden, self.tree_hidden,
                           self.action_dim, self.decoder_hidden, self.value_hidden, feature_dim)

    def as_dict(self) -> dict:
        return asdict(self)


# Full-scale training values, kept selectable next to the desk defaults.
FULL_PRESET = dict(
    lr=1e-4, batch_size=64, iterations=80_000, max_steps=35,
    embed_dim=256, bilstm_hidden=256, tree_hidden=512, action_dim=128,
    decoder_hidden=512, value_hidden=512,
)

PRESETS = {"desk": {}, "full": FULL_PRESET}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return replace(TrainConfig(), **{**PRESETS[name], **overrides}).validate()


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


def load_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    types = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in types:
            raise ConfigError(f"line {lineno}: unknown key {k!r}")
        values[k] = _coerce(types[k], v, lineno)
    return replace(base, **values).validate()


def _coerce(t, v: str, lineno: int):
    try:
        if t is bool:
            if v.lower() in ("true", "1", "yes"):
                return True
            if v.lower() in ("false", "0", "no"):
                return False
            raise ValueError(v)
        return t(v)
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot read {v!r} as {t.__name__}") from None
