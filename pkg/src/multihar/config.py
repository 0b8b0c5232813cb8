"""Run configuration: hyperparameters, presets, and the key=value file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model geometry
    n_queries: int = 6
    n_heads: int = 4
    n_enc: int = 4
    n_dec: int = 6
    d: int = 64
    # quantizer
    rvq_layers: int = 4
    codebook_size: int = 16
    commitment_cost: float = 0.5
    rvq_dropout: float = 0.2
    use_rvq: bool = True
    squared_rvq_norms: bool = False
    # gradient scale of the quantizer loss's pull on the encoder features;
    # the loss value itself is unaffected
    rvq_encoder_pull: float = 1.0
    # codebooks get their own learning rate (and no weight decay): they must
    # track the feature distribution much faster than the rest of the model
    codebook_lr: float = 0.0  # 0 means "use lr"
    # epochs during which features pass through unquantized while the
    # codebooks train to fit them; quantization switches on afterwards
    rvq_warmup: int = 0
    # loss / optimizer
    alpha_aux: float = 0.25
    lr: float = 5e-4
    # cosine-decay the learning rate to lr_floor x lr over the epoch budget
    cosine_lr: bool = False
    lr_floor: float = 0.1
    epochs: int = 300
    batch_size: int = 16
    weight_decay: float = 1e-4
    grad_clip: float = 1.0
    queries_in_self_attn: bool = False
    aux_independent_matching: bool = False
    # data
    n_act: int = 9
    T: int = 3000
    n_sc: int = 30
    n_rx: int = 3
    n_tx: int = 3
    max_occupancy: int = 5
    n_samples: int = 3000
    noise_std: float = 0.05
    # bookkeeping
    seed: int = 0
    early_stop_pps: float = 0.995
    patience: int = 0  # 0 disables

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        k = self.codebook_size
        if k < 2 or k & (k - 1):
            raise ConfigError(f"codebook size {k} is not a power of two >= 2")
        if self.n_queries < 1 or self.n_dec < 1 or self.n_enc < 1:
            raise ConfigError("layer/query counts must be >= 1")

    @property
    def channels(self) -> int:
        return self.n_rx * self.n_tx * self.n_sc

    @property
    def n_classes(self) -> int:
        return self.n_act + 1


def paper_config(**overrides) -> RunConfig:
    return RunConfig(**overrides)


def desk_config(**overrides) -> RunConfig:
    """Minute-scale preset: shrunken window, width, and stack depths."""
    base = dict(
        n_queries=6,
        n_heads=4,
        n_enc=2,
        n_dec=2,
        d=32,
        rvq_layers=2,
        codebook_size=16,
        rvq_encoder_pull=0.0,
        rvq_dropout=0.0,
        rvq_warmup=15,
        codebook_lr=0.05,
        lr=2e-3,
        cosine_lr=True,
        epochs=60,
        T=300,
        n_sc=8,
        n_rx=2,
        n_tx=2,
        max_occupancy=2,
        n_samples=3000,
        noise_std=0.02,
        early_stop_pps=0.99,
        patience=12,
    )
    base.update(overrides)
    return RunConfig(**base)


PRESETS = {"paper": paper_config, "desk": desk_config}


def save_config(cfg: RunConfig, path: str):
    with open(path, "w") as f:
        for k, v in asdict(cfg).items():
            f.write(f"{k} = {v}\n")


def load_config(path: str, **overrides) -> RunConfig:
    """Parse a key=value file; types come from the dataclass fields."""
    types = {f.name: f.type for f in fields(RunConfig)}
    raw: dict = {}
    try:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                k, v = (s.strip() for s in line.split("=", 1))
                if k not in types:
                    raise ConfigError(f"{path}:{lineno}: unknown key {k!r}")
                t = types[k]
                if t in ("bool", bool):
                    raw[k] = v.lower() in ("1", "true", "yes")
                elif t in ("int", int):
                    raw[k] = int(v)
                elif t in ("float", float):
                    raw[k] = float(v)
                else:
                    raw[k] = v
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"bad value in {path}: {e}")
    raw.update(overrides)
    return RunConfig(**raw)
