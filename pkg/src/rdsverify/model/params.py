"""Architecture config and the named parameter store."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from ..autodiff import BatchNormState, Tensor
from ..autodiff.checkpoint import load_checkpoint, save_checkpoint
from ..errors import DataError


@dataclass
class PavenetConfig:
    channels: int = 64
    dpm_k: int = 3
    dpm_n: int = 8
    mask_on: float = 0.9
    mask_off: float = 0.005
    num_subsets: int = 4
    embed_dim: int = 32
    pool_heads: int = 2
    head_hidden: int = 64
    num_writers: int = 20
    in_channels: int = 12
    input_kernel: int = 5
    dilations: tuple = (1, 2, 3)
    se_ratio: int = 4
    use_dpm: bool = True
    use_gta: bool = True

    def validate(self) -> None:
        if self.channels % self.num_subsets:
            raise ValueError("channels must be divisible by num_subsets")
        if self.dpm_n < 1 or self.dpm_k < 1:
            raise ValueError("dpm_n and dpm_k must be >= 1")
        if not 0 < self.mask_off < self.mask_on <= 1:
            raise ValueError("need 0 < mask_off < mask_on <= 1")
        if min(self.embed_dim, self.pool_heads, self.head_hidden, self.num_writers) < 1:
            raise ValueError("embed_dim, pool_heads, head_hidden and num_writers must be >= 1")

    @property
    def embedding_size(self) -> int:
        return 2 * self.embed_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PavenetConfig":
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in known}
        if "dilations" in kw:
            kw["dilations"] = tuple(kw["dilations"])
        return cls(**kw)


class PavenetParams:
    """All learnable tensors (addressable by name) plus batchnorm running stats."""

    def __init__(self, config: PavenetConfig):
        config.validate()
        self.config = config
        self.tensors: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def add(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)

    def parameters(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: t.data for name, t in self.tensors.items()}
        for name, st in self.bn.items():
            arrays[f"{name}.running_mean"] = st.mean
            arrays[f"{name}.running_var"] = st.var
        return arrays

    def copy(self) -> "PavenetParams":
        other = PavenetParams(self.config)
        for name, t in self.tensors.items():
            other.add(name, t.data.copy())
        for name, st in self.bn.items():
            other.bn[name] = BatchNormState(st.mean.copy(), st.var.copy(), st.momentum)
        return other

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"format": "pavenet", "config": self.config.to_dict(), "bn_layers": list(self.bn)}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path) -> "PavenetParams":
        return cls.load_with_meta(path)[0]

    @classmethod
    def load_with_meta(cls, path) -> tuple["PavenetParams", dict]:
        arrays, meta = load_checkpoint(path)
        if meta.get("format") != "pavenet":
            raise DataError(f"{path}: not a model checkpoint")
        params = cls(PavenetConfig.from_dict(meta["config"]))
        for name in meta["bn_layers"]:
            params.bn[name] = BatchNormState(arrays.pop(f"{name}.running_mean"), arrays.pop(f"{name}.running_var"))
        for name, value in arrays.items():
            params.add(name, value)
        return params, meta


def _he(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _add_crb(p: PavenetParams, rng, name: str, c_in: int, c_out: int, k: int) -> None:
    p.add(f"{name}.w", _he(rng, (c_out, c_in, k), c_in * k))
    p.add(f"{name}.b", np.zeros(c_out))
    p.add(f"{name}.gamma", np.ones(c_out))
    p.add(f"{name}.beta", np.zeros(c_out))
    p.bn[name] = BatchNormState.fresh(c_out)


def _add_linear(p: PavenetParams, rng, name: str, n_in: int, n_out: int) -> None:
    bound = np.sqrt(6.0 / (n_in + n_out))
    p.add(f"{name}.w", rng.uniform(-bound, bound, size=(n_out, n_in)))
    p.add(f"{name}.b", np.zeros(n_out))


def _add_pool(p: PavenetParams, rng, name: str, c: int, heads: int, embed: int) -> None:
    p.add(f"{name}.score_w", rng.normal(0.0, 0.1 / np.sqrt(c), size=(heads, c)))
    p.add(f"{name}.score_b", np.zeros(heads))
    _add_linear(p, rng, f"{name}.proj", heads * c, embed)


def init_params(config: PavenetConfig, seed: int = 0) -> PavenetParams:
    """Fresh parameters; deterministic in ``seed``."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x9A7E])))
    p = PavenetParams(config)
    c = config.channels
    q = c // config.num_subsets
    _add_crb(p, rng, "backbone.in", config.in_channels, c, config.input_kernel)
    for i in range(config.num_subsets - 1):
        _add_crb(p, rng, f"backbone.split{i}", q, q, 3)
    _add_crb(p, rng, "backbone.mid", c, c, 3)
    for blk in range(len(config.dilations)):
        for i in range(config.num_subsets - 1):
            _add_crb(p, rng, f"backbone.tds{blk}.conv{i}", q, q, 3)
        squeeze = max(1, c // config.se_ratio)
        _add_linear(p, rng, f"backbone.tds{blk}.se1", c, squeeze)
        _add_linear(p, rng, f"backbone.tds{blk}.se2", squeeze, c)
    _add_crb(p, rng, "backbone.agg", c * (len(config.dilations) + 1), c, 1)
    # a disabled branch keeps its pooling and skips only its refinement stage
    _add_pool(p, rng, "dpm.pool", c, config.pool_heads, config.embed_dim)
    if config.use_gta:
        bound = 1.0 / np.sqrt(c)
        p.add("gta.lstm.w_ih", rng.uniform(-bound, bound, size=(4 * c, c)))
        p.add("gta.lstm.w_hh", rng.uniform(-bound, bound, size=(4 * c, c)))
        p.add("gta.lstm.b", np.zeros(4 * c))
    _add_pool(p, rng, "gta.pool", c, config.pool_heads, config.embed_dim)
    _add_linear(p, rng, "head.fc1", config.embedding_size, config.head_hidden)
    _add_linear(p, rng, "head.fc2", config.head_hidden, config.num_writers)
    return p
