"""Model and training configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 512
    vocab_size: int = 2048
    max_seq: int = 2048
    voxel_resolution: float = 0.05
    pooling_levels: int = 5
    dropout: float = 0.0
    dtype: str = "float32"  # training precision; gradient checks use float64

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.pooling_levels < 1:
            raise ValueError("pooling_levels must be >= 1")

    @property
    def coarse_cell_size(self) -> float:
        return self.voxel_resolution * (2 ** self.pooling_levels)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


TINY = ModelConfig(
    d_model=16,
    n_layers=1,
    n_heads=2,
    d_ff=32,
    vocab_size=48,
    max_seq=8,
    dtype="float64",
)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-3
    lr_schedule: str = "constant"  # constant | cosine (decays to 5% after warmup)
    weight_decay: float = 0.01
    warmup_steps: int = 100
    grad_clip: float = 1.0
    epochs: int = 40
    max_points: int = 4096
    rotate_augment: bool = True
    subsample_augment: bool = True
    val_batch_limit: int = 8
    checkpoint_name: str = "checkpoint.npz"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)
