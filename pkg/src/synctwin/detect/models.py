"""Window classifiers: a small 2D CNN and a transformer encoder, both ending
in a logistic output over a flattened representation, plus the weighted
binary-cross-entropy loss and the model artifact format.

The CNN treats a window as a one-channel S x F image.  The transformer
layer-normalizes each packet's feature vector, runs two encoder layers at
model width F, and classifies from the flattened sequence; no positional
encoding is added, so order sensitivity enters through the flatten+FC head.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from ..config import ConfigError
from ..dataset import MacMapper, NUM_FEATURES, Scaler, SlidingWindow

ARTIFACT_FORMAT_VERSION = 1

VALID_ARCHS = ("cnn", "transformer")
VALID_SEQ_LENS = (16, 32, 40)
VALID_HEADS = (2, 3)

TRANSFORMER_LAYERS = 2
TRANSFORMER_FF_WIDTH = 4 * NUM_FEATURES
TRANSFORMER_FC_WIDTH = 256
TRANSFORMER_DROPOUT = 0.2
CNN_FC_WIDTH = 64


@dataclass
class ModelConfig:
    arch: str = "transformer"
    s: int = 32
    f: int = NUM_FEATURES
    n_head: int = 2
    threshold: float = 0.5
    w_fp: float = 1.0
    w_fn: float = 1.0

    def __post_init__(self) -> None:
        if self.arch not in VALID_ARCHS:
            raise ConfigError(f"arch must be one of {VALID_ARCHS}, got {self.arch!r}")
        if self.s not in VALID_SEQ_LENS:
            raise ConfigError(f"sequence length must be one of {VALID_SEQ_LENS}, got {self.s}")
        if self.f != NUM_FEATURES:
            raise ConfigError(f"feature count is fixed at {NUM_FEATURES}")
        if self.arch == "transformer":
            if self.n_head not in VALID_HEADS:
                raise ConfigError(f"heads must be one of {VALID_HEADS}, got {self.n_head}")
            if self.f % self.n_head:
                raise ConfigError(f"feature count {self.f} not divisible by {self.n_head} heads")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold {self.threshold} outside [0, 1]")
        if self.w_fp <= 0 or self.w_fn <= 0:
            raise ConfigError("loss weights must be positive")


class WindowCnn(nn.Module):
    """conv(16, 3x3, pad 1) -> ReLU -> 2x2 pool -> conv(32, 3x3, pad 1) ->
    ReLU -> 2x2 pool -> flatten -> FC -> ReLU -> FC 1.  Output is the logit."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        if config.s % 4:
            raise ConfigError("CNN needs S divisible by 4")
        self.config = config
        self.conv1 = nn.Conv2d(1, 16, kernel_size=3, stride=1, padding=1)
        self.conv2 = nn.Conv2d(16, 32, kernel_size=3, stride=1, padding=1)
        self.pool = nn.MaxPool2d(2, 2)
        self.relu = nn.ReLU()
        flat = 32 * (config.s // 4) * (config.f // 4)
        self.fc1 = nn.Linear(flat, CNN_FC_WIDTH)
        self.fc2 = nn.Linear(CNN_FC_WIDTH, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.config.s or x.shape[2] != self.config.f:
            raise ValueError(f"expected (N, {self.config.s}, {self.config.f}), "
                             f"got {tuple(x.shape)}")
        h = x.unsqueeze(1)  # one channel
        h = self.pool(self.relu(self.conv1(h)))
        h = self.pool(self.relu(self.conv2(h)))
        h = h.flatten(1)
        h = self.relu(self.fc1(h))
        return self.fc2(h).squeeze(-1)


class WindowTransformer(nn.Module):
    """LayerNorm over features -> 2 encoder layers (width F) -> flatten ->
    FC 256 -> ReLU -> dropout -> FC 1.  Output is the logit."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        self.input_norm = nn.LayerNorm(config.f)
        layer = nn.TransformerEncoderLayer(
            d_model=config.f, nhead=config.n_head,
            dim_feedforward=TRANSFORMER_FF_WIDTH, dropout=0.0, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, num_layers=TRANSFORMER_LAYERS,
                                             enable_nested_tensor=False)
        self.fc1 = nn.Linear(config.s * config.f, TRANSFORMER_FC_WIDTH)
        self.relu = nn.ReLU()
        self.dropout = nn.Dropout(TRANSFORMER_DROPOUT)
        self.fc2 = nn.Linear(TRANSFORMER_FC_WIDTH, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.config.s or x.shape[2] != self.config.f:
            raise ValueError(f"expected (N, {self.config.s}, {self.config.f}), "
                             f"got {tuple(x.shape)}")
        h = self.input_norm(x)
        h = self.encoder(h)
        h = h.flatten(1)
        h = self.dropout(self.relu(self.fc1(h)))
        return self.fc2(h).squeeze(-1)


def build_model(config: ModelConfig) -> nn.Module:
    if config.arch == "cnn":
        return WindowCnn(config)
    return WindowTransformer(config)


def weighted_bce_with_logits(logits: torch.Tensor, targets: torch.Tensor,
                             w_fp: float = 1.0, w_fn: float = 1.0) -> torch.Tensor:
    """Mean BCE with separate weights on the two error directions.

    softplus keeps it finite for large |logit|; weights (1, 1) reduce to the
    standard loss exactly.
    """
    pos = torch.nn.functional.softplus(-logits)   # -log sigmoid(z)
    neg = torch.nn.functional.softplus(logits)    # -log (1 - sigmoid(z))
    loss = w_fn * targets * pos + w_fp * (1.0 - targets) * neg
    return loss.mean()


def predict_probability(model: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Probabilities with dropout disabled; restores the prior mode."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return torch.sigmoid(model(x))
    finally:
        if was_training:
            model.train()


def windows_to_tensors(windows: list[SlidingWindow],
                       scaler: Scaler) -> tuple[torch.Tensor, torch.Tensor]:
    """(N, S, F) scaled features and (N,) labels as float32."""
    if not windows:
        raise ValueError("no windows to convert")
    data = [[scaler.transform_features(rec.features()) for rec in w.records]
            for w in windows]
    x = torch.tensor(data, dtype=torch.float32)
    y = torch.tensor([float(w.label) for w in windows], dtype=torch.float32)
    return x, y


def save_artifact(path: str, model: nn.Module, config: ModelConfig,
                  scaler: Scaler, mac_map: MacMapper,
                  history: list[dict] | None = None) -> None:
    payload = {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "model_config": asdict(config),
        "scaler": scaler.to_dict(),
        "mac_map": mac_map.to_dict(),
        "state_dict": model.state_dict(),
        "history": history or [],
    }
    torch.save(payload, path)


def load_artifact(path: str) -> tuple[nn.Module, ModelConfig, Scaler, MacMapper, list[dict]]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != ARTIFACT_FORMAT_VERSION:
        raise ConfigError(f"unsupported model artifact format {version!r}")
    config = ModelConfig(**payload["model_config"])
    model = build_model(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    scaler = Scaler.from_dict(payload["scaler"])
    mac_map = MacMapper(payload["mac_map"])
    return model, config, scaler, mac_map, payload["history"]
