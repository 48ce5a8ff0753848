"""U-Net preference predictor: model, deterministic training, persistence.

Encoder: double-conv blocks (3x3 same-padding convs, ReLU, spatial dropout)
with 2x2 max pooling; decoder: stride-2 transposed convs with skip
concatenation; head: 1x1 conv to a single logit channel.  Training uses
binary cross-entropy on logits with Adam, early-stopped when the monitored
validation loss fails to improve by the configured margin for `patience`
consecutive epochs; the returned model carries the best-validation weights.

Weight file format ``HSEG1``: 5-byte magic, uint32 header length, JSON
header (config, seed, epoch, val loss, tensor manifest), then the raw
little-endian float32 tensors in state-dict order.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import AnalysisError, ContractError
from .dataset import CorpusManifest, load_pair

WEIGHTS_MAGIC = b"HSEG1"


@dataclass(frozen=True)
class SegModelConfig:
    """Architecture knobs; depth is the number of encoder levels."""

    height: int = 64
    width: int = 64
    channels: tuple[int, ...] = (16, 32, 64)
    bottleneck: int = 128
    dropout: float = 0.15
    kernel_size: int = 3

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")
        if len(self.channels) < 1:
            raise ContractError("need at least one encoder level")
        div = self.divisor
        if self.height % div or self.width % div:
            raise ContractError(
                f"input size must be divisible by {div} "
                f"({len(self.channels)} pooling stages)"
            )

    @property
    def depth(self) -> int:
        return len(self.channels)

    @property
    def divisor(self) -> int:
        return 2 ** len(self.channels)

    def to_json_dict(self) -> dict:
        return {"height": self.height, "width": self.width,
                "channels": list(self.channels),
                "bottleneck": self.bottleneck, "dropout": self.dropout,
                "kernel_size": self.kernel_size}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SegModelConfig":
        return cls(height=doc["height"], width=doc["width"],
                   channels=tuple(doc["channels"]),
                   bottleneck=doc["bottleneck"], dropout=doc["dropout"],
                   kernel_size=doc["kernel_size"])


DESK_CONFIG = SegModelConfig(64, 64, (16, 32, 64), 128)
FULL_CONFIG = SegModelConfig(128, 128, (64, 128, 256), 512)


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    max_epochs: int = 1000
    patience: int = 25
    min_improvement: float = 0.01
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning rate must be positive")
        if self.patience < 1:
            raise ContractError("patience must be >= 1")


def _double_conv(c_in, c_out, k, dropout):
    pad = k // 2
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, k, padding=pad),
        nn.ReLU(inplace=True),
        nn.Dropout2d(dropout),
        nn.Conv2d(c_out, c_out, k, padding=pad),
        nn.ReLU(inplace=True),
        nn.Dropout2d(dropout),
    )


class UNet(nn.Module):
    def __init__(self, config: SegModelConfig):
        super().__init__()
        self.config = config
        k, drop = config.kernel_size, config.dropout
        chans = config.channels
        self.enc = nn.ModuleList()
        c_prev = 1
        for c in chans:
            self.enc.append(_double_conv(c_prev, c, k, drop))
            c_prev = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(c_prev, config.bottleneck, k, drop)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        c_prev = config.bottleneck
        for c in reversed(chans):
            self.up.append(nn.ConvTranspose2d(c_prev, c, 2, stride=2))
            self.dec.append(_double_conv(2 * c, c, k, drop))
            c_prev = c
        self.head = nn.Conv2d(chans[0], 1, 1)

    def forward(self, x):
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, block, skip in zip(self.up, self.dec, reversed(skips)):
            x = up(x)
            x = block(torch.cat([skip, x], dim=1))
        return self.head(x)


@dataclass
class SegModel:
    """Network plus its config and per-epoch loss history."""

    net: UNet
    config: SegModelConfig
    seed: int = 0
    epoch: int = 0
    val_loss: float = float("nan")
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())


def expected_parameter_count(config: SegModelConfig) -> int:
    """Closed-form parameter count from the architecture shapes."""
    k = config.kernel_size

    def conv(c_in, c_out, kk):
        return c_in * c_out * kk * kk + c_out

    def double(c_in, c_out):
        return conv(c_in, c_out, k) + conv(c_out, c_out, k)

    total = 0
    c_prev = 1
    for c in config.channels:
        total += double(c_prev, c)
        c_prev = c
    total += double(c_prev, config.bottleneck)
    c_prev = config.bottleneck
    for c in reversed(config.channels):
        total += c_prev * c * 2 * 2 + c       # transposed conv
        total += double(2 * c, c)
        c_prev = c
    total += conv(config.channels[0], 1, 1)   # head
    return total


def init_model(config: SegModelConfig, seed: int = 0) -> SegModel:
    """Variance-scaled conv kernels, zero biases; deterministic per seed."""
    torch.manual_seed(seed)
    net = UNet(config)
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)
    return SegModel(net=net, config=config, seed=seed)


def _as_batch(image: np.ndarray, divisor: int) -> torch.Tensor:
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ContractError("expected a single 2D image")
    h, w = image.shape
    if h % divisor or w % divisor:
        raise ContractError(
            f"image dims ({h}, {w}) must be divisible by {divisor}")
    return torch.from_numpy(image).reshape(1, 1, h, w)


def forward(model: SegModel, image: np.ndarray, train_mode: bool = False
            ) -> np.ndarray:
    """Logit map with the same spatial shape as the input."""
    x = _as_batch(image, model.config.divisor)
    model.net.train(train_mode)
    ctx = torch.enable_grad() if train_mode else torch.no_grad()
    with ctx:
        out = model.net(x)
    return out.detach().numpy()[0, 0]


def predict(model: SegModel, image: np.ndarray) -> np.ndarray:
    """Sigmoid probabilities in (0, 1); dropout disabled."""
    return 1.0 / (1.0 + np.exp(-forward(model, image, train_mode=False)))


def _stack_split(manifest: CorpusManifest, split: str):
    recs = manifest.by_split(split)
    if not recs:
        raise ContractError(f"manifest has no '{split}' samples")
    xs, ys = [], []
    for rec in recs:
        topo, mask = load_pair(manifest, rec)
        xs.append(topo.astype(np.float32))
        ys.append(mask.astype(np.float32))
    x = torch.from_numpy(np.stack(xs)).unsqueeze(1)
    y = torch.from_numpy(np.stack(ys)).unsqueeze(1)
    return x, y


def train(model: SegModel, manifest: CorpusManifest,
          config: TrainConfig = TrainConfig()
          ) -> tuple[SegModel, list[tuple[int, float, float]]]:
    """Train on the manifest's train split, early-stop on its val split.

    The monitored-best value only advances on improvements of at least
    `min_improvement`, and the patience counter resets on those; training
    stops after `patience` consecutive non-improving epochs (or at
    `max_epochs`).  The returned model carries the weights of the epoch
    with the lowest raw validation loss.
    """
    x_train, y_train = _stack_split(manifest, "train")
    x_val, y_val = _stack_split(manifest, "val")
    torch.manual_seed(config.seed)
    order_rng = np.random.default_rng(config.seed)
    net = model.net
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    loss_fn = nn.BCEWithLogitsLoss()

    n = x_train.shape[0]
    monitored_best = float("inf")
    best_val = float("inf")
    best_state = {k: v.clone() for k, v in net.state_dict().items()}
    best_epoch = 0
    stall = 0
    history: list[tuple[int, float, float]] = []

    for epoch in range(1, config.max_epochs + 1):
        net.train(True)
        perm = order_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            xb = x_train[idx]
            yb = y_train[idx]
            opt.zero_grad()
            out = net(xb)
            loss = loss_fn(out, yb)
            loss.backward()
            opt.step()
            total += float(loss) * len(idx)
        train_loss = total / n
        net.train(False)
        with torch.no_grad():
            val_losses = []
            for lo in range(0, x_val.shape[0], config.batch_size):
                out = net(x_val[lo:lo + config.batch_size])
                val_losses.append(
                    float(loss_fn(out, y_val[lo:lo + config.batch_size]))
                    * len(out))
            val_loss = sum(val_losses) / x_val.shape[0]
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise AnalysisError(f"training diverged at epoch {epoch}")
        history.append((epoch, train_loss, val_loss))

        if val_loss < best_val:
            best_val = val_loss
            best_state = {k: v.clone() for k, v in net.state_dict().items()}
            best_epoch = epoch
        if val_loss <= monitored_best - config.min_improvement:
            monitored_best = val_loss
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break

    net.load_state_dict(best_state)
    model.epoch = best_epoch
    model.val_loss = best_val
    model.history = history
    return model, history


def history_to_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in history:
            writer.writerow([epoch, f"{tr:.8f}", f"{va:.8f}"])


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_weights(model: SegModel, path) -> None:
    state = model.net.state_dict()
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    header = json.dumps({
        "version": 1,
        "config": model.config.to_json_dict(),
        "seed": model.seed,
        "epoch": model.epoch,
        "val_loss": None if np.isnan(model.val_loss) else model.val_loss,
        "tensors": manifest,
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for v in state.values():
            fh.write(v.numpy().astype("<f4").tobytes())


def load_weights(path) -> SegModel:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != WEIGHTS_MAGIC:
            raise ContractError(f"not a weight file (magic {magic!r})")
        raw = fh.read(4)
        if len(raw) != 4:
            raise ContractError("truncated weight file header")
        (hlen,) = struct.unpack("<I", raw)
        header_bytes = fh.read(hlen)
        if len(header_bytes) != hlen:
            raise ContractError("truncated weight file header")
        header = json.loads(header_bytes)
        config = SegModelConfig.from_json_dict(header["config"])
        model = init_model(config, seed=header.get("seed", 0))
        state = model.net.state_dict()
        names = list(state.keys())
        listed = [t["name"] for t in header["tensors"]]
        if names != listed:
            raise ContractError("weight file tensor list does not match the "
                                "declared architecture")
        new_state = {}
        for t in header["tensors"]:
            shape = tuple(t["shape"])
            expected = tuple(state[t["name"]].shape)
            if shape != expected:
                raise ContractError(
                    f"tensor {t['name']} has shape {shape}, expected "
                    f"{expected}")
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise ContractError("truncated weight file tensors")
            arr = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
            new_state[t["name"]] = torch.from_numpy(arr)
        model.net.load_state_dict(new_state)
        model.epoch = header.get("epoch", 0)
        val = header.get("val_loss")
        model.val_loss = float("nan") if val is None else float(val)
    return model
