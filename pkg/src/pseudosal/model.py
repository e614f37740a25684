"""Small seeded fully convolutional saliency network and its training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import BinaryMask, Dataset, Image, SaliencyMap
from .errors import InvalidArgument, TrainingAborted
from .objective import torch_fbeta_loss

log = logging.getLogger(__name__)

OUTPUT_EPS = 1e-6


@dataclass(frozen=True)
class NetConfig:
    base_width: int = 16
    encoder_depth: int = 3
    dilated_blocks: int = 2
    seed: int = 0
    input_size: int = 64

    def validate(self) -> None:
        if self.base_width < 4:
            raise InvalidArgument("base_width must be >= 4")
        if self.encoder_depth < 1:
            raise InvalidArgument("encoder_depth must be >= 1")
        if self.dilated_blocks < 0:
            raise InvalidArgument("dilated_blocks must be >= 0")


@dataclass(frozen=True)
class OptimConfig:
    base_lr: float = 1e-4
    first_moment_decay: float = 0.9
    second_moment_decay: float = 0.999
    batch_size: int = 20
    lr_multiplier: float = 1.0
    seed: int = 0
    loss_beta_sq: float = 0.3

    def validate(self) -> None:
        for name in ("first_moment_decay", "second_moment_decay"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidArgument(f"{name} must be in [0, 1)")
        if not self.base_lr > 0:
            raise InvalidArgument("base_lr must be > 0")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")

    @property
    def lr(self) -> float:
        return self.base_lr * self.lr_multiplier


def _conv(cin, cout, stride=1, dilation=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class SaliencyNet(nn.Module):
    """Strided encoder, dilated bottleneck, skip-connected bilinear decoder, logistic output."""

    def __init__(self, config: NetConfig):
        super().__init__()
        config.validate()
        self.config = config
        w = config.base_width
        widths = [w * 2 ** min(i, 2) for i in range(config.encoder_depth + 1)]
        self.stem = _conv(3, widths[0])
        self.down = nn.ModuleList(_conv(widths[i], widths[i + 1], stride=2) for i in range(config.encoder_depth))
        self.dilated = nn.Sequential(*[_conv(widths[-1], widths[-1], dilation=2) for _ in range(config.dilated_blocks)])
        self.up = nn.ModuleList(
            _conv(widths[i + 1] + widths[i], widths[i]) for i in reversed(range(config.encoder_depth))
        )
        self.head = nn.Conv2d(widths[0], 1, 1)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        skips = [self.stem(x)]
        for layer in self.down:
            skips.append(layer(skips[-1]))
        h = self.dilated(skips.pop())
        for layer in self.up:
            s = skips.pop()
            h = F.interpolate(h, size=s.shape[-2:], mode="bilinear", align_corners=False)
            h = layer(torch.cat([h, s], 1))
        return self.head(h)[:, 0]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x)).clamp(OUTPUT_EPS, 1 - OUTPUT_EPS)


def init_network(config: NetConfig) -> SaliencyNet:
    """Build a network with He-uniform (fan-in) weights drawn from ``config.seed``."""
    config.validate()
    net = SaliencyNet(config)
    gen = torch.Generator().manual_seed(int(config.seed))
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1] // m.groups
                bound = math.sqrt(6.0 / fan_in)
                m.weight.copy_(torch.rand(m.weight.shape, generator=gen) * 2 * bound - bound)
                m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()
    return net


def param_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def params_digest(net: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for k, v in net.state_dict().items():
        h.update(k.encode())
        h.update(v.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def image_tensor(images: Sequence[Image]) -> torch.Tensor:
    return torch.from_numpy(np.stack([im.pixels for im in images]).transpose(0, 3, 1, 2).copy())


def _padded_forward(net: SaliencyNet, x: torch.Tensor) -> torch.Tensor:
    mult = 2 ** net.config.encoder_depth
    h, w = x.shape[-2:]
    ph, pw = (-h) % mult, (-w) % mult
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    return net(x)[..., :h, :w]


def forward(net: SaliencyNet, image: Image) -> SaliencyMap:
    """Inference-mode prediction; images not divisible by ``2**encoder_depth`` are padded and cropped."""
    if not isinstance(image, Image):
        raise InvalidArgument("forward expects an Image")
    was_training = net.training
    net.eval()
    with torch.no_grad():
        out = _padded_forward(net, image_tensor([image]))[0].numpy()
    net.train(was_training)
    return SaliencyMap(out.astype(np.float32), source="network")


def predict_batch(net: SaliencyNet, images: Sequence[Image], batch_size: int = 50) -> list[np.ndarray]:
    net.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            out.extend(_padded_forward(net, image_tensor(images[i:i + batch_size])).numpy())
    return [o.astype(np.float32) for o in out]


def _target_tensor(ids, targets) -> torch.Tensor:
    rows = []
    for i in ids:
        t = targets[i]
        if isinstance(t, BinaryMask):
            t = [t]
        rows.append(np.stack([m.values for m in t]).astype(np.float32))
    n = {r.shape[0] for r in rows}
    if len(n) != 1:
        raise InvalidArgument("every sample needs the same number of targets")
    return torch.from_numpy(np.stack(rows))


Hook = Callable[[str, SaliencyMap], None]


def train_epochs(net: SaliencyNet, dataset: Dataset, targets: Mapping[str, BinaryMask | Sequence[BinaryMask]],
                 optim: OptimConfig, epochs: int, on_forward: Hook | None = None,
                 history: list | None = None, optimizer: torch.optim.Optimizer | None = None) -> SaliencyNet:
    """Minimize the mean F-beta loss (averaged over each sample's targets) for ``epochs`` passes.

    The sample order is reshuffled every epoch from ``optim.seed``. ``on_forward``
    sees each sample's training-pass prediction once per epoch. Per-epoch mean
    losses are appended to ``history`` when given.
    """
    optim.validate()
    if epochs < 0:
        raise InvalidArgument("epochs must be >= 0")
    ids = dataset.ids
    missing = [i for i in ids if i not in targets]
    if missing:
        raise InvalidArgument(f"{len(missing)} samples have no target, e.g. {missing[0]!r}")
    if epochs == 0 or not ids:
        return net
    images = image_tensor([s.image for s in dataset])
    tgt = _target_tensor(ids, targets)
    if tgt.shape[-2:] != images.shape[-2:]:
        raise InvalidArgument("targets do not match image dimensions")
    bs = min(optim.batch_size, len(ids))
    if optimizer is None:
        optimizer = torch.optim.Adam(net.parameters(), lr=optim.lr,
                                     betas=(optim.first_moment_decay, optim.second_moment_decay))
    rng = np.random.default_rng(optim.seed)
    net.train()
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(len(ids))
        total = 0.0
        for b0 in range(0, len(ids), bs):
            idx = order[b0:b0 + bs]
            x = images[idx]
            y = tgt[idx]
            pred = _padded_forward(net, x)
            per_target = torch_fbeta_loss(pred[:, None].expand_as(y).reshape(-1, *y.shape[-2:]),
                                          y.reshape(-1, *y.shape[-2:]), beta_sq=optim.loss_beta_sq)
            loss = per_target.view(len(idx), -1).mean()
            lv = float(loss.detach())
            trace.append(lv)
            if not math.isfinite(lv):
                diag = {"epoch": epoch, "batch": b0 // bs, "loss_trace": trace[-50:]}
                raise TrainingAborted(f"non-finite loss at epoch {epoch}, batch {b0 // bs}", diag)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += lv * len(idx)
            if on_forward is not None:
                out = pred.detach().numpy()
                for j, k in enumerate(idx):
                    on_forward(ids[k], SaliencyMap(out[j], source="network"))
        if history is not None:
            history.append(total / len(ids))
        log.debug("epoch %d loss %.5f", epoch, total / len(ids))
    return net


def save_checkpoint(path, net: SaliencyNet, optimizer=None, epoch: int = 0, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "config": asdict(net.config),
        "state_dict": net.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "extra": extra or {},
    }, path)


def load_checkpoint(path) -> tuple[SaliencyNet, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    net = SaliencyNet(NetConfig(**blob["config"]))
    net.load_state_dict(blob["state_dict"])
    net.eval()
    return net, blob
