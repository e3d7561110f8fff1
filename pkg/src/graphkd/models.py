"""Block MLPs with tapped intermediate representations.

A BlockNet is a stack of blocks, each a sequence of affine+ReLU layers of a
fixed per-block width, followed by an affine head producing logits.  Taps
default to every block output plus the logits, so distillation losses see
one matrix per tap.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, add, matmul, relu

__all__ = [
    "BlockNet",
    "TapOutput",
    "build_blocknet",
    "forward_with_taps",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_digest",
]

CHECKPOINT_FORMAT_VERSION = 1
OUTPUT_TAP = "output"


@dataclass
class TapOutput:
    """Forward results: one matrix per block plus the logits."""

    taps: list[Tensor]
    logits: Tensor

    def for_taps(self, tap_set) -> list[Tensor]:
        """Select matrices for a tap set of 1-based block indices and/or "output"."""
        out = []
        for tap in tap_set:
            if tap == OUTPUT_TAP:
                out.append(self.logits)
            else:
                idx = int(tap)
                if not 1 <= idx <= len(self.taps):
                    raise ValueError(
                        f"tap {tap!r} outside the valid blocks 1..{len(self.taps)}"
                    )
                out.append(self.taps[idx - 1])
        return out


@dataclass
class BlockNet:
    input_dim: int
    classes: int
    depths: tuple[int, ...]
    widths: tuple[int, ...]
    blocks: list[list[tuple[Tensor, Tensor]]] = field(repr=False)
    head: tuple[Tensor, Tensor] = field(repr=False)
    tap_set: tuple = ()

    def parameters(self) -> list[Tensor]:
        params = []
        for block in self.blocks:
            for w, b in block:
                params.extend((w, b))
        params.extend(self.head)
        return params

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = bool(flag)
            if flag and p.grad is None:
                p.grad = np.zeros_like(p.data)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def tap_names(self) -> list[str]:
        return [f"block{i}" if i != OUTPUT_TAP else OUTPUT_TAP for i in self.tap_set]


def _default_taps(num_blocks: int) -> tuple:
    return tuple(range(1, num_blocks + 1)) + (OUTPUT_TAP,)


def _validate_arch(depths, widths, input_dim, classes):
    depths = tuple(int(d) for d in depths)
    widths = tuple(int(w) for w in widths)
    if len(depths) != len(widths):
        raise ValueError(
            f"depths and widths must have equal length, got {len(depths)} and {len(widths)}"
        )
    if not depths:
        raise ValueError("at least one block is required")
    if any(d < 1 for d in depths) or any(w < 1 for w in widths):
        raise ValueError(f"depths and widths must be positive, got {depths} and {widths}")
    if input_dim < 1 or classes < 2:
        raise ValueError(
            f"need input_dim >= 1 and classes >= 2, got {input_dim} and {classes}"
        )
    return depths, widths, int(input_dim), int(classes)


def build_blocknet(depths, widths, input_dim: int, classes: int, seed: int) -> BlockNet:
    """Construct a BlockNet with scaled-uniform fan-in initialization.

    Every weight and bias is drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    using a generator seeded with ``seed``, so identical arguments rebuild
    identical parameters.
    """
    depths, widths, input_dim, classes = _validate_arch(depths, widths, input_dim, classes)
    rng = np.random.default_rng(seed)

    def layer(fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
        bound = 1.0 / np.sqrt(fan_in)
        w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        b = Tensor(rng.uniform(-bound, bound, size=(1, fan_out)))
        return w, b

    blocks = []
    prev = input_dim
    for depth, width in zip(depths, widths):
        block = []
        for _ in range(depth):
            block.append(layer(prev, width))
            prev = width
        blocks.append(block)
    head = layer(prev, classes)
    return BlockNet(
        input_dim=input_dim,
        classes=classes,
        depths=depths,
        widths=widths,
        blocks=blocks,
        head=head,
        tap_set=_default_taps(len(blocks)),
    )


def forward_with_taps(net: BlockNet, batch) -> TapOutput:
    """Forward pass recording each block's output and the logits.

    With trainable parameters the tapped matrices stay on the gradient tape.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float64))
    if x.data.ndim != 2 or x.data.shape[1] != net.input_dim:
        raise ValueError(
            f"forward_with_taps: batch shape {x.data.shape} does not match "
            f"input_dim {net.input_dim}"
        )
    ones = Tensor(np.ones((x.data.shape[0], 1)))
    h = x
    taps = []
    for block in net.blocks:
        for w, b in block:
            h = relu(add(matmul(h, w), matmul(ones, b)))
        taps.append(h)
    w, b = net.head
    logits = add(matmul(h, w), matmul(ones, b))
    return TapOutput(taps=taps, logits=logits)


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian float64 weights
# in block order (each layer W then b, finally the head)


def save_checkpoint(net: BlockNet, path) -> None:
    path = Path(path)
    header = json.dumps(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "depths": list(net.depths),
            "widths": list(net.widths),
            "input_dim": net.input_dim,
            "classes": net.classes,
        },
        sort_keys=True,
    )
    with path.open("wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for p in net.parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> BlockNet:
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"checkpoint {path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ValueError(f"checkpoint {path}: malformed header ({err})") from err
    version = header.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"checkpoint {path}: format version {version!r} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    missing = {"depths", "widths", "input_dim", "classes"} - set(header)
    if missing:
        raise ValueError(f"checkpoint {path}: header missing fields {sorted(missing)}")

    net = build_blocknet(
        header["depths"], header["widths"], header["input_dim"], header["classes"], seed=0
    )
    payload = raw[newline + 1 :]
    expected = 8 * net.num_parameters()
    if len(payload) != expected:
        raise ValueError(
            f"checkpoint {path}: expected {expected} payload bytes, got {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    offset = 0
    for p in net.parameters():
        count = p.data.size
        p.data = flat[offset : offset + count].astype(np.float64).reshape(p.data.shape)
        offset += count
    return net


def checkpoint_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
