"""U-net checkpoint serialization.

Layout: an ASCII directory followed by one little-endian float32 blob.

    UNET1
    config in_channels=<i> n_classes=<k> depth=<d> base_channels=<b>
    param <name> <dim> <dim> ...
    buffer <name> <dim> ...
    end
    <payload: all tensors concatenated in directory order>

The directory order is the network's canonical parameter order, so a
checkpoint also documents the layer layout.
"""

from __future__ import annotations

import numpy as np

from ..errors import VolumeFormatError
from .unet import UNet, UNetConfig

__all__ = ["save_checkpoint", "load_checkpoint"]

MAGIC = "UNET1"


def save_checkpoint(path, net: UNet) -> None:
    cfg = net.config
    lines = [
        MAGIC,
        "config "
        f"in_channels={cfg.in_channels} n_classes={cfg.n_classes} "
        f"depth={cfg.depth} base_channels={cfg.base_channels}",
    ]
    tensors: list[np.ndarray] = []
    for kind, pairs in (("param", net.named_parameters()), ("buffer", net.named_buffers())):
        for name, arr in pairs:
            dims = " ".join(str(d) for d in arr.shape)
            lines.append(f"{kind} {name} {dims}".rstrip())
            tensors.append(np.ascontiguousarray(arr, dtype="<f4"))
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for t in tensors:
            fh.write(t.tobytes())


def load_checkpoint(path) -> UNet:
    with open(path, "rb") as fh:
        raw = fh.read()

    # directory is everything up to and including the "end\n" line
    marker = b"\nend\n"
    pos = raw.find(marker)
    if not raw.startswith(MAGIC.encode("ascii") + b"\n") or pos < 0:
        raise VolumeFormatError(f"{path}: not a {MAGIC} checkpoint")
    directory = raw[: pos + len(marker)].decode("ascii").splitlines()
    payload = raw[pos + len(marker) :]

    config = None
    entries: list[tuple[str, str, tuple[int, ...]]] = []
    for line in directory[1:-1]:
        parts = line.split()
        if parts[0] == "config":
            kv = dict(p.split("=", 1) for p in parts[1:])
            config = UNetConfig(
                in_channels=int(kv["in_channels"]),
                n_classes=int(kv["n_classes"]),
                depth=int(kv["depth"]),
                base_channels=int(kv["base_channels"]),
            )
        elif parts[0] in ("param", "buffer"):
            entries.append((parts[0], parts[1], tuple(int(d) for d in parts[2:])))
        else:
            raise VolumeFormatError(f"{path}: unrecognized directory line {line!r}")
    if config is None:
        raise VolumeFormatError(f"{path}: checkpoint missing config line")

    expected = sum(int(np.prod(shape, dtype=np.int64)) for _, _, shape in entries) * 4
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{path}: payload is {len(payload)} bytes, directory implies {expected}"
        )

    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    offset = 0
    for kind, name, shape in entries:
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        (params if kind == "param" else buffers)[name] = arr.astype(np.float32)

    net = UNet(config, np.random.default_rng(0))
    net.load_named_arrays(params, buffers)
    return net
