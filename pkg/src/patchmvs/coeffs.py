"""Loadable coefficient sets for the optional learned-weights mode.

The engine's trainable blocks (pyramid extractor, offset heads, view-weight
/ cost-projection / spatial-weight stacks, refinement residual net) can run
from a coefficient file instead of their deterministic defaults.  The graph
topology per block is fixed and versioned here; a file supplies any subset
of blocks and the engine falls back to deterministic mode for the rest.

Binary layout (little-endian):

    magic   4 bytes  b"PMNW"
    u32     format version (currently 1)
    u32     tensor count
    per tensor:
        u16     name length, then that many UTF-8 bytes
        u8      ndim
        u32[n]  dims
        f32[*]  row-major payload

Version-1 graph registry (weight layouts are (out, in, kh, kw); biases are
(out,)).  Symbolic dims must resolve consistently across the whole file:
``C`` feature channels, ``G`` similarity groups, ``2K`` offset-head outputs.

    fpn.conv0   (8, 3, 3, 3) stride 1 + leaky    image trunk
    fpn.conv1   (8, 8, 3, 3) stride 2 + leaky
    fpn.conv2   (16, 8, 3, 3) stride 2 + leaky
    fpn.conv3   (32, 16, 3, 3) stride 2 + leaky
    fpn.lat1    (C, 8, 1, 1)   lateral merges; top-down is bilinear x2 + add
    fpn.lat2    (C, 16, 1, 1)
    fpn.lat3    (C, 32, 1, 1)
    prop{3,2,1}.conv0 (16, C, 3, 3) + leaky ; prop{k}.head (2K, 16, 3, 3)
    eval{3,2,1}.conv0 (16, C, 3, 3) + leaky ; eval{k}.head (2K, 16, 3, 3)
    vw.conv0    (8, G, 1, 1) + leaky ; vw.head   (1, 8, 1, 1) + sigmoid
    cost.conv0  (8, G, 1, 1) + leaky ; cost.head (1, 8, 1, 1) linear
    sw.conv0    (8, G, 1, 1) + leaky ; sw.head   (1, 8, 1, 1) + sigmoid
    ref.fd.conv0  (16, 1, 3, 3) + leaky          depth branch (half res)
    ref.fd.deconv (16, 16, 4, 4) stride-2 transposed conv + leaky
    ref.fi.conv0  (16, 3, 3, 3) + leaky          image branch (full res)
    ref.mix.conv0 (16, 32, 3, 3) + leaky
    ref.mix.conv1 (16, 16, 3, 3) + leaky
    ref.head      (1, 16, 3, 3) linear           residual on scaled depth
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FORMAT_MAGIC",
    "FORMAT_VERSION",
    "CoefficientError",
    "CoefficientMagicError",
    "CoefficientVersionError",
    "CoefficientTruncatedError",
    "CoefficientShapeError",
    "CoefficientSet",
    "load_coefficients",
    "save_coefficients",
    "validate_shapes",
]

FORMAT_MAGIC = b"PMNW"
FORMAT_VERSION = 1


class CoefficientError(ValueError):
    """Base class for coefficient-file problems."""


class CoefficientMagicError(CoefficientError):
    """File does not start with the expected magic bytes."""


class CoefficientVersionError(CoefficientError):
    """File uses an unsupported format version."""


class CoefficientTruncatedError(CoefficientError):
    """File ends before the promised tensor data."""


class CoefficientShapeError(CoefficientError):
    """A tensor is unknown or its shape contradicts the graph registry."""


# Registry entries: ints are exact dims, strings are symbols bound on first
# use and enforced everywhere after.  Symbols starting with "2K" must
# additionally resolve to positive even numbers.
_V1_REGISTRY: dict[str, tuple] = {}


def _register(name: str, weight_shape: tuple) -> None:
    _V1_REGISTRY[f"{name}.weight"] = weight_shape
    _V1_REGISTRY[f"{name}.bias"] = (weight_shape[0],)


_register("fpn.conv0", (8, 3, 3, 3))
_register("fpn.conv1", (8, 8, 3, 3))
_register("fpn.conv2", (16, 8, 3, 3))
_register("fpn.conv3", (32, 16, 3, 3))
_register("fpn.lat1", ("C", 8, 1, 1))
_register("fpn.lat2", ("C", 16, 1, 1))
_register("fpn.lat3", ("C", 32, 1, 1))
for _k in (1, 2, 3):
    _register(f"prop{_k}.conv0", (16, "C", 3, 3))
    _register(f"prop{_k}.head", (f"2K_prop{_k}", 16, 3, 3))
    _register(f"eval{_k}.conv0", (16, "C", 3, 3))
    _register(f"eval{_k}.head", (f"2K_eval{_k}", 16, 3, 3))
for _stack in ("vw", "cost", "sw"):
    _register(f"{_stack}.conv0", (8, "G", 1, 1))
    _register(f"{_stack}.head", (1, 8, 1, 1))
_register("ref.fd.conv0", (16, 1, 3, 3))
_register("ref.fd.deconv", (16, 16, 4, 4))
_register("ref.fi.conv0", (16, 3, 3, 3))
_register("ref.mix.conv0", (16, 32, 3, 3))
_register("ref.mix.conv1", (16, 16, 3, 3))
_register("ref.head", (1, 16, 3, 3))


@dataclass
class CoefficientSet:
    """Named float32 tensors for one fixed graph version."""

    version: int = FORMAT_VERSION
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def get(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise CoefficientShapeError(f"missing tensor {name!r}") from None

    def has_block(self, prefix: str) -> bool:
        """True if any tensor belongs to the given block (e.g. 'fpn')."""
        return any(n.startswith(prefix + ".") for n in self.tensors)


def validate_shapes(cset: CoefficientSet) -> None:
    """Check every tensor against the fixed graph registry.

    Raises CoefficientShapeError naming the first offending tensor: unknown
    names, wrong rank, wrong fixed dims, inconsistent symbolic dims, or odd
    offset-head widths.
    """
    if cset.version != FORMAT_VERSION:
        raise CoefficientVersionError(
            f"unsupported coefficient version {cset.version}"
        )
    bound: dict[str, int] = {}
    for name in sorted(cset.tensors):
        values = cset.tensors[name]
        spec = _V1_REGISTRY.get(name)
        if spec is None:
            raise CoefficientShapeError(f"unknown tensor {name!r}")
        if values.ndim != len(spec):
            raise CoefficientShapeError(
                f"tensor {name!r}: expected rank {len(spec)}, got {values.ndim}"
            )
        for axis, want in enumerate(spec):
            got = values.shape[axis]
            if isinstance(want, int):
                if got != want:
                    raise CoefficientShapeError(
                        f"tensor {name!r}: dim {axis} is {got}, expected {want}"
                    )
                continue
            if want.startswith("2K") and got % 2:
                raise CoefficientShapeError(
                    f"tensor {name!r}: offset head width {got} must be even"
                )
            if want in bound and bound[want] != got:
                raise CoefficientShapeError(
                    f"tensor {name!r}: dim {axis} is {got}, expected "
                    f"{bound[want]} (bound by another tensor)"
                )
            bound.setdefault(want, got)


def load_coefficients(path) -> CoefficientSet:
    """Read and validate a coefficient file."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != FORMAT_MAGIC:
        raise CoefficientMagicError(f"{path}: bad magic, not a coefficient file")
    if len(data) < 12:
        raise CoefficientTruncatedError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CoefficientVersionError(
            f"{path}: unsupported version {version}, expected {FORMAT_VERSION}"
        )

    tensors: dict[str, np.ndarray] = {}
    pos = 12
    for _ in range(count):
        if pos + 2 > len(data):
            raise CoefficientTruncatedError(f"{path}: truncated tensor record")
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + name_len + 1 > len(data):
            raise CoefficientTruncatedError(f"{path}: truncated tensor name")
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        ndim = data[pos]
        pos += 1
        if pos + 4 * ndim > len(data):
            raise CoefficientTruncatedError(f"{path}: truncated dims of {name!r}")
        dims = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        total = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        if pos + 4 * total > len(data):
            raise CoefficientTruncatedError(f"{path}: truncated payload of {name!r}")
        values = np.frombuffer(data, dtype="<f4", count=total, offset=pos)
        pos += 4 * total
        if name in tensors:
            raise CoefficientShapeError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = values.reshape(dims).astype(np.float32)

    cset = CoefficientSet(version=version, tensors=tensors)
    try:
        validate_shapes(cset)
    except CoefficientError as exc:
        raise type(exc)(f"{path}: {exc}") from None
    return cset


def save_coefficients(path, cset: CoefficientSet) -> None:
    """Write a coefficient set in the binary format (validates first)."""
    validate_shapes(cset)
    with open(path, "wb") as f:
        f.write(FORMAT_MAGIC)
        f.write(struct.pack("<II", cset.version, len(cset.tensors)))
        for name, values in cset.tensors.items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(values, dtype="<f4")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())
