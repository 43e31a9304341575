"""Dataset ingestion, synthetic image streams, sample grids, checkpoints.

Images flow through the package as float32 [B, 3, 32, 32] tensors in
[-1, 1]. Byte pixels map through x / 127.5 - 1. Datasets iterate
deterministically given their seed and expose a small state dict so a
checkpoint can resume mid-epoch.

Checkpoints are a versioned binary container: an 8-byte magic, a little
endian version and manifest length, a canonical-JSON manifest (which also
indexes the tensor payloads), then the raw little-endian tensor bytes in
sorted name order. Writing the result of a load reproduces the file byte
for byte.
"""

import json
import math
import struct
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_SIZE = 32
_CIFAR_PIXELS = 3 * IMAGE_SIZE * IMAGE_SIZE

GRID_COLUMNS = 8
GRID_MAX_IMAGES = 64

CHECKPOINT_MAGIC = b"FCGANCK1"
CHECKPOINT_VERSION = 1
_ALLOWED_DTYPES = ("<f4", "<f8", "<i8", "|u1")


class CheckpointVersionError(Exception):
    """Raised when a checkpoint's format version is not supported."""


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    """uint8 pixels -> float32 in [-1, 1]."""
    return pixels.astype(np.float32) / 127.5 - 1.0


def from_unit_range(images: np.ndarray) -> np.ndarray:
    """float images in [-1, 1] -> uint8 pixels (rounded, clipped)."""
    return np.clip(np.rint((images + 1.0) * 127.5), 0, 255).astype(np.uint8)


def read_cifar_binary(path, label_bytes: int = 1) -> np.ndarray:
    """Decode one CIFAR binary batch file to uint8 [N, 3, 32, 32].

    Records are `label_bytes` label bytes followed by 3072 pixel bytes in
    row-major R, G, B planes. Any trailing partial record is an error.
    """
    raw = Path(path).read_bytes()
    record = label_bytes + _CIFAR_PIXELS
    if len(raw) == 0 or len(raw) % record != 0:
        raise ValueError(
            f"{path}: size {len(raw)} is not a multiple of the {record}-byte record")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
    return data[:, label_bytes:].reshape(-1, 3, IMAGE_SIZE, IMAGE_SIZE)


def _load_cifar_dir(directory, filenames, label_bytes, expected_total):
    batches = []
    for name in filenames:
        path = Path(directory) / name
        if not path.exists():
            raise FileNotFoundError(f"missing CIFAR batch file: {path}")
        batches.append(read_cifar_binary(path, label_bytes))
    images = np.concatenate(batches, axis=0)
    if images.shape[0] != expected_total:
        raise ValueError(
            f"expected {expected_total} training records, found {images.shape[0]}")
    return to_unit_range(images)


def load_cifar10(directory) -> "ArrayDataset":
    names = [f"data_batch_{i}.bin" for i in range(1, 6)]
    return ArrayDataset(_load_cifar_dir(directory, names, 1, 50000), source=str(directory))


def load_cifar100(directory) -> "ArrayDataset":
    # CIFAR-100 records carry coarse+fine label bytes; both are discarded.
    return ArrayDataset(_load_cifar_dir(directory, ["train.bin"], 2, 50000),
                        source=str(directory))


def load_png_folder(directory) -> "ArrayDataset":
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no .png files in {directory}")
    images = []
    for path in paths:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"))
        if arr.shape[:2] != (IMAGE_SIZE, IMAGE_SIZE):
            raise ValueError(f"{path}: expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {arr.shape[:2]}")
        images.append(arr.transpose(2, 0, 1))
    return ArrayDataset(to_unit_range(np.stack(images)), source=str(directory))


class ArrayDataset:
    """Finite image set with seeded epoch shuffling."""

    def __init__(self, images: np.ndarray, source: str = "array", seed: int = 0):
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected [N, 3, H, W], got {images.shape}")
        if not np.isfinite(images).all():
            raise ValueError("dataset contains non-finite pixels")
        if images.min() < -1.0 or images.max() > 1.0:
            raise ValueError("dataset pixels must lie in [-1, 1]")
        self.images = images
        self.source = source
        self.seed = seed
        self.image_size = images.shape[2]
        self._epoch = 0
        self._pos = 0
        self._order = self._epoch_order(0)

    def __len__(self):
        return self.images.shape[0]

    def _epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng((self.seed, epoch)).permutation(len(self))

    def next_batch(self, batch_size: int) -> torch.Tensor:
        picked = []
        while batch_size > 0:
            take = min(batch_size, len(self) - self._pos)
            picked.append(self._order[self._pos:self._pos + take])
            self._pos += take
            batch_size -= take
            if self._pos == len(self):
                self._epoch += 1
                self._pos = 0
                self._order = self._epoch_order(self._epoch)
        return torch.from_numpy(self.images[np.concatenate(picked)])

    def sample(self, n: int, seed: int) -> torch.Tensor:
        """Iterator-independent deterministic draw without replacement."""
        if n > len(self):
            raise ValueError(f"cannot draw {n} samples from {len(self)} images")
        idx = np.random.default_rng((self.seed, seed, 0xE7A1)).choice(len(self), n, replace=False)
        return torch.from_numpy(self.images[idx])

    def state(self) -> dict:
        return {"kind": "array", "epoch": self._epoch, "pos": self._pos}

    def restore(self, state: dict) -> None:
        self._epoch = int(state["epoch"])
        self._pos = int(state["pos"])
        self._order = self._epoch_order(self._epoch)


_BLOB_SALT = 0xB10B
_STRIPE_SALT = 0x57A1


class SyntheticDataset:
    """Procedurally infinite image stream; image(i) is a pure function of
    (seed, kind, i), so the iterator state is just the next index."""

    KINDS = ("gauss-blobs", "stripes")

    def __init__(self, kind: str, params: dict | None = None, seed: int = 0,
                 image_size: int = IMAGE_SIZE):
        if kind not in self.KINDS:
            raise ValueError(f"unknown synthetic dataset kind {kind!r}")
        self.kind = kind
        self.seed = seed
        self.image_size = image_size
        defaults = ({"positions": 4, "sigma": 3.0, "jitter": 1.0} if kind == "gauss-blobs"
                    else {"orientations": 4, "width": 3.0})
        unknown = set(params or ()) - set(defaults)
        if unknown:
            raise ValueError(f"unknown {kind} parameters: {sorted(unknown)}")
        self.params = {**defaults, **(params or {})}
        self.source = format_synthetic_spec(kind, self.params)
        self._next_index = 0
        if kind == "gauss-blobs":
            count = int(self.params["positions"])
            side = math.ceil(math.sqrt(count))
            step = image_size / side
            centers = [((i % side) * step + step / 2, (i // side) * step + step / 2)
                       for i in range(count)]
            self._centers = np.array(centers, dtype=np.float64)

    def image(self, index: int) -> np.ndarray:
        salt = _BLOB_SALT if self.kind == "gauss-blobs" else _STRIPE_SALT
        rng = np.random.default_rng((self.seed, salt, index))
        size = self.image_size
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        if self.kind == "gauss-blobs":
            cx, cy = self._centers[rng.integers(len(self._centers))]
            jitter = float(self.params["jitter"])
            cx += rng.uniform(-jitter, jitter)
            cy += rng.uniform(-jitter, jitter)
            sigma = float(self.params["sigma"])
            bump = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma ** 2))
            plane = -1.0 + 2.0 * bump
        else:
            n_orient = int(self.params["orientations"])
            theta = math.pi * rng.integers(n_orient) / n_orient
            offset = rng.uniform(-size / 2, size / 2)
            dist = (xx - size / 2) * math.cos(theta) + (yy - size / 2) * math.sin(theta) - offset
            width = float(self.params["width"])
            plane = -1.0 + 2.0 * np.exp(-(dist / width) ** 2)
        return np.repeat(plane[None, :, :], 3, axis=0).astype(np.float32)

    def next_batch(self, batch_size: int) -> torch.Tensor:
        start = self._next_index
        self._next_index += batch_size
        return torch.from_numpy(
            np.stack([self.image(i) for i in range(start, self._next_index)]))

    def sample(self, n: int, seed: int) -> torch.Tensor:
        rng = np.random.default_rng((self.seed, seed, 0xE7A1))
        idx = rng.integers(0, 2 ** 31, size=n)
        return torch.from_numpy(np.stack([self.image(int(i)) for i in idx]))

    def state(self) -> dict:
        return {"kind": "synthetic", "next_index": self._next_index}

    def restore(self, state: dict) -> None:
        self._next_index = int(state["next_index"])


def parse_synthetic_spec(spec: str):
    """'gauss-blobs:positions=4,sigma=3.0' -> (kind, params)."""
    kind, _, rest = spec.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, _, value = item.partition("=")
            if not _:
                raise ValueError(f"malformed parameter {item!r} in dataset spec {spec!r}")
            params[key.strip()] = float(value) if "." in value or "e" in value else int(value)
    return kind, params


def format_synthetic_spec(kind: str, params: dict) -> str:
    body = ",".join(f"{k}={params[k]}" for k in sorted(params))
    return f"{kind}:{body}" if body else kind


def open_dataset(source: str, seed: int = 0):
    """Dispatch a dataset source string: a directory (CIFAR binaries or
    PNGs) or a synthetic spec such as 'gauss-blobs:positions=4'."""
    path = Path(source)
    if path.is_dir():
        if (path / "data_batch_1.bin").exists():
            ds = load_cifar10(path)
        elif (path / "train.bin").exists():
            ds = load_cifar100(path)
        else:
            ds = load_png_folder(path)
        ds.seed = seed
        ds.restore({"epoch": 0, "pos": 0})
        return ds
    kind, params = parse_synthetic_spec(source)
    return SyntheticDataset(kind, params, seed=seed)


def write_grid(images: torch.Tensor, path) -> None:
    """Tile up to 64 images into an 8-column PNG; short rows pad black."""
    arr = images.detach().cpu().numpy() if isinstance(images, torch.Tensor) else np.asarray(images)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ValueError(f"expected [N, 3, H, W] images, got {arr.shape}")
    n = arr.shape[0]
    if not 1 <= n <= GRID_MAX_IMAGES:
        raise ValueError(f"grid takes 1..{GRID_MAX_IMAGES} images, got {n}")
    pixels = from_unit_range(arr)
    height, width = arr.shape[2], arr.shape[3]
    cols = GRID_COLUMNS
    rows = math.ceil(n / cols)
    canvas = np.zeros((rows * height, cols * width, 3), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * height:(r + 1) * height, c * width:(c + 1) * width] = (
            pixels[i].transpose(1, 2, 0))
    Image.fromarray(canvas).save(path, format="PNG")


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, manifest: dict, tensors: dict) -> None:
    """Write the versioned container described in the module docstring."""
    entries = []
    payloads = []
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name]
        if isinstance(arr, torch.Tensor):
            arr = arr.detach().cpu().numpy()
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<").str if arr.dtype.str not in _ALLOWED_DTYPES else arr.dtype.str
        if dtype not in _ALLOWED_DTYPES:
            raise ValueError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        arr = arr.astype(dtype, copy=False)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    body = _canonical_json({"format_version": CHECKPOINT_VERSION,
                            "manifest": manifest, "tensors": entries})
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(body)))
        fh.write(body)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path):
    """Read a checkpoint; returns (manifest, {name: ndarray})."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version = struct.unpack("<I", raw[8:12])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {CHECKPOINT_VERSION}")
    body_len = struct.unpack("<Q", raw[12:20])[0]
    header = json.loads(raw[20:20 + body_len].decode("utf-8"))
    base = 20 + body_len
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        arr = np.frombuffer(raw[start:start + entry["nbytes"]], dtype=entry["dtype"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["manifest"], tensors
