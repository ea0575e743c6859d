"""Paired HR/LR dataset construction and batch streaming.

``prepare_lr_sets`` reproduces the corpus construction procedure on any
directory of HR images: resize to 640x480 (bicubic) where needed, JPEG
compress once, then degrade by iterated 2x bicubic halvings down to the
requested scales.  Outputs are PNG, so regeneration is byte-identical.
The manifest is a plain-text key-value file with stable key order.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractViolation

__all__ = [
    "HR_SIZE",
    "DatasetManifest",
    "load_image",
    "save_image",
    "image_to_tensor",
    "tensor_to_image",
    "prepare_lr_sets",
    "batch_iter",
]

HR_SIZE = (640, 480)  # (width, height)
_SCALES = (2, 4, 8)
_IMAGE_EXTS = (".png", ".jpg", ".jpeg")
_SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# image <-> tensor

def load_image(path) -> np.ndarray:
    """Read an image file as (H,W,3) uint8 RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(path, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path)


def image_to_tensor(img: np.ndarray) -> np.ndarray:
    """(H,W,3) uint8 [0,255] -> (3,H,W) float32 in [-1,1], linear map."""
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ContractViolation(f"expected (H,W,3) image, got shape {a.shape}")
    t = a.astype(np.float32) * np.float32(2.0 / 255.0) - np.float32(1.0)
    return np.ascontiguousarray(t.transpose(2, 0, 1))


def tensor_to_image(t: np.ndarray) -> np.ndarray:
    """(3,H,W) [-1,1] -> (H,W,3) uint8, rounding half away from zero."""
    a = np.asarray(t)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ContractViolation(f"expected (3,H,W) tensor, got shape {a.shape}")
    scaled = (a.astype(np.float64) + 1.0) * 127.5
    # values are >= 0 after the shift, so floor(x + 0.5) rounds half away
    out = np.floor(scaled + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def _stack(paths, loader) -> np.ndarray:
    return np.stack([image_to_tensor(loader(p)) for p in paths])


# ---------------------------------------------------------------------------
# manifest

@dataclass
class DatasetManifest:
    root: str
    scales: tuple
    jpeg_quality: int
    seed: int
    # per split: list of dicts {"hr": relpath, "lr2": relpath, ...}
    splits: dict = field(default_factory=dict)
    rejects: list = field(default_factory=list)

    def pairs(self, split: str, scale: int):
        if split not in self.splits:
            raise ContractViolation(f"split {split!r} not in manifest "
                                    f"(has {sorted(self.splits)})")
        if scale not in self.scales:
            raise ContractViolation(f"scale {scale} not in manifest (has {self.scales})")
        root = Path(self.root)
        return [(root / e[f"lr{scale}"], root / e["hr"]) for e in self.splits[split]]

    def save(self, path) -> None:
        # stored root is relative to the manifest file, keeping datasets
        # relocatable and regeneration byte-identical across directories
        lines = [
            "manifest_version = 1",
            "root = .",
            f"scales = {','.join(str(s) for s in self.scales)}",
            f"jpeg_quality = {self.jpeg_quality}",
            f"seed = {self.seed}",
        ]
        for split in _SPLITS:
            entries = self.splits.get(split, [])
            lines.append(f"split.{split}.count = {len(entries)}")
            for i, e in enumerate(entries):
                lines.append(f"split.{split}.{i}.hr = {e['hr']}")
                for s in self.scales:
                    lines.append(f"split.{split}.{i}.lr{s} = {e[f'lr{s}']}")
        lines.append(f"reject.count = {len(self.rejects)}")
        for i, name in enumerate(self.rejects):
            lines.append(f"reject.{i} = {name}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        kv = {}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(),
                                     start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if " = " not in line:
                raise ContractViolation(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split(" = ", 1)
            kv[key.strip()] = value.strip()
        if kv.get("manifest_version") != "1":
            raise ContractViolation(f"{path}: unsupported manifest version")
        scales = tuple(int(s) for s in kv["scales"].split(","))
        root = Path(kv["root"])
        if not root.is_absolute():
            root = (Path(path).parent / root).resolve()
        m = cls(root=str(root), scales=scales,
                jpeg_quality=int(kv["jpeg_quality"]), seed=int(kv["seed"]))
        for split in _SPLITS:
            n = int(kv.get(f"split.{split}.count", 0))
            entries = []
            for i in range(n):
                e = {"hr": kv[f"split.{split}.{i}.hr"]}
                for s in scales:
                    e[f"lr{s}"] = kv[f"split.{split}.{i}.lr{s}"]
                entries.append(e)
            m.splits[split] = entries
        n_rej = int(kv.get("reject.count", 0))
        m.rejects = [kv[f"reject.{i}"] for i in range(n_rej)]
        return m

    def validate(self) -> None:
        """Re-stat every listed file and check its extents exactly."""
        root = Path(self.root)
        for split, entries in self.splits.items():
            for e in entries:
                for key, rel in e.items():
                    p = root / rel
                    if not p.is_file():
                        raise ContractViolation(f"manifest entry missing on disk: {p}")
                    with Image.open(p) as im:
                        w, h = im.size
                    if key == "hr":
                        want = HR_SIZE
                    else:
                        s = int(key.removeprefix("lr"))
                        want = (HR_SIZE[0] // s, HR_SIZE[1] // s)
                    if (w, h) != want:
                        raise ContractViolation(
                            f"{p}: extent {(w, h)} != expected {want} for {key} "
                            f"in split {split}"
                        )


# ---------------------------------------------------------------------------
# LR set generation

def _degrade_ladder(hr: Image.Image, jpeg_quality: int) -> dict[int, Image.Image]:
    """JPEG-compress once, then halve bicubically to the three LR sizes."""
    buf = io.BytesIO()
    hr.save(buf, format="JPEG", quality=jpeg_quality)
    buf.seek(0)
    img = Image.open(buf).convert("RGB")
    out = {}
    for s in _SCALES:
        img = img.resize((img.width // 2, img.height // 2), resample=Image.BICUBIC)
        out[s] = img
    return out


def prepare_lr_sets(hr_dir, out_dir, scales=(2, 4, 8), jpeg_quality=85,
                    seed=0, val_fraction=0.1) -> DatasetManifest:
    """Build paired HR/LR sets under ``out_dir`` and return the manifest.

    Images directly under ``hr_dir`` form the training pool, split
    deterministically (seeded shuffle) into train/val; an optional
    ``hr_dir/test`` subdirectory becomes the held-out test split.
    The manifest is also written to ``out_dir/manifest.txt``.
    """
    scales = tuple(sorted(set(int(s) for s in scales)))
    if not scales or not set(scales) <= set(_SCALES):
        raise ContractViolation(f"scales must be a non-empty subset of {_SCALES}, "
                                f"got {scales}")
    if not 1 <= int(jpeg_quality) <= 100:
        raise ContractViolation(f"jpeg_quality must be in [1,100], got {jpeg_quality}")
    hr_dir = Path(hr_dir)
    out_dir = Path(out_dir)
    pool = sorted(p for p in hr_dir.iterdir()
                  if p.is_file() and p.suffix.lower() in _IMAGE_EXTS)
    test_dir = hr_dir / "test"
    test_pool = sorted(p for p in test_dir.iterdir()
                       if p.is_file() and p.suffix.lower() in _IMAGE_EXTS) \
        if test_dir.is_dir() else []
    if not pool and not test_pool:
        raise ContractViolation(f"no images found in {hr_dir}")

    order = np.random.default_rng(seed).permutation(len(pool))
    n_val = int(round(val_fraction * len(pool)))
    val_idx = set(order[:n_val].tolist())
    assignment = [("val" if i in val_idx else "train", p) for i, p in enumerate(pool)]
    assignment += [("test", p) for p in test_pool]

    manifest = DatasetManifest(root=str(out_dir), scales=scales,
                               jpeg_quality=int(jpeg_quality), seed=int(seed),
                               splits={s: [] for s in _SPLITS})
    for split in _SPLITS:
        (out_dir / split / "hr").mkdir(parents=True, exist_ok=True)
        for s in scales:
            (out_dir / split / f"lr_{s}x").mkdir(parents=True, exist_ok=True)

    seen = set()
    for split, src in assignment:
        if (split, src.stem) in seen:
            raise ContractViolation(
                f"duplicate image stem {src.stem!r} in split {split!r}: outputs "
                f"would overwrite each other"
            )
        seen.add((split, src.stem))
        try:
            with Image.open(src) as im:
                hr = im.convert("RGB")
                if hr.size != HR_SIZE:
                    hr = hr.resize(HR_SIZE, resample=Image.BICUBIC)
                ladder = _degrade_ladder(hr, int(jpeg_quality))
        except Exception:
            print(f"warning: skipping unreadable image {src}")
            manifest.rejects.append(src.name)
            continue
        stem = src.stem + ".png"
        hr_rel = f"{split}/hr/{stem}"
        hr.save(out_dir / hr_rel)
        entry = {"hr": hr_rel}
        for s in scales:
            rel = f"{split}/lr_{s}x/{stem}"
            ladder[s].save(out_dir / rel)
            entry[f"lr{s}"] = rel
        manifest.splits[split].append(entry)

    manifest.save(out_dir / "manifest.txt")
    return manifest


# ---------------------------------------------------------------------------
# batch stream

def batch_iter(manifest: DatasetManifest, split: str, scale: int,
               batch_size: int, seed: int, epochs: int = 1):
    """Yield (lr, hr) float32 batches in [-1,1], NCHW.

    Pairs are reshuffled each epoch from a deterministic seed; the final
    short batch of an epoch is emitted.
    """
    if batch_size < 1:
        raise ContractViolation(f"batch_size must be >= 1, got {batch_size}")
    pairs = manifest.pairs(split, scale)
    if not pairs:
        raise ContractViolation(f"split {split!r} is empty")
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(pairs), batch_size):
            chunk = [pairs[i] for i in order[start : start + batch_size]]
            for lr_path, hr_path in chunk:
                if not Path(lr_path).is_file() or not Path(hr_path).is_file():
                    missing = lr_path if not Path(lr_path).is_file() else hr_path
                    raise ContractViolation(f"dataset file missing: {missing}")
            lr = _stack([c[0] for c in chunk], load_image)
            hr = _stack([c[1] for c in chunk], load_image)
            yield lr, hr
