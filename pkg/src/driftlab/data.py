"""Synthetic glyph domains, corruptions, quarter-turn rotations and file IO."""
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, GenerationError, ShapeError, UsageError
from .rng import stream

ROLES = ("source_train", "source_test", "target", "target_samples")

CORRUPTIONS = ("none", "gaussian_noise", "impulse_noise", "blur", "contrast", "brightness", "pixelate")

GAUSSIAN_SIGMA = (0.05, 0.10, 0.15, 0.20, 0.30)
IMPULSE_FRACTION = (0.01, 0.03, 0.05, 0.10, 0.15)
CONTRAST_FACTOR = (0.75, 0.60, 0.45, 0.30, 0.15)
BRIGHTNESS_OFFSET = (0.10, 0.20, 0.30, 0.40, 0.50)
PIXELATE_BLOCK = (2, 2, 4, 4, 8)

# Stroke endpoints in unit coordinates (x to the right, y downwards).
GLYPH_STROKES = {
    "L": [((0.30, 0.15), (0.30, 0.85)), ((0.30, 0.85), (0.75, 0.85))],
    "F": [((0.30, 0.15), (0.30, 0.85)), ((0.30, 0.15), (0.75, 0.15)), ((0.30, 0.50), (0.62, 0.50))],
    "P": [((0.30, 0.15), (0.30, 0.85)), ((0.30, 0.15), (0.70, 0.15)),
          ((0.70, 0.15), (0.70, 0.50)), ((0.70, 0.50), (0.30, 0.50))],
    "7": [((0.25, 0.15), (0.75, 0.15)), ((0.75, 0.15), (0.40, 0.85))],
    "J": [((0.40, 0.15), (0.80, 0.15)), ((0.65, 0.15), (0.65, 0.85)),
          ((0.65, 0.85), (0.30, 0.85)), ((0.30, 0.85), (0.30, 0.65))],
    "r": [((0.35, 0.35), (0.35, 0.85)), ((0.35, 0.50), (0.55, 0.35)), ((0.55, 0.35), (0.75, 0.35))],
}
DEFAULT_GLYPHS = ("L", "F", "P", "7", "J", "r")


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    role: str = "source_train"
    n_classes: int = 0

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or self.images.shape[1] != self.images.shape[2]:
            raise ShapeError(f"images must be N x S x S, got {self.images.shape}")
        if len(self.images) == 0:
            raise UsageError("dataset must not be empty")
        if self.labels.shape != (len(self.images),):
            raise ShapeError(f"{len(self.images)} images but labels of shape {self.labels.shape}")
        if self.role not in ROLES:
            raise UsageError(f"unknown dataset role {self.role!r}")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise UsageError("pixels must lie in [0, 1]")
        if not self.n_classes:
            self.n_classes = int(self.labels.max()) + 1
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise UsageError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def size(self):
        return self.images.shape[1]

    def subset(self, idx, role=None):
        return Dataset(self.images[idx], self.labels[idx], role or self.role, self.n_classes)


@dataclass(frozen=True)
class DomainSpec:
    corruption: str = "none"
    severity: int = 5

    def __post_init__(self):
        if self.corruption not in CORRUPTIONS:
            raise UsageError(f"unknown corruption {self.corruption!r}; valid: {', '.join(CORRUPTIONS)}")
        if self.corruption != "none" and not 1 <= int(self.severity) <= 5:
            raise UsageError(f"severity must be in 1..5, got {self.severity}")

    @property
    def name(self):
        return self.corruption if self.corruption == "none" else f"{self.corruption}-{self.severity}"


@dataclass
class GlyphSpec:
    image_size: int = 16
    samples_per_class: int = 250
    glyphs: tuple = DEFAULT_GLYPHS
    max_shift: int = 2
    scales: tuple = (0.8, 1.0, 1.2)
    intensity: tuple = (0.7, 1.0)
    stroke_width: float = 1.2
    seed: int = 0
    strokes: dict = field(default_factory=lambda: dict(GLYPH_STROKES))

    @property
    def n_classes(self):
        return len(self.glyphs)


# --- rendering --------------------------------------------------------------

def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def render_glyph(strokes, size, shift=(0.0, 0.0), scale=1.0, intensity=1.0, width=1.2):
    """Rasterize strokes; a pixel is lit when its centre is within width/2 of a stroke."""
    centre = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = np.full((size, size), np.inf)
    for a, b in strokes:
        pa = [(c * (size - 1) - centre) * scale + centre + s for c, s in zip(a, shift)]
        pb = [(c * (size - 1) - centre) * scale + centre + s for c, s in zip(b, shift)]
        dist = np.minimum(dist, _segment_distance(xs, ys, pa, pb))
    # one pixel of linear falloff keeps strokes anti-aliased
    img = np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0)
    return img * intensity


def prototypes(spec):
    return np.stack([render_glyph(spec.strokes[g], spec.image_size, width=spec.stroke_width)
                     for g in spec.glyphs])


def check_rotation_distinct(protos, names=None, threshold=0.05):
    """Raise unless every rotated prototype is far (L1) from every prototype.

    Compares rotate(P_i, q) with every P_j (including P_i itself) for
    q in {1, 2, 3}.  Returns the smallest distance found.
    """
    size = protos.shape[1]
    bound = threshold * size * size
    names = names or [str(i) for i in range(len(protos))]
    smallest = np.inf
    for i, p in enumerate(protos):
        for q in (1, 2, 3):
            rotated = rotate_quarter(p, q)
            for j, other in enumerate(protos):
                d = np.abs(rotated - other).sum()
                smallest = min(smallest, d)
                if d <= bound:
                    raise GenerationError(
                        f"glyph {names[i]!r} rotated by {q} quarter turns is within L1 {d:.2f} "
                        f"of glyph {names[j]!r} (needs > {bound:.2f})"
                    )
    return smallest


def generate_glyphs(spec=None):
    """Balanced, jittered glyph images split 80/20 into (train, test)."""
    spec = spec or GlyphSpec()
    if spec.samples_per_class < 5 or spec.samples_per_class % 5:
        raise UsageError("samples_per_class must be a positive multiple of 5 for an exact 80/20 split")
    missing = [g for g in spec.glyphs if g not in spec.strokes]
    if missing:
        raise UsageError(f"no strokes defined for glyphs {missing}")
    check_rotation_distinct(prototypes(spec), list(spec.glyphs))

    n_test = spec.samples_per_class // 5
    train_x, train_y, test_x, test_y = [], [], [], []
    for label, glyph in enumerate(spec.glyphs):
        rng = stream(spec.seed, "glyphs", label)
        shifts = rng.integers(-spec.max_shift, spec.max_shift + 1, size=(spec.samples_per_class, 2))
        scales = rng.choice(np.asarray(spec.scales, dtype=np.float64), size=spec.samples_per_class)
        levels = rng.uniform(spec.intensity[0], spec.intensity[1], size=spec.samples_per_class)
        imgs = [render_glyph(spec.strokes[glyph], spec.image_size, tuple(map(float, s)), sc, lv,
                             spec.stroke_width)
                for s, sc, lv in zip(shifts, scales, levels)]
        test_x.extend(imgs[:n_test])
        train_x.extend(imgs[n_test:])
        test_y.extend([label] * n_test)
        train_y.extend([label] * (spec.samples_per_class - n_test))

    train = Dataset(np.clip(np.stack(train_x), 0, 1), np.array(train_y), "source_train", spec.n_classes)
    test = Dataset(np.clip(np.stack(test_x), 0, 1), np.array(test_y), "source_test", spec.n_classes)
    return train, test


# --- corruptions ------------------------------------------------------------

def _mean_filter3(img):
    size = img.shape[0]
    padded = np.pad(img, 1, mode="reflect")
    out = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + size, dx:dx + size]
    return out / 9.0


def _pixelate(img, block):
    size = img.shape[0]
    out = np.empty_like(img)
    for r in range(0, size, block):
        for c in range(0, size, block):
            out[r:r + block, c:c + block] = img[r:r + block, c:c + block].mean()
    return out


def corrupt_image(img, spec, rng):
    kind, level = spec.corruption, int(spec.severity) - 1
    if kind == "gaussian_noise":
        out = img + rng.normal(0.0, GAUSSIAN_SIGMA[level], size=img.shape)
    elif kind == "impulse_noise":
        hit = rng.random(img.shape) < IMPULSE_FRACTION[level]
        salt = rng.random(img.shape) < 0.5
        out = np.where(hit, salt.astype(np.float64), img)
    elif kind == "blur":
        out = img
        for _ in range(level + 1):
            out = _mean_filter3(out)
    elif kind == "contrast":
        mu = img.mean()
        out = (img - mu) * CONTRAST_FACTOR[level] + mu
    elif kind == "brightness":
        out = img + BRIGHTNESS_OFFSET[level]
    elif kind == "pixelate":
        out = _pixelate(img, PIXELATE_BLOCK[level])
    else:
        raise UsageError(f"unknown corruption {kind!r}; valid: {', '.join(CORRUPTIONS)}")
    return np.clip(out, 0.0, 1.0)


def corrupt(data, spec, seed=0):
    """Apply a corruption image by image; image ``i`` uses RNG stream (seed, i)."""
    if isinstance(spec, str):
        spec = DomainSpec(spec)
    if spec.corruption == "none":
        return Dataset(data.images.copy(), data.labels.copy(), data.role, data.n_classes)
    imgs = np.stack([corrupt_image(img, spec, stream(seed, "corrupt", i))
                     for i, img in enumerate(data.images)])
    return Dataset(imgs, data.labels.copy(), "target", data.n_classes)


# --- rotations and sampling ---------------------------------------------------

def rotate_quarter(image, q):
    """``q`` counter-clockwise quarter turns: for q=1, out[r][c] = in[c][S-1-r]."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ShapeError(f"rotation needs a square image, got shape {image.shape}")
    return np.rot90(image, int(q) % 4)


def sample_target_set(target, n, seed=0, balanced=False):
    """``n`` samples drawn without replacement.

    Uniform by default (no class balancing).  With ``balanced`` the draw is
    stratified: ``n // C`` per class, the remainder going to the lowest ids.
    """
    if not 1 <= n <= len(target):
        raise UsageError(f"cannot draw {n} samples from a set of {len(target)}")
    rng = stream(seed, "target-samples")
    if not balanced:
        idx = rng.choice(len(target), size=n, replace=False)
        return target.subset(idx, "target_samples")
    c = target.n_classes
    picks = []
    for label in range(c):
        want = n // c + (1 if label < n % c else 0)
        pool = np.flatnonzero(target.labels == label)
        if want > len(pool):
            raise UsageError(f"class {label} has {len(pool)} samples, balanced draw needs {want}")
        picks.append(rng.choice(pool, size=want, replace=False))
    idx = np.concatenate(picks)
    return target.subset(idx[rng.permutation(len(idx))], "target_samples")


# --- IDX files --------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path, magic, ndim):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX magic number", len(raw) if raw else 0)
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header", len(raw))
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise FormatError(f"{path}: truncated payload, need {count} bytes", len(raw))
    body = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return body.reshape(dims)


def load_idx(images_path, labels_path, role="source_train"):
    """Load an IDX image/label pair (e.g. MNIST-style) scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"image count {images.shape[0]} != label count {labels.shape[0]}", 4)
    if images.shape[1] != images.shape[2]:
        raise FormatError(f"IDX images must be square, got {images.shape[1:]}", 8)
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), role)


def write_idx(images_path, labels_path, images_u8, labels_u8):
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(">III", *images_u8.shape))
        fh.write(images_u8.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels_u8)))
        fh.write(labels_u8.tobytes())


# --- DLB1 container ----------------------------------------------------------
# header "DLB1" + S, C, N (little-endian uint32), then N*S*S float64 pixels,
# then N int32 labels.  A file that stops after the pixels is images-only.

DLB_MAGIC = b"DLB1"
_DLB_HEADER = struct.Struct("<4sIII")


def dataset_bytes(data, include_labels=True):
    n, size = len(data.images), data.size
    parts = [_DLB_HEADER.pack(DLB_MAGIC, size, data.n_classes, n),
             data.images.astype("<f8").tobytes()]
    if include_labels:
        parts.append(data.labels.astype("<i4").tobytes())
    return b"".join(parts)


def save_dataset(data, path, include_labels=True):
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(data, include_labels))


def _read_dlb_header(raw, path):
    if len(raw) < _DLB_HEADER.size:
        raise FormatError(f"{path}: truncated header", len(raw))
    magic, size, n_classes, n = _DLB_HEADER.unpack_from(raw)
    if magic != DLB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {DLB_MAGIC!r}", 0)
    if size == 0 or n == 0:
        raise FormatError(f"{path}: empty dataset header", 4)
    pix_end = _DLB_HEADER.size + 8 * n * size * size
    if len(raw) < pix_end:
        raise FormatError(f"{path}: truncated pixel block", len(raw))
    images = np.frombuffer(raw, dtype="<f8", count=n * size * size, offset=_DLB_HEADER.size)
    return size, n_classes, n, images.reshape(n, size, size).astype(np.float64), pix_end


def load_images(path):
    """Read only the header and pixel block of a container; labels are never parsed."""
    with open(path, "rb") as fh:
        raw = fh.read()
    _, _, _, images, _ = _read_dlb_header(raw, path)
    return images


def has_labels(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    _, _, n, _, pix_end = _read_dlb_header(raw, path)
    return len(raw) >= pix_end + 4 * n


def load_dataset(path, role="source_train"):
    with open(path, "rb") as fh:
        raw = fh.read()
    _, n_classes, n, images, pix_end = _read_dlb_header(raw, path)
    if len(raw) < pix_end + 4 * n:
        raise FormatError(f"{path}: label block missing or truncated", min(len(raw), pix_end))
    labels = np.frombuffer(raw, dtype="<i4", count=n, offset=pix_end).astype(np.int64)
    return Dataset(images, labels, role, n_classes)
