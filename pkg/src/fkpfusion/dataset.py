"""FKP-style image collections: manifest I/O and a seeded synthetic generator.

A dataset directory holds ``manifest.csv`` plus 8-bit grayscale PNG images.
The manifest has one row per image::

    subject,instance,session,sample,path

``path`` is relative to the manifest directory.  Records are kept in
ascending ``(subject, instance, session, sample)`` order, with instances
ordered RI, RM, LI, LM.
"""
from __future__ import annotations

import csv
import enum
import io
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (DanglingImageRef, DuplicateKey, InvalidConfig, IoFailure,
                     MalformedRow, MissingManifest)

MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = ("subject", "instance", "session", "sample", "path")


class FingerInstance(enum.Enum):
    """The four finger types; ``.code`` is the binary instance code."""

    RI = 0
    RM = 1
    LI = 2
    LM = 3

    @property
    def code(self):
        return self.value

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        try:
            return cls[str(text).strip().upper()]
        except KeyError:
            raise ValueError(
                f"unknown finger instance {text!r}; expected one of RI, RM, LI, LM"
            ) from None

    @classmethod
    def from_code(cls, code):
        return cls(int(code))

    def __str__(self):
        return self.name

    def __lt__(self, other):
        if not isinstance(other, FingerInstance):
            return NotImplemented
        return self.value < other.value


def canonical_instances(instances):
    """Sort instances in RI, RM, LI, LM order, parsing strings on the way."""
    return tuple(sorted(FingerInstance.parse(i) for i in instances))


@dataclass(frozen=True, order=True)
class SampleRecord:
    subject: int
    instance: FingerInstance
    session: int
    sample: int
    path: str = field(compare=False)

    @property
    def key(self):
        return (self.subject, self.instance, self.session, self.sample)


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    root: Path

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def keys(self):
        return [r.key for r in self.records]

    def image_path(self, record):
        return self.root / record.path

    def subjects(self):
        return sorted({r.subject for r in self.records})


def _parse_positive(text, line_no, name):
    try:
        value = int(text)
    except (TypeError, ValueError):
        raise MalformedRow(line_no, f"{name} is not an integer: {text!r}") from None
    if value < 1:
        raise MalformedRow(line_no, f"{name} must be positive, got {value}")
    return value


def parse_manifest(text, root):
    """Parse manifest CSV text; image paths are checked against ``root``."""
    root = Path(root)
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or tuple(c.strip() for c in rows[0]) != MANIFEST_HEADER:
        raise MalformedRow(1, "header must be " + ",".join(MANIFEST_HEADER))
    records = []
    seen = set()
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise MalformedRow(line_no, f"expected 5 fields, got {len(row)}")
        subject = _parse_positive(row[0], line_no, "subject")
        try:
            instance = FingerInstance.parse(row[1])
        except ValueError as exc:
            raise MalformedRow(line_no, str(exc)) from None
        session = _parse_positive(row[2], line_no, "session")
        if session not in (1, 2):
            raise MalformedRow(line_no, f"session must be 1 or 2, got {session}")
        sample = _parse_positive(row[3], line_no, "sample")
        path = row[4].strip()
        if not path:
            raise MalformedRow(line_no, "empty path")
        rec = SampleRecord(subject, instance, session, sample, path)
        if rec.key in seen:
            raise DuplicateKey(subject, instance.name, session, sample)
        seen.add(rec.key)
        if not (root / path).is_file():
            raise DanglingImageRef(str(root / path))
        records.append(rec)
    return DatasetManifest(tuple(sorted(records)), root)


def load_manifest(root):
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise MissingManifest(f"no {MANIFEST_NAME} in {root}")
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_manifest(text, root)


def format_manifest(records):
    lines = [",".join(MANIFEST_HEADER)]
    for r in sorted(records):
        lines.append(f"{r.subject},{r.instance.name},{r.session},{r.sample},{r.path}")
    return "\n".join(lines) + "\n"


def write_manifest(manifest, root=None):
    """Write ``manifest.csv`` under ``root`` (defaults to ``manifest.root``)."""
    root = Path(manifest.root if root is None else root)
    path = root / MANIFEST_NAME
    try:
        root.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(format_manifest(manifest.records))
    except OSError as exc:
        raise IoFailure(str(path), exc.strerror or str(exc)) from exc
    return path


def load_image(path):
    """Read a PNG as a float64 array in [0, 1] (8-bit grayscale on disk)."""
    with Image.open(path) as im:
        im.load()
        if im.mode == "I;16":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return arr


def to_uint8(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, img):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(to_uint8(img), mode="L").save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(str(path), exc.strerror or str(exc)) from exc


# ---------------------------------------------------------------------------
# synthetic data

LAYOUTS = ("roi", "finger")
FINGER_MIN_SIZE = (500, 300)


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic FKP generator.

    ``layout="roi"`` writes pre-cropped 220x110 style knuckle textures (run
    the ROI stage in bypass mode).  ``layout="finger"`` embeds the texture in
    a larger finger image with a dark background below the lower finger
    boundary and curved knuckle creases whose bending direction flips at the
    knuckle center; the default ROI pipeline recovers the crop from those.
    """

    num_subjects: int = 20
    samples_per_class: int = 6
    image_width: int = 220
    image_height: int = 110
    ridge_count: int = 6
    jitter_translation_px: float = 3.0
    jitter_rotation_deg: float = 1.0
    noise_sigma: float = 0.08
    brightness_jitter: float = 0.04
    contrast_jitter: float = 0.08
    seed: int = 42
    layout: str = "roi"

    def validate(self):
        for name in ("num_subjects", "samples_per_class", "image_width",
                     "image_height", "ridge_count"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidConfig(name, f"must be a positive integer, got {value!r}")
        for name in ("jitter_translation_px", "jitter_rotation_deg", "noise_sigma",
                     "brightness_jitter", "contrast_jitter"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InvalidConfig(name, f"must be non-negative, got {value!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidConfig("seed", "must fit in an unsigned 64-bit integer")
        if self.layout not in LAYOUTS:
            raise InvalidConfig("layout", f"must be one of {', '.join(LAYOUTS)}")
        if self.layout == "finger" and (self.image_width < FINGER_MIN_SIZE[0]
                                        or self.image_height < FINGER_MIN_SIZE[1]):
            raise InvalidConfig(
                "image_width" if self.image_width < FINGER_MIN_SIZE[0] else "image_height",
                "finger layout needs at least %dx%d pixels" % FINGER_MIN_SIZE)
        return self

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def session_split(samples_per_class):
    """Sample indices (1-based) of session 1 and session 2."""
    n1 = (samples_per_class + 1) // 2
    return list(range(1, n1 + 1)), list(range(n1 + 1, samples_per_class + 1))


def _class_rng(seed, subject, instance):
    return np.random.default_rng([int(seed), 0, subject, instance.code])


def _sample_rng(seed, subject, instance, sample):
    return np.random.default_rng([int(seed), 1, subject, instance.code, sample])


def _standardize(a):
    a = a - a.mean()
    sd = a.std()
    return a / sd if sd > 0 else a


def _texture(rng, height, width, ridge_count, freq_range):
    """Curved oriented gratings over smoothed noise, zero mean, unit std."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    lo, hi = freq_range
    tex = np.zeros((height, width))
    for _ in range(ridge_count):
        theta = rng.uniform(0.0, np.pi)
        freq = rng.uniform(lo, hi)
        phase = rng.uniform(0.0, 2 * np.pi)
        bend = rng.uniform(-0.004, 0.004) * (hi / 0.125)
        amp = rng.uniform(0.5, 1.0)
        u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        tex += amp * np.cos(2 * np.pi * freq * (u + bend * v * v) + phase)
    noise = ndimage.gaussian_filter(rng.standard_normal((height, width)),
                                    sigma=0.3 / hi, mode="wrap")
    return _standardize(_standardize(tex) + 0.6 * _standardize(noise))


def _warp(canvas, out_h, out_w, angle_rad, shift_xy):
    """Rotate about the output center and translate, bilinear sampling."""
    ch, cw = canvas.shape
    oy, ox = (ch - out_h) / 2.0, (cw - out_w) / 2.0
    yy, xx = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    cy, cx = (out_h - 1) / 2.0, (out_w - 1) / 2.0
    dx, dy = xx - cx - shift_xy[0], yy - cy - shift_xy[1]
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    src_x = c * dx + s * dy + cx + ox
    src_y = -s * dx + c * dy + cy + oy
    return ndimage.map_coordinates(canvas, [src_y, src_x], order=1, mode="nearest")


def _pad_for(config, width, height):
    half_diag = 0.5 * math.hypot(width, height)
    rot = math.radians(config.jitter_rotation_deg) * half_diag
    return int(math.ceil(config.jitter_translation_px + rot)) + 4


def finger_geometry(config, subject, instance):
    """Ground-truth knuckle center column and lower boundary row of a class.

    Both are in full-resolution pixel coordinates of an un-jittered sample.
    """
    rng = np.random.default_rng([int(config.seed), 2, subject, instance.code])
    w, h = config.image_width, config.image_height
    center = w / 2.0 + rng.uniform(-0.04, 0.04) * w
    boundary = 0.84 * h + rng.uniform(-0.02, 0.02) * h
    return center, boundary


def _roi_canvas(config, subject, instance):
    w, h = config.image_width, config.image_height
    pad = _pad_for(config, w, h)
    rng = _class_rng(config.seed, subject, instance)
    tex = _texture(rng, h + 2 * pad, w + 2 * pad, config.ridge_count, (1 / 16, 1 / 8))
    return np.clip(0.5 + 0.15 * tex, 0.0, 1.0)


def _finger_canvas(config, subject, instance):
    w, h = config.image_width, config.image_height
    pad = _pad_for(config, w, h)
    cw, ch = w + 2 * pad, h + 2 * pad
    rng = _class_rng(config.seed, subject, instance)
    center, boundary = finger_geometry(config, subject, instance)
    center += pad
    boundary += pad
    yy, xx = np.mgrid[0:ch, 0:cw].astype(np.float64)

    tex = _texture(rng, ch, cw, config.ridge_count, (1 / 32, 1 / 16))
    skin = 0.6 + 0.015 * tex

    # creases: one arc per grid cell, bending one way left of the center and
    # the other way right of it; mirrored cells share their shape parameters
    cell_w, cell_h = 72, 40
    ink = np.zeros((ch, cw))
    top = pad + 4
    bottom = boundary - 24
    k = 0
    while center - k * cell_w > pad or center + k * cell_w < cw - pad:
        y0 = top
        while y0 + cell_h <= bottom:
            half = rng.uniform(26.0, 32.0)
            sag = rng.uniform(10.0, 14.0)
            dx = (k + 0.5) * cell_w + rng.uniform(-3.0, 3.0)
            ay = y0 + cell_h / 2.0 + rng.uniform(-3.0, 3.0)
            weight = rng.uniform(0.7, 1.0)
            for sign in (-1.0, 1.0):
                u = (xx - (center + sign * dx)) / half
                curve = ay - sign * sag / 2.0 + sign * sag * u * u
                taper = np.clip(2.0 * (1.0 - u * u), 0.0, 1.0)
                shade = np.exp(-((yy - curve) / 2.2) ** 2)
                ink = np.maximum(ink, shade * taper * weight)
            y0 += cell_h
        k += 1
    skin = skin - 0.32 * ink

    finger = 1.0 / (1.0 + np.exp((yy - boundary) / 0.8))
    background = 0.12
    img = background + (skin - background) * finger
    return np.clip(img, 0.0, 1.0)


def render_sample(config, subject, instance, sample, canvas=None):
    """Render one sample image as float64 in [0, 1] (before quantization)."""
    instance = FingerInstance.parse(instance)
    if canvas is None:
        canvas = class_canvas(config, subject, instance)
    rng = _sample_rng(config.seed, subject, instance, sample)
    t = config.jitter_translation_px
    r = math.radians(config.jitter_rotation_deg)
    # draw every variate unconditionally so the stream layout never depends
    # on which magnitudes are zero
    shift = rng.uniform(-1.0, 1.0, size=2) * t
    angle = rng.uniform(-1.0, 1.0) * r
    contrast = 1.0 + rng.uniform(-1.0, 1.0) * config.contrast_jitter
    brightness = rng.uniform(-1.0, 1.0) * config.brightness_jitter
    noise = rng.standard_normal((config.image_height, config.image_width))
    img = _warp(canvas, config.image_height, config.image_width, angle, shift)
    img = (img - 0.5) * contrast + 0.5 + brightness + config.noise_sigma * noise
    return np.clip(img, 0.0, 1.0)


def class_canvas(config, subject, instance):
    instance = FingerInstance.parse(instance)
    if config.layout == "finger":
        return _finger_canvas(config, subject, instance)
    return _roi_canvas(config, subject, instance)


def image_relpath(subject, instance, session, sample):
    return f"images/s{subject:03d}_{instance.name}_{session}_{sample:02d}.png"


def generate_synthetic(config, out):
    """Write ``num_subjects x 4 x samples_per_class`` PNGs plus a manifest."""
    config = config.validate()
    out = Path(out)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(out), exc.strerror or str(exc)) from exc
    if not os.access(out, os.W_OK):
        raise IoFailure(str(out), "directory not writable")
    s1, s2 = session_split(config.samples_per_class)
    sessions = [(1, s) for s in s1] + [(2, s) for s in s2]
    records = []
    for subject in range(1, config.num_subjects + 1):
        for instance in FingerInstance:
            canvas = class_canvas(config, subject, instance)
            for session, sample in sessions:
                img = render_sample(config, subject, instance, sample, canvas)
                rel = image_relpath(subject, instance, session, sample)
                save_image(out / rel, img)
                records.append(SampleRecord(subject, instance, session, sample, rel))
    manifest = DatasetManifest(tuple(sorted(records)), out)
    write_manifest(manifest)
    return manifest
