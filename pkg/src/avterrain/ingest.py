"""Loading and time-aligning synchronized audio and camera frames."""

from __future__ import annotations

import csv
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from scipy.io import wavfile

DEFAULT_WINDOW_SECONDS = 2.8
MIN_IMAGE_SIDE = 128

_MANIFEST_KEYS = {"audio_path", "sample_rate", "image_dir", "frame_rate", "gt_labels_path", "scene_name"}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class RunManifest:
    audio_path: Path
    sample_rate: int
    image_dir: Path
    frame_rate: float = 30.0
    gt_labels_path: Optional[Path] = None
    scene_name: str = ""

    def to_json(self, relative_to: Optional[Path] = None) -> dict:
        def rel(p):
            if p is None:
                return None
            if relative_to is not None:
                return os.path.relpath(p, relative_to)
            return str(p)

        return {
            "audio_path": rel(self.audio_path),
            "sample_rate": self.sample_rate,
            "image_dir": rel(self.image_dir),
            "frame_rate": self.frame_rate,
            "gt_labels_path": rel(self.gt_labels_path),
            "scene_name": self.scene_name,
        }


@dataclass(frozen=True)
class FrameRecord:
    frame_index: int
    timestamp: float
    audio_window: np.ndarray
    image: np.ndarray
    gt_label: Optional[int] = None


def natural_key(name: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name)]


def list_frames(image_dir: Path) -> list[Path]:
    paths = [p for p in Path(image_dir).iterdir() if p.suffix.lower() == ".png"]
    return sorted(paths, key=lambda p: natural_key(p.name))


@dataclass(frozen=True, eq=False)
class FrameStream:
    """Immutable frame-aligned view over one recording.

    Audio is held once; per-frame windows are cut on demand. ``images`` is either
    a uint8 array of shape (T, H, W, 3) or a list of PNG paths read lazily.
    """

    audio: np.ndarray
    sample_rate: int
    frame_rate: float
    window_samples: int
    images: object
    gt_labels: Optional[np.ndarray] = None
    scene_name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.images)

    def timestamp(self, t: int) -> float:
        return t / self.frame_rate

    def center_sample(self, t: int) -> int:
        return int(round(t / self.frame_rate * self.sample_rate))

    def audio_window(self, t: int) -> np.ndarray:
        if not 0 <= t < self.n_frames:
            raise IndexError(f"frame {t} out of range [0, {self.n_frames})")
        w = self.window_samples
        start = self.center_sample(t) - w // 2
        out = np.zeros(w)
        lo, hi = max(start, 0), min(start + w, len(self.audio))
        if hi > lo:
            out[lo - start:hi - start] = self.audio[lo:hi]
        return out

    def image_u8(self, t: int) -> np.ndarray:
        if isinstance(self.images, np.ndarray):
            return self.images[t]
        return read_png(self.images[t])

    def image(self, t: int) -> np.ndarray:
        return self.image_u8(t).astype(float) / 255.0

    def frame(self, t: int) -> FrameRecord:
        gt = None if self.gt_labels is None else int(self.gt_labels[t])
        return FrameRecord(t, self.timestamp(t), self.audio_window(t), self.image(t), gt)

    def __iter__(self):
        return (self.frame(t) for t in range(self.n_frames))


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr


def write_png(path, image_u8: np.ndarray) -> None:
    Image.fromarray(np.asarray(image_u8, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def read_wav(path) -> tuple[int, np.ndarray]:
    """Mono float audio in [-1, 1); multi-channel input is averaged."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(float) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(float) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(float) - 128.0) / 128.0
    else:
        data = data.astype(float)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return int(rate), data


def quantize_pcm16(audio: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(audio) * 32768.0), -32768, 32767).astype(np.int16)


def write_wav(path, sample_rate: int, audio: np.ndarray) -> None:
    wavfile.write(path, int(sample_rate), quantize_pcm16(audio))


def read_labels_csv(path) -> np.ndarray:
    """Read a ``frame_index,label`` CSV into a label array indexed by frame."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["frame_index", "label"]:
        raise ManifestError(f"{path}: expected header 'frame_index,label'")
    body = [r for r in rows[1:] if r]
    try:
        pairs = [(int(a), int(b)) for a, b in body]
    except ValueError as exc:
        raise ManifestError(f"{path}: non-integer entry ({exc})") from None
    idx = [a for a, _ in pairs]
    if idx != list(range(len(pairs))):
        raise ManifestError(f"{path}: frame_index must run 0..{len(pairs) - 1} in order")
    return np.array([b for _, b in pairs], dtype=int)


def write_labels_csv(path, labels: Sequence[int]) -> None:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty labeling")
    with open(path, "w", newline="") as fh:
        fh.write("frame_index,label\n")
        for t, lab in enumerate(labels):
            fh.write(f"{t},{int(lab)}\n")


def load_manifest(path) -> RunManifest:
    """Parse and validate a run manifest; relative paths resolve against its folder."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    unknown = set(raw) - _MANIFEST_KEYS
    missing = {"audio_path", "sample_rate", "image_dir"} - set(raw)
    if unknown:
        raise ManifestError(f"{path}: unknown keys {sorted(unknown)}")
    if missing:
        raise ManifestError(f"{path}: missing keys {sorted(missing)}")

    base = path.parent

    def resolve(p):
        return None if p is None else (base / p)

    sample_rate = raw["sample_rate"]
    frame_rate = raw.get("frame_rate", 30.0)
    if not isinstance(sample_rate, int) or isinstance(sample_rate, bool) or sample_rate <= 0:
        raise ManifestError(f"{path}: sample_rate must be a positive integer")
    if not isinstance(frame_rate, (int, float)) or isinstance(frame_rate, bool) or frame_rate <= 0:
        raise ManifestError(f"{path}: frame_rate must be positive")
    manifest = RunManifest(
        audio_path=resolve(raw["audio_path"]),
        sample_rate=sample_rate,
        image_dir=resolve(raw["image_dir"]),
        frame_rate=float(frame_rate),
        gt_labels_path=resolve(raw.get("gt_labels_path")),
        scene_name=str(raw.get("scene_name") or ""),
    )

    if not manifest.audio_path.is_file():
        raise ManifestError(f"audio file not found: {manifest.audio_path}")
    if not manifest.image_dir.is_dir():
        raise ManifestError(f"image directory not found: {manifest.image_dir}")
    n_images = len(list_frames(manifest.image_dir))
    if n_images == 0:
        raise ManifestError("empty image stream")
    if manifest.gt_labels_path is not None:
        if not manifest.gt_labels_path.is_file():
            raise ManifestError(f"labels file not found: {manifest.gt_labels_path}")
        n_labels = len(read_labels_csv(manifest.gt_labels_path))
        if n_labels != n_images:
            raise ManifestError(f"label/frame mismatch: {n_labels} labels for {n_images} frames")

    rate, audio = read_wav(manifest.audio_path)
    if rate != manifest.sample_rate:
        raise ManifestError(f"WAV rate {rate} Hz disagrees with manifest sample_rate {manifest.sample_rate}")
    needed = (n_images - 1) / manifest.frame_rate
    if len(audio) / rate < needed:
        raise ManifestError(
            f"audio lasts {len(audio) / rate:.3f} s but {n_images} frames need {needed:.3f} s"
        )
    return manifest


def align_streams(manifest: RunManifest, window_seconds: float = DEFAULT_WINDOW_SECONDS) -> FrameStream:
    """Build the frame-aligned stream; frame t's audio window is centered at t / frame_rate."""
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    rate, audio = read_wav(manifest.audio_path)
    frames = list_frames(manifest.image_dir)
    for p in frames[:1]:
        h, w = read_png(p).shape[:2]
        if min(h, w) < MIN_IMAGE_SIDE:
            raise ManifestError(f"{p.name}: {w}x{h} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")
    gt = read_labels_csv(manifest.gt_labels_path) if manifest.gt_labels_path else None
    return make_stream(audio, rate, manifest.frame_rate, frames, window_seconds, gt, manifest.scene_name)


def make_stream(audio, sample_rate, frame_rate, images, window_seconds=DEFAULT_WINDOW_SECONDS,
                gt_labels=None, scene_name="") -> FrameStream:
    window_samples = int(round(window_seconds * sample_rate))
    if window_samples < 1:
        raise ValueError("window shorter than one sample")
    audio = np.asarray(audio, dtype=float)
    stream = FrameStream(
        audio=audio,
        sample_rate=int(sample_rate),
        frame_rate=float(frame_rate),
        window_samples=window_samples,
        images=images,
        gt_labels=None if gt_labels is None else np.asarray(gt_labels, dtype=int),
        scene_name=scene_name,
    )
    half = window_samples // 2
    # every window must overlap at least half a window of real audio somewhere
    covered = [
        min(c - half + window_samples, len(audio)) - max(c - half, 0)
        for c in (stream.center_sample(t) for t in range(stream.n_frames))
    ]
    if max(covered, default=0) < window_samples / 2:
        raise ManifestError("audio shorter than half a window at every frame")
    return stream


def export_pseudo_labels(stream: FrameStream, labels, out_path) -> None:
    labels = np.asarray(getattr(labels, "labels", labels))
    if labels.size == 0:
        raise ValueError("empty labeling")
    if len(labels) != stream.n_frames:
        raise ValueError(f"{len(labels)} labels for {stream.n_frames} frames")
    write_labels_csv(out_path, labels)
