"""Synthetic audio/visual terrain scenes with ground truth.

Each terrain has an audio signature (band-limited noise: center frequency,
bandwidth, level) and a visual signature (base colour plus pixel texture).
Two nuisance processes are layered on top:

* occlusions: a dark blob covers half of the image for 5-15 frames, which
  corrupts visual latents without touching the audio;
* grain shifts: the audio band center of the current terrain is rescaled by a
  factor in [0.8, 1.25] until the next shift or terrain change, splitting one
  terrain into several audio clusters while the appearance stays the same.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ingest import (DEFAULT_WINDOW_SECONDS, FrameStream, RunManifest, make_stream,
                     quantize_pcm16, write_labels_csv, write_png, write_wav)

OCCLUSION_FRAMES = (5, 15)
GRAIN_FACTOR = (0.8, 1.25)
SUITE_SIZE = 20
SUITE_FRAMES = (600, 2000)
SUITE_LONG = 1700               # suite scenes draw their length from [SUITE_LONG, SUITE_FRAMES[1]]
# (occlusion_rate, grain_shift_rate) per frame for the two halves of the suite
VISUAL_SCENE_RATES = (0.35, 0.0)
GRAIN_SCENE_RATES = (0.2, 0.005)
# narrow bands: a grain shift moves the band clear of its unshifted position
SUITE_BANDWIDTH = 0.01          # bandwidth as a fraction of the center frequency
SUITE_NOISE_FLOOR = 0.5


@dataclass(frozen=True)
class TerrainSignature:
    center_hz: float
    bandwidth_hz: float
    gain: float
    base_rgb: tuple
    texture_std: float


@dataclass
class SceneSpec:
    segments: list                 # [(terrain_id, n_frames), ...]
    terrains: dict                 # terrain_id -> TerrainSignature
    occlusion_rate: float = 0.0
    grain_shift_rate: float = 0.0
    seed: int = 0
    sample_rate: int = 16000
    frame_rate: float = 30.0
    image_size: int = 128
    name: str = "synthetic"
    noise_floor: float = 0.02      # broadband noise level relative to the terrain level
    occlusion_level: float = 0.05  # intensity of the occluding blob

    @property
    def n_frames(self) -> int:
        return sum(n for _, n in self.segments)

    def validate(self) -> None:
        if not self.segments:
            raise ValueError("scene has no segments")
        for tid, n in self.segments:
            if n < 1:
                raise ValueError(f"segment of terrain {tid} has {n} frames")
            if tid not in self.terrains:
                raise ValueError(f"segment references unknown terrain {tid}")
        for name in ("occlusion_rate", "grain_shift_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name}={rate} outside [0, 1]")
        nyquist = self.sample_rate / 2
        for tid, sig in self.terrains.items():
            if not 0 < sig.center_hz * GRAIN_FACTOR[1] < nyquist:
                raise ValueError(f"terrain {tid}: center {sig.center_hz} Hz too close to Nyquist")
            if sig.bandwidth_hz <= 0 or sig.gain <= 0 or sig.texture_std < 0:
                raise ValueError(f"terrain {tid}: invalid signature {sig}")
        if self.image_size < 128:
            raise ValueError("image_size must be at least 128")
        if self.sample_rate <= 0 or self.frame_rate <= 0:
            raise ValueError("rates must be positive")

    def to_json(self) -> dict:
        d = asdict(self)
        d["segments"] = [list(s) for s in self.segments]
        d["terrains"] = {str(k): asdict(v) for k, v in self.terrains.items()}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["segments"] = [(int(t), int(n)) for t, n in d["segments"]]
        d["terrains"] = {
            int(k): TerrainSignature(**{**v, "base_rgb": tuple(v["base_rgb"])})
            for k, v in d["terrains"].items()
        }
        return cls(**d)


def _band_noise(rng, n, sample_rate, center, bandwidth):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec *= np.exp(-0.5 * ((f - center) / bandwidth) ** 2)
    out = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


def _frame_states(spec: SceneSpec, grain_rng, occlusion_rng):
    """Per-frame terrain id, audio center scale and occlusion half (-1 = none)."""
    T = spec.n_frames
    terrain = np.concatenate([np.full(n, tid) for tid, n in spec.segments])
    scale = np.ones(T)
    occl = np.full(T, -1)
    t = 0
    for tid, n in spec.segments:
        current = 1.0
        for k in range(n):
            if grain_rng.random() < spec.grain_shift_rate:
                current = grain_rng.uniform(*GRAIN_FACTOR)
            scale[t + k] = current
        t += n
    t = 0
    while t < T:
        if occlusion_rng.random() < spec.occlusion_rate:
            length = int(occlusion_rng.integers(OCCLUSION_FRAMES[0], OCCLUSION_FRAMES[1] + 1))
            occl[t:t + length] = occlusion_rng.integers(4)
            t += length
        else:
            t += 1
    return terrain, scale, occl


def _render_audio(spec: SceneSpec, terrain, scale, rng) -> np.ndarray:
    T = len(terrain)
    bounds = np.round(np.arange(T + 1) * spec.sample_rate / spec.frame_rate).astype(int)
    audio = np.zeros(bounds[-1])
    change = np.flatnonzero((terrain[1:] != terrain[:-1]) | (scale[1:] != scale[:-1])) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [T]])
    for s, e in zip(starts, ends):
        sig = spec.terrains[int(terrain[s])]
        lo, hi = bounds[s], bounds[e]
        band = _band_noise(rng, hi - lo, spec.sample_rate, sig.center_hz * scale[s], sig.bandwidth_hz)
        audio[lo:hi] = sig.gain * (band + spec.noise_floor * rng.standard_normal(hi - lo))
    peak = np.max(np.abs(audio))
    if peak > 0.95:
        audio *= 0.95 / peak
    return quantize_pcm16(audio).astype(float) / 32768.0


def _render_images(spec: SceneSpec, terrain, occl, rng) -> np.ndarray:
    T, side = len(terrain), spec.image_size
    half = side // 2
    coarse = (side + 1) // 2
    images = np.empty((T, side, side, 3), dtype=np.uint8)
    for t in range(T):
        sig = spec.terrains[int(terrain[t])]
        tex = rng.standard_normal((coarse, coarse, 3), dtype=np.float32) * sig.texture_std
        tex = np.repeat(np.repeat(tex, 2, axis=0), 2, axis=1)[:side, :side]
        img = np.asarray(sig.base_rgb, dtype=np.float32) + tex
        if occl[t] >= 0:
            blob = spec.occlusion_level + 0.02 * rng.standard_normal((half, side, 3), dtype=np.float32)
            region = (slice(0, half), slice(half, side))[occl[t] % 2]
            if occl[t] < 2:
                img[region, :] = blob
            else:
                img[:, region] = blob.transpose(1, 0, 2)
        images[t] = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return images


@dataclass
class Scene:
    stream: FrameStream
    manifest: RunManifest
    spec: SceneSpec
    occlusion: np.ndarray = field(repr=False, default=None)
    grain_scale: np.ndarray = field(repr=False, default=None)


def generate_scene(spec: SceneSpec, window_seconds: float = DEFAULT_WINDOW_SECONDS):
    """Render a scene in memory. Returns (stream, manifest).

    The manifest uses the relative layout written by :func:`write_scene`
    (``audio.wav``, ``frames/``, ``labels.csv``).
    """
    scene = render_scene(spec, window_seconds)
    return scene.stream, scene.manifest


def render_scene(spec: SceneSpec, window_seconds: float = DEFAULT_WINDOW_SECONDS) -> Scene:
    spec.validate()
    # separate streams, so e.g. changing the occlusion rate leaves the audio untouched
    grain_rng, occlusion_rng, audio_rng, image_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(4))
    terrain, scale, occl = _frame_states(spec, grain_rng, occlusion_rng)
    audio = _render_audio(spec, terrain, scale, audio_rng)
    images = _render_images(spec, terrain, occl, image_rng)
    ids = sorted(spec.terrains)
    gt = np.array([ids.index(t) for t in terrain], dtype=int)
    stream = make_stream(audio, spec.sample_rate, spec.frame_rate, images, window_seconds, gt, spec.name)
    manifest = RunManifest(Path("audio.wav"), spec.sample_rate, Path("frames"), spec.frame_rate,
                           Path("labels.csv"), spec.name)
    return Scene(stream, manifest, spec, occl, scale)


def write_scene(stream: FrameStream, out_dir, spec: Optional[SceneSpec] = None) -> Path:
    """Write WAV, PNG frames, labels CSV and manifest.json; returns the manifest path."""
    out = Path(out_dir)
    frames = out / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    write_wav(out / "audio.wav", stream.sample_rate, stream.audio)
    width = max(6, len(str(stream.n_frames)))
    for t in range(stream.n_frames):
        write_png(frames / f"frame_{t:0{width}d}.png", stream.image_u8(t))
    manifest = {
        "audio_path": "audio.wav",
        "sample_rate": stream.sample_rate,
        "image_dir": "frames",
        "frame_rate": stream.frame_rate,
        "gt_labels_path": None,
        "scene_name": stream.scene_name,
    }
    if stream.gt_labels is not None:
        write_labels_csv(out / "labels.csv", stream.gt_labels)
        manifest["gt_labels_path"] = "labels.csv"
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if spec is not None:
        (out / "scene_spec.json").write_text(json.dumps(spec.to_json(), indent=2) + "\n")
    return out / "manifest.json"


# ---------------------------------------------------------------------------
# standard suite
# ---------------------------------------------------------------------------

_AUDIO_CENTERS = np.array([400.0, 900.0, 1800.0, 3300.0, 5600.0])
_COLOURS = np.array([
    [0.55, 0.35, 0.20], [0.30, 0.50, 0.25], [0.60, 0.60, 0.62], [0.25, 0.30, 0.55],
    [0.70, 0.55, 0.35], [0.45, 0.20, 0.25],
])


def _layout(rng, n_terrains: int, total: int) -> list:
    """Visit every terrain once, in random order, with segment lengths jittered around total / n."""
    order = [int(t) for t in rng.permutation(n_terrains)]
    weights = rng.uniform(0.8, 1.25, n_terrains)
    counts = np.floor(weights / weights.sum() * total).astype(int)
    counts[-1] += total - counts.sum()
    return [(t, int(n)) for t, n in zip(order, counts)]


def standard_suite(seed: int = 0) -> list[SceneSpec]:
    """Twenty scenes: ten dominated by visual occlusions, ten by audio grain shifts."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(SUITE_SIZE):
        visual_noise = i < SUITE_SIZE // 2
        n_terrains = int(rng.integers(2, 5))
        # long scenes keep the blurred stretch around each terrain change a small share
        total = int(rng.integers(SUITE_LONG, SUITE_FRAMES[1] + 1))
        centers = rng.choice(_AUDIO_CENTERS, n_terrains, replace=False) * rng.uniform(0.95, 1.05, n_terrains)
        colours = _COLOURS[rng.choice(len(_COLOURS), n_terrains, replace=False)]
        colours = np.clip(colours + rng.uniform(-0.04, 0.04, colours.shape), 0.05, 0.95)
        terrains = {
            t: TerrainSignature(
                center_hz=float(round(centers[t], 1)),
                bandwidth_hz=float(round(SUITE_BANDWIDTH * centers[t], 1)),
                gain=float(round(rng.uniform(0.15, 0.3), 3)),
                base_rgb=tuple(float(round(c, 3)) for c in colours[t]),
                texture_std=float(round(rng.uniform(0.08, 0.15), 3)),
            )
            for t in range(n_terrains)
        }
        specs.append(SceneSpec(
            segments=_layout(rng, n_terrains, total),
            terrains=terrains,
            occlusion_rate=VISUAL_SCENE_RATES[0] if visual_noise else GRAIN_SCENE_RATES[0],
            grain_shift_rate=VISUAL_SCENE_RATES[1] if visual_noise else GRAIN_SCENE_RATES[1],
            noise_floor=SUITE_NOISE_FLOOR,
            seed=int(rng.integers(2**31)),
            name=f"scene_{i:02d}_{'visual' if visual_noise else 'grain'}",
        ))
    return specs
