"""End-to-end composition: stream -> descriptors -> latents -> pseudo-labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import clustering
from .clustering import ClusterResult, PseudoLabeling, cluster_latents
from .config import PipelineConfig, derive_seed
from .encoder import Encoder, fit_encoder, scale_latents, stream_image_vectors
from .evaluation import nmi
from .ingest import FrameStream, write_labels_csv
from .mfcc import mfcc_stream

log = logging.getLogger(__name__)


@dataclass
class Features:
    mfcc: np.ndarray     # (T, n_coeffs)
    image: np.ndarray    # (T, 3072)


@dataclass
class Latents:
    audio: np.ndarray
    visual: np.ndarray


def extract_features(stream: FrameStream, cfg: PipelineConfig) -> Features:
    return Features(mfcc_stream(stream, cfg.mfcc), stream_image_vectors(stream))


def fit_encoders(features: Features, cfg: PipelineConfig) -> tuple[Encoder, Encoder]:
    encs = []
    for name, data in (("audio", features.mfcc), ("visual", features.image)):
        ec = getattr(cfg, name)
        encs.append(fit_encoder(
            data, kind=ec.kind, hidden_dim=ec.hidden_dim, latent_dim=ec.latent_dim, steps=ec.steps,
            step_size=ec.step_size, seed=derive_seed(cfg.seed, f"encoder.{name}"),
            batch_size=ec.batch_size, normalize_inputs=ec.normalize_inputs,
        ))
    return encs[0], encs[1]


def encode_features(features: Features, audio_enc: Encoder, visual_enc: Encoder,
                    standardize: str = "global") -> Latents:
    za = audio_enc.encode(features.mfcc)
    zv = visual_enc.encode(features.image)
    return Latents(scale_latents(za, standardize), scale_latents(zv, standardize))


def resolve_target_k(stream: FrameStream, cfg: PipelineConfig) -> int:
    if cfg.target_k is not None:
        return cfg.target_k
    if stream.gt_labels is not None:
        return int(len(np.unique(stream.gt_labels)))
    raise ValueError("target_k is not set and the stream carries no ground-truth labels")


def cluster_with(latents: Latents, cfg: PipelineConfig, target_k: int,
                 mode: Optional[str] = None) -> ClusterResult:
    return cluster_latents(
        latents.audio, latents.visual, target_k=target_k, k_em=cfg.k_em,
        mode=mode or cfg.mode, seed=derive_seed(cfg.seed, "em"), linkage=cfg.linkage,
        em_max_iter=cfg.em.max_iter, em_tol=cfg.em.tol,
    )


@dataclass
class PipelineRun:
    features: Features
    encoders: tuple
    latents: Latents
    result: ClusterResult
    target_k: int

    @property
    def labeling(self) -> PseudoLabeling:
        return self.result.labeling


def run_pipeline_detailed(stream: FrameStream, cfg: PipelineConfig,
                          encoders: Optional[tuple] = None) -> PipelineRun:
    features = extract_features(stream, cfg)
    if encoders is None:
        encoders = fit_encoders(features, cfg)
    latents = encode_features(features, *encoders, standardize=cfg.standardize)
    target_k = resolve_target_k(stream, cfg)
    return PipelineRun(features, encoders, latents, cluster_with(latents, cfg, target_k), target_k)


def run_pipeline(stream: FrameStream, cfg: PipelineConfig, encoders: Optional[tuple] = None) -> PseudoLabeling:
    """Pseudo-label every frame of ``stream`` according to ``cfg``."""
    return run_pipeline_detailed(stream, cfg, encoders).labeling


def sequences_json(result: ClusterResult) -> dict:
    return {
        "mode": result.mode,
        "n_sequences": len(result.sequences),
        "n_clusters": result.labeling.n_clusters,
        "sequences": [
            {"id": s.id, "start": s.start, "end": s.end, "em_label": s.em_label, "label": int(lab)}
            for s, lab in zip(result.sequences, result.seq_labels)
        ],
    }


def intermediates_json(run: PipelineRun) -> dict:
    r = run.result
    return {
        "audio_latents": np.round(run.latents.audio, 12).tolist(),
        "visual_latents": np.round(run.latents.visual, 12).tolist(),
        "em_labels": r.em_labels.tolist(),
        "em_loglik": r.gmm.loglik_history,
        "sequence_audio_means": [np.round(f.audio_mean, 12).tolist() for f in r.seq_features],
        "sequence_visual_means": [np.round(f.visual_mean, 12).tolist() for f in r.seq_features],
        "affinity": np.round(r.affinity, 12).tolist(),
    }


# ---------------------------------------------------------------------------
# standard suite
# ---------------------------------------------------------------------------

@dataclass
class SceneOutcome:
    name: str
    n_frames: int
    n_terrains: int
    n_sequences: int
    nmi: dict            # mode -> score
    labels: dict         # mode -> per-frame labels


@dataclass
class SuiteResult:
    scenes: list

    def mean_nmi(self) -> dict:
        return {m: float(np.mean([s.nmi[m] for s in self.scenes])) for m in clustering.MODES}

    def summary_tsv(self) -> str:
        modes = clustering.MODES
        lines = ["scene\tframes\tterrains\tsequences\t" + "\t".join(modes)]
        for s in self.scenes:
            vals = "\t".join(f"{s.nmi[m]:.6f}" for m in modes)
            lines.append(f"{s.name}\t{s.n_frames}\t{s.n_terrains}\t{s.n_sequences}\t{vals}")
        mean = self.mean_nmi()
        lines.append("MEAN\t\t\t\t" + "\t".join(f"{mean[m]:.6f}" for m in modes))
        return "\n".join(lines) + "\n"


def run_scene(spec, cfg: PipelineConfig, modes=clustering.MODES) -> SceneOutcome:
    from .synthgen import generate_scene

    stream, _ = generate_scene(spec, cfg.window_seconds)
    features = extract_features(stream, cfg)
    latents = encode_features(features, *fit_encoders(features, cfg), standardize=cfg.standardize)
    target_k = len(spec.terrains)
    scores, labels, n_seq = {}, {}, 0
    for mode in modes:
        res = cluster_with(latents, cfg, target_k, mode)
        scores[mode] = nmi(res.labeling.labels, stream.gt_labels, cfg.nmi_average)
        labels[mode] = res.labeling.labels
        n_seq = len(res.sequences)
    return SceneOutcome(spec.name, stream.n_frames, target_k, n_seq, scores, labels)


def run_suite(cfg: PipelineConfig, out_dir=None, specs=None, progress=None) -> SuiteResult:
    """Run every suite scene in all four modes; optionally write labels and the summary."""
    from .synthgen import standard_suite

    specs = standard_suite(cfg.seed) if specs is None else specs
    outcomes = []
    for spec in specs:
        outcome = run_scene(spec, cfg)
        outcomes.append(outcome)
        log.info("%s: %s", spec.name, {m: round(v, 3) for m, v in outcome.nmi.items()})
        if progress:
            progress(outcome)
        if out_dir is not None:
            scene_dir = Path(out_dir) / spec.name
            scene_dir.mkdir(parents=True, exist_ok=True)
            for mode, labs in outcome.labels.items():
                write_labels_csv(scene_dir / f"labels_{mode}.csv", labs)
    result = SuiteResult(outcomes)
    if out_dir is not None:
        (Path(out_dir) / "summary.tsv").write_text(result.summary_tsv())
    return result
