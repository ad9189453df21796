"""Self-supervised terrain labeling from synchronized audio and video.

Frames are described by MFCCs of a long audio window and by downsampled
images, compressed by per-modality encoders, split into sequences by EM on
the audio latents, and merged into terrain clusters with an affinity that
keeps whichever modality finds two sequences closer.
"""

from .clustering import MODES, PseudoLabeling, cluster_latents
from .config import PipelineConfig, parse_config
from .evaluation import classification_report, nmi
from .ingest import FrameStream, align_streams, load_manifest
from .pipeline import run_pipeline, run_suite
from .synthgen import SceneSpec, generate_scene, standard_suite

__version__ = "0.1.0"

__all__ = [
    "MODES", "FrameStream", "PipelineConfig", "PseudoLabeling", "SceneSpec",
    "align_streams", "classification_report", "cluster_latents", "generate_scene",
    "load_manifest", "nmi", "parse_config", "run_pipeline", "run_suite", "standard_suite",
]
