"""Command line front end: ``avterrain <command> [options]``.

Every command writes deterministic artifacts into ``--out``; wall-clock
timestamps only go to the ``run.log`` sidecar next to them.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import figures
from .clustering import MODES
from .config import ConfigError, PipelineConfig, dump_config, parse_config
from .encoder import load_encoder, save_encoder
from .evaluation import (apply_mapping, classification_report, contingency_table,
                         map_clusters_to_classes, nmi)
from .ingest import (ManifestError, align_streams, export_pseudo_labels, load_manifest,
                     read_labels_csv)
from .pipeline import (encode_features, extract_features, fit_encoders, intermediates_json,
                       run_pipeline_detailed, run_suite, sequences_json)
from .synthgen import SceneSpec, generate_scene, standard_suite, write_scene

log = logging.getLogger("avterrain")

AUDIO_ENCODER = "audio.enc"
VISUAL_ENCODER = "visual.enc"


class CliError(Exception):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_config(args) -> PipelineConfig:
    cfg = parse_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        changes["mode"] = args.mode
    if getattr(args, "target_k", None) is not None:
        changes["target_k"] = args.target_k
    return cfg.replace(**changes) if changes else cfg


def _stream(args, cfg):
    return align_streams(load_manifest(args.manifest), cfg.window_seconds)


def _load_encoders(directory):
    d = Path(directory)
    for name in (AUDIO_ENCODER, VISUAL_ENCODER):
        if not (d / name).is_file():
            raise CliError(f"encoder file not found: {d / name}")
    return load_encoder(d / AUDIO_ENCODER), load_encoder(d / VISUAL_ENCODER)


def _scene_indices(text, n):
    if not text:
        return list(range(n))
    try:
        idx = [int(tok) for tok in text.split(",")]
    except ValueError:
        raise CliError(f"--scenes expects comma separated indices, got {text!r}") from None
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise CliError(f"scene indices {bad} outside [0, {n})")
    return idx


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg, out: Path) -> None:
    if args.spec:
        specs = [SceneSpec.from_json(json.loads(Path(args.spec).read_text()))]
    else:
        suite = standard_suite(cfg.seed)
        specs = [suite[i] for i in _scene_indices(args.scenes, len(suite))]
    for spec in specs:
        stream, _ = generate_scene(spec, cfg.window_seconds)
        path = write_scene(stream, out / spec.name, spec)
        log.info("wrote %s (%d frames)", path, stream.n_frames)
        print(path)


def cmd_extract(args, cfg, out: Path) -> None:
    stream = _stream(args, cfg)
    feats = extract_features(stream, cfg)
    arrays = {"mfcc": feats.mfcc, "image": feats.image}
    if args.encoders:
        latents = encode_features(feats, *_load_encoders(args.encoders), standardize=cfg.standardize)
        arrays.update(audio_latents=latents.audio, visual_latents=latents.visual)
    np.savez(out / "features.npz", **arrays)
    np.savetxt(out / "mfcc.tsv", feats.mfcc, delimiter="\t", fmt="%.10g")
    log.info("extracted %d frames: %s", stream.n_frames, ", ".join(f"{k}{v.shape}" for k, v in arrays.items()))


def cmd_train_encoder(args, cfg, out: Path) -> None:
    stream = _stream(args, cfg)
    audio, visual = fit_encoders(extract_features(stream, cfg), cfg)
    save_encoder(audio, out / AUDIO_ENCODER)
    save_encoder(visual, out / VISUAL_ENCODER)
    log.info("trained %s audio encoder and %s visual encoder", cfg.audio.kind, cfg.visual.kind)


def cmd_cluster(args, cfg, out: Path) -> None:
    manifest = load_manifest(args.manifest)
    stream = align_streams(manifest, cfg.window_seconds)
    encoders = _load_encoders(args.encoders) if args.encoders else None
    run = run_pipeline_detailed(stream, cfg, encoders)
    export_pseudo_labels(stream, run.labeling, out / "labels.csv")
    _write_json(out / "sequences.json", sequences_json(run.result))
    pseudo = manifest.to_json(relative_to=out.resolve())
    pseudo["gt_labels_path"] = "labels.csv"
    _write_json(out / "pseudo_manifest.json", pseudo)
    if args.dump:
        _write_json(out / "intermediates.json", intermediates_json(run))
    log.info("%s: %d sequences -> %d clusters (mode %s)", stream.scene_name, len(run.result.sequences),
             run.labeling.n_clusters, cfg.mode)


def cmd_evaluate(args, cfg, out: Path) -> None:
    pred = read_labels_csv(args.labels)
    if args.truth:
        truth = read_labels_csv(args.truth)
    elif args.manifest:
        manifest = load_manifest(args.manifest)
        if manifest.gt_labels_path is None:
            raise CliError("manifest has no gt_labels_path")
        truth = read_labels_csv(manifest.gt_labels_path)
    else:
        raise CliError("evaluate needs --truth or --manifest")
    if len(pred) != len(truth):
        raise CliError(f"label/frame mismatch: {len(pred)} predicted vs {len(truth)} true labels")
    table, p_vals, t_vals = contingency_table(pred, truth)
    mapped = apply_mapping(pred, truth)
    report = classification_report(mapped, truth)
    result = {
        "nmi": nmi(pred, truth, cfg.nmi_average),
        "nmi_average": cfg.nmi_average,
        "n_frames": int(len(pred)),
        "n_clusters": int(len(p_vals)),
        "n_classes": int(len(t_vals)),
        "mapping": {str(p_vals[r]): int(t_vals[c]) for r, c in map_clusters_to_classes(table).items()},
        "classification": report.to_dict(),
    }
    _write_json(out / "report.json", result)
    (out / "report.txt").write_text(f"NMI ({cfg.nmi_average}) {result['nmi']:.4f}\n\n" + report.to_text())
    figures.label_timeline({"truth": truth, "predicted": mapped}, out / "timeline.png")
    figures.contingency_heatmap(table, p_vals, t_vals, out / "contingency.png")
    print(f"NMI {result['nmi']:.4f}  accuracy {report.accuracy:.4f}")


def cmd_suite(args, cfg, out: Path) -> None:
    specs = standard_suite(cfg.seed)
    specs = [specs[i] for i in _scene_indices(args.scenes, len(specs))]
    t0 = time.perf_counter()

    def progress(o):
        log.info("%-18s %s", o.name, " ".join(f"{m}={o.nmi[m]:.3f}" for m in MODES))

    result = run_suite(cfg, out, specs, progress)
    log.info("suite finished in %.1f s", time.perf_counter() - t0)
    names = [s.name for s in result.scenes]
    figures.suite_nmi_bars(names, {m: [s.nmi[m] for s in result.scenes] for m in MODES}, out / "nmi_by_scene.png")
    for scene in result.scenes:
        rows = {m: scene.labels[m] for m in MODES}
        gt = next(s for s in specs if s.name == scene.name)
        truth = np.concatenate([np.full(n, sorted(gt.terrains).index(t)) for t, n in gt.segments])
        figures.label_timeline({"truth": truth, **{m: apply_mapping(v, truth) for m, v in rows.items()}},
                               out / scene.name / "timeline.png", scene.name)
    mean = result.mean_nmi()
    print("mode\tmean_nmi")
    for m in MODES:
        print(f"{m}\t{mean[m]:.4f}")


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "train-encoder": cmd_train_encoder,
    "cluster": cmd_cluster,
    "evaluate": cmd_evaluate,
    "suite": cmd_suite,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avterrain", description="Audio-visual terrain clustering.")
    sub = p.add_subparsers(dest="command", metavar="command")

    def common(sp, manifest=False):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="root seed (overrides the config)")
        sp.add_argument("-v", "--verbose", action="store_true", help="also log to stderr")
        if manifest:
            sp.add_argument("--manifest", required=True, help="run manifest JSON")

    sp = sub.add_parser("synth", help="write synthetic scenes (WAV, PNG frames, labels, manifest)")
    common(sp)
    sp.add_argument("--scenes", help="comma separated suite indices (default: all 20)")
    sp.add_argument("--spec", help="render a single scene_spec.json instead of the suite")

    sp = sub.add_parser("extract", help="dump MFCC and image vectors (and latents with --encoders)")
    common(sp, manifest=True)
    sp.add_argument("--encoders", help="directory holding audio.enc and visual.enc")

    sp = sub.add_parser("train-encoder", help="fit the audio and visual encoders on one run")
    common(sp, manifest=True)

    sp = sub.add_parser("cluster", help="pseudo-label every frame of a run")
    common(sp, manifest=True)
    sp.add_argument("--mode", choices=MODES, help="affinity mode (overrides the config)")
    sp.add_argument("--target-k", type=int, help="number of final clusters")
    sp.add_argument("--encoders", help="use pre-trained encoders from this directory")
    sp.add_argument("--dump", action="store_true", help="also write intermediates.json")

    sp = sub.add_parser("evaluate", help="score a labels CSV against ground truth")
    common(sp)
    sp.add_argument("--labels", required=True, help="predicted labels CSV")
    sp.add_argument("--truth", help="ground-truth labels CSV")
    sp.add_argument("--manifest", help="take ground truth from this manifest")

    sp = sub.add_parser("suite", help="run the 20-scene synthetic suite in all four modes")
    common(sp)
    sp.add_argument("--scenes", help="comma separated suite indices (default: all 20)")
    return p


def _attach_log(out: Path, verbose: bool):
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    handlers = [handler]
    if verbose:
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(console)
        handlers.append(console)
    return handlers


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    handlers = []
    try:
        cfg = _load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handlers = _attach_log(out, args.verbose)
        log.info("avterrain %s (pid %d)", args.command, os.getpid())
        (out / "config.txt").write_text(dump_config(cfg))
        COMMANDS[args.command](args, cfg, out)
    except (CliError, ConfigError, ManifestError, ValueError, OSError) as exc:
        log.error("%s", exc)
        print(f"avterrain {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        root = logging.getLogger()
        for h in handlers:
            root.removeHandler(h)
            h.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
