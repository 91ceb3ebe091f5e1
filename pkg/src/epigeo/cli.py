"""Command-line interface.

One executable with subcommands covering the pipeline: `synth` generates
ground-truth scenes, `score` measures videos, `rank` orders generations per
prompt, `pairs` builds preference pairs, `dpo-demo` runs the toy alignment
trainer, and `ssim` compares two frames.

Every run is configured by a RunConfig: defaults, overridden by an optional
JSON config file, overridden by explicit flags.  The canonical serialization
of the effective config is hashed and embedded in every output artifact, and
all outputs are deterministic given flags plus seed (reruns are byte
identical).

Exit codes: 0 success, 1 fatal error, 2 partial success (some videos flagged
or groups skipped), 64 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__
from .alignment import (
    DpoBatchItem,
    LinearVelocityModel,
    synthetic_preference_items,
    toy_train,
)
from .dataset import GenerationGroup, GroupSkipped, build_pairs, rank_group
from .features import FeatureParams
from .image import DecodeError, ssim
from .io import (
    camera_to_record,
    canonical_json,
    list_frame_files,
    load_frame,
    load_frames,
    preference_pair_to_record,
    read_jsonl,
    video_score_from_record,
    video_score_to_record,
    write_jsonl,
    write_pgm,
)
from .scoring import ScoringParams, score_video
from .synth import (
    TrajectorySpec,
    camera_trajectory,
    dynamic_motion,
    generate_scene,
    project_scene,
    render_video,
)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64

THREADS_ENV = "EPIGEO_THREADS"


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline in one flat, hashable record."""

    # feature detection and matching
    octaves: int = 4
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_threshold: float = 0.03
    edge_ratio_threshold: float = 10.0
    ratio_threshold: float = 0.8
    mutual: bool = True
    max_keypoints: int = 2000
    max_dim: int | None = None
    # robust estimation
    ransac_iterations: int = 2000
    inlier_threshold: float = 1.0
    seed: int = 0
    # video scoring
    gaps: tuple = (4, 8)
    stride: int = 4
    min_matches: int = 30
    aggregation: str = "mean"
    static_threshold: float = 0.90
    normalize_by_diagonal: bool = True
    # preference-pair thresholds
    tau: float = 0.05
    epsilon: float = 0.5
    max_pairs_per_group: int = 1
    # alignment objective
    beta: float = 1.0
    lam: float = 0.001
    clean_mode: str = "self_consistent"
    penalty_branch: str = "winner"

    def __post_init__(self):
        object.__setattr__(self, "gaps", tuple(int(g) for g in self.gaps))
        # constructing the parameter objects runs their validation
        self.scoring_params()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gaps"] = list(d["gaps"])
        return d

    @property
    def config_hash(self) -> str:
        digest = hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8"))
        return digest.hexdigest()[:16]

    def feature_params(self) -> FeatureParams:
        return FeatureParams(
            octaves=self.octaves,
            scales_per_octave=self.scales_per_octave,
            base_sigma=self.base_sigma,
            contrast_threshold=self.contrast_threshold,
            edge_ratio_threshold=self.edge_ratio_threshold,
            ratio_threshold=self.ratio_threshold,
            mutual=self.mutual,
            max_keypoints=self.max_keypoints,
            max_dim=self.max_dim,
        )

    def scoring_params(self) -> ScoringParams:
        return ScoringParams(
            gaps=self.gaps,
            stride=self.stride,
            min_matches=self.min_matches,
            ransac_iterations=self.ransac_iterations,
            inlier_threshold=self.inlier_threshold,
            aggregation=self.aggregation,
            static_threshold=self.static_threshold,
            normalize_by_diagonal=self.normalize_by_diagonal,
            feature_params=self.feature_params(),
        )


_CONFIG_FIELDS = {f.name for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """Defaults, then config-file values, then explicit flag overrides."""
    values = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            file_values = json.load(fh)
        if not isinstance(file_values, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = set(file_values) - _CONFIG_FIELDS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def config_overrides(args) -> dict:
    """Flag values destined for RunConfig fields (None = not given)."""
    return {
        name: getattr(args, name)
        for name in _CONFIG_FIELDS
        if hasattr(args, name)
    }


def thread_count(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV, "").strip()
    return max(1, int(env)) if env else 1


def map_ordered(fn, items, threads: int):
    """Apply fn preserving input order; thread count never affects results."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------------ input sets

def collect_videos(input_path: str):
    """Resolve a frame directory or manifest into (video_id, frame_paths)."""
    if os.path.isfile(input_path):
        if not input_path.endswith(".json"):
            raise ValueError("input file must be a .json manifest")
        with open(input_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        base = os.path.dirname(os.path.abspath(input_path))
        videos = []
        for entry in manifest.get("videos", []):
            vid = entry["id"]
            if "frames" in entry:
                paths = [os.path.join(base, p) for p in entry["frames"]]
            elif "dir" in entry:
                paths = list_frame_files(os.path.join(base, entry["dir"]))
            else:
                raise ValueError(f"video {vid!r} needs a 'frames' list or a 'dir'")
            videos.append((vid, paths))
        return videos
    if os.path.isdir(input_path):
        direct = list_frame_files(input_path)
        if direct:
            return [(os.path.basename(os.path.normpath(input_path)), direct)]
        nested = os.path.join(input_path, "frames")
        if os.path.isdir(nested) and list_frame_files(nested):
            return [(os.path.basename(os.path.normpath(input_path)), list_frame_files(nested))]
        videos = []
        for name in sorted(os.listdir(input_path)):
            sub = os.path.join(input_path, name)
            if os.path.isdir(sub):
                frames = list_frame_files(sub)
                if not frames and os.path.isdir(os.path.join(sub, "frames")):
                    frames = list_frame_files(os.path.join(sub, "frames"))
                if frames:
                    videos.append((name, frames))
        return videos
    raise ValueError(f"input path does not exist: {input_path}")


def load_score_groups(scores_path: str, groups_path: str):
    """Scores JSONL + group manifest -> (GenerationGroups, scores header)."""
    header, records = read_jsonl(scores_path)
    by_id = {}
    for rec in records:
        vs = video_score_from_record(rec)
        by_id[vs.video_id] = vs
    with open(groups_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    groups = []
    for entry in manifest.get("groups", []):
        members = []
        for vid in entry["video_ids"]:
            if vid not in by_id:
                raise ValueError(f"group {entry['prompt_id']!r} references unscored video {vid!r}")
            members.append((vid, by_id[vid]))
        groups.append(GenerationGroup(entry["prompt_id"], tuple(members)))
    return groups, (header or {})


def check_jsonl(path: str, expected_hash: str) -> bool:
    header, records = read_jsonl(path)
    if not header or header.get("config_hash") != expected_hash:
        return False
    return all(
        rec.get("config_hash", expected_hash) == expected_hash for rec in records
    )


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    config = load_config(args.config, config_overrides(args))
    scene = generate_scene(args.points, extent=args.extent, seed=config.seed)
    spec = TrajectorySpec(
        kind=args.kind,
        n_frames=args.frames,
        focal=args.focal,
        width=args.width,
        height=args.height,
        radius=args.radius,
        travel=args.travel,
        jitter_sigma=args.jitter,
        outlier_fraction=args.outliers,
        dynamic_fraction=args.dynamic,
        dynamic_speed=args.dynamic_speed,
    )
    cams = camera_trajectory(spec)
    projected = project_scene(scene, cams, spec)
    frames = render_video(
        projected, spec, dot_sigma=args.dot_sigma,
        intensity_seed=config.seed, texture_amplitude=args.texture,
    )

    os.makedirs(os.path.join(args.out, "frames"), exist_ok=True)
    chash = config.config_hash
    for k, frame in enumerate(frames):
        write_pgm(
            frame,
            os.path.join(args.out, "frames", f"frame_{k:03d}.pgm"),
            comment=f"config_hash={chash}",
        )

    dynamic_idx, _ = dynamic_motion(scene, spec)
    scene_record = {
        "config_hash": chash,
        "tool_version": __version__,
        "seed": config.seed,
        "n_points": args.points,
        "extent": args.extent,
        "kind": spec.kind,
        "n_frames": spec.n_frames,
        "width": spec.width,
        "height": spec.height,
        "focal": spec.focal,
        "jitter_sigma": spec.jitter_sigma,
        "outlier_fraction": spec.outlier_fraction,
        "dynamic_fraction": spec.dynamic_fraction,
        "dynamic_speed": spec.dynamic_speed,
        "dot_sigma": args.dot_sigma,
        "texture_amplitude": args.texture,
        "dynamic_point_ids": sorted(int(i) for i in dynamic_idx),
        "cameras": [camera_to_record(c) for c in cams],
    }
    with open(os.path.join(args.out, "scene.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(scene_record) + "\n")

    corr_records = []
    for (i, j) in sorted(projected.pairs):
        cs = projected.pairs[(i, j)]
        for k in range(len(cs)):
            corr_records.append(
                {
                    "i": i,
                    "j": j,
                    "index": int(cs.indices[k]),
                    "x": float(cs.a[k, 0]),
                    "y": float(cs.a[k, 1]),
                    "xp": float(cs.b[k, 0]),
                    "yp": float(cs.b[k, 1]),
                    "label": str(cs.labels[k]),
                }
            )
    write_jsonl(
        os.path.join(args.out, "correspondences.jsonl"),
        corr_records,
        header={"config_hash": chash, "tool_version": __version__, "record": "correspondence"},
    )

    if args.check:
        ok = check_jsonl(os.path.join(args.out, "correspondences.jsonl"), chash)
        with open(os.path.join(args.out, "scene.json"), "r", encoding="utf-8") as fh:
            ok = ok and json.load(fh).get("config_hash") == chash
        if not ok:
            print("error: embedded config hash mismatch", file=sys.stderr)
            return EXIT_FATAL
    return EXIT_OK


def cmd_score(args) -> int:
    config = load_config(args.config, config_overrides(args))
    videos = collect_videos(args.input)
    if not videos:
        print(f"error: no frames found under {args.input}", file=sys.stderr)
        return EXIT_FATAL
    params = config.scoring_params()
    chash = config.config_hash

    def score_one(entry):
        vid, paths = entry
        frames = load_frames(paths)
        return score_video(frames, params, video_id=vid, seed=config.seed, config_hash=chash)

    scores = map_ordered(score_one, videos, thread_count(args))
    records = [video_score_to_record(vs, per_pair=args.per_pair) for vs in scores]
    header = {"config_hash": chash, "tool_version": __version__, "record": "video_score"}
    write_jsonl(args.output, records, header)

    if args.check and not check_jsonl(args.output, chash):
        print("error: embedded config hash mismatch", file=sys.stderr)
        return EXIT_FATAL
    flagged = any(vs.near_static or vs.insufficient_texture for vs in scores)
    return EXIT_PARTIAL if flagged else EXIT_OK


def cmd_rank(args) -> int:
    groups, scores_header = load_score_groups(args.scores, args.groups)
    chash = scores_header.get("config_hash")
    records = []
    skipped = 0
    for group in groups:
        try:
            ranked = rank_group(group)
            records.append(
                {
                    "prompt_id": group.prompt_id,
                    "ranking": [vid for vid, _ in ranked],
                    "consistency_scores": [s.consistency_score for _, s in ranked],
                }
            )
        except GroupSkipped as skip:
            skipped += 1
            records.append({"prompt_id": group.prompt_id, "skipped": skip.reason})
    header = {"config_hash": chash, "tool_version": __version__, "record": "ranking"}
    write_jsonl(args.output, records, header)
    if args.check and not check_jsonl(args.output, chash):
        print("error: embedded config hash mismatch", file=sys.stderr)
        return EXIT_FATAL
    return EXIT_PARTIAL if skipped else EXIT_OK


def cmd_pairs(args) -> int:
    config = load_config(args.config, config_overrides(args))
    groups, scores_header = load_score_groups(args.scores, args.groups)
    chash = scores_header.get("config_hash")
    skips = []
    pairs = build_pairs(
        groups,
        tau=config.tau,
        epsilon=config.epsilon,
        max_pairs_per_group=config.max_pairs_per_group,
        on_skip=lambda pid, why: skips.append({"prompt_id": pid, "reason": why}),
    )
    header = {
        "config_hash": chash,
        "tool_version": __version__,
        "record": "preference_pair",
        "tau": config.tau,
        "epsilon": config.epsilon,
        "max_pairs_per_group": config.max_pairs_per_group,
        "skipped_groups": skips,
    }
    write_jsonl(args.output, [preference_pair_to_record(p) for p in pairs], header)
    if args.check and not check_jsonl(args.output, chash):
        print("error: embedded config hash mismatch", file=sys.stderr)
        return EXIT_FATAL
    return EXIT_OK


def _items_from_latents(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    return [
        DpoBatchItem(
            x0_w=np.asarray(entry["x0_w"], dtype=np.float64),
            x0_l=np.asarray(entry["x0_l"], dtype=np.float64),
            eps_w=np.asarray(entry["eps_w"], dtype=np.float64),
            eps_l=np.asarray(entry["eps_l"], dtype=np.float64),
            t=float(entry["t"]),
        )
        for entry in manifest["items"]
    ]


def _items_from_pairs(path: str, frames: int, dims: int, seed: int):
    """Synthesize latent clips whose corruption scales with each score gap."""
    _, records = read_jsonl(path)
    items = []
    for k, rec in enumerate(records):
        gap = float(rec["score_gap"])
        items.extend(
            synthetic_preference_items(
                1, frames, dims, seed=[seed, k], corruption=0.5 + 4.0 * gap
            )
        )
    return items


def cmd_dpo_demo(args) -> int:
    config = load_config(args.config, config_overrides(args))
    if args.latents:
        items = _items_from_latents(args.latents)
    else:
        items = _items_from_pairs(args.pairs, args.frames, args.dims, config.seed)
    if not items:
        print("error: no preference items to train on", file=sys.stderr)
        return EXIT_FATAL
    dims = items[0].x0_w.shape[1]
    ref = LinearVelocityModel.zeros(dims)
    model, trace = toy_train(
        items,
        ref,
        steps=args.steps,
        learning_rate=args.lr,
        beta=config.beta,
        lam=config.lam,
        seed=config.seed,
        penalty_branch=config.penalty_branch,
        clean_mode=config.clean_mode,
    )

    os.makedirs(args.out, exist_ok=True)
    chash = config.config_hash
    trace_path = os.path.join(args.out, "loss_trace.csv")
    with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config_hash={chash} tool_version={__version__}\n")
        fh.write("step,loss\n")
        for k, value in enumerate(trace):
            fh.write(f"{k},{value!r}\n")
    params_record = {
        "config_hash": chash,
        "tool_version": __version__,
        "dims": dims,
        "steps": args.steps,
        "learning_rate": args.lr,
        "beta": config.beta,
        "lam": config.lam,
        "clean_mode": config.clean_mode,
        "penalty_branch": config.penalty_branch,
        "final_loss": trace[-1],
        "parameters": model.parameters.tolist(),
    }
    with open(os.path.join(args.out, "final_params.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(params_record) + "\n")

    if args.check:
        with open(trace_path, "r", encoding="utf-8") as fh:
            first = fh.readline()
        with open(os.path.join(args.out, "final_params.json"), "r", encoding="utf-8") as fh:
            saved = json.load(fh)
        if chash not in first or saved.get("config_hash") != chash:
            print("error: embedded config hash mismatch", file=sys.stderr)
            return EXIT_FATAL
    return EXIT_OK


def cmd_ssim(args) -> int:
    config = load_config(args.config, config_overrides(args))
    value = ssim(load_frame(args.frame_a), load_frame(args.frame_b))
    record = {
        "config_hash": config.config_hash,
        "tool_version": __version__,
        "frame_a": os.path.basename(args.frame_a),
        "frame_b": os.path.basename(args.frame_b),
        "ssim": value,
    }
    line = canonical_json(record)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(line + "\n")
    else:
        print(line)
    return EXIT_OK


# -------------------------------------------------------------------- parsing

class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems with exit code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1); never affects results")
    parser.add_argument("--check", action="store_true", help="re-validate embedded config hashes after writing")
    parser.add_argument("--seed", type=int, help=f"master seed (default: {_DEFAULTS.seed})")


def _add_scoring_flags(parser):
    parser.add_argument("--gaps", type=int, nargs="+", help=f"frame index gaps (default: {list(_DEFAULTS.gaps)})")
    parser.add_argument("--stride", type=int, help=f"starting-index stride (default: {_DEFAULTS.stride})")
    parser.add_argument("--min-matches", dest="min_matches", type=int, help=f"fewest matches worth estimating from (default: {_DEFAULTS.min_matches})")
    parser.add_argument("--aggregation", choices=("mean", "median", "trimmed_mean"), help=f"per-video aggregation (default: {_DEFAULTS.aggregation})")
    parser.add_argument("--static-threshold", dest="static_threshold", type=float, help=f"mean-SSIM level above which a video is near-static (default: {_DEFAULTS.static_threshold})")
    parser.add_argument("--normalize-by-diagonal", dest="normalize_by_diagonal", action=argparse.BooleanOptionalAction, default=None, help="divide pixel coordinates by the image diagonal (default: on)")
    parser.add_argument("--ransac-iterations", dest="ransac_iterations", type=int, help=f"RANSAC iterations (default: {_DEFAULTS.ransac_iterations})")
    parser.add_argument("--inlier-threshold", dest="inlier_threshold", type=float, help=f"inlier threshold, px^2 (default: {_DEFAULTS.inlier_threshold})")
    parser.add_argument("--octaves", type=int, help=f"scale-space octaves (default: {_DEFAULTS.octaves})")
    parser.add_argument("--ratio-threshold", dest="ratio_threshold", type=float, help=f"nearest-neighbour ratio cutoff (default: {_DEFAULTS.ratio_threshold})")
    parser.add_argument("--contrast-threshold", dest="contrast_threshold", type=float, help=f"keypoint contrast cutoff (default: {_DEFAULTS.contrast_threshold})")
    parser.add_argument("--max-keypoints", dest="max_keypoints", type=int, help=f"keypoint budget per frame (default: {_DEFAULTS.max_keypoints})")
    parser.add_argument("--max-dim", dest="max_dim", type=int, help="downscale frames so max(width, height) <= this before detection (default: off)")


def build_parser() -> _Parser:
    parser = _Parser(prog="epigeo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"epigeo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    _add_common(p)
    p.add_argument("--out", required=True, help="output scene directory")
    p.add_argument("--kind", choices=("orbit", "dolly", "arc"), default="orbit", help="camera trajectory (default: orbit)")
    p.add_argument("--frames", type=int, default=8, help="frame count (default: 8)")
    p.add_argument("--points", type=int, default=150, help="scene points (default: 150)")
    p.add_argument("--extent", type=float, default=2.5, help="scene half-extent (default: 2.5)")
    p.add_argument("--width", type=int, default=640, help="image width (default: 640)")
    p.add_argument("--height", type=int, default=480, help="image height (default: 480)")
    p.add_argument("--focal", type=float, default=500.0, help="focal length in px (default: 500)")
    p.add_argument("--radius", type=float, default=8.0, help="trajectory radius (default: 8)")
    p.add_argument("--travel", type=float, default=0.4, help="dolly travel fraction (default: 0.4)")
    p.add_argument("--jitter", type=float, default=0.0, help="pixel jitter sigma (default: 0)")
    p.add_argument("--outliers", type=float, default=0.0, help="outlier fraction per pair (default: 0)")
    p.add_argument("--dynamic", type=float, default=0.0, help="moving-point fraction (default: 0)")
    p.add_argument("--dynamic-speed", dest="dynamic_speed", type=float, default=0.05, help="world units per frame for moving points (default: 0.05)")
    p.add_argument("--dot-sigma", dest="dot_sigma", type=float, default=3.0, help="rendered dot size in px (default: 3.0)")
    p.add_argument("--texture", type=float, default=0.02, help="background texture amplitude (default: 0.02)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score", help="score videos for 3D consistency")
    _add_common(p)
    _add_scoring_flags(p)
    p.add_argument("input", help="frame directory or manifest JSON")
    p.add_argument("--output", required=True, help="output JSONL path")
    p.add_argument("--per-pair", dest="per_pair", action="store_true", help="embed per-pair scores in each record")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rank", help="rank scored generations within groups")
    _add_common(p)
    p.add_argument("--scores", required=True, help="video-score JSONL from `score`")
    p.add_argument("--groups", required=True, help="group manifest JSON (prompt_id -> video_ids)")
    p.add_argument("--output", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("pairs", help="build preference pairs from scored groups")
    _add_common(p)
    p.add_argument("--scores", required=True, help="video-score JSONL from `score`")
    p.add_argument("--groups", required=True, help="group manifest JSON (prompt_id -> video_ids)")
    p.add_argument("--output", required=True, help="output JSONL path")
    p.add_argument("--tau", type=float, help=f"minimum score gap (default: {_DEFAULTS.tau})")
    p.add_argument("--eps", dest="epsilon", type=float, help=f"minimum winner score (default: {_DEFAULTS.epsilon})")
    p.add_argument("--max-pairs-per-group", dest="max_pairs_per_group", type=int, help=f"pair budget per group (default: {_DEFAULTS.max_pairs_per_group})")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("dpo-demo", help="train the toy preference model")
    _add_common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pairs", help="preference-pair JSONL; latents are synthesized from score gaps")
    src.add_argument("--latents", help="explicit latent manifest JSON")
    p.add_argument("--out", required=True, help="output directory (loss_trace.csv, final_params.json)")
    p.add_argument("--steps", type=int, default=200, help="gradient steps (default: 200)")
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate (default: 1e-3)")
    p.add_argument("--frames", type=int, default=6, help="synthesized clip frames (default: 6)")
    p.add_argument("--dims", type=int, default=4, help="synthesized clip dims (default: 4)")
    p.add_argument("--beta", type=float, help=f"preference strength (default: {_DEFAULTS.beta})")
    p.add_argument("--lambda", dest="lam", type=float, help=f"temporal penalty weight (default: {_DEFAULTS.lam})")
    p.add_argument("--clean-mode", dest="clean_mode", choices=("self_consistent", "reverse_time"), help=f"clean-sample reconstruction convention (default: {_DEFAULTS.clean_mode})")
    p.add_argument("--penalty-branch", dest="penalty_branch", choices=("winner", "both"), help=f"branch the penalty applies to (default: {_DEFAULTS.penalty_branch})")
    p.set_defaults(func=cmd_dpo_demo)

    p = sub.add_parser("ssim", help="structural similarity of two frames")
    _add_common(p)
    p.add_argument("frame_a", help="first image (PGM or PNG)")
    p.add_argument("frame_b", help="second image (PGM or PNG)")
    p.add_argument("--output", help="write the JSON record here instead of stdout")
    p.set_defaults(func=cmd_ssim)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, DecodeError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
