"""Per-video 3D consistency scoring.

A video is scored by sampling frame pairs at fixed index gaps, estimating a
fundamental matrix for each pair from matched features, and aggregating the
mean Sampson error of the surviving inliers.  Low aggregate error means the
frames are explainable by a single rigid two-view geometry; high error means
the content wobbles, deforms, or teleports.

Two entry points cover the two kinds of input: :func:`score_video` runs the
full pixel pipeline (features -> matching -> RANSAC), while
:func:`score_video_from_correspondences` accepts already-paired points so the
geometric statistics can be studied without detector noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .epipolar import (
    DegenerateConfigurationError,
    EstimationFailedError,
    ransac_fundamental,
    sampson_errors,
)
from .features import FeatureParams, extract_features, match_frames
from .image import Frame, motion_level

STATUS_OK = "ok"
STATUS_TOO_FEW_MATCHES = "too_few_matches"
STATUS_ESTIMATION_FAILED = "estimation_failed"
STATUS_DEGENERATE = "degenerate"

AGGREGATIONS = ("mean", "median", "trimmed_mean")

# Zero-baseline detection: a pair is degenerate when nearly every match is an
# inlier, the fit is numerically perfect, and the matched points barely moved.
DEGENERATE_INLIER_RATIO = 0.99
DEGENERATE_MEDIAN_ERROR = 1e-6
DEGENERATE_CENTROID_SHIFT = 0.5  # px

TRIM_FRACTION = 0.10


@dataclass(frozen=True)
class ScoringParams:
    """Knobs for pair selection, estimation, and aggregation."""

    gaps: tuple = (4, 8)
    stride: int = 4
    min_matches: int = 30
    ransac_iterations: int = 2000
    inlier_threshold: float = 1.0  # px^2, converted if coordinates are rescaled
    aggregation: str = "mean"
    static_threshold: float = 0.90
    normalize_by_diagonal: bool = True
    feature_params: FeatureParams = field(default_factory=FeatureParams)

    def __post_init__(self):
        gaps = tuple(int(g) for g in self.gaps)
        object.__setattr__(self, "gaps", gaps)
        if not gaps:
            raise ValueError("gaps must be non-empty")
        if any(g < 1 for g in gaps):
            raise ValueError("gaps must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.min_matches < 8:
            raise ValueError("min_matches must be >= 8")
        if self.ransac_iterations < 1:
            raise ValueError("ransac_iterations must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if not 0.0 < self.static_threshold <= 1.0:
            raise ValueError("static_threshold must be in (0, 1]")


@dataclass(frozen=True)
class PairScore:
    """Epipolar consistency of one frame pair.

    ``mean_inlier_sampson`` and ``median_inlier_sampson`` are populated only
    when ``status`` is ``ok``; for every other status they are None.
    """

    frame_i: int
    frame_j: int
    n_matches: int
    n_inliers: int
    mean_inlier_sampson: float | None
    median_inlier_sampson: float | None
    status: str

    def __post_init__(self):
        if self.n_inliers > self.n_matches:
            raise ValueError("n_inliers cannot exceed n_matches")
        has_stats = self.mean_inlier_sampson is not None and self.median_inlier_sampson is not None
        if (self.status == STATUS_OK) != has_stats:
            raise ValueError("statistics must be present exactly when status is ok")


@dataclass(frozen=True)
class VideoScore:
    """Aggregate consistency of one video.

    ``consistency_error`` is None when no frame pair could be scored; in that
    case ``consistency_score`` is None too and ``insufficient_texture`` is
    set.  Otherwise ``consistency_score == 1 / (1 + consistency_error)``.
    """

    video_id: str
    consistency_error: float | None
    consistency_score: float | None
    motion_level: float | None
    n_valid_pairs: int
    near_static: bool
    insufficient_texture: bool
    config_hash: str | None = None
    pair_scores: tuple = ()

    def __post_init__(self):
        if self.consistency_error is None:
            if self.consistency_score is not None:
                raise ValueError("consistency_score must be None when error is undefined")
        else:
            if self.consistency_error < 0:
                raise ValueError("consistency_error must be >= 0")
            expected = 1.0 / (1.0 + self.consistency_error)
            if self.consistency_score != expected:
                raise ValueError("consistency_score must equal 1/(1+consistency_error)")
        if self.motion_level is None and self.near_static:
            raise ValueError("near_static requires a motion level")


def frame_pairs(n_frames, gaps, stride=1):
    """Frame index pairs (i, i+g) for each gap g, starting indices on a stride.

    Gaps at least as large as the frame count contribute nothing.  The result
    is deduplicated and sorted.
    """
    if n_frames < 2:
        raise ValueError("need at least 2 frames")
    gaps = tuple(int(g) for g in gaps)
    if not gaps:
        raise ValueError("gaps must be non-empty")
    if any(g < 1 for g in gaps):
        raise ValueError("gaps must be positive")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    pairs = set()
    for g in gaps:
        for i in range(0, n_frames - g, stride):
            pairs.add((i, i + g))
    return sorted(pairs)


def _pair_seed(seed, i, j):
    # one independent RANSAC stream per (video seed, frame i, frame j)
    return int(np.random.SeedSequence([int(seed), int(i), int(j)]).generate_state(1)[0])


def _score_matched_points(pts_a, pts_b, params, frame_i, frame_j, seed, diagonal):
    """Shared estimation path: matched point arrays -> PairScore."""
    pts_a = np.asarray(pts_a, dtype=np.float64)
    pts_b = np.asarray(pts_b, dtype=np.float64)
    n_matches = len(pts_a)
    if n_matches < params.min_matches:
        return PairScore(frame_i, frame_j, n_matches, 0, None, None, STATUS_TOO_FEW_MATCHES)

    threshold = params.inlier_threshold
    a, b = pts_a, pts_b
    if params.normalize_by_diagonal:
        if diagonal is None:
            raise ValueError("diagonal required when normalize_by_diagonal is on")
        a = pts_a / diagonal
        b = pts_b / diagonal
        threshold = threshold / diagonal**2

    try:
        model, mask = ransac_fundamental(
            (a, b),
            iterations=params.ransac_iterations,
            inlier_threshold=threshold,
            seed=_pair_seed(seed, frame_i, frame_j),
        )
    except (DegenerateConfigurationError, EstimationFailedError):
        return PairScore(frame_i, frame_j, n_matches, 0, None, None, STATUS_ESTIMATION_FAILED)

    errors, flagged = sampson_errors(model.m, a, b)
    usable = mask & ~flagged  # capped values carry no geometric information
    n_inliers = int(np.count_nonzero(mask))
    if not np.any(usable):
        return PairScore(frame_i, frame_j, n_matches, n_inliers, None, None, STATUS_ESTIMATION_FAILED)

    mean_err = float(np.mean(errors[usable]))
    median_err = float(np.median(errors[usable]))

    centroid_shift = float(np.linalg.norm(pts_a.mean(axis=0) - pts_b.mean(axis=0)))
    if (
        n_inliers / n_matches > DEGENERATE_INLIER_RATIO
        and median_err < DEGENERATE_MEDIAN_ERROR
        and centroid_shift < DEGENERATE_CENTROID_SHIFT
    ):
        return PairScore(frame_i, frame_j, n_matches, n_inliers, None, None, STATUS_DEGENERATE)

    return PairScore(frame_i, frame_j, n_matches, n_inliers, mean_err, median_err, STATUS_OK)


def score_pair(
    frame_a: Frame,
    frame_b: Frame,
    params: ScoringParams | None = None,
    frame_i=0,
    frame_j=1,
    seed=0,
    features_a=None,
    features_b=None,
):
    """Score one frame pair through the full feature pipeline.

    Precomputed ``FrameFeatures`` may be passed to reuse detection work when
    the same frame appears in several pairs.
    """
    params = params or ScoringParams()
    if frame_a.pixels.shape != frame_b.pixels.shape:
        raise ValueError("frames must have identical dimensions")
    if features_a is None:
        features_a = extract_features(frame_a, params.feature_params)
    if features_b is None:
        features_b = extract_features(frame_b, params.feature_params)
    pts_a, pts_b, _ = match_frames(features_a, features_b, params.feature_params)
    return _score_matched_points(
        pts_a, pts_b, params, frame_i, frame_j, seed, frame_a.diagonal
    )


def _aggregate(values, mode):
    values = np.sort(np.asarray(values, dtype=np.float64))
    if mode == "mean":
        return float(values.mean())
    if mode == "median":
        return float(np.median(values))
    # trimmed mean: drop the outer TRIM_FRACTION from each tail
    k = int(TRIM_FRACTION * len(values))
    core = values[k : len(values) - k] if k else values
    return float(core.mean())


def _assemble_video_score(video_id, pair_results, motion, params, config_hash):
    ok = [p for p in pair_results if p.status == STATUS_OK]
    too_few = sum(1 for p in pair_results if p.status == STATUS_TOO_FEW_MATCHES)
    near_static = motion is not None and motion > params.static_threshold
    insufficient = not ok or (pair_results and too_few > 0.5 * len(pair_results))
    if ok:
        error = _aggregate([p.mean_inlier_sampson for p in ok], params.aggregation)
        score = 1.0 / (1.0 + error)
    else:
        error = None
        score = None
    return VideoScore(
        video_id=video_id,
        consistency_error=error,
        consistency_score=score,
        motion_level=motion,
        n_valid_pairs=len(ok),
        near_static=near_static,
        insufficient_texture=bool(insufficient),
        config_hash=config_hash,
        pair_scores=tuple(pair_results),
    )


def score_video(
    frames,
    params: ScoringParams | None = None,
    video_id="video",
    seed=0,
    config_hash=None,
):
    """Score a whole video from its frames.

    Features are extracted once per frame that participates in any pair.
    Per-pair RANSAC randomness derives from (seed, i, j) only, so pair order
    and parallel execution cannot change results.
    """
    params = params or ScoringParams()
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    shape = frames[0].pixels.shape
    for k, f in enumerate(frames):
        if f.pixels.shape != shape:
            raise ValueError(f"frame {k} dimensions differ from frame 0")

    motion = motion_level(frames)
    pairs = frame_pairs(len(frames), params.gaps, params.stride)

    feats = {}
    for i, j in pairs:
        for k in (i, j):
            if k not in feats:
                feats[k] = extract_features(frames[k], params.feature_params)

    results = [
        score_pair(
            frames[i],
            frames[j],
            params,
            frame_i=i,
            frame_j=j,
            seed=seed,
            features_a=feats[i],
            features_b=feats[j],
        )
        for i, j in pairs
    ]
    return _assemble_video_score(video_id, results, motion, params, config_hash)


def score_video_from_correspondences(
    pair_points,
    params: ScoringParams | None = None,
    video_id="video",
    seed=0,
    diagonal=None,
    motion=None,
    config_hash=None,
):
    """Score a video from already-matched point pairs.

    ``pair_points`` maps (i, j) frame index pairs to (points_a, points_b)
    arrays or to any object with an ``as_arrays()`` method returning them.
    No matching or detection runs, so this isolates the geometric statistics
    from feature noise.  ``motion`` may be supplied if frames exist elsewhere;
    without it the near-static flag stays off.
    """
    params = params or ScoringParams()
    results = []
    for (i, j) in sorted(pair_points):
        value = pair_points[(i, j)]
        if hasattr(value, "as_arrays"):
            pts_a, pts_b = value.as_arrays()
        else:
            pts_a, pts_b = value
        results.append(
            _score_matched_points(pts_a, pts_b, params, i, j, seed, diagonal)
        )
    return _assemble_video_score(video_id, results, motion, params, config_hash)
