"""Two-view epipolar geometry on pixel coordinates.

Fundamental-matrix estimation (Hartley-normalized 8-point inside RANSAC),
Sampson and symmetric epipolar errors, and the camera-pair construction
F = [e']_x P' P+ used as an exact cross-check for the estimators.

Conventions used throughout:
  - a correspondence relates x in frame A to x' (xp) in frame B and
    satisfies xp^T F x = 0 for the true geometry;
  - estimated F is rank 2 with unit Frobenius norm, sign fixed so the
    largest-magnitude entry is positive (stable serialization);
  - errors are squared pixel distances (px^2).

Correspondence sets are passed either as a list of Correspondence objects,
as a tuple (points_a, points_b) of (N, 2) or (N, 3) arrays, or as a single
(N, 4) array of rows (x, y, xp, yp).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# squared-pixel value reported when an error denominator collapses
# (point at an epipole); such entries carry a flag and are excluded
# from aggregation downstream
SAMPSON_CAP = 1.0e6
DENOM_EPS = 1.0e-15

RANK_TOL = 1e-8
CONDITION_LIMIT = 1e12


class DegenerateConfigurationError(ValueError):
    """Point configuration does not determine the geometry (plane, repeats)."""


class EstimationFailedError(RuntimeError):
    """Robust estimation could not produce a usable model."""


@dataclass
class Correspondence:
    """A matched point pair in homogeneous pixel coordinates (x, y, 1)."""

    x: np.ndarray
    xp: np.ndarray

    def __post_init__(self):
        self.x = _check_homogeneous(np.asarray(self.x, dtype=np.float64), "x")
        self.xp = _check_homogeneous(np.asarray(self.xp, dtype=np.float64), "xp")


def _check_homogeneous(v, name):
    if v.shape == (2,):
        v = np.array([v[0], v[1], 1.0])
    if v.shape != (3,):
        raise ValueError(f"{name} must be a homogeneous 2D point, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite coordinates")
    if v[2] != 1.0:
        raise ValueError(f"{name} must have third homogeneous coordinate 1, got {v[2]}")
    return v


@dataclass
class FundamentalMatrix:
    """Rank-2, unit-Frobenius 3x3 matrix mapping points to epipolar lines."""

    m: np.ndarray
    inlier_count: int = 0
    method: str = "eight_point"

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"fundamental matrix must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("fundamental matrix has non-finite entries")
        norm = np.linalg.norm(m)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"fundamental matrix must have unit Frobenius norm, got {norm}")
        s = np.linalg.svd(m, compute_uv=False)
        if s[2] >= RANK_TOL * s[0]:
            raise ValueError("fundamental matrix must have rank 2")
        self.m = m


@dataclass
class CameraMatrix:
    """Finite projective camera P = K [R | t].

    k is upper-triangular with positive diagonal, r orthonormal, t a
    3-vector; the camera center in world coordinates is -R^T t.
    """

    k: np.ndarray
    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.float64)
        r = np.asarray(self.r, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if k.shape != (3, 3) or r.shape != (3, 3):
            raise ValueError("k and r must be 3x3 matrices")
        if np.any(np.abs(np.tril(k, -1)) > 1e-12) or np.any(np.diag(k) <= 0):
            raise ValueError("k must be upper-triangular with positive diagonal")
        if np.linalg.norm(r @ r.T - np.eye(3)) > 1e-9:
            raise ValueError("r must be orthonormal within 1e-9")
        self.k, self.r, self.t = k, r, t

    @property
    def p(self):
        """The 3x4 projection matrix."""
        return self.k @ np.hstack([self.r, self.t[:, None]])

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.r.T @ self.t

    def project(self, points3d):
        """Project (N, 3) world points; returns ((N, 2) pixels, (N,) depths)."""
        pts = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
        cam = pts @ self.r.T + self.t
        depths = cam[:, 2]
        hom = cam @ self.k.T
        return hom[:, :2] / hom[:, 2:3], depths


@dataclass
class Epipole:
    """Null-space point of F; unnormalized with at_infinity when |z| < 1e-12."""

    point: np.ndarray
    at_infinity: bool


# ---------------------------------------------------------------------------
# input plumbing


def as_homogeneous(points) -> np.ndarray:
    """Coerce (N, 2) or (N, 3) points to homogeneous (N, 3) with z = 1."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ValueError(f"expected (N, 2) or (N, 3) points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite coordinates")
    if pts.shape[1] == 2:
        return np.hstack([pts, np.ones((len(pts), 1))])
    z = pts[:, 2]
    if np.any(z == 0):
        raise ValueError("points at infinity are not valid correspondences")
    return pts / z[:, None]


def correspondence_arrays(correspondences):
    """Normalize any accepted correspondence container to two (N, 3) arrays."""
    if isinstance(correspondences, tuple) and len(correspondences) == 2:
        a, b = correspondences
    elif isinstance(correspondences, np.ndarray) and correspondences.ndim == 2 \
            and correspondences.shape[1] == 4:
        a, b = correspondences[:, :2], correspondences[:, 2:]
    else:
        seq = list(correspondences)
        if not seq:
            raise ValueError("empty correspondence set")
        if isinstance(seq[0], Correspondence):
            a = np.array([c.x for c in seq])
            b = np.array([c.xp for c in seq])
        else:
            raise TypeError(
                "correspondences must be Correspondence objects, an (N, 4) array, "
                "or a (points_a, points_b) tuple"
            )
    a = as_homogeneous(a)
    b = as_homogeneous(b)
    if len(a) != len(b):
        raise ValueError(f"point sets differ in length: {len(a)} vs {len(b)}")
    return a, b


def _f_matrix(f) -> np.ndarray:
    if isinstance(f, FundamentalMatrix):
        return f.m
    m = np.asarray(f, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    return m


def _canonicalize(m: np.ndarray) -> np.ndarray:
    """Scale to unit Frobenius norm; flip sign so the largest |entry| is positive."""
    norm = np.linalg.norm(m)
    if norm == 0 or not np.isfinite(norm):
        raise EstimationFailedError("estimated matrix is zero or non-finite")
    m = m / norm
    flat = np.abs(m).ravel()
    if m.ravel()[int(np.argmax(flat))] < 0:
        m = -m
    return m


# ---------------------------------------------------------------------------
# normalization and the 8-point solver


def normalize_points(points):
    """Hartley normalization of homogeneous points.

    Returns (transformed points, T) where T translates the centroid to the
    origin and scales so the mean distance from the origin is sqrt(2).
    """
    pts = as_homogeneous(points)
    if len(pts) < 2:
        raise ValueError(f"need at least 2 points, got {len(pts)}")
    xy = pts[:, :2]
    centroid = xy.mean(axis=0)
    dists = np.linalg.norm(xy - centroid, axis=1)
    mean_dist = dists.mean()
    if mean_dist < 1e-12:
        raise DegenerateConfigurationError("all points are identical")
    s = np.sqrt(2.0) / mean_dist
    T = np.array(
        [
            [s, 0.0, -s * centroid[0]],
            [0.0, s, -s * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return pts @ T.T, T


def _eight_point_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Core normalized 8-point solve on homogeneous (N, 3) arrays."""
    na, Ta = normalize_points(a)
    nb, Tb = normalize_points(b)
    # bilinear constraint rows: one per correspondence, unknown F' rav'd row-major
    design = np.empty((len(na), 9))
    design[:, 0] = nb[:, 0] * na[:, 0]
    design[:, 1] = nb[:, 0] * na[:, 1]
    design[:, 2] = nb[:, 0]
    design[:, 3] = nb[:, 1] * na[:, 0]
    design[:, 4] = nb[:, 1] * na[:, 1]
    design[:, 5] = nb[:, 1]
    design[:, 6] = na[:, 0]
    design[:, 7] = na[:, 1]
    design[:, 8] = 1.0
    _, s, vt = np.linalg.svd(design)
    if s[-2] <= 0 or s[0] / s[-2] > CONDITION_LIMIT:
        raise DegenerateConfigurationError(
            "correspondences are degenerate (coplanar or repeated points)"
        )
    f_hat = vt[-1].reshape(3, 3)
    u, sv, vt2 = np.linalg.svd(f_hat)
    f_hat = (u * np.array([sv[0], sv[1], 0.0])) @ vt2
    return _canonicalize(Tb.T @ f_hat @ Ta)


def eight_point(correspondences) -> FundamentalMatrix:
    """Estimate F with the normalized 8-point algorithm (least squares for N > 8)."""
    a, b = correspondence_arrays(correspondences)
    if len(a) < 8:
        raise ValueError(f"need at least 8 correspondences, got {len(a)}")
    m = _eight_point_arrays(a, b)
    return FundamentalMatrix(m, inlier_count=len(a), method="eight_point")


# ---------------------------------------------------------------------------
# residuals


def sampson_errors(f, points_a, points_b):
    """Batched first-order geometric error, in px^2.

    Returns (values, flagged). Entries whose denominator falls below 1e-15
    (both points at epipoles) are set to the cap value and flagged; callers
    exclude flagged entries from aggregation.
    """
    m = _f_matrix(f)
    a = as_homogeneous(points_a)
    b = as_homogeneous(points_b)
    fx = a @ m.T          # lines in image B
    ftx = b @ m           # lines in image A
    resid = np.einsum("ij,ij->i", b, fx)
    denom = fx[:, 0] ** 2 + fx[:, 1] ** 2 + ftx[:, 0] ** 2 + ftx[:, 1] ** 2
    flagged = denom < DENOM_EPS
    values = np.empty(len(a))
    safe = ~flagged
    values[safe] = resid[safe] ** 2 / denom[safe]
    values[flagged] = SAMPSON_CAP
    return values, flagged


def sampson_error(f, c: Correspondence, with_flag: bool = False):
    """Sampson error of a single correspondence: (x'^T F x)^2 over the
    summed squared line gradients; returns the cap value when degenerate."""
    values, flagged = sampson_errors(f, c.x[None, :], c.xp[None, :])
    if with_flag:
        return float(values[0]), bool(flagged[0])
    return float(values[0])


def symmetric_epipolar_errors(f, points_a, points_b):
    """Batched sum of squared point-to-epipolar-line distances in both images.

    Returns (values, flagged); a correspondence whose epipolar line in either
    image has zero normal is capped and flagged.
    """
    m = _f_matrix(f)
    a = as_homogeneous(points_a)
    b = as_homogeneous(points_b)
    fx = a @ m.T
    ftx = b @ m
    resid2 = np.einsum("ij,ij->i", b, fx) ** 2
    norm_b = fx[:, 0] ** 2 + fx[:, 1] ** 2
    norm_a = ftx[:, 0] ** 2 + ftx[:, 1] ** 2
    flagged = (norm_b < DENOM_EPS) | (norm_a < DENOM_EPS)
    values = np.empty(len(a))
    safe = ~flagged
    values[safe] = resid2[safe] / norm_b[safe] + resid2[safe] / norm_a[safe]
    values[flagged] = SAMPSON_CAP
    return values, flagged


def symmetric_epipolar_error(f, c: Correspondence, with_flag: bool = False):
    """Symmetric epipolar error of a single correspondence."""
    values, flagged = symmetric_epipolar_errors(f, c.x[None, :], c.xp[None, :])
    if with_flag:
        return float(values[0]), bool(flagged[0])
    return float(values[0])


# ---------------------------------------------------------------------------
# robust estimation


def ransac_fundamental(
    correspondences,
    iterations: int = 2000,
    inlier_threshold: float = 1.0,
    seed: int = 0,
    adaptive: bool = False,
    confidence: float = 0.999,
):
    """RANSAC over 8-point minimal samples; returns (FundamentalMatrix, inlier mask).

    Deterministic for a given seed: iteration i draws its sample from an RNG
    seeded with seed XOR i, so any evaluation order gives identical results.
    Consensus ties are broken by lower mean inlier Sampson error. The winning
    model is refit on its full consensus set. With adaptive=True the loop
    stops early once `confidence` is reached for the best inlier ratio seen.
    """
    a, b = correspondence_arrays(correspondences)
    n = len(a)
    if n < 8:
        raise ValueError(f"need at least 8 correspondences, got {n}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    best = None  # (count, mean_inlier_error, mask, model)
    for i in range(iterations):
        rng = np.random.default_rng(seed ^ i)
        idx = rng.choice(n, size=8, replace=False)
        try:
            model = _eight_point_arrays(a[idx], b[idx])
        except DegenerateConfigurationError:
            continue
        errors, flagged = sampson_errors(model, a, b)
        mask = (errors < inlier_threshold) & ~flagged
        count = int(mask.sum())
        if count == 0:
            continue
        mean_err = float(errors[mask].mean())
        if best is None or count > best[0] or (count == best[0] and mean_err < best[1]):
            best = (count, mean_err, mask, model)
        if adaptive and best is not None and best[0] >= 8:
            ratio = best[0] / n
            miss = 1.0 - min(ratio, 1.0 - 1e-12) ** 8
            needed = int(np.ceil(np.log(1.0 - confidence) / np.log(miss)))
            if i + 1 >= needed:
                break

    if best is None:
        raise EstimationFailedError("no RANSAC iteration produced a valid model")
    count, _, mask, model = best
    if count < 8:
        raise EstimationFailedError(
            f"best consensus has only {count} inliers (need at least 8)"
        )
    try:
        refit = _eight_point_arrays(a[mask], b[mask])
    except DegenerateConfigurationError:
        refit = model  # consensus set itself degenerate; keep the sample model
    errors, flagged = sampson_errors(refit, a, b)
    final_mask = (errors < inlier_threshold) & ~flagged
    if int(final_mask.sum()) < 8:
        final_mask = mask  # refit drifted off the consensus; keep the sample mask
        refit = model
    return (
        FundamentalMatrix(refit, inlier_count=int(final_mask.sum()), method="eight_point"),
        final_mask,
    )


# ---------------------------------------------------------------------------
# camera oracle


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def fundamental_from_cameras(cam_a: CameraMatrix, cam_b: CameraMatrix) -> FundamentalMatrix:
    """Exact F for a known camera pair: F = [e']_x P' P+ with e' = P' C."""
    if np.linalg.norm(cam_a.center - cam_b.center) <= 1e-9:
        raise DegenerateConfigurationError(
            "camera centers coincide; epipolar geometry is undefined"
        )
    p = cam_a.p
    pp = cam_b.p
    center_h = np.append(cam_a.center, 1.0)
    e_prime = pp @ center_h
    m = skew(e_prime) @ pp @ np.linalg.pinv(p)
    return FundamentalMatrix(_canonicalize(m), inlier_count=0, method="from_cameras")


def epipole(f, which: str = "left") -> Epipole:
    """Epipole as the null vector of F (left) or F^T (right).

    Finite epipoles are scaled to third coordinate 1; when |z| < 1e-12 the
    unit-norm vector is returned unnormalized with at_infinity set.
    """
    m = _f_matrix(f)
    if which not in ("left", "right"):
        raise ValueError(f"which must be 'left' or 'right', got {which!r}")
    if which == "right":
        m = m.T
    _, _, vt = np.linalg.svd(m)
    v = vt[-1]
    if abs(v[2]) < 1e-12:
        if v[int(np.argmax(np.abs(v)))] < 0:
            v = -v
        return Epipole(v, at_infinity=True)
    return Epipole(v / v[2], at_infinity=False)
