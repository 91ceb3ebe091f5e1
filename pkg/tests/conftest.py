"""Shared fixtures: a known two-camera rig and exact correspondence sets."""

import numpy as np
import pytest

from epigeo.epipolar import CameraMatrix


def rotation_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


K_DEFAULT = np.array([[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]])


def make_rig(angle=0.15, center=(1.0, 0.2, -0.3)):
    """Camera A at origin looking down +z, camera B rotated/translated."""
    cam_a = CameraMatrix(K_DEFAULT, np.eye(3), np.zeros(3))
    r = rotation_y(angle)
    c = np.asarray(center, dtype=np.float64)
    cam_b = CameraMatrix(K_DEFAULT, r, -r @ c)
    return cam_a, cam_b


def project_box(cam_a, cam_b, n, seed=11, lo=(-2, -2, 4), hi=(2, 2, 9)):
    """Project n uniform box points through both cameras; returns (xa, xb, X)."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n, 3))
    xa, da = cam_a.project(pts)
    xb, db = cam_b.project(pts)
    assert (da > 0).all() and (db > 0).all()
    return xa, xb, pts


@pytest.fixture
def rig():
    return make_rig()


@pytest.fixture
def rig_points(rig):
    cam_a, cam_b = rig
    xa, xb, _ = project_box(cam_a, cam_b, 20)
    return cam_a, cam_b, xa, xb
