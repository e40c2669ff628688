"""Moment-tensor algebra.

Double-couple parameterization, uniform mechanism sampling, conversion to
and from the normalized training label, far-field radiation patterns, and
the Kagan angle between two double-couple orientations.

Conventions: north-east-down (NED) coordinates; strike/dip/rake follow the
Aki & Richards definitions; scalar moment M0 = ||M_dev||_F / sqrt(2) so a
pure double couple recovers its nominal moment; Mw = (2/3)(log10 M0 - 9.1)
with M0 in N*m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTensor, ZeroTensor

MW_LOG_OFFSET = 9.1
DEGENERACY_RTOL = 1e-9

# Component order used throughout: Mxx, Myy, Mzz, Mxy, Mxz, Myz.
_SYM_IDX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


@dataclass
class MomentTensor:
    """Symmetric 3x3 seismic moment tensor in NED coordinates, N*m.

    Stored as the 6 independent components (Mxx, Myy, Mzz, Mxy, Mxz, Myz).
    """

    m: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        if self.m.shape != (6,):
            raise ValueError(f"expected 6 components, got shape {self.m.shape}")
        if not np.all(np.isfinite(self.m)):
            raise ValueError("moment tensor components must be finite")

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "MomentTensor":
        mat = np.asarray(mat, dtype=float)
        return cls(np.array([mat[i, j] for i, j in _SYM_IDX]))

    @property
    def matrix(self) -> np.ndarray:
        mxx, myy, mzz, mxy, mxz, myz = self.m
        return np.array([[mxx, mxy, mxz], [mxy, myy, myz], [mxz, myz, mzz]])

    @property
    def norm(self) -> float:
        """Frobenius norm of the full 3x3 matrix."""
        return float(np.linalg.norm(self.matrix))

    def deviatoric(self) -> np.ndarray:
        """Trace-free part as a 3x3 matrix."""
        mat = self.matrix
        return mat - np.trace(mat) / 3.0 * np.eye(3)

    def scalar_moment(self) -> float:
        """M0 = ||M_dev||_F / sqrt(2) (Silver & Jordan convention)."""
        return float(np.linalg.norm(self.deviatoric()) / math.sqrt(2.0))


@dataclass
class DoubleCouple:
    """Pure-shear source: strike/dip/rake in degrees plus scalar moment M0 in N*m."""

    strike: float
    dip: float
    rake: float
    m0: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.strike < 360.0:
            raise ValueError(f"strike {self.strike} outside [0, 360)")
        if not 0.0 <= self.dip <= 90.0:
            raise ValueError(f"dip {self.dip} outside [0, 90]")
        if not -180.0 <= self.rake <= 180.0:
            raise ValueError(f"rake {self.rake} outside [-180, 180]")
        if not (math.isfinite(self.m0) and self.m0 >= 0.0):
            raise ValueError(f"scalar moment {self.m0} must be finite and >= 0")


@dataclass
class SourceLabel:
    """Regression target: unit-Frobenius deviatoric components plus Mw.

    ``dev`` holds (Mxx, Myy, Mxy, Mxz, Myz) of the unit-norm deviatoric
    tensor; Mzz is implied by the zero trace.
    """

    dev: np.ndarray
    mw: float

    def __post_init__(self):
        self.dev = np.asarray(self.dev, dtype=float)
        if self.dev.shape != (5,):
            raise ValueError(f"expected 5 deviatoric components, got {self.dev.shape}")

    def as_vector(self) -> np.ndarray:
        """Six training targets: the 5 dev components followed by Mw."""
        return np.concatenate([self.dev, [self.mw]])

    @classmethod
    def from_vector(cls, v) -> "SourceLabel":
        v = np.asarray(v, dtype=float)
        return cls(dev=v[:5].copy(), mw=float(v[5]))


def sdr_to_mt(dc: DoubleCouple) -> MomentTensor:
    """Convert strike/dip/rake/M0 to a moment tensor (Aki & Richards)."""
    phi = math.radians(dc.strike)
    delta = math.radians(dc.dip)
    lam = math.radians(dc.rake)
    sd, cd = math.sin(delta), math.cos(delta)
    s2d, c2d = math.sin(2 * delta), math.cos(2 * delta)
    sf, cf = math.sin(phi), math.cos(phi)
    s2f, c2f = math.sin(2 * phi), math.cos(2 * phi)
    sl, cl = math.sin(lam), math.cos(lam)

    m0 = dc.m0
    mxx = -m0 * (sd * cl * s2f + s2d * sl * sf * sf)
    myy = m0 * (sd * cl * s2f - s2d * sl * cf * cf)
    mzz = m0 * s2d * sl
    mxy = m0 * (sd * cl * c2f + 0.5 * s2d * sl * s2f)
    mxz = -m0 * (cd * cl * cf + c2d * sl * sf)
    myz = -m0 * (cd * cl * sf - c2d * sl * cf)
    return MomentTensor(np.array([mxx, myy, mzz, mxy, mxz, myz]))


def moment_to_mw(m0: float) -> float:
    """Mw from scalar moment in N*m."""
    return (2.0 / 3.0) * (math.log10(m0) - MW_LOG_OFFSET)


def mw_to_moment(mw: float) -> float:
    """Scalar moment in N*m from Mw."""
    return 10.0 ** (1.5 * mw + MW_LOG_OFFSET)


def mt_to_label(mt: MomentTensor) -> SourceLabel:
    """Normalize a tensor into the (unit deviatoric, Mw) training label."""
    if mt.norm == 0.0:
        raise ZeroTensor("moment tensor has zero Frobenius norm")
    dev = mt.deviatoric()
    dev_norm = float(np.linalg.norm(dev))
    if dev_norm == 0.0:
        raise ZeroTensor("deviatoric part has zero Frobenius norm")
    unit = dev / dev_norm
    m0 = dev_norm / math.sqrt(2.0)
    return SourceLabel(
        dev=np.array([unit[0, 0], unit[1, 1], unit[0, 1], unit[0, 2], unit[1, 2]]),
        mw=moment_to_mw(m0),
    )


def label_to_mt(label: SourceLabel) -> MomentTensor:
    """Rebuild the full tensor from a label; Mzz comes from the zero trace."""
    mxx, myy, mxy, mxz, myz = label.dev
    mzz = -(mxx + myy)
    mat = np.array([[mxx, mxy, mxz], [mxy, myy, myz], [mxz, myz, mzz]])
    norm = float(np.linalg.norm(mat))
    if norm == 0.0:
        raise ZeroTensor("all-zero deviatoric components")
    m0 = mw_to_moment(label.mw)
    mat *= math.sqrt(2.0) * m0 / norm
    return MomentTensor.from_matrix(mat)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation matrix from a uniform random unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


# Reference double couple (strike 0, dip 90, rake 0, M0 = 1): pure Mxy.
_M_REF = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def sample_uniform_dc(rng: np.random.Generator, mw_range=(3.0, 5.5)) -> MomentTensor:
    """Draw a double couple with Haar-uniform orientation and uniform Mw."""
    lo, hi = mw_range
    if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
        raise ValueError(f"bad magnitude interval {mw_range}")
    rot = random_rotation(rng)
    mw = float(rng.uniform(lo, hi))
    mat = rot @ _M_REF @ rot.T * mw_to_moment(mw)
    return MomentTensor.from_matrix(mat)


def principal_frame(mt: MomentTensor) -> np.ndarray:
    """Right-handed frame with columns (t, b, p) of the deviatoric part.

    Raises DegenerateTensor when the eigenvalues are closer than
    DEGENERACY_RTOL relative to the tensor norm.
    """
    norm = mt.norm
    if norm == 0.0:
        raise ZeroTensor("cannot orient a zero tensor")
    vals, vecs = np.linalg.eigh(mt.deviatoric())
    gap = min(vals[1] - vals[0], vals[2] - vals[1])
    if gap <= DEGENERACY_RTOL * norm:
        raise DegenerateTensor(f"eigenvalue gap {gap:.3e} below tolerance")
    frame = vecs[:, ::-1].copy()  # columns: t (max), b (mid), p (min)
    if np.linalg.det(frame) < 0:
        frame[:, 1] = -frame[:, 1]
    return frame


def _rotation_to_quaternion(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix (Shepperd's method)."""
    tr = rot[0, 0] + rot[1, 1] + rot[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (rot[2, 1] - rot[1, 2]) / s, (rot[0, 2] - rot[2, 0]) / s,
             (rot[1, 0] - rot[0, 1]) / s]
        )
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = math.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2
        q = np.array(
            [(rot[2, 1] - rot[1, 2]) / s, 0.25 * s, (rot[0, 1] + rot[1, 0]) / s,
             (rot[0, 2] + rot[2, 0]) / s]
        )
    elif rot[1, 1] > rot[2, 2]:
        s = math.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2
        q = np.array(
            [(rot[0, 2] - rot[2, 0]) / s, (rot[0, 1] + rot[1, 0]) / s, 0.25 * s,
             (rot[1, 2] + rot[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2
        q = np.array(
            [(rot[1, 0] - rot[0, 1]) / s, (rot[0, 2] + rot[2, 0]) / s,
             (rot[1, 2] + rot[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def kagan_angle(a: MomentTensor, b: MomentTensor) -> float:
    """Minimal rotation angle in degrees between two double-couple orientations.

    The relative rotation of the principal-axis frames, expressed in
    principal-axes coordinates, is converted to a quaternion; taking the
    largest absolute component minimizes over the 4-element double-couple
    symmetry group, so the result lies in [0, 120].
    """
    frame_a = principal_frame(a)
    frame_b = principal_frame(b)
    q = _rotation_to_quaternion(frame_a.T @ frame_b)
    c = min(1.0, float(np.max(np.abs(q))))
    return 2.0 * math.degrees(math.acos(c))


def radiation(mt: MomentTensor, ray: np.ndarray) -> tuple[float, np.ndarray]:
    """Far-field P amplitude and S vector for a unit ray leaving the source.

    p_amp is the quadratic form ray.T @ M @ ray; the S vector is the
    transverse remainder M @ ray - p_amp * ray.
    """
    ray = np.asarray(ray, dtype=float)
    if abs(np.linalg.norm(ray) - 1.0) > 1e-9:
        raise ValueError("ray must be a unit vector")
    mat = mt.matrix
    mg = mat @ ray
    p_amp = float(ray @ mg)
    return p_amp, mg - p_amp * ray
