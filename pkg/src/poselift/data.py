"""Skeleton sequence data: synthetic motion, corruption, augmentation, file I/O.

Synthetic samples come from a toy kinematic chain. Joint angles follow seeded
sums of 2-4 sinusoids with distinct frequencies, 3D joints come from forward
kinematics, and the 2D observation drops the depth axis and adds a constant
per-sequence translation. Ground truth is the central frame's root-relative
3D pose. 2D coordinates live in normalized image units, roughly [-1, 1];
sigma values quoted in pixels convert at 1 px = 1/500 normalized units.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import Rng

__all__ = [
    "SkeletonMeta",
    "SkeletonSample",
    "NoiseSpec",
    "DatasetError",
    "PIXEL_TO_NORM",
    "default_skeleton",
    "generate_synthetic",
    "add_noise",
    "horizontal_flip",
    "crop_center",
    "save_samples",
    "load_samples",
    "export_csv",
]

# Fig-5 style sigma values are quoted in pixels; this fixed constant maps them
# onto the normalized coordinate units used everywhere else.
PIXEL_TO_NORM = 1.0 / 500.0


class DatasetError(ValueError):
    """Raised for malformed dataset files or inconsistent sample data."""


@dataclass(frozen=True)
class SkeletonMeta:
    joint_names: tuple[str, ...]
    mirror_pairs: tuple[tuple[int, int], ...]
    root: int = 0

    @property
    def joints(self) -> int:
        return len(self.joint_names)

    def mirror_map(self) -> np.ndarray:
        """Per-joint mirror indices; must be an involution with a fixed root."""
        mapping = np.arange(self.joints)
        for a, b in self.mirror_pairs:
            mapping[a] = b
            mapping[b] = a
        if not np.array_equal(mapping[mapping], np.arange(self.joints)):
            raise DatasetError("mirror pairs do not form an involution")
        if mapping[self.root] != self.root:
            raise DatasetError("root joint must map to itself under mirroring")
        return mapping


@dataclass
class SkeletonSample:
    seq2d: np.ndarray  # [F, J, 2] normalized image coordinates
    pose3d_center: np.ndarray  # [J, 3] root-relative pose of the central frame
    meta: SkeletonMeta

    def validate(self) -> "SkeletonSample":
        j = self.meta.joints
        if self.seq2d.ndim != 3 or self.seq2d.shape[1:] != (j, 2):
            raise DatasetError(f"seq2d shape {self.seq2d.shape} inconsistent with {j} joints")
        if self.pose3d_center.shape != (j, 3):
            raise DatasetError(f"pose3d_center shape {self.pose3d_center.shape} inconsistent with {j} joints")
        if not np.all(np.isfinite(self.seq2d)) or not np.all(np.isfinite(self.pose3d_center)):
            raise DatasetError("sample contains non-finite values")
        return self

    @property
    def frames(self) -> int:
        return self.seq2d.shape[0]


@dataclass
class NoiseSpec:
    """Zero-mean Gaussian corruption of the 2D observations."""

    sigma: float
    target: str = "all"  # "all" or one joint name
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


# 17-joint human-like skeleton: pelvis root, two legs, spine/head column, two
# arms. Offsets are mirror-symmetric in x so the base pose is a flip fixed
# point; total reach stays within ~0.75 normalized units.
_H17_NAMES = (
    "pelvis", "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "spine", "thorax", "neck", "head",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
)
_H17_PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
_H17_OFFSETS = (
    (0.0, 0.0, 0.0),
    (-0.10, -0.02, 0.0), (0.0, -0.30, 0.0), (0.0, -0.28, 0.0),
    (0.10, -0.02, 0.0), (0.0, -0.30, 0.0), (0.0, -0.28, 0.0),
    (0.0, 0.16, 0.0), (0.0, 0.16, 0.0), (0.0, 0.08, 0.0), (0.0, 0.10, 0.0),
    (0.12, 0.0, 0.0), (0.0, -0.20, 0.0), (0.0, -0.18, 0.0),
    (-0.12, 0.0, 0.0), (0.0, -0.20, 0.0), (0.0, -0.18, 0.0),
)
_H17_PAIRS = ((1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16))


def default_skeleton(joints: int = 17) -> tuple[SkeletonMeta, tuple[int, ...], np.ndarray]:
    """Skeleton meta, parent indices, and base bone offsets for J joints.

    J = 17 is the documented human-like chain; any other J builds a generic
    symmetric two-limb chain (odd indices left, even indices right).
    """
    if joints < 1:
        raise ValueError("joints must be >= 1")
    if joints == 17:
        return SkeletonMeta(_H17_NAMES, _H17_PAIRS, root=0), _H17_PARENTS, np.array(_H17_OFFSETS)

    names = ["root"]
    parents = [-1]
    offsets = [(0.0, 0.0, 0.0)]
    pairs = []
    bones = max(1, (joints - 1 + 1) // 2)
    seg = 0.55 / bones
    for j in range(1, joints):
        side = 1 if j % 2 == 1 else -1  # odd left (+x), even right (-x)
        level = (j + 1) // 2
        parents.append(0 if j <= 2 else j - 2)
        offsets.append((side * 0.6 * seg, -seg, 0.0))
        names.append(f"{'left' if side > 0 else 'right'}_{level:02d}")
        if j % 2 == 0:
            pairs.append((j - 1, j))
    if joints % 2 == 0 and joints > 1:
        # unpaired last joint: recenter it on the backbone so mirroring fixes it
        offsets[-1] = (0.0, -seg, 0.0)
        parents[-1] = 0
        names[-1] = f"mid_{(joints - 1 + 1) // 2:02d}"
    meta = SkeletonMeta(tuple(names), tuple(pairs), root=0)
    return meta, tuple(parents), np.asarray(offsets, dtype=np.float64)


def _sinusoid_tracks(rng: Rng, frames: int, count: int) -> np.ndarray:
    """[count, frames] angle tracks, each a sum of 2-4 slow sinusoids.

    Frequencies stay below ~0.9 cycles per window and amplitudes decay
    quadratically with term order, so trajectories are dominated by their
    lowest DCT coefficients.
    """
    t = np.arange(frames, dtype=np.float64)
    tracks = np.zeros((count, frames))
    for k in range(count):
        terms = 2 + rng.randint(3)
        for order in range(1, terms + 1):
            amp = rng.uniform(0.08, 0.4) / (order * order)
            cycles = rng.uniform(0.15, 0.9)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            tracks[k] += amp * np.sin(2.0 * np.pi * cycles * t / frames + phase)
    return tracks


def _forward_kinematics(parents, offsets, pitch, yaw) -> np.ndarray:
    """World joint positions [F, J, 3] from per-joint pitch/yaw angle tracks."""
    frames = pitch.shape[1]
    joints = len(parents)
    pos = np.zeros((frames, joints, 3))
    for j in range(joints):
        if parents[j] < 0:
            continue
        cp, sp = np.cos(pitch[j]), np.sin(pitch[j])
        cy, sy = np.cos(yaw[j]), np.sin(yaw[j])
        ox, oy, oz = offsets[j]
        # R_y(yaw) @ R_x(pitch) applied to the base offset
        rx = ox * cy + oz * sy * cp + oy * sy * sp
        ry = oy * cp - oz * sp
        rz = -ox * sy + oz * cy * cp + oy * cy * sp
        pos[:, j, 0] = pos[:, parents[j], 0] + rx
        pos[:, j, 1] = pos[:, parents[j], 1] + ry
        pos[:, j, 2] = pos[:, parents[j], 2] + rz
    return pos


def generate_synthetic(count: int, frames: int, joints: int = 17, seed: int = 0) -> list[SkeletonSample]:
    """Seeded synthetic dataset of ``count`` samples, each F frames, J joints."""
    if count < 1 or frames < 1 or joints < 1:
        raise ValueError("count, frames and joints must all be >= 1")
    meta, parents, offsets = default_skeleton(joints)
    rng = Rng(seed)
    samples = []
    for _ in range(count):
        srng = rng.spawn()
        pitch = _sinusoid_tracks(srng, frames, joints)
        yaw = _sinusoid_tracks(srng, frames, joints)
        world = _forward_kinematics(parents, offsets, pitch, yaw)
        # slow wander of the root in all three axes
        root_track = _sinusoid_tracks(srng, frames, 3) * 0.25
        world = world + root_track.T[:, None, :]
        translation = np.array([srng.uniform(-0.15, 0.15), srng.uniform(-0.15, 0.15)])
        seq2d = world[:, :, :2] + translation
        center = frames // 2
        pose3d = world[center] - world[center, meta.root]
        samples.append(SkeletonSample(seq2d=seq2d, pose3d_center=pose3d, meta=meta).validate())
    return samples


def add_noise(sample: SkeletonSample, spec: NoiseSpec) -> SkeletonSample:
    """Gaussian-corrupted copy of the 2D sequence; 3D ground truth untouched."""
    if spec.sigma == 0.0:
        return replace(sample, seq2d=sample.seq2d.copy())
    rng = Rng(spec.seed)
    if spec.target == "all":
        noise = rng.normals(sample.seq2d.shape, sigma=spec.sigma)
        return replace(sample, seq2d=sample.seq2d + noise)
    try:
        j = sample.meta.joint_names.index(spec.target)
    except ValueError:
        raise DatasetError(f"unknown joint name {spec.target!r}") from None
    seq = sample.seq2d.copy()
    seq[:, j, :] += rng.normals(seq[:, j, :].shape, sigma=spec.sigma)
    return replace(sample, seq2d=seq)


def horizontal_flip(sample: SkeletonSample) -> SkeletonSample:
    """Negate the x axis and swap every left/right joint pair, in 2D and 3D."""
    mapping = sample.meta.mirror_map()
    seq = sample.seq2d[:, mapping, :].copy()
    seq[:, :, 0] *= -1.0
    pose = sample.pose3d_center[mapping, :].copy()
    pose[:, 0] *= -1.0
    return replace(sample, seq2d=seq, pose3d_center=pose)


def crop_center(sample: SkeletonSample, frames: int) -> SkeletonSample:
    """Restrict a sample to its central ``frames`` frames (same ground truth)."""
    full = sample.frames
    if not 1 <= frames <= full:
        raise ValueError(f"crop_center: {frames} out of range 1..{full}")
    center = full // 2
    start = center - (frames - 1) // 2
    return replace(sample, seq2d=sample.seq2d[start : start + frames].copy())


# ---------------------------------------------------------------------------
# dataset files: magic "PFDS", version, count, F, J, meta JSON, raw f64 blocks

_DS_MAGIC = b"PFDS"
_DS_VERSION = 1


def save_samples(samples: list[SkeletonSample], path) -> None:
    if samples:
        frames, joints = samples[0].frames, samples[0].meta.joints
        meta = samples[0].meta
        for s in samples:
            if s.frames != frames or s.meta.joints != joints:
                raise DatasetError("all samples in one file must share F and J")
            s.validate()
    else:
        frames, joints = 0, 0
        meta = SkeletonMeta((), ())
    meta_json = json.dumps({
        "joint_names": list(meta.joint_names),
        "mirror_pairs": [list(p) for p in meta.mirror_pairs],
        "root": meta.root,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_DS_MAGIC)
        fh.write(struct.pack("<IIII", _DS_VERSION, len(samples), frames, joints))
        fh.write(struct.pack("<I", len(meta_json)))
        fh.write(meta_json)
        for s in samples:
            fh.write(np.ascontiguousarray(s.seq2d, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.pose3d_center, dtype="<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DatasetError(f"truncated dataset: wanted {n} bytes for {what} at offset {fh.tell() - len(buf)}")
    return buf


def load_samples(path) -> list[SkeletonSample]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != _DS_MAGIC:
            raise DatasetError(f"bad magic {magic!r} at offset 0, expected {_DS_MAGIC!r}")
        version, count, frames, joints = struct.unpack("<IIII", _read_exact(fh, 16, "header"))
        if version != _DS_VERSION:
            raise DatasetError(f"unsupported dataset version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "meta length"))
        try:
            raw_meta = json.loads(_read_exact(fh, meta_len, "meta").decode("utf-8"))
            meta = SkeletonMeta(
                joint_names=tuple(raw_meta["joint_names"]),
                mirror_pairs=tuple((int(a), int(b)) for a, b in raw_meta["mirror_pairs"]),
                root=int(raw_meta.get("root", 0)),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"malformed skeleton metadata: {exc}") from exc
        if count and meta.joints != joints:
            raise DatasetError(f"metadata lists {meta.joints} joints but header says {joints}")
        samples = []
        for i in range(count):
            seq = np.frombuffer(_read_exact(fh, 8 * frames * joints * 2, f"seq2d of sample {i}"), dtype="<f8")
            pose = np.frombuffer(_read_exact(fh, 8 * joints * 3, f"pose3d of sample {i}"), dtype="<f8")
            sample = SkeletonSample(
                seq2d=seq.astype(np.float64).reshape(frames, joints, 2),
                pose3d_center=pose.astype(np.float64).reshape(joints, 3),
                meta=meta,
            )
            samples.append(sample.validate())
    return samples


def export_csv(sample: SkeletonSample, path) -> None:
    """Debug/plotting export: one row per (frame, joint) with 2D coordinates."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "joint", "x", "y"])
        for f in range(sample.frames):
            for j in range(sample.meta.joints):
                writer.writerow([f, j, repr(sample.seq2d[f, j, 0]), repr(sample.seq2d[f, j, 1])])
