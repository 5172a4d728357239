"""Skeleton data model, body models and body-model downsampling.

Coordinates live in a single ``(T, s, 3)`` float64 array per sequence; the
frame and joint objects are thin views over it.  All arrays are frozen
(``writeable=False``) at construction so the objects can be shared freely.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    IndexOutOfRange,
    JointCountMismatch,
    MissingMapping,
    ModelMismatch,
    NonFiniteCoordinate,
    ParseError,
    TooShort,
    ValidationError,
)

BODY_MODEL_FORMAT_VERSION = 1


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Joint3D:
    x: float
    y: float
    z: float
    confidence: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValidationError(f"non-finite joint coordinate ({self.x}, {self.y}, {self.z})")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")

    def as_array(self):
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True, eq=False)
class SkeletonFrame:
    """One time step: ``joints`` is an ``(s, 3)`` array of positions."""

    joints: np.ndarray
    torso_index: int
    confidence: np.ndarray | None = None

    def __post_init__(self):
        joints = _frozen(self.joints)
        if joints.ndim != 2 or joints.shape[1] != 3:
            raise ValidationError(f"frame joints must have shape (s, 3), got {joints.shape}")
        if not 0 <= self.torso_index < joints.shape[0]:
            raise IndexOutOfRange(f"torso_index {self.torso_index} not in [0, {joints.shape[0]})")
        conf = np.ones(joints.shape[0]) if self.confidence is None else self.confidence
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "confidence", _frozen(conf))

    @property
    def n_joints(self):
        return self.joints.shape[0]

    @classmethod
    def from_joints(cls, joints: Sequence[Joint3D], torso_index: int) -> "SkeletonFrame":
        coords = [[j.x, j.y, j.z] for j in joints]
        return cls(np.asarray(coords, dtype=float).reshape(-1, 3), torso_index,
                   np.array([j.confidence for j in joints], dtype=float))

    def joint(self, j: int) -> Joint3D:
        x, y, z = self.joints[j]
        return Joint3D(float(x), float(y), float(z), float(self.confidence[j]))


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """Time-ordered skeleton frames sharing one joint count and torso index.

    Parameters
    ----------
    coords : array_like, shape (T, s, 3)
    torso_index : int
    confidence : array_like, shape (T, s), optional
        Carried through loaders; feature extraction ignores it.
    label, subject_id, name : optional metadata
    """

    coords: np.ndarray
    torso_index: int
    confidence: np.ndarray | None = None
    label: object = None
    subject_id: object = None
    name: str | None = None

    def __post_init__(self):
        coords = _frozen(self.coords)
        if coords.ndim != 3 or coords.shape[2] != 3:
            raise ValidationError(f"coords must have shape (T, s, 3), got {coords.shape}")
        conf = np.ones(coords.shape[:2]) if self.confidence is None else self.confidence
        conf = _frozen(conf)
        if conf.shape != coords.shape[:2]:
            raise ValidationError(f"confidence shape {conf.shape} != {coords.shape[:2]}")
        if not 0 <= self.torso_index < coords.shape[1]:
            raise IndexOutOfRange(f"torso_index {self.torso_index} not in [0, {coords.shape[1]})")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "confidence", conf)

    @classmethod
    def from_frames(cls, frames: Sequence[SkeletonFrame], **meta) -> "SkeletonSequence":
        if not frames:
            raise TooShort(0)
        s = frames[0].n_joints
        torso = frames[0].torso_index
        for t, f in enumerate(frames):
            if f.n_joints != s:
                raise JointCountMismatch(t, f.n_joints, s)
            if f.torso_index != torso:
                raise ModelMismatch(f"frame {t} torso_index {f.torso_index} != {torso}")
        coords = np.stack([f.joints for f in frames])
        conf = np.stack([f.confidence for f in frames])
        return cls(coords, torso, conf, **meta)

    @property
    def n_frames(self):
        return self.coords.shape[0]

    @property
    def n_joints(self):
        return self.coords.shape[1]

    def frame(self, t: int) -> SkeletonFrame:
        return SkeletonFrame(self.coords[t], self.torso_index, self.confidence[t])

    @property
    def frames(self) -> tuple[SkeletonFrame, ...]:
        return tuple(self.frame(t) for t in range(self.n_frames))

    def with_coords(self, coords, torso_index=None, confidence=None) -> "SkeletonSequence":
        return SkeletonSequence(
            coords,
            self.torso_index if torso_index is None else torso_index,
            confidence,
            label=self.label,
            subject_id=self.subject_id,
            name=self.name,
        )


@dataclass(frozen=True)
class BodyModel:
    """Canonical joint ordering for one skeleton layout.

    ``downsample_maps`` maps a source model name to a tuple ``m`` of length
    ``s`` where target joint ``k`` is copied from source joint ``m[k]``.
    """

    name: str
    joint_names: tuple[str, ...]
    torso_index: int
    downsample_maps: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        maps = {k: tuple(int(i) for i in v) for k, v in dict(self.downsample_maps).items()}
        object.__setattr__(self, "downsample_maps", maps)
        if len(set(self.joint_names)) != len(self.joint_names):
            raise ValidationError(f"body model {self.name!r} has duplicate joint names")
        if not 0 <= self.torso_index < self.n_joints:
            raise IndexOutOfRange(f"torso_index {self.torso_index} not in [0, {self.n_joints})")
        for src, m in maps.items():
            if len(m) != self.n_joints:
                raise ValidationError(
                    f"map from {src!r} has {len(m)} entries, model {self.name!r} has {self.n_joints} joints"
                )
            if len(set(m)) != len(m):
                raise ValidationError(f"map from {src!r} is not injective")
            if min(m) < 0:
                raise IndexOutOfRange(f"map from {src!r} has a negative index")

    def __hash__(self):
        return hash((self.name, self.joint_names, self.torso_index))

    @property
    def n_joints(self):
        return len(self.joint_names)

    def map_from(self, source: "BodyModel") -> tuple[int, ...]:
        if source.name in self.downsample_maps:
            return self.downsample_maps[source.name]
        if source.joint_names == self.joint_names:
            return tuple(range(self.n_joints))
        raise MissingMapping(f"body model {self.name!r} has no downsample map from {source.name!r}")

    def to_dict(self):
        return {
            "format_version": BODY_MODEL_FORMAT_VERSION,
            "name": self.name,
            "joint_names": list(self.joint_names),
            "torso_index": self.torso_index,
            "downsample_maps": {k: list(v) for k, v in self.downsample_maps.items()},
        }

    @classmethod
    def from_dict(cls, doc) -> "BodyModel":
        version = doc.get("format_version")
        if version != BODY_MODEL_FORMAT_VERSION:
            raise ParseError(f"unsupported body model format_version {version!r}")
        try:
            return cls(
                name=str(doc["name"]),
                joint_names=tuple(doc["joint_names"]),
                torso_index=int(doc["torso_index"]),
                downsample_maps=doc.get("downsample_maps", {}),
            )
        except KeyError as exc:
            raise ParseError(f"body model is missing field {exc.args[0]!r}") from None


def save_body_model(model: BodyModel, path):
    from .data_io import atomic_write_text

    atomic_write_text(path, json.dumps(model.to_dict(), indent=2) + "\n")


def load_body_model(path) -> BodyModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno, exc.colno) from None
    return BodyModel.from_dict(doc)


# MSR Action3D world-coordinate skeleton files, 20 joints.  The torso choice
# (spine) is ours; the dataset documentation does not designate one.
MSR20 = BodyModel(
    name="msr20",
    joint_names=(
        "left_shoulder", "right_shoulder", "neck", "spine",
        "left_hip", "right_hip", "hip_center",
        "left_elbow", "right_elbow", "left_wrist", "right_wrist",
        "left_hand", "right_hand", "left_knee", "right_knee",
        "left_ankle", "right_ankle", "left_foot", "right_foot", "head",
    ),
    torso_index=3,
)

# CAD-60 skeleton, 15 joints in file order; "torso" is a tracked joint.
CAD60 = BodyModel(
    name="cad60",
    joint_names=(
        "head", "neck", "torso",
        "left_shoulder", "left_elbow", "right_shoulder", "right_elbow",
        "left_hip", "left_knee", "right_hip", "right_knee",
        "left_hand", "right_hand", "left_foot", "right_foot",
    ),
    torso_index=2,
)

GENERIC15_JOINTS = (
    "head", "neck", "torso",
    "left_shoulder", "left_elbow", "left_hand",
    "right_shoulder", "right_elbow", "right_hand",
    "left_hip", "left_knee", "left_foot",
    "right_hip", "right_knee", "right_foot",
)

_GENERIC_FROM_MSR = {
    "head": "head", "neck": "neck", "torso": "spine",
    "left_shoulder": "left_shoulder", "left_elbow": "left_elbow", "left_hand": "left_hand",
    "right_shoulder": "right_shoulder", "right_elbow": "right_elbow", "right_hand": "right_hand",
    "left_hip": "left_hip", "left_knee": "left_knee", "left_foot": "left_foot",
    "right_hip": "right_hip", "right_knee": "right_knee", "right_foot": "right_foot",
}


def _index_map(target_names, source, rename=None):
    rename = rename or {}
    return tuple(source.joint_names.index(rename.get(n, n)) for n in target_names)


GENERIC15 = BodyModel(
    name="generic15",
    joint_names=GENERIC15_JOINTS,
    torso_index=2,
    downsample_maps={
        "msr20": _index_map(GENERIC15_JOINTS, MSR20, _GENERIC_FROM_MSR),
        "cad60": _index_map(GENERIC15_JOINTS, CAD60),
    },
)

BUILTIN_MODELS = {m.name: m for m in (GENERIC15, MSR20, CAD60)}


def get_body_model(name_or_path) -> BodyModel:
    """Resolve a built-in model name or load a body model file."""
    if isinstance(name_or_path, BodyModel):
        return name_or_path
    if str(name_or_path) in BUILTIN_MODELS:
        return BUILTIN_MODELS[str(name_or_path)]
    return load_body_model(name_or_path)


def validate_sequence(seq: SkeletonSequence, model: BodyModel) -> SkeletonSequence:
    """Return ``seq`` unchanged if it conforms to ``model``.

    Raises
    ------
    TooShort, JointCountMismatch, ModelMismatch, NonFiniteCoordinate
    """
    if seq.n_frames < 2:
        raise TooShort(seq.n_frames)
    if seq.n_joints != model.n_joints:
        raise JointCountMismatch(0, seq.n_joints, model.n_joints)
    if seq.torso_index != model.torso_index:
        raise ModelMismatch(
            f"sequence torso_index {seq.torso_index} != model {model.name!r} torso_index {model.torso_index}"
        )
    bad = ~np.isfinite(seq.coords).all(axis=2)
    if bad.any():
        t, j = np.argwhere(bad)[0]
        raise NonFiniteCoordinate(int(t), int(j))
    return seq


def downsample_sequence(seq: SkeletonSequence, source: BodyModel, target: BodyModel) -> SkeletonSequence:
    """Gather ``target``'s joints out of a sequence recorded with ``source``."""
    index = target.map_from(source)
    if max(index) >= source.n_joints:
        raise IndexOutOfRange(
            f"downsample map references joint {max(index)} but source {source.name!r} "
            f"has {source.n_joints} joints"
        )
    if seq.n_joints != source.n_joints:
        raise JointCountMismatch(0, seq.n_joints, source.n_joints)
    index = np.asarray(index, dtype=np.intp)
    return seq.with_coords(
        seq.coords[:, index, :],
        torso_index=target.torso_index,
        confidence=seq.confidence[:, index],
    )
