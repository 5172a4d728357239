"""Skeleton file loaders, dataset manifests, label matrices and binary containers.

File grammars are documented in ``docs/formats.md``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FrameSizeError, HeaderMismatch, OutOfRangeLabel, ParseError, ValidationError
from .features import FeatureRanges, HistogramConfig, PartitionLayout
from .skeleton import BodyModel, SkeletonSequence, downsample_sequence, get_body_model, validate_sequence

CANONICAL_MAGIC = "FABL-SKELETON"
CANONICAL_VERSION = 1
MANIFEST_VERSION = 1
CONTAINER_VERSION = 1
FEATURES_KIND = b"FEAT"
MODEL_KIND = b"MODL"


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# -- labels -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LabelMatrix:
    Y: np.ndarray
    class_names: tuple[str, ...]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.Y, axis=1)


def build_label_matrix(labels: Sequence[int], c: int, class_names=None) -> LabelMatrix:
    """One-hot n x c indicator matrix; row i has a 1 in column ``labels[i]``."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValidationError("labels must be a 1-D sequence")
    if labels.size and (not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= c):
        raise OutOfRangeLabel(f"labels must be integers in [0, {c})")
    Y = np.zeros((labels.size, c))
    Y[np.arange(labels.size), labels] = 1.0
    names = tuple(str(i) for i in range(c)) if class_names is None else tuple(class_names)
    return LabelMatrix(Y, names)


# -- canonical skeleton files -------------------------------------------------

def save_canonical(seq: SkeletonSequence, path):
    """Write ``seq`` in the canonical text format (values via ``repr`` so they round-trip)."""
    lines = [
        f"{CANONICAL_MAGIC} {CANONICAL_VERSION}",
        f"joints {seq.n_joints}",
        f"torso {seq.torso_index}",
        f"frames {seq.n_frames}",
    ]
    if seq.label is not None:
        lines.append(f"label {seq.label}")
    if seq.subject_id is not None:
        lines.append(f"subject {seq.subject_id}")
    lines.append("data")
    for t in range(seq.n_frames):
        for j in range(seq.n_joints):
            x, y, z = (repr(float(v)) for v in seq.coords[t, j])
            lines.append(f"{x} {y} {z} {float(seq.confidence[t, j])!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_floats(tokens, path, lineno):
    out = []
    for col, tok in enumerate(tokens, start=1):
        try:
            out.append(float(tok))
        except ValueError:
            raise ParseError(f"cannot parse {tok!r} as a number", path, lineno, col) from None
    return out


def load_canonical(path) -> SkeletonSequence:
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError:
        raise ParseError("file is not UTF-8 text", path) from None
    rows = [(i, ln.strip()) for i, ln in enumerate(text.splitlines(), start=1)]
    rows = [(i, ln) for i, ln in rows if ln and not ln.startswith("#")]
    if not rows:
        raise ParseError("empty file", path)
    lineno, first = rows[0]
    parts = first.split()
    if len(parts) != 2 or parts[0] != CANONICAL_MAGIC:
        raise ParseError(f"expected '{CANONICAL_MAGIC} <version>' header", path, lineno)
    if parts[1] != str(CANONICAL_VERSION):
        raise ParseError(f"unsupported format version {parts[1]!r}", path, lineno, 2)
    header = {}
    body_start = None
    for k, (lineno, ln) in enumerate(rows[1:], start=1):
        if ln == "data":
            body_start = k + 1
            break
        key, _, value = ln.partition(" ")
        if key not in ("joints", "torso", "frames", "label", "subject") or not value:
            raise ParseError(f"unexpected header line {ln!r}", path, lineno)
        header[key] = value.strip()
    if body_start is None:
        raise ParseError("missing 'data' line", path)
    for key in ("joints", "torso", "frames"):
        if key not in header:
            raise ParseError(f"header is missing '{key}'", path)
        try:
            header[key] = int(header[key])
        except ValueError:
            raise ParseError(f"header field '{key}' is not an integer", path) from None
    s, T = header["joints"], header["frames"]
    body = rows[body_start:]
    if len(body) != s * T:
        raise HeaderMismatch(
            f"header declares {T} frames x {s} joints = {s * T} rows, body has {len(body)}", path
        )
    coords = np.empty((T * s, 3))
    conf = np.ones(T * s)
    for r, (lineno, ln) in enumerate(body):
        vals = _parse_floats(ln.split(), path, lineno)
        if len(vals) not in (3, 4):
            raise ParseError(f"expected 3 or 4 values, found {len(vals)}", path, lineno)
        coords[r] = vals[:3]
        if len(vals) == 4:
            conf[r] = vals[3]
    return SkeletonSequence(
        coords.reshape(T, s, 3),
        header["torso"],
        conf.reshape(T, s),
        label=header.get("label"),
        subject_id=header.get("subject"),
        name=path.stem,
    )


# -- MSR Action3D ------------------------------------------------------------

def load_msr_skeleton(path, model: BodyModel, validate: bool = True) -> SkeletonSequence:
    """Read an MSR Action3D world-coordinate skeleton file.

    One joint per row, ``x y z c`` separated by whitespace, ``model.n_joints``
    consecutive rows per frame, no header.
    """
    path = Path(path)
    rows = []
    for lineno, ln in enumerate(path.read_text().splitlines(), start=1):
        tokens = ln.split()
        if not tokens:
            continue
        if len(tokens) != 4:
            raise ParseError(f"expected 4 values per joint row, found {len(tokens)}", path, lineno)
        rows.append(_parse_floats(tokens, path, lineno))
    if not rows:
        raise ParseError("empty skeleton file", path)
    s = model.n_joints
    if len(rows) % s:
        raise FrameSizeError(f"{len(rows)} joint rows is not a multiple of {s} joints per frame", path)
    data = np.asarray(rows).reshape(-1, s, 4)
    seq = SkeletonSequence(data[..., :3], model.torso_index, np.clip(data[..., 3], 0.0, 1.0), name=path.stem)
    return validate_sequence(seq, model) if validate else seq


# -- CAD-60 -------------------------------------------------------------------

CAD60_ORIENTED_JOINTS = 11
CAD60_POSITION_ONLY_JOINTS = 4
CAD60_VALUES_PER_LINE = 1 + CAD60_ORIENTED_JOINTS * 14 + CAD60_POSITION_ONLY_JOINTS * 4


def parse_cad60_frame(line: str, path=None, lineno=None):
    """Split one CAD-60 record into ``(frame_number, positions (15, 3), confidence (15,))``.

    Orientation matrices and their confidences are dropped.
    """
    tokens = [t.strip() for t in line.strip().split(",")]
    if tokens and tokens[-1] == "":
        tokens.pop()
    if len(tokens) != CAD60_VALUES_PER_LINE:
        raise FrameSizeError(
            f"expected {CAD60_VALUES_PER_LINE} values per frame, found {len(tokens)}", path, lineno
        )
    vals = _parse_floats(tokens, path, lineno)
    positions = np.empty((15, 3))
    conf = np.empty(15)
    k = 1
    for j in range(CAD60_ORIENTED_JOINTS):
        k += 10  # 9 orientation values + orientation confidence
        positions[j] = vals[k : k + 3]
        conf[j] = vals[k + 3]
        k += 4
    for j in range(CAD60_ORIENTED_JOINTS, 15):
        positions[j] = vals[k : k + 3]
        conf[j] = vals[k + 3]
        k += 4
    return int(vals[0]), positions, conf


def load_cad60(path, model: BodyModel, validate: bool = True) -> SkeletonSequence:
    """Read a CAD-60 skeleton file (one comma-separated frame per line, ``END`` terminates)."""
    path = Path(path)
    if model.n_joints != 15:
        raise ValidationError(f"CAD-60 files carry 15 joints; model {model.name!r} has {model.n_joints}")
    frames, confs = [], []
    for lineno, ln in enumerate(path.read_text().splitlines(), start=1):
        if not ln.strip():
            continue
        if ln.strip() == "END":
            break
        _, pos, conf = parse_cad60_frame(ln, path, lineno)
        frames.append(pos)
        confs.append(conf)
    if not frames:
        raise ParseError("no frames in CAD-60 file", path)
    seq = SkeletonSequence(np.stack(frames), model.torso_index, np.clip(np.stack(confs), 0.0, 1.0), name=path.stem)
    return validate_sequence(seq, model) if validate else seq


LOADERS = {
    "canonical": lambda path, model, validate=True: _canonical_for(path, model, validate),
    "msr_skeleton": load_msr_skeleton,
    "cad60": load_cad60,
}


def _canonical_for(path, model, validate):
    seq = load_canonical(path)
    return validate_sequence(seq, model) if validate else seq


# -- manifests ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    file: str
    label: str
    subject_id: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    format: str
    entries: tuple[ManifestEntry, ...]
    body_model: str = "generic15"
    target_model: str | None = None

    def __post_init__(self):
        if self.format not in LOADERS:
            raise ValidationError(f"unknown dataset format {self.format!r}; choose from {sorted(LOADERS)}")
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(sorted({e.label for e in self.entries}))

    def to_dict(self):
        return {
            "format_version": MANIFEST_VERSION,
            "format": self.format,
            "body_model": self.body_model,
            "target_model": self.target_model,
            "entries": [
                {"file": e.file, "label": e.label, "subject": e.subject_id} for e in self.entries
            ],
        }


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno, exc.colno) from None
    if doc.get("format_version") != MANIFEST_VERSION:
        raise ParseError(f"unsupported manifest format_version {doc.get('format_version')!r}", path)
    try:
        entries = tuple(
            ManifestEntry(str(e["file"]), str(e["label"]), None if e.get("subject") is None else str(e["subject"]))
            for e in doc["entries"]
        )
        root = path.parent / doc.get("root", ".")
        return DatasetManifest(root, doc["format"], entries, doc.get("body_model", "generic15"), doc.get("target_model"))
    except KeyError as exc:
        raise ParseError(f"manifest is missing field {exc.args[0]!r}", path) from None


def save_manifest(manifest: DatasetManifest, path):
    doc = manifest.to_dict()
    doc["root"] = os.path.relpath(manifest.root, Path(path).parent)
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


@dataclass
class LoadedDataset:
    sequences: list
    labels: np.ndarray
    class_names: tuple[str, ...]
    subject_ids: list
    ids: list
    body_model: BodyModel


def load_dataset(manifest: DatasetManifest) -> LoadedDataset:
    """Load every manifest entry, downsampling to ``target_model`` if one is named.

    Errors carry the offending file path.
    """
    source = get_body_model(manifest.body_model)
    target = get_body_model(manifest.target_model) if manifest.target_model else source
    loader = LOADERS[manifest.format]
    names = manifest.class_names
    index = {n: i for i, n in enumerate(names)}
    seqs = []
    for e in manifest.entries:
        path = manifest.root / e.file
        try:
            seq = loader(path, source)
            if target is not source:
                seq = validate_sequence(downsample_sequence(seq, source, target), target)
        except (OSError, ValidationError) as exc:
            raise ParseError(f"{type(exc).__name__}: {exc}", path) from exc
        seqs.append(seq)
    return LoadedDataset(
        sequences=seqs,
        labels=np.array([index[e.label] for e in manifest.entries], dtype=np.intp),
        class_names=names,
        subject_ids=[e.subject_id for e in manifest.entries],
        ids=[e.file for e in manifest.entries],
        body_model=target,
    )


# -- binary containers --------------------------------------------------------
#
# b"FABL" | kind (4 bytes) | uint32 LE header length | UTF-8 JSON header |
# raw little-endian array payloads in header["arrays"] order.

def _pack(kind: bytes, header: dict, arrays: dict) -> bytes:
    header = dict(header)
    header["format_version"] = CONTAINER_VERSION
    header["arrays"] = [
        {"name": k, "dtype": "<f8", "shape": list(np.shape(v))} for k, v in arrays.items()
    ]
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    return b"FABL" + kind + struct.pack("<I", len(head)) + head + payload


def _unpack(data: bytes, kind: bytes, path=None):
    if len(data) < 12 or data[:4] != b"FABL":
        raise ParseError("not a fabl container file", path)
    if data[4:8] != kind:
        raise ParseError(f"expected a {kind.decode()} container, found {data[4:8]!r}", path)
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ParseError("corrupt container header", path) from None
    if header.get("format_version") != CONTAINER_VERSION:
        raise ParseError(f"unsupported container format_version {header.get('format_version')!r}", path)
    arrays = {}
    pos = 12 + hlen
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        end = pos + 8 * count
        if end > len(data):
            raise ParseError(f"truncated payload for array {spec['name']!r}", path)
        arrays[spec["name"]] = np.frombuffer(data[pos:end], dtype="<f8").reshape(spec["shape"]).astype(np.float64)
        pos = end
    if pos != len(data):
        raise ParseError("trailing bytes after container payload", path)
    return header, arrays


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Featurized dataset; ``X`` is d x n with one column per instance."""

    X: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    layout: PartitionLayout
    subject_ids: tuple = ()
    ids: tuple = ()
    hist_config: HistogramConfig | None = None
    ranges: FeatureRanges | None = None
    body_model: str | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.intp)
        if X.ndim != 2 or X.shape[0] != self.layout.d:
            raise ValidationError(f"X shape {X.shape} does not match layout d={self.layout.d}")
        if labels.shape != (X.shape[1],):
            raise ValidationError("one label per column is required")
        n = X.shape[1]
        subjects = tuple(self.subject_ids) or (None,) * n
        ids = tuple(self.ids) or tuple(str(i) for i in range(n))
        if len(subjects) != n or len(ids) != n:
            raise ValidationError("subject_ids and ids must have one entry per column")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "subject_ids", subjects)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def c(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.intp)
        return FeatureMatrix(
            self.X[:, idx], self.labels[idx], self.class_names, self.layout,
            tuple(self.subject_ids[i] for i in idx), tuple(self.ids[i] for i in idx),
            self.hist_config, self.ranges, self.body_model,
        )


def save_features(fm: FeatureMatrix, path):
    header = {
        "kind": "features",
        "d": fm.layout.d,
        "n": fm.n,
        "layout": fm.layout.to_dict(),
        "class_names": list(fm.class_names),
        "labels": fm.labels.tolist(),
        "subject_ids": list(fm.subject_ids),
        "ids": list(fm.ids),
        "hist_config": None if fm.hist_config is None else fm.hist_config.to_dict(),
        "ranges": None if fm.ranges is None else fm.ranges.to_dict(),
        "body_model": fm.body_model,
    }
    # columnar: each instance's d values are contiguous
    atomic_write_bytes(path, _pack(FEATURES_KIND, header, {"X_columns": fm.X.T}))


def load_features(path) -> FeatureMatrix:
    header, arrays = _unpack(Path(path).read_bytes(), FEATURES_KIND, path)
    try:
        X = arrays["X_columns"].T
        if X.shape != (header["d"], header["n"]):
            raise ParseError(f"X payload shape {X.shape} disagrees with d, n in header", path)
        return FeatureMatrix(
            X=X,
            labels=np.asarray(header["labels"], dtype=np.intp),
            class_names=tuple(header["class_names"]),
            layout=PartitionLayout.from_dict(header["layout"]),
            subject_ids=tuple(header["subject_ids"]),
            ids=tuple(header["ids"]),
            hist_config=None if header["hist_config"] is None else HistogramConfig.from_dict(header["hist_config"]),
            ranges=None if header["ranges"] is None else FeatureRanges.from_dict(header["ranges"]),
            body_model=header.get("body_model"),
        )
    except (KeyError, ValidationError) as exc:
        raise ParseError(f"invalid feature file: {exc}", path) from None


def save_model(model, path):
    header = {
        "kind": "model",
        "layout": model.layout.to_dict(),
        "class_names": list(model.class_names),
        "hist_config": None if model.hist_config is None else model.hist_config.to_dict(),
        "feature_ranges": None if model.feature_ranges is None else model.feature_ranges.to_dict(),
        "hyperparams": None if model.hyperparams is None else model.hyperparams.to_dict(),
        "metadata": model.metadata,
    }
    arrays = {"W": model.W, "b": model.b, "mean": model.standardizer.mean, "scale": model.standardizer.scale}
    atomic_write_bytes(path, _pack(MODEL_KIND, header, arrays))


def load_model(path):
    from .solver import Hyperparams, Standardizer, WeightModel

    header, arrays = _unpack(Path(path).read_bytes(), MODEL_KIND, path)
    try:
        return WeightModel(
            W=arrays["W"],
            b=arrays["b"],
            layout=PartitionLayout.from_dict(header["layout"]),
            class_names=tuple(header["class_names"]),
            standardizer=Standardizer(arrays["mean"], arrays["scale"]),
            feature_ranges=None if header["feature_ranges"] is None else FeatureRanges.from_dict(header["feature_ranges"]),
            hist_config=None if header["hist_config"] is None else HistogramConfig.from_dict(header["hist_config"]),
            hyperparams=None if header["hyperparams"] is None else Hyperparams.from_dict(header["hyperparams"]),
            metadata=dict(header.get("metadata") or {}),
        )
    except (KeyError, ValidationError) as exc:
        raise ParseError(f"invalid model file: {exc}", path) from None
