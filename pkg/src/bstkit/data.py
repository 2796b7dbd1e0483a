"""Per-clip feature loading, player filtering, normalization and padding.

Feature files hold raw per-frame arrays for one stroke clip (pixel-space
joints and shuttle positions, court-normalized player positions).  This
module turns them into fixed-length training samples: two players' joints
and bones, the shuttle trajectory, court positions, a validity mask and a
label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError

N_JOINTS = 17  # COCO keypoint order
N_PLAYERS = 2

# Tree over the 17 COCO keypoints: (parent, child) per bone vector.
COCO_BONE_PAIRS = (
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
)
N_BONES = len(COCO_BONE_PAIRS)

LEFT_ANKLE, RIGHT_ANKLE = 15, 16

BADMINTON = "badminton"
TENNIS = "tennis"


# --- court geometry ---------------------------------------------------------


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(p1, p2, q1, q2) -> bool:
    """True when the open segments properly intersect."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True)
class CourtGeometry:
    """Court corners in image pixels: top-left, top-right, bottom-right,
    bottom-left.  ``net_y`` optionally marks the net line."""

    corners: np.ndarray
    net_y: float | None = None

    def __post_init__(self):
        corners = np.asarray(self.corners, dtype=np.float64)
        if corners.shape != (4, 2):
            raise ValidationError(f"corners must be (4, 2), got {corners.shape}")
        object.__setattr__(self, "corners", corners)
        # A simple quadrilateral: opposite edges must not cross.
        tl, tr, br, bl = corners
        if _segments_cross(tl, tr, br, bl) or _segments_cross(tr, br, bl, tl):
            raise ValidationError("corners do not form a simple quadrilateral")

    @property
    def midline_y(self) -> float:
        if self.net_y is not None:
            return float(self.net_y)
        return float(np.mean(self.corners[:, 1]))

    def contains(self, point) -> bool:
        """Ray-cast point-in-polygon test against the court quadrilateral."""
        x, y = float(point[0]), float(point[1])
        inside = False
        pts = self.corners
        for i in range(4):
            x1, y1 = pts[i]
            x2, y2 = pts[(i + 1) % 4]
            if (y1 > y) != (y2 > y):
                x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                if x < x_cross:
                    inside = not inside
        return inside

    def homography(self) -> np.ndarray:
        """3x3 projective map sending the corners onto the unit square
        (top-left -> (0,0), top-right -> (1,0), bottom-right -> (1,1),
        bottom-left -> (0,1))."""
        targets = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64)
        A = np.zeros((8, 8))
        b = np.zeros(8)
        for i, ((x, y), (u, v)) in enumerate(zip(self.corners, targets)):
            A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
            A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
            b[2 * i], b[2 * i + 1] = u, v
        h = np.linalg.solve(A, b)
        return np.append(h, 1.0).reshape(3, 3)

    def to_court_plane(self, points: np.ndarray) -> np.ndarray:
        """Map image points (..., 2) into the unit court square."""
        pts = np.asarray(points, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        homog = np.concatenate([flat, np.ones((len(flat), 1))], axis=1)
        mapped = homog @ self.homography().T
        return (mapped[:, :2] / mapped[:, 2:3]).reshape(pts.shape)


def _point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=np.float64) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    s = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + s * ab)))


# --- raw detections and player filtering -------------------------------------


@dataclass(frozen=True)
class RawFrameDetections:
    """Pose and shuttle observations for one frame.

    ``people``: (M, 17, 2) pixel keypoints; ``confidences``: (M, 17) in
    [0, 1]; ``shuttle``: (x, y) pixels or None when the tracker missed.
    """

    people: np.ndarray
    confidences: np.ndarray | None = None
    shuttle: tuple[float, float] | None = None

    def __post_init__(self):
        people = np.asarray(self.people, dtype=np.float64).reshape(-1, N_JOINTS, 2)
        object.__setattr__(self, "people", people)
        if self.confidences is not None:
            conf = np.asarray(self.confidences, dtype=np.float64)
            if conf.shape != people.shape[:2]:
                raise ValidationError(
                    f"confidences shape {conf.shape} does not match "
                    f"{people.shape[:2]}"
                )
            if conf.size and (conf.min() < 0 or conf.max() > 1):
                raise ValidationError("confidences must lie in [0, 1]")
            object.__setattr__(self, "confidences", conf)


def _ankle_midpoints(people: np.ndarray) -> np.ndarray:
    return people[:, (LEFT_ANKLE, RIGHT_ANKLE), :].mean(axis=1)


def filter_players(
    detections: RawFrameDetections,
    court: CourtGeometry,
    sport: str = BADMINTON,
) -> tuple[int, int] | None:
    """Select the (top, bottom) player indices for one frame.

    Badminton keeps the people whose ankle midpoints fall inside the court
    quadrilateral.  Tennis players often stand outside the lines, so when
    fewer than two are inside, the people nearest the top/bottom court
    edges fill the missing slots.  Returns None when fewer than two
    candidates remain.  Candidates are ranked by coordinate values, never
    by detection order, so permuting the input cannot change the result.
    """
    if sport not in (BADMINTON, TENNIS):
        raise ValidationError(f"unknown sport {sport!r}")
    ankles = _ankle_midpoints(detections.people)
    m = len(ankles)
    inside = [i for i in range(m) if court.contains(ankles[i])]

    if sport == BADMINTON or len(inside) >= 2:
        if len(inside) < 2:
            return None
        ordered = sorted(inside, key=lambda i: (ankles[i][1], ankles[i][0]))
        return ordered[0], ordered[-1]

    # Tennis with fewer than two in-court people: supplement by edge
    # proximity.
    tl, tr, br, bl = court.corners

    def nearest(edge_a, edge_b, pool):
        if not pool:
            return None
        return min(
            pool,
            key=lambda i: (
                _point_segment_distance(ankles[i], edge_a, edge_b),
                ankles[i][1],
                ankles[i][0],
            ),
        )

    top = bottom = None
    if len(inside) == 1:
        i = inside[0]
        if ankles[i][1] < court.midline_y:
            top = i
        else:
            bottom = i
    outside = [i for i in range(m) if i not in inside]
    if top is None:
        top = nearest(tl, tr, [i for i in outside if i != bottom])
    if bottom is None:
        bottom = nearest(bl, br, [i for i in outside if i != top])
    if top is None or bottom is None or top == bottom:
        return None
    return top, bottom


# --- raw clip features --------------------------------------------------------


@dataclass(frozen=True)
class RawClipFeatures:
    """Per-frame arrays for one stroke clip, prior to normalization.

    joints: (T, 2, 17, 2) pixels; shuttle: (T, 2) pixels;
    positions: (T, 2, 2) unit-court coordinates; mask: (T,) bool.
    """

    joints: np.ndarray
    shuttle: np.ndarray
    positions: np.ndarray
    mask: np.ndarray
    label: int
    width: int
    height: int

    def __post_init__(self):
        t = len(self.mask)
        shapes = {
            "joints": (t, N_PLAYERS, N_JOINTS, 2),
            "shuttle": (t, 2),
            "positions": (t, N_PLAYERS, 2),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValidationError(f"{name} shape {got}, expected {want}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("frame width/height must be positive")

    @property
    def n_frames(self) -> int:
        return len(self.mask)


def build_clip_features(
    frames,
    court: CourtGeometry,
    *,
    sport: str = BADMINTON,
    width: int,
    height: int,
    label: int,
) -> RawClipFeatures:
    """Assemble clip features from per-frame raw detections.

    Frames where two players cannot be identified are zero-cleared but
    keep mask = 1: the frame exists, it just carries null content.
    """
    t = len(frames)
    joints = np.zeros((t, N_PLAYERS, N_JOINTS, 2))
    shuttle = np.zeros((t, 2))
    positions = np.zeros((t, N_PLAYERS, 2))
    for f, det in enumerate(frames):
        picked = filter_players(det, court, sport)
        if picked is None:
            continue
        top, bottom = picked
        joints[f] = det.people[[top, bottom]]
        ankle_pair = _ankle_midpoints(det.people[[top, bottom]])
        positions[f] = court.to_court_plane(ankle_pair)
        if det.shuttle is not None:
            shuttle[f] = det.shuttle
    return RawClipFeatures(
        joints=joints,
        shuttle=shuttle,
        positions=positions,
        mask=np.ones(t, dtype=bool),
        label=label,
        width=width,
        height=height,
    )


def clear_invalid_frames(
    features: RawClipFeatures, invalid: np.ndarray
) -> RawClipFeatures:
    """Zero the content of the flagged frames; the mask is untouched."""
    invalid = np.asarray(invalid, dtype=bool)
    if invalid.shape != features.mask.shape:
        raise ValidationError(
            f"invalid flags shape {invalid.shape} does not match "
            f"{features.mask.shape} frames"
        )
    keep = (~invalid).astype(np.float64)
    return replace(
        features,
        joints=features.joints * keep[:, None, None, None],
        shuttle=features.shuttle * keep[:, None],
        positions=features.positions * keep[:, None, None],
    )


# --- samples ------------------------------------------------------------------


@dataclass(frozen=True)
class StrokeSample:
    """Fixed-length multimodal bundle for one stroke.

    joints: (2, L, 17, 2) and bones: (2, L, 16, 2), both normalized;
    shuttle: (L, 2); positions: (2, L, 2); mask: (L,) with 1 = real frame.
    """

    joints: np.ndarray
    bones: np.ndarray
    shuttle: np.ndarray
    positions: np.ndarray
    mask: np.ndarray
    label: int
    match_id: str = ""
    rally_index: int = 0
    stroke_index: int = 0

    @property
    def seq_len(self) -> int:
        return len(self.mask)

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            joints=self.joints,
            bones=self.bones,
            shuttle=self.shuttle,
            positions=self.positions,
            mask=self.mask,
            label=np.int64(self.label),
            match_id=np.str_(self.match_id),
            rally_index=np.int64(self.rally_index),
            stroke_index=np.int64(self.stroke_index),
        )

    @classmethod
    def load(cls, path: str | Path) -> "StrokeSample":
        with np.load(path) as z:
            return cls(
                joints=z["joints"],
                bones=z["bones"],
                shuttle=z["shuttle"],
                positions=z["positions"],
                mask=z["mask"],
                label=int(z["label"]),
                match_id=str(z["match_id"]),
                rally_index=int(z["rally_index"]),
                stroke_index=int(z["stroke_index"]),
            )


def compute_bones(joints: np.ndarray) -> np.ndarray:
    """Bone vectors child - parent over the fixed COCO edge list.

    joints: (..., 17, 2) -> bones: (..., 16, 2).
    """
    joints = np.asarray(joints)
    if joints.shape[-2:] != (N_JOINTS, 2):
        raise ValidationError(
            f"joints must end in ({N_JOINTS}, 2), got {joints.shape}"
        )
    parents = np.array([p for p, _ in COCO_BONE_PAIRS])
    children = np.array([c for _, c in COCO_BONE_PAIRS])
    return joints[..., children, :] - joints[..., parents, :]


def subsample_indices(n_frames: int, target: int) -> np.ndarray:
    """Uniformly spaced source indices (nearest frame, halves rounded up),
    always keeping the first and last frame."""
    if target == 1:
        return np.zeros(1, dtype=np.int64)
    k = np.arange(target, dtype=np.int64)
    num, den = n_frames - 1, target - 1
    return (2 * k * num + den) // (2 * den)


def normalize_and_pad(
    raw: RawClipFeatures,
    seq_len: int,
    *,
    match_id: str = "",
    rally_index: int = 0,
    stroke_index: int = 0,
) -> StrokeSample:
    """Normalize pixel coordinates and fit the clip to ``seq_len`` frames.

    Shorter clips are right-padded with zeros (mask 0); longer clips are
    uniformly subsampled.  Bones are derived from the normalized joints.
    """
    t = raw.n_frames
    if t == 0:
        raise ValidationError("clip has no frames")
    if seq_len <= 0:
        raise ValidationError(f"seq_len must be positive, got {seq_len}")

    if t > seq_len:
        idx = subsample_indices(t, seq_len)
    else:
        idx = np.arange(t)
    scale = np.array([raw.width, raw.height], dtype=np.float64)
    joints = (raw.joints[idx] / scale).transpose(1, 0, 2, 3)
    shuttle = raw.shuttle[idx] / scale
    positions = raw.positions[idx].transpose(1, 0, 2)
    mask = raw.mask[idx].astype(bool)

    # Frames flagged invalid in the source keep mask semantics but must
    # carry all-zero features.
    keep = mask.astype(np.float64)
    joints = joints * keep[None, :, None, None]
    shuttle = shuttle * keep[:, None]
    positions = positions * keep[None, :, None]

    n = len(idx)
    if n < seq_len:
        pad = seq_len - n
        joints = np.pad(joints, ((0, 0), (0, pad), (0, 0), (0, 0)))
        shuttle = np.pad(shuttle, ((0, pad), (0, 0)))
        positions = np.pad(positions, ((0, 0), (0, pad), (0, 0)))
        mask = np.pad(mask, (0, pad))

    return StrokeSample(
        joints=joints.astype(np.float32),
        bones=compute_bones(joints).astype(np.float32),
        shuttle=shuttle.astype(np.float32),
        positions=positions.astype(np.float32),
        mask=mask,
        label=raw.label,
        match_id=match_id,
        rally_index=rally_index,
        stroke_index=stroke_index,
    )


def random_shift_augment(
    sample: StrokeSample,
    probability: float = 0.3,
    shift_range: tuple[float, float] = (-0.3, 0.3),
    rng: np.random.Generator | None = None,
) -> StrokeSample:
    """With the given probability, add one uniform shift to all normalized
    coordinates of joints, shuttle and positions on unmasked frames.

    Bones are translation-invariant and stay bit-identical.  Two uniforms
    are always drawn (gate, shift) so the stream advances the same way
    whether or not the shift is applied.
    """
    rng = np.random.default_rng() if rng is None else rng
    gate = rng.uniform()
    shift = rng.uniform(shift_range[0], shift_range[1])
    if gate >= probability:
        return sample
    keep = sample.mask.astype(sample.joints.dtype)
    return replace(
        sample,
        joints=sample.joints + shift * keep[None, :, None, None],
        shuttle=sample.shuttle + shift * keep[:, None],
        positions=sample.positions + shift * keep[None, :, None],
    )


# --- feature-file and sample-store I/O ----------------------------------------


def feature_path(
    features_dir: str | Path, match_id: str, rally_index: int, stroke_index: int
) -> Path:
    return Path(features_dir) / match_id / f"{rally_index}_{stroke_index}.npz"


def save_clip_features(path: str | Path, features: RawClipFeatures) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        joints=features.joints,
        shuttle=features.shuttle,
        positions=features.positions,
        mask=features.mask,
        label=np.int64(features.label),
        width=np.int64(features.width),
        height=np.int64(features.height),
    )


def load_clip_features(path: str | Path) -> RawClipFeatures:
    with np.load(path) as z:
        return RawClipFeatures(
            joints=z["joints"],
            shuttle=z["shuttle"],
            positions=z["positions"],
            mask=z["mask"].astype(bool),
            label=int(z["label"]),
            width=int(z["width"]),
            height=int(z["height"]),
        )


class SampleStore:
    """Column-stacked collection of StrokeSamples with npz persistence."""

    ARRAY_FIELDS = ("joints", "bones", "shuttle", "positions", "mask", "labels")

    def __init__(
        self,
        joints,
        bones,
        shuttle,
        positions,
        mask,
        labels,
        match_ids,
        rally_indices,
        stroke_indices,
        class_names=None,
    ):
        self.joints = joints
        self.bones = bones
        self.shuttle = shuttle
        self.positions = positions
        self.mask = mask
        self.labels = labels
        self.match_ids = match_ids
        self.rally_indices = rally_indices
        self.stroke_indices = stroke_indices
        self.class_names = list(class_names) if class_names is not None else None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def seq_len(self) -> int:
        return self.joints.shape[2]

    def sample(self, i: int) -> StrokeSample:
        return StrokeSample(
            joints=self.joints[i],
            bones=self.bones[i],
            shuttle=self.shuttle[i],
            positions=self.positions[i],
            mask=self.mask[i],
            label=int(self.labels[i]),
            match_id=str(self.match_ids[i]),
            rally_index=int(self.rally_indices[i]),
            stroke_index=int(self.stroke_indices[i]),
        )

    @classmethod
    def from_samples(cls, samples, class_names=None) -> "SampleStore":
        if not samples:
            raise ValidationError("cannot build a store from zero samples")
        return cls(
            joints=np.stack([s.joints for s in samples]),
            bones=np.stack([s.bones for s in samples]),
            shuttle=np.stack([s.shuttle for s in samples]),
            positions=np.stack([s.positions for s in samples]),
            mask=np.stack([s.mask for s in samples]),
            labels=np.array([s.label for s in samples], dtype=np.int64),
            match_ids=np.array([s.match_id for s in samples]),
            rally_indices=np.array([s.rally_index for s in samples], dtype=np.int64),
            stroke_indices=np.array(
                [s.stroke_index for s in samples], dtype=np.int64
            ),
            class_names=class_names,
        )

    def save(self, path: str | Path) -> None:
        extras = {}
        if self.class_names is not None:
            extras["class_names"] = np.array(self.class_names)
        np.savez(
            path,
            joints=self.joints,
            bones=self.bones,
            shuttle=self.shuttle,
            positions=self.positions,
            mask=self.mask,
            labels=self.labels,
            match_ids=self.match_ids,
            rally_indices=self.rally_indices,
            stroke_indices=self.stroke_indices,
            **extras,
        )

    @classmethod
    def load(cls, path: str | Path) -> "SampleStore":
        with np.load(path) as z:
            class_names = (
                [str(c) for c in z["class_names"]] if "class_names" in z else None
            )
            return cls(
                joints=z["joints"],
                bones=z["bones"],
                shuttle=z["shuttle"],
                positions=z["positions"],
                mask=z["mask"].astype(bool),
                labels=z["labels"],
                match_ids=z["match_ids"],
                rally_indices=z["rally_indices"],
                stroke_indices=z["stroke_indices"],
                class_names=class_names,
            )


# --- class map and manifest-driven ingestion -----------------------------------


def read_class_map(path: str | Path) -> dict[str, int]:
    """Class-map CSV with columns class_id,class_name -> {name: id}."""
    mapping: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["class_id", "class_name"]:
            raise ValidationError(
                f"{path}: expected header class_id,class_name, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            mapping[row["class_name"]] = int(row["class_id"])
    return mapping


def write_class_map(path: str | Path, names: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["class_id", "class_name"])
        for i, name in enumerate(names):
            writer.writerow([i, name])


def ingest_manifest(
    manifest_rows,
    features_dir: str | Path,
    seq_len: int,
    class_map: dict[str, int],
    class_names: list[str] | None = None,
) -> SampleStore:
    """Load, normalize and pad every clip referenced by a manifest."""
    samples = []
    for row in manifest_rows:
        path = feature_path(
            features_dir, row.match_id, row.rally_index, row.stroke_index
        )
        if not path.exists():
            raise ValidationError(f"feature file missing: {path}")
        raw = load_clip_features(path)
        expected = row.end_frame - row.start_frame + 1
        if raw.n_frames != expected:
            raise ValidationError(
                f"{path}: {raw.n_frames} frames but manifest window "
                f"[{row.start_frame}, {row.end_frame}] spans {expected}"
            )
        if row.label not in class_map:
            raise ValidationError(
                f"label {row.label!r} not present in the class map"
            )
        label = class_map[row.label]
        if raw.label >= 0 and raw.label != label:
            raise ValidationError(
                f"{path}: stored label {raw.label} != manifest label "
                f"{label} ({row.label!r})"
            )
        samples.append(
            normalize_and_pad(
                replace(raw, label=label),
                seq_len,
                match_id=row.match_id,
                rally_index=row.rally_index,
                stroke_index=row.stroke_index,
            )
        )
    if class_names is None:
        inverse = {v: k for k, v in class_map.items()}
        class_names = [inverse[i] for i in sorted(inverse)]
    return SampleStore.from_samples(samples, class_names=class_names)
