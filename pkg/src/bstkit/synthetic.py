"""Synthetic rally generator.

Produces desk-scale datasets whose stroke class is a deterministic
function of trajectory geometry: the hitting side (top/bottom half) and
the stroke kind (clear/drop/drive), which fix the arc height over the
chord and the landing depth.  Two stick-figure players swing at each hit
frame, so the pose and position streams carry consistent side information
as well.  The generator emits the same feature-file and manifest formats
the ingest pipeline consumes, plus the hit-frame annotation lists that
drive clip planning end to end.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clipping import (
    ClipPlanConfig,
    ManifestRow,
    RallyTimeline,
    adaptive_clip,
    write_manifest,
)
from .data import (
    RawClipFeatures,
    SampleStore,
    feature_path,
    normalize_and_pad,
    save_clip_features,
    write_class_map,
)
from .errors import ValidationError

# Image-plane court layout (normalized coordinates, y grows downward).
COURT_X0, COURT_X1 = 0.30, 0.70
COURT_Y0, COURT_Y1 = 0.18, 0.86
NET_Y = 0.50

KINDS = ("clear", "drop", "drive")
ARC_HEIGHT = {"clear": 0.45, "drop": 0.14, "drive": 0.035}
LANDING_DEPTH = {"clear": 0.33, "drop": 0.06, "drive": 0.20}
# Decision boundaries on the mean lift above the chord; the mean of the
# parabolic bump 4*tau*(1-tau) is ~2/3, so these sit between the arc
# heights scaled by that factor.
_LIFT_CLEAR_DROP = 0.19
_LIFT_DROP_DRIVE = 0.056

SIDES = ("top", "bottom")

# 17-joint stick figure, ankle midpoint at the origin, head upward
# (negative y in image coordinates).
_SKELETON = np.array(
    [
        [0.00, -1.75],
        [-0.06, -1.80],
        [0.06, -1.80],
        [-0.12, -1.75],
        [0.12, -1.75],
        [-0.30, -1.50],
        [0.30, -1.50],
        [-0.42, -1.15],
        [0.42, -1.15],
        [-0.45, -0.85],
        [0.45, -0.85],
        [-0.18, -0.95],
        [0.18, -0.95],
        [-0.20, -0.50],
        [0.20, -0.50],
        [-0.20, 0.00],
        [0.20, 0.00],
    ]
)
_RIGHT_ELBOW, _RIGHT_WRIST = 8, 10
_BODY_SCALE = (0.05, 0.08)  # top player appears smaller than the bottom one


@dataclass(frozen=True)
class SynthSpec:
    """Generation parameters; the class count must be even (side x kind)."""

    n_classes: int = 4
    samples_per_class: int = 50
    frames_per_stroke: int = 30
    noise: float = 0.05
    seed: int = 0
    fps: float = 30.0
    opponent_noise: float = 0.0

    def __post_init__(self):
        if self.noise < 0:
            raise ValidationError(f"noise must be non-negative, got {self.noise}")
        if self.opponent_noise < 0:
            raise ValidationError(
                f"opponent_noise must be non-negative, got {self.opponent_noise}"
            )
        if self.n_classes not in (2, 4, 6):
            raise ValidationError(
                f"n_classes must be 2, 4 or 6 (side x kind), got {self.n_classes}"
            )
        if self.samples_per_class <= 0 or self.frames_per_stroke < 8:
            raise ValidationError("samples_per_class/frames_per_stroke too small")
        if self.fps <= 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")

    @property
    def n_kinds(self) -> int:
        return self.n_classes // 2

    @property
    def class_names(self) -> list[str]:
        return [
            f"{side}-{kind}"
            for side in SIDES
            for kind in KINDS[: self.n_kinds]
        ]

    def class_id(self, side: int, kind: int) -> int:
        return side * self.n_kinds + kind


def classify_trajectory(arc: np.ndarray, n_kinds: int) -> int:
    """Closed-form label rule from the target arc (hit to next hit).

    The shuttle always crosses the net, so the hitting side follows from
    comparing the first and last quarter of the arc's depth; the kind
    comes from the arc's mean lift above its chord (a noise-averaging
    proxy for apex height).
    """
    arc = np.asarray(arc, dtype=np.float64)
    if arc.ndim != 2 or arc.shape[1] != 2 or len(arc) < 2:
        raise ValidationError(f"arc must be (T>=2, 2), got {arc.shape}")
    y0, y1 = arc[0, 1], arc[-1, 1]
    quarter = max(1, len(arc) // 4)
    side = 0 if arc[:quarter, 1].mean() < arc[-quarter:, 1].mean() else 1
    tau = np.linspace(0.0, 1.0, len(arc))
    chord = y0 + (y1 - y0) * tau
    lift = float(np.mean(chord - arc[:, 1]))
    if n_kinds == 1:
        kind = 0
    elif n_kinds == 2:
        kind = 0 if lift > _LIFT_CLEAR_DROP else 1
    else:
        if lift > _LIFT_CLEAR_DROP:
            kind = 0
        elif lift > _LIFT_DROP_DRIVE:
            kind = 1
        else:
            kind = 2
    return side * n_kinds + kind


@dataclass(frozen=True)
class StrokeEvent:
    side: int
    kind: int
    hit_frame: int
    next_frame: int  # frame at which the shuttle reaches the next contact
    contact: np.ndarray  # (2,) image coordinates at the hit
    landing: np.ndarray


@dataclass
class RallyRender:
    """Rendered per-frame arrays covering one rally's support interval."""

    first_frame: int
    shuttle: np.ndarray  # (T, 2)
    joints: np.ndarray  # (T, 2, 17, 2)
    positions: np.ndarray  # (T, 2, 2) unit-court coordinates
    events: list[StrokeEvent]

    def window(self, start: int, end: int):
        lo = start - self.first_frame
        hi = end - self.first_frame + 1
        if lo < 0 or hi > len(self.shuttle):
            raise ValidationError(
                f"window [{start}, {end}] outside rendered rally support"
            )
        return (
            self.joints[lo:hi].copy(),
            self.shuttle[lo:hi].copy(),
            self.positions[lo:hi].copy(),
        )


def _court_coords(points: np.ndarray) -> np.ndarray:
    u = (points[..., 0] - COURT_X0) / (COURT_X1 - COURT_X0)
    v = (points[..., 1] - COURT_Y0) / (COURT_Y1 - COURT_Y0)
    return np.stack([u, v], axis=-1)


def _landing_point(side: int, kind: int, rng: np.random.Generator) -> np.ndarray:
    depth = LANDING_DEPTH[KINDS[kind]] + rng.uniform(-0.02, 0.02)
    y = NET_Y + depth if side == 0 else NET_Y - depth
    x = rng.uniform(COURT_X0 + 0.06, COURT_X1 - 0.06)
    return np.array([x, y])


def _serve_point(side: int, rng: np.random.Generator) -> np.ndarray:
    y = rng.uniform(0.27, 0.33) if side == 0 else rng.uniform(0.67, 0.73)
    x = rng.uniform(COURT_X0 + 0.08, COURT_X1 - 0.08)
    return np.array([x, y])


def _render_rally(
    hit_frames: list[int],
    sides: list[int],
    kinds: list[int],
    spec: SynthSpec,
    rng: np.random.Generator,
    support: tuple[int, int],
) -> RallyRender:
    n = len(hit_frames)
    contacts = [_serve_point(sides[0], rng)]
    for j in range(n):
        contacts.append(_landing_point(sides[j], kinds[j], rng))
    landing_frame = hit_frames[-1] + spec.frames_per_stroke
    arc_ends = hit_frames[1:] + [landing_frame]

    events = [
        StrokeEvent(
            side=sides[j],
            kind=kinds[j],
            hit_frame=hit_frames[j],
            next_frame=arc_ends[j],
            contact=contacts[j],
            landing=contacts[j + 1],
        )
        for j in range(n)
    ]

    f0, f1 = support
    frames = np.arange(f0, f1 + 1)
    t = len(frames)

    # Shuttle: chained parabolic arcs between consecutive contacts.
    shuttle = np.tile(contacts[0], (t, 1))
    after_last = frames >= landing_frame
    shuttle[after_last] = contacts[-1]
    for event in events:
        span = event.next_frame - event.hit_frame
        sel = (frames >= event.hit_frame) & (frames < event.next_frame)
        tau = (frames[sel] - event.hit_frame) / span
        base = event.contact[None, :] + tau[:, None] * (
            event.landing - event.contact
        )[None, :]
        base[:, 1] -= ARC_HEIGHT[KINDS[event.kind]] * 4.0 * tau * (1.0 - tau)
        shuttle[sel] = base

    # Players: piecewise-linear drift through their own contact points.
    player_xy = np.zeros((t, 2, 2))
    for side in (0, 1):
        rest = np.array([0.5, 0.34 if side == 0 else 0.66])
        anchors_f = [f0]
        anchors_p = [rest]
        for event in events:
            if event.side == side:
                anchors_f.append(event.hit_frame)
                anchors_p.append(event.contact)
        anchors_f.append(f1)
        anchors_p.append(anchors_p[-1])
        anchors_p = np.array(anchors_p)
        for c in (0, 1):
            player_xy[:, side, c] = np.interp(frames, anchors_f, anchors_p[:, c])

    # Stick figures anchored at the ankle midpoint, with a racket-arm
    # burst around each hit frame.
    joints = (
        player_xy[:, :, None, :]
        + _SKELETON[None, None, :, :]
        * np.array(_BODY_SCALE)[None, :, None, None]
    )
    swing_w = max(2, spec.frames_per_stroke // 8)
    for event in events:
        direction = event.landing - event.contact
        norm = np.linalg.norm(direction)
        if norm > 0:
            direction = direction / norm
        scale = _BODY_SCALE[event.side]
        sel = np.abs(frames - event.hit_frame) <= swing_w
        amp = 1.0 - np.abs(frames[sel] - event.hit_frame) / (swing_w + 1)
        offset = amp[:, None] * direction[None, :] * (2.0 * scale)
        joints[sel, event.side, _RIGHT_WRIST] += offset
        joints[sel, event.side, _RIGHT_ELBOW] += 0.5 * offset

    positions = _court_coords(player_xy)

    if spec.noise > 0:
        shuttle = shuttle + rng.normal(0.0, spec.noise, shuttle.shape)
        joints = joints + rng.normal(0.0, spec.noise, joints.shape)
        positions = positions + rng.normal(0.0, spec.noise, positions.shape)

    return RallyRender(
        first_frame=f0,
        shuttle=shuttle,
        joints=joints,
        positions=positions,
        events=events,
    )


def _plan_rallies(spec: SynthSpec, rng: np.random.Generator):
    """Even-length rallies with alternating sides and quota-exact kinds."""
    kind_pool = {
        side: rng.permutation(
            np.repeat(np.arange(spec.n_kinds), spec.samples_per_class)
        ).tolist()
        for side in (0, 1)
    }
    pairs_left = spec.samples_per_class * spec.n_kinds
    rallies = []
    while pairs_left > 0:
        take = int(min(rng.integers(1, 4), pairs_left))
        first = int(rng.integers(0, 2))
        sides = [(first + i) % 2 for i in range(2 * take)]
        kinds = [kind_pool[s].pop() for s in sides]
        rallies.append((sides, kinds))
        pairs_left -= take
    return rallies


@dataclass
class SynthStroke:
    rally_index: int
    stroke_index: int  # 1-based within the rally
    label: int
    window_start: int
    window_end: int
    hit_frame: int
    features: RawClipFeatures
    arc: np.ndarray  # rendered target arc (hit to next contact)


@dataclass
class SynthDataset:
    spec: SynthSpec
    clip_config: ClipPlanConfig
    timeline: RallyTimeline
    strokes: list[SynthStroke]
    class_names: list[str]

    def to_store(self, seq_len: int) -> SampleStore:
        samples = [
            normalize_and_pad(
                s.features,
                seq_len,
                match_id=f"synth-{self.spec.seed}",
                rally_index=s.rally_index,
                stroke_index=s.stroke_index,
            )
            for s in self.strokes
        ]
        return SampleStore.from_samples(samples, class_names=self.class_names)

    def manifest_rows(self, match_id: str) -> list[ManifestRow]:
        return [
            ManifestRow(
                match_id=match_id,
                rally_index=s.rally_index,
                stroke_index=s.stroke_index,
                hit_frame=s.hit_frame,
                start_frame=s.window_start,
                end_frame=s.window_end,
                label=self.class_names[s.label],
            )
            for s in self.strokes
        ]

    def hit_rows(self, match_id: str) -> list[tuple[str, int, str]]:
        return [
            (match_id, s.hit_frame, self.class_names[s.label])
            for s in self.strokes
        ]


def default_seq_len(spec: SynthSpec) -> int:
    return 2 * spec.frames_per_stroke + spec.frames_per_stroke // 2


def generate(spec: SynthSpec) -> SynthDataset:
    """Deterministically generate rallies, clip them with the adaptive
    strategy, and return per-stroke features plus the ground-truth arcs."""
    rng = np.random.default_rng(spec.seed)
    clip_config = ClipPlanConfig.for_fps(spec.fps)
    rally_plan = _plan_rallies(spec, rng)

    inter_rally_gap = int(round(4.0 * spec.fps))
    cursor = clip_config.t + 2
    rallies_hits: list[list[int]] = []
    renders: list[RallyRender] = []
    for sides, kinds in rally_plan:
        hits = []
        frame = cursor + spec.frames_per_stroke
        for _ in sides:
            hits.append(frame)
            frame += int(
                round(spec.frames_per_stroke * rng.uniform(0.85, 1.15))
            )
        landing = hits[-1] + spec.frames_per_stroke
        support = (hits[0] - clip_config.t - 1, landing + clip_config.t + 1)
        renders.append(_render_rally(hits, sides, kinds, spec, rng, support))
        rallies_hits.append(hits)
        cursor = landing + inter_rally_gap + int(rng.integers(0, 10))

    total_frames = cursor + spec.frames_per_stroke
    timeline = RallyTimeline(
        tuple(tuple(h) for h in rallies_hits),
        fps=spec.fps,
        total_frames=total_frames,
    )

    strokes: list[SynthStroke] = []
    for rally_index, render in enumerate(renders):
        for j, event in enumerate(render.events, start=1):
            window = adaptive_clip(timeline, rally_index, j, clip_config)
            joints, shuttle, positions = render.window(window.start, window.end)
            frames = np.arange(window.start, window.end + 1)
            in_stage2 = (frames >= event.hit_frame) & (frames < event.next_frame)
            if spec.opponent_noise > 0 and (~in_stage2).any():
                shuttle[~in_stage2] += rng.normal(
                    0.0, spec.opponent_noise, (int((~in_stage2).sum()), 2)
                )
            # Ground-truth arc spans the full flight (hit to next contact)
            # even when the clip window cuts it short.
            lo = event.hit_frame - render.first_frame
            hi = event.next_frame - render.first_frame + 1
            arc = render.shuttle[lo:hi].copy()
            features = RawClipFeatures(
                joints=joints,
                shuttle=shuttle,
                positions=positions,
                mask=np.ones(len(frames), dtype=bool),
                label=spec.class_id(event.side, event.kind),
                width=1,
                height=1,
            )
            strokes.append(
                SynthStroke(
                    rally_index=rally_index,
                    stroke_index=j,
                    label=features.label,
                    window_start=window.start,
                    window_end=window.end,
                    hit_frame=event.hit_frame,
                    features=features,
                    arc=arc,
                )
            )
    return SynthDataset(
        spec=spec,
        clip_config=clip_config,
        timeline=timeline,
        strokes=strokes,
        class_names=spec.class_names,
    )


def write_dataset(
    spec: SynthSpec, out_dir: str | Path, match_id: str | None = None
) -> SynthDataset:
    """Write feature files, hit annotations, class map and manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    match_id = match_id or f"synth-{spec.seed}"
    dataset = generate(spec)

    features_dir = out_dir / "features"
    for stroke in dataset.strokes:
        save_clip_features(
            feature_path(
                features_dir, match_id, stroke.rally_index, stroke.stroke_index
            ),
            stroke.features,
        )

    with open(out_dir / "hits.csv", "w", newline="", encoding="utf-8") as f:
        f.write("match_id,frame,label\n")
        for m, frame, label in dataset.hit_rows(match_id):
            f.write(f"{m},{frame},{label}\n")

    write_class_map(out_dir / "class_map.csv", dataset.class_names)
    write_manifest(dataset.manifest_rows(match_id), out_dir / "manifest.csv")

    meta = {
        "fps": spec.fps,
        "total_frames": dataset.timeline.total_frames,
        "n_classes": spec.n_classes,
        "frames_per_stroke": spec.frames_per_stroke,
        "noise": spec.noise,
        "opponent_noise": spec.opponent_noise,
        "seed": spec.seed,
        "sequence_length": default_seq_len(spec),
    }
    with open(out_dir / "meta.txt", "w", encoding="utf-8") as f:
        for key, value in meta.items():
            f.write(f"{key}={value}\n")
    return dataset
