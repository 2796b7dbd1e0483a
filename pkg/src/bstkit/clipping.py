"""Rally detection and per-stroke clip window planning.

Hit-frame annotations are turned into rally structures and clip windows
under one of two strategies: a fixed half-width window around each hit
frame, or an adaptive window spanning the opponent's previous hit to the
opponent's next hit plus a small lookahead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, ValidationError

FIXED_WIDTH = "fixed_width"
ADAPTIVE = "adaptive"

MANIFEST_HEADER = [
    "match_id",
    "rally_index",
    "stroke_index",
    "hit_frame",
    "start_frame",
    "end_frame",
    "label",
]

# Rallies are separated by much longer pauses than consecutive strokes;
# 3 seconds is a conservative default for the split threshold.
DEFAULT_GAP_SECONDS = 3.0


@dataclass(frozen=True)
class RallyTimeline:
    """Ordered hit-frame indices per rally within one match video."""

    rallies: tuple[tuple[int, ...], ...]
    fps: float
    total_frames: int

    def __post_init__(self):
        if self.fps <= 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        if self.total_frames <= 0:
            raise ValidationError(
                f"total_frames must be positive, got {self.total_frames}"
            )
        prev = -1
        for i, rally in enumerate(self.rallies):
            if len(rally) == 0:
                raise ValidationError(f"rally {i} has no hit frames")
            for j, h in enumerate(rally):
                if not 0 <= h < self.total_frames:
                    raise ValidationError(
                        f"hit frame {h} (rally {i}, stroke {j + 1}) outside "
                        f"[0, {self.total_frames})"
                    )
                if h <= prev:
                    raise ValidationError(
                        f"hit frames must strictly increase; rally {i}, "
                        f"stroke {j + 1} has {h} after {prev}"
                    )
                prev = h

    @property
    def n_rallies(self) -> int:
        return len(self.rallies)

    def n_strokes(self, rally_index: int) -> int:
        return len(self.rallies[rally_index])

    def hit_frame(self, rally_index: int, stroke_index: int) -> int:
        """Hit frame of stroke ``stroke_index`` (1-based) in a rally."""
        self._check_indices(rally_index, stroke_index)
        return self.rallies[rally_index][stroke_index - 1]

    def _check_indices(self, rally_index: int, stroke_index: int) -> None:
        if not 0 <= rally_index < len(self.rallies):
            raise ValidationError(f"rally index {rally_index} out of range")
        if not 1 <= stroke_index <= len(self.rallies[rally_index]):
            raise ValidationError(
                f"stroke index {stroke_index} out of range for rally "
                f"{rally_index} with {len(self.rallies[rally_index])} strokes"
            )


@dataclass(frozen=True)
class ClipPlanConfig:
    """Parameters of the clip window computation.

    ``t`` is the half-window in frames, ``epsilon`` the lookahead added to
    the opponent's next hit, and ``max_span_seconds`` caps how far either
    boundary may sit from the target hit frame (before the lookahead is
    added).  ``max_span_seconds = math.inf`` disables the cap.
    """

    t: int
    epsilon: int = 0
    max_span_seconds: float = 1.5
    strategy: str = ADAPTIVE

    def __post_init__(self):
        if self.t <= 0:
            raise ConfigError(f"t must be positive, got {self.t}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.max_span_seconds <= 0:
            raise ConfigError(
                f"max_span_seconds must be positive, got {self.max_span_seconds}"
            )
        if self.strategy not in (FIXED_WIDTH, ADAPTIVE):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.strategy == ADAPTIVE and self.epsilon >= self.t:
            raise ConfigError(
                f"adaptive strategy requires epsilon < t "
                f"(got epsilon={self.epsilon}, t={self.t})"
            )

    @classmethod
    def for_fps(
        cls,
        fps: float,
        strategy: str = ADAPTIVE,
        max_span_seconds: float = 1.5,
    ) -> "ClipPlanConfig":
        """Default parameters: t = half a second, epsilon = t/2 rounded down."""
        t = int(round(fps / 2))
        return cls(
            t=t,
            epsilon=t // 2,
            max_span_seconds=max_span_seconds,
            strategy=strategy,
        )

    def cap_frames(self, fps: float) -> int | None:
        """Span cap in frames, or None when the cap is disabled."""
        if math.isinf(self.max_span_seconds):
            return None
        return int(round(self.max_span_seconds * fps))


@dataclass(frozen=True)
class ClipWindow:
    """Inclusive frame interval [start, end] for one target stroke."""

    rally_index: int
    stroke_index: int
    start: int
    end: int
    hit_frame: int

    def __post_init__(self):
        if not self.start <= self.hit_frame <= self.end:
            raise ValidationError(
                f"window [{self.start}, {self.end}] does not contain hit "
                f"frame {self.hit_frame}"
            )

    @property
    def n_frames(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class StageSplit:
    """The three semantic sub-intervals of an adaptive clip window.

    Each stage is an inclusive (lo, hi) frame pair or None when empty:
    stage 1 runs up to the target hit frame, stage 2 from the target hit
    to the opponent's next hit, and stage 3 from the next hit onward.
    """

    stage1: tuple[int, int] | None
    stage2: tuple[int, int] | None
    stage3: tuple[int, int] | None

    def as_tuple(self):
        return (self.stage1, self.stage2, self.stage3)


def detect_rallies(
    hit_frames: Sequence[int],
    gap_threshold: int,
    *,
    fps: float = 30.0,
    total_frames: int | None = None,
) -> RallyTimeline:
    """Split a sorted hit-frame sequence into rallies.

    Consecutive hits separated by more than ``gap_threshold`` frames start
    a new rally.
    """
    if gap_threshold <= 0:
        raise ValidationError(f"gap_threshold must be positive, got {gap_threshold}")
    for i in range(1, len(hit_frames)):
        if hit_frames[i] <= hit_frames[i - 1]:
            raise ValidationError(
                f"hit_frames must be sorted strictly ascending; "
                f"index {i} holds {hit_frames[i]} after {hit_frames[i - 1]}"
            )

    rallies: list[tuple[int, ...]] = []
    current: list[int] = []
    for h in hit_frames:
        if current and h - current[-1] > gap_threshold:
            rallies.append(tuple(current))
            current = []
        current.append(int(h))
    if current:
        rallies.append(tuple(current))

    if total_frames is None:
        total_frames = (hit_frames[-1] + 1) if len(hit_frames) else 1
    return RallyTimeline(tuple(rallies), fps=fps, total_frames=total_frames)


def fixed_width_clip(
    timeline: RallyTimeline,
    rally_index: int,
    stroke_index: int,
    config: ClipPlanConfig,
) -> ClipWindow:
    """Window [h - t, h + t] around the hit frame, clamped to the video."""
    h = timeline.hit_frame(rally_index, stroke_index)
    last = timeline.total_frames - 1
    return ClipWindow(
        rally_index=rally_index,
        stroke_index=stroke_index,
        start=max(0, h - config.t),
        end=min(last, h + config.t),
        hit_frame=h,
    )


def adaptive_clip(
    timeline: RallyTimeline,
    rally_index: int,
    stroke_index: int,
    config: ClipPlanConfig,
) -> ClipWindow:
    """Window from the opponent's previous hit to the next hit plus epsilon.

    Boundary hits are first pulled toward the target so that neither sits
    more than ``max_span_seconds`` away; the epsilon lookahead is then
    added on the upper side whenever a next stroke exists.  First/last
    strokes fall back to the fixed-width bound on the missing side.
    """
    if config.strategy != ADAPTIVE:
        raise ConfigError(f"adaptive_clip called with strategy {config.strategy!r}")
    timeline._check_indices(rally_index, stroke_index)
    rally = timeline.rallies[rally_index]
    j, n = stroke_index, len(rally)
    h = rally[j - 1]
    cap = config.cap_frames(timeline.fps)

    prev_bound = rally[j - 2] if j > 1 else h - config.t
    if cap is not None:
        prev_bound = max(prev_bound, h - cap)

    if j < n:
        next_bound = rally[j]
        if cap is not None:
            next_bound = min(next_bound, h + cap)
        next_bound += config.epsilon
    else:
        next_bound = h + config.t
        if cap is not None:
            next_bound = min(next_bound, h + cap)

    last = timeline.total_frames - 1
    return ClipWindow(
        rally_index=rally_index,
        stroke_index=stroke_index,
        start=max(0, prev_bound),
        end=min(last, next_bound),
        hit_frame=h,
    )


def stage_annotations(window: ClipWindow, timeline: RallyTimeline) -> StageSplit:
    """Partition an adaptive window into its three semantic stages.

    First/last strokes yield degenerate (empty) stages rather than errors.
    """
    rally = timeline.rallies[window.rally_index]
    j = window.stroke_index
    h = window.hit_frame
    next_hit = rally[j] if j < len(rally) else None

    def interval(lo: int, hi: int) -> tuple[int, int] | None:
        lo, hi = max(lo, window.start), min(hi, window.end)
        return (lo, hi) if lo <= hi else None

    stage1 = interval(window.start, h - 1)
    if next_hit is not None and next_hit <= window.end:
        stage2 = interval(h, next_hit - 1)
        stage3 = interval(next_hit, window.end)
    else:
        stage2 = interval(h, window.end)
        stage3 = None
    return StageSplit(stage1, stage2, stage3)


def plan_clips(timeline: RallyTimeline, config: ClipPlanConfig) -> list[ClipWindow]:
    """Clip windows for every stroke of every rally, in order."""
    clip = fixed_width_clip if config.strategy == FIXED_WIDTH else adaptive_clip
    return [
        clip(timeline, i, j, config)
        for i in range(timeline.n_rallies)
        for j in range(1, timeline.n_strokes(i) + 1)
    ]


# --- annotation and manifest CSV formats -------------------------------


def read_hit_annotations(path: str | Path) -> dict[str, list[tuple[int, str]]]:
    """Read a hit-frame annotation CSV with columns match_id,frame,label.

    Returns {match_id: [(frame, label), ...]} with frames validated to be
    strictly ascending within each match.
    """
    per_match: dict[str, list[tuple[int, str]]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"match_id", "frame", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(
                f"{path}: expected columns match_id,frame,label, "
                f"got {reader.fieldnames}"
            )
        for line_no, row in enumerate(reader, start=2):
            try:
                frame = int(row["frame"])
            except ValueError:
                raise ValidationError(
                    f"{path}:{line_no}: frame {row['frame']!r} is not an integer"
                ) from None
            per_match.setdefault(row["match_id"], []).append((frame, row["label"]))
    for match_id, hits in per_match.items():
        for i in range(1, len(hits)):
            if hits[i][0] <= hits[i - 1][0]:
                raise ValidationError(
                    f"{path}: match {match_id!r} hit frames not strictly "
                    f"ascending at row {i} (frame {hits[i][0]})"
                )
    return per_match


@dataclass(frozen=True)
class ManifestRow:
    match_id: str
    rally_index: int
    stroke_index: int
    hit_frame: int
    start_frame: int
    end_frame: int
    label: str

    @property
    def clip_key(self) -> str:
        return f"{self.rally_index}_{self.stroke_index}"


def write_manifest(rows: Iterable[ManifestRow], path: str | Path) -> None:
    """Write clip manifest rows as UTF-8 CSV with LF line endings."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in rows:
            writer.writerow(
                [
                    r.match_id,
                    r.rally_index,
                    r.stroke_index,
                    r.hit_frame,
                    r.start_frame,
                    r.end_frame,
                    r.label,
                ]
            )


def read_manifest(path: str | Path) -> list[ManifestRow]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != MANIFEST_HEADER:
            raise ValidationError(
                f"{path}: expected header {MANIFEST_HEADER}, got {reader.fieldnames}"
            )
        return [
            ManifestRow(
                match_id=row["match_id"],
                rally_index=int(row["rally_index"]),
                stroke_index=int(row["stroke_index"]),
                hit_frame=int(row["hit_frame"]),
                start_frame=int(row["start_frame"]),
                end_frame=int(row["end_frame"]),
                label=row["label"],
            )
            for row in reader
        ]


def build_manifest(
    match_id: str,
    hits: Sequence[tuple[int, str]],
    config: ClipPlanConfig,
    *,
    fps: float,
    total_frames: int | None = None,
    gap_threshold: int | None = None,
) -> list[ManifestRow]:
    """Plan clip windows for one annotated match and emit manifest rows."""
    frames = [h for h, _ in hits]
    labels = [lab for _, lab in hits]
    if gap_threshold is None:
        gap_threshold = int(round(DEFAULT_GAP_SECONDS * fps))
    if total_frames is None and frames:
        total_frames = frames[-1] + config.t + 1
    timeline = detect_rallies(
        frames, gap_threshold, fps=fps, total_frames=total_frames
    )
    windows = plan_clips(timeline, config)
    assert len(windows) == len(labels)
    return [
        ManifestRow(
            match_id=match_id,
            rally_index=w.rally_index,
            stroke_index=w.stroke_index,
            hit_frame=w.hit_frame,
            start_frame=w.start,
            end_frame=w.end,
            label=lab,
        )
        for w, lab in zip(windows, labels)
    ]
