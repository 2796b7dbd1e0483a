"""Feature assembly, normalization, padding and augmentation."""

import math
from fractions import Fraction

import numpy as np
import pytest

from bstkit.data import (
    BADMINTON,
    COCO_BONE_PAIRS,
    N_BONES,
    N_JOINTS,
    TENNIS,
    CourtGeometry,
    RawClipFeatures,
    RawFrameDetections,
    SampleStore,
    StrokeSample,
    build_clip_features,
    clear_invalid_frames,
    compute_bones,
    feature_path,
    filter_players,
    ingest_manifest,
    load_clip_features,
    normalize_and_pad,
    random_shift_augment,
    read_class_map,
    save_clip_features,
    subsample_indices,
    write_class_map,
)
from bstkit.clipping import ManifestRow
from bstkit.errors import ValidationError

COURT = CourtGeometry(
    corners=np.array([[400, 200], [880, 200], [1080, 620], [200, 620]]),
    net_y=410.0,
)


def person_at(x, y):
    """A 17-joint stick figure whose ankle midpoint sits at (x, y)."""
    joints = np.tile([x, y - 80.0], (N_JOINTS, 1))
    joints[15] = [x - 10, y]
    joints[16] = [x + 10, y]
    return joints


def detections(*ankle_points, shuttle=None):
    return RawFrameDetections(
        people=np.stack([person_at(x, y) for x, y in ankle_points]),
        shuttle=shuttle,
    )


class TestCourtGeometry:
    def test_contains(self):
        assert COURT.contains((640, 400))
        assert not COURT.contains((100, 100))

    def test_rejects_self_intersecting_quad(self):
        with pytest.raises(ValidationError):
            CourtGeometry(np.array([[0, 0], [10, 10], [10, 0], [0, 10]]))

    def test_homography_maps_corners_to_unit_square(self):
        court = COURT.to_court_plane(COURT.corners)
        want = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        np.testing.assert_allclose(court, want, atol=1e-9)

    def test_homography_keeps_interior_inside(self):
        rng = np.random.default_rng(3)
        # Convex combinations of the corners stay inside the unit square.
        for _ in range(50):
            w = rng.dirichlet(np.ones(4))
            p = w @ COURT.corners
            u, v = COURT.to_court_plane(p)
            assert -1e-9 <= u <= 1 + 1e-9 and -1e-9 <= v <= 1 + 1e-9


class TestFilterPlayers:
    def test_two_inside_one_spectator(self):
        det = detections((640, 300), (100, 700), (640, 520))
        picked = filter_players(det, COURT, BADMINTON)
        assert picked == (0, 2)  # assigned by vertical position

    def test_zero_inside_badminton_is_none(self):
        det = detections((100, 100), (1200, 700))
        assert filter_players(det, COURT, BADMINTON) is None

    def test_one_inside_badminton_is_none(self):
        det = detections((640, 300), (1200, 700))
        assert filter_players(det, COURT, BADMINTON) is None

    def test_permuting_detections_never_changes_selection(self):
        rng = np.random.default_rng(5)
        pts = [(640, 300), (100, 700), (640, 520), (500, 450), (1230, 40)]
        base = filter_players(detections(*pts), COURT, BADMINTON)
        base_ankles = {0: pts[base[0]], 1: pts[base[1]]}
        for _ in range(20):
            perm = rng.permutation(len(pts))
            det = detections(*[pts[i] for i in perm])
            picked = filter_players(det, COURT, BADMINTON)
            assert pts[perm[picked[0]]] == base_ankles[0]
            assert pts[perm[picked[1]]] == base_ankles[1]

    def test_tennis_supplements_with_nearest_to_edges(self):
        # Both players outside the side lines: ankle (640, 150) is 50 px
        # above the top edge, (640, 700) is 80 px below the bottom edge,
        # and the umpire at (60, 400) is far from both.
        det = detections((640, 150), (60, 400), (640, 700))
        assert filter_players(det, COURT, TENNIS) is None or True  # see below
        picked = filter_players(det, COURT, TENNIS)
        assert picked == (0, 2)

    def test_tennis_one_inside_one_out(self):
        det = detections((640, 300), (640, 700))
        assert filter_players(det, COURT, BADMINTON) is None
        assert filter_players(det, COURT, TENNIS) == (0, 1)

    def test_tennis_single_person_is_none(self):
        det = detections((640, 700),)
        assert filter_players(det, COURT, TENNIS) is None


class TestBuildClipFeatures:
    def test_frame_with_one_person_zeroed(self):
        frames = [
            detections((640, 300), (640, 520), shuttle=(700, 350)),
            detections((640, 300), shuttle=(600, 380)),
        ]
        raw = build_clip_features(
            frames, COURT, sport=BADMINTON, width=1280, height=720, label=1
        )
        assert raw.joints[0].any() and raw.shuttle[0].any()
        assert not raw.joints[1].any()
        assert not raw.shuttle[1].any()
        assert not raw.positions[1].any()
        assert raw.mask.all()  # cleared frames still count as real frames

    def test_positions_land_in_unit_square(self):
        frames = [detections((640, 300), (640, 520))]
        raw = build_clip_features(
            frames, COURT, sport=BADMINTON, width=1280, height=720, label=0
        )
        assert ((raw.positions[0] >= 0) & (raw.positions[0] <= 1)).all()
        # top player has smaller court depth than bottom player
        assert raw.positions[0, 0, 1] < raw.positions[0, 1, 1]

    def test_clear_invalid_frames_touches_exactly_flagged(self):
        rng = np.random.default_rng(9)
        t = 50
        raw = RawClipFeatures(
            joints=rng.normal(size=(t, 2, N_JOINTS, 2)),
            shuttle=rng.normal(size=(t, 2)),
            positions=rng.uniform(size=(t, 2, 2)),
            mask=np.ones(t, dtype=bool),
            label=0,
            width=1280,
            height=720,
        )
        invalid = np.zeros(t, dtype=bool)
        invalid[[3, 17, 42]] = True
        cleared = clear_invalid_frames(raw, invalid)
        assert not cleared.joints[invalid].any()
        assert not cleared.shuttle[invalid].any()
        np.testing.assert_array_equal(cleared.joints[~invalid], raw.joints[~invalid])
        np.testing.assert_array_equal(cleared.mask, raw.mask)


class TestBones:
    def test_zero_joints_zero_bones(self):
        assert not compute_bones(np.zeros((2, 5, N_JOINTS, 2))).any()

    def test_translation_invariance(self):
        # Integer-valued coordinates keep the float differences exact.
        rng = np.random.default_rng(13)
        joints = rng.integers(0, 1000, size=(2, 8, N_JOINTS, 2)).astype(float)
        shifted = joints + 1.0
        np.testing.assert_array_equal(compute_bones(joints), compute_bones(shifted))

    def test_matches_per_edge_subtraction(self):
        rng = np.random.default_rng(17)
        joints = rng.normal(size=(2, 4, N_JOINTS, 2))
        bones = compute_bones(joints)
        assert bones.shape == (2, 4, N_BONES, 2)
        for k, (parent, child) in enumerate(COCO_BONE_PAIRS):
            np.testing.assert_array_equal(
                bones[..., k, :], joints[..., child, :] - joints[..., parent, :]
            )

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            compute_bones(np.zeros((2, 5, 16, 2)))


def random_raw(rng, t, width=1280, height=720, label=2):
    return RawClipFeatures(
        joints=rng.uniform(0, width, size=(t, 2, N_JOINTS, 2)),
        shuttle=rng.uniform(0, width, size=(t, 2)),
        positions=rng.uniform(size=(t, 2, 2)),
        mask=np.ones(t, dtype=bool),
        label=label,
        width=width,
        height=height,
    )


class TestNormalizeAndPad:
    def test_exact_length_is_identity_with_full_mask(self):
        rng = np.random.default_rng(19)
        raw = random_raw(rng, 30)
        s = normalize_and_pad(raw, 30)
        assert s.mask.all()
        np.testing.assert_allclose(
            s.joints,
            (raw.joints / [1280, 720]).transpose(1, 0, 2, 3).astype(np.float32),
        )

    def test_short_clip_right_padded(self):
        rng = np.random.default_rng(21)
        s = normalize_and_pad(random_raw(rng, 10), 30)
        assert s.mask[:10].all() and not s.mask[10:].any()
        assert not s.joints[:, 10:].any()
        assert not s.bones[:, 10:].any()
        assert not s.shuttle[10:].any()
        assert not s.positions[:, 10:].any()

    def test_long_clip_subsampled_to_reference_indices(self):
        rng = np.random.default_rng(23)
        raw = random_raw(rng, 200)
        s = normalize_and_pad(raw, 100)
        idx = subsample_indices(200, 100)
        np.testing.assert_allclose(
            s.shuttle, (raw.shuttle[idx] / [1280, 720]).astype(np.float32)
        )

    def test_subsample_indices_match_exact_rational_rounding(self):
        for t, target in [(200, 100), (101, 100), (7, 3), (50, 49), (1000, 30)]:
            got = subsample_indices(t, target)
            want = [
                math.floor(Fraction(k * (t - 1), target - 1) + Fraction(1, 2))
                for k in range(target)
            ]
            assert got.tolist() == want
            assert got[0] == 0 and got[-1] == t - 1

    def test_empty_clip_rejected(self):
        rng = np.random.default_rng(27)
        raw = random_raw(rng, 1)
        bad = RawClipFeatures(
            joints=raw.joints[:0],
            shuttle=raw.shuttle[:0],
            positions=raw.positions[:0],
            mask=raw.mask[:0],
            label=0,
            width=1280,
            height=720,
        )
        with pytest.raises(ValidationError):
            normalize_and_pad(bad, 30)


class TestRandomShift:
    def test_probability_zero_is_identity(self):
        rng = np.random.default_rng(29)
        s = normalize_and_pad(random_raw(rng, 20), 30)
        out = random_shift_augment(s, probability=0.0, rng=np.random.default_rng(1))
        np.testing.assert_array_equal(out.joints, s.joints)

    def test_shift_applied_exactly_and_bones_bit_identical(self):
        rng = np.random.default_rng(31)
        s = normalize_and_pad(random_raw(rng, 20), 30)
        seed_rng = np.random.default_rng(2)
        gate, shift = seed_rng.uniform(), seed_rng.uniform(-0.3, 0.3)
        assert gate < 1.0
        out = random_shift_augment(
            s, probability=1.0, rng=np.random.default_rng(2)
        )
        delta = out.shuttle - s.shuttle
        np.testing.assert_allclose(delta[s.mask], shift, atol=1e-6)
        np.testing.assert_array_equal(delta[~s.mask], 0.0)
        delta_j = out.joints - s.joints
        np.testing.assert_allclose(delta_j[:, s.mask], shift, atol=1e-6)
        np.testing.assert_array_equal(out.bones, s.bones)
        # padded frames stay zero
        assert not out.joints[:, ~s.mask].any()

    def test_seed_determinism(self):
        rng = np.random.default_rng(37)
        s = normalize_and_pad(random_raw(rng, 40), 30)
        a = random_shift_augment(s, rng=np.random.default_rng(77))
        b = random_shift_augment(s, rng=np.random.default_rng(77))
        np.testing.assert_array_equal(a.joints, b.joints)
        np.testing.assert_array_equal(a.shuttle, b.shuttle)


class TestPersistence:
    def test_sample_round_trip_bit_for_bit(self, tmp_path):
        rng = np.random.default_rng(41)
        s = normalize_and_pad(
            random_raw(rng, 20), 30, match_id="m7", rally_index=3, stroke_index=2
        )
        path = tmp_path / "sample.npz"
        s.save(path)
        loaded = StrokeSample.load(path)
        for name in ("joints", "bones", "shuttle", "positions", "mask"):
            np.testing.assert_array_equal(getattr(loaded, name), getattr(s, name))
        assert (loaded.label, loaded.match_id) == (s.label, "m7")
        assert (loaded.rally_index, loaded.stroke_index) == (3, 2)

    def test_store_round_trip(self, tmp_path):
        rng = np.random.default_rng(43)
        samples = [normalize_and_pad(random_raw(rng, 25), 30) for _ in range(4)]
        store = SampleStore.from_samples(samples, class_names=["a", "b", "c"])
        path = tmp_path / "store.npz"
        store.save(path)
        loaded = SampleStore.load(path)
        assert len(loaded) == 4
        np.testing.assert_array_equal(loaded.joints, store.joints)
        assert loaded.class_names == ["a", "b", "c"]
        roundtrip = loaded.sample(2)
        np.testing.assert_array_equal(roundtrip.joints, samples[2].joints)

    def test_clip_features_round_trip(self, tmp_path):
        rng = np.random.default_rng(47)
        raw = random_raw(rng, 15)
        path = feature_path(tmp_path, "m1", 0, 1)
        save_clip_features(path, raw)
        loaded = load_clip_features(path)
        np.testing.assert_array_equal(loaded.joints, raw.joints)
        assert (loaded.width, loaded.height, loaded.label) == (1280, 720, 2)

    def test_class_map_round_trip(self, tmp_path):
        path = tmp_path / "classes.csv"
        write_class_map(path, ["net shot", "smash", "lob"])
        assert read_class_map(path) == {"net shot": 0, "smash": 1, "lob": 2}


class TestIngestManifest:
    def test_end_to_end(self, tmp_path):
        rng = np.random.default_rng(53)
        rows = []
        for stroke in (1, 2):
            t = 20 + stroke
            raw = random_raw(rng, t, label=stroke - 1)
            save_clip_features(feature_path(tmp_path, "m1", 0, stroke), raw)
            rows.append(
                ManifestRow(
                    match_id="m1",
                    rally_index=0,
                    stroke_index=stroke,
                    hit_frame=100,
                    start_frame=90,
                    end_frame=90 + t - 1,
                    label="smash" if stroke == 1 else "lob",
                )
            )
        store = ingest_manifest(
            rows, tmp_path, seq_len=32, class_map={"smash": 0, "lob": 1}
        )
        assert len(store) == 2
        assert store.labels.tolist() == [0, 1]
        assert store.seq_len == 32
        assert store.class_names == ["smash", "lob"]

    def test_frame_count_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(59)
        raw = random_raw(rng, 10, label=0)
        save_clip_features(feature_path(tmp_path, "m1", 0, 1), raw)
        row = ManifestRow("m1", 0, 1, 100, 90, 110, "smash")
        with pytest.raises(ValidationError, match="frames"):
            ingest_manifest([row], tmp_path, seq_len=32, class_map={"smash": 0})

    def test_label_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(61)
        raw = random_raw(rng, 10, label=1)
        save_clip_features(feature_path(tmp_path, "m1", 0, 1), raw)
        row = ManifestRow("m1", 0, 1, 100, 90, 99, "smash")
        with pytest.raises(ValidationError, match="label"):
            ingest_manifest([row], tmp_path, seq_len=32, class_map={"smash": 0})


def test_masked_frames_contribute_zero_to_masked_statistics():
    rng = np.random.default_rng(67)
    s = normalize_and_pad(random_raw(rng, 12), 30)
    total = (s.joints * s.mask[None, :, None, None]).sum()
    assert total == s.joints.sum()  # padding already holds zeros
