"""Greedy association and track lifecycle."""

import itertools
import math

import numpy as np
import pytest

from crowdmot.geometry import Box3D
from crowdmot.targets import MotionOffset
from crowdmot.tracker import (
    Detection,
    TrackerConfig,
    TrackerState,
    associate,
    run_sequence,
    step,
)

CFG = TrackerConfig()


def det(x, y, score=0.9, ox=0.0, oy=0.0, frame=0):
    return Detection(
        box=Box3D(cx=x, cy=y, cz=0.85, length=0.6, height=1.7, width=0.6),
        score=score,
        offset=MotionOffset(ox, oy, 0.0),
        frame=frame,
    )


def brute_force_assignment(dets, tracks, max_dist):
    """Enumerate every injective inside-gate det->track assignment.

    Best = most matched pairs, then least total distance. Returns the best
    pair set and whether it is unique (no other equally good assignment
    within 1e-12 of the same total).
    """
    dists = {}
    for i, d in enumerate(dets):
        px, py = d.box.cx + d.offset.ox, d.box.cy + d.offset.oy
        for tid, (cx, cy) in tracks:
            dist = math.hypot(cx - px, cy - py)
            if dist <= max_dist:
                dists[(i, tid)] = dist
    track_ids = [tid for tid, _ in tracks]
    candidates = [(0, 0.0, frozenset())]
    for r in range(1, min(len(dets), len(track_ids)) + 1):
        for det_subset in itertools.combinations(range(len(dets)), r):
            for perm in itertools.permutations(track_ids, r):
                pairs = frozenset(zip(det_subset, perm))
                if all(p in dists for p in pairs):
                    candidates.append((r, sum(dists[p] for p in pairs), pairs))
    best_r = max(r for r, _, _ in candidates)
    finalists = [(total, pairs) for r, total, pairs in candidates if r == best_r]
    best_total, best_pairs = min(finalists, key=lambda c: c[0])
    rivals = [
        pairs
        for total, pairs in finalists
        if total <= best_total + 1e-12 and pairs != best_pairs
    ]
    return set(best_pairs), not rivals


class TestAssociate:
    def test_no_tracks(self):
        result = associate([det(0, 0), det(1, 1)], [], CFG)
        assert result == [(0, None), (1, None)]

    def test_exact_offset_match(self):
        d = det(2.0, 0.0, ox=-1.0)  # was at (1, 0) in the previous frame
        assert associate([d], [(7, (1.0, 0.0))], CFG) == [(0, 7)]

    def test_gate_excludes_far_tracks(self):
        d = det(0.0, 0.0)
        assert associate([d], [(3, (0.0, 1.5))], CFG) == [(0, None)]

    def test_crossing_objects_keep_identities(self):
        # Two pedestrians swap positions between frames; exact offsets
        # point each detection back to its own track.
        d1 = det(1.0, 0.0, score=0.9, ox=-1.0)
        d2 = det(0.0, 0.0, score=0.8, ox=1.0)
        tracks = [(0, (0.0, 0.0)), (1, (1.0, 0.0))]
        result = dict(associate([d1, d2], tracks, CFG))
        assert result == {0: 0, 1: 1}
        oracle, unique = brute_force_assignment([d1, d2], tracks, CFG.max_match_dist)
        assert unique and {(i, t) for i, t in result.items()} == oracle

    def test_score_order_not_input_order(self):
        # Both detections within gate of a single track; the higher score wins
        # even when it comes later in the list.
        d_low = det(0.3, 0.0, score=0.5)
        d_high = det(0.2, 0.0, score=0.9)
        result = dict(associate([d_low, d_high], [(0, (0.0, 0.0))], CFG))
        assert result == {0: None, 1: 0}

    def test_equal_scores_tie_break_by_index(self):
        d1 = det(0.3, 0.0, score=0.8)
        d2 = det(0.2, 0.0, score=0.8)
        result = dict(associate([d1, d2], [(0, (0.0, 0.0))], CFG))
        assert result == {0: 0, 1: None}

    def test_distance_tie_break_by_track_id(self):
        d = det(0.0, 0.0)
        result = dict(associate([d], [(5, (0.5, 0.0)), (2, (-0.5, 0.0))], CFG))
        assert result == {0: 2}

    def test_never_matches_beyond_gate(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            dets = [
                det(rng.uniform(-3, 3), rng.uniform(-3, 3), score=rng.uniform(0.1, 1.0))
                for _ in range(rng.integers(0, 5))
            ]
            tracks = [
                (tid, (rng.uniform(-3, 3), rng.uniform(-3, 3)))
                for tid in range(rng.integers(0, 5))
            ]
            for i, tid in associate(dets, tracks, CFG):
                if tid is not None:
                    px = dets[i].box.cx + dets[i].offset.ox
                    py = dets[i].box.cy + dets[i].offset.oy
                    cx, cy = dict(tracks)[tid]
                    assert math.hypot(cx - px, cy - py) <= CFG.max_match_dist

    def test_mixed_frames_rejected(self):
        with pytest.raises(ValueError):
            associate([det(0, 0, frame=0), det(1, 1, frame=1)], [], CFG)


class TestStep:
    def test_births_require_min_score(self):
        state = TrackerState()
        out = step(state, [det(0, 0, score=0.29), det(2, 2, score=0.31)], CFG, frame=0)
        assert len(out) == 1 and len(state.live) == 1

    def test_all_tracks_retire_after_silence(self):
        state = TrackerState()
        step(state, [det(0, 0)], CFG, frame=0)
        for frame in range(1, CFG.max_age + 2):
            step(state, [], CFG, frame=frame)
        assert not state.live and len(state.dead) == 1

    def test_constant_detection_builds_one_track(self):
        state = TrackerState()
        for frame in range(10):
            step(state, [det(0, 0, frame=frame)], CFG, frame=frame)
        assert len(state.live) == 1 and not state.dead
        assert len(next(iter(state.live.values()))) == 10

    def test_gap_of_max_age_keeps_identity(self):
        state = TrackerState()
        step(state, [det(0, 0)], CFG, frame=0)
        for frame in range(1, 1 + CFG.max_age):
            step(state, [], CFG, frame=frame)
        out = step(state, [det(0.1, 0.0, frame=CFG.max_age + 1)], CFG, frame=CFG.max_age + 1)
        assert out[0][0] == 0 and len(state.live) == 1 and not state.dead

    def test_gap_beyond_max_age_assigns_new_identity(self):
        state = TrackerState()
        step(state, [det(0, 0)], CFG, frame=0)
        for frame in range(1, 2 + CFG.max_age):
            step(state, [], CFG, frame=frame)
        assert not state.live
        out = step(state, [det(0.1, 0.0, frame=CFG.max_age + 2)], CFG, frame=CFG.max_age + 2)
        assert out[0][0] == 1

    def test_out_of_order_frame_rejected(self):
        state = TrackerState()
        step(state, [det(0, 0)], CFG, frame=0)
        with pytest.raises(ValueError):
            step(state, [det(0, 0)], CFG, frame=0)


class TestRunSequence:
    def test_empty_sequence(self):
        assert run_sequence([], CFG) == []

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        frames = [
            [
                det(rng.uniform(-5, 5), rng.uniform(-5, 5), score=rng.uniform(0.3, 1.0), frame=f)
                for _ in range(6)
            ]
            for f in range(15)
        ]
        a = run_sequence(frames, CFG)
        b = run_sequence(frames, CFG)
        assert [(t.track_id, t.entries) for t in a] == [(t.track_id, t.entries) for t in b]

    def test_track_ids_unique_and_never_reused(self):
        rng = np.random.default_rng(2)
        frames = [
            [
                det(rng.uniform(-20, 20), rng.uniform(-20, 20), score=rng.uniform(0.3, 1.0), frame=f)
                for _ in range(rng.integers(0, 8))
            ]
            for f in range(30)
        ]
        trajectories = run_sequence(frames, CFG)
        ids = [t.track_id for t in trajectories]
        assert len(ids) == len(set(ids))
        for t in trajectories:
            frames_seen = t.frames()
            assert frames_seen == sorted(frames_seen)
            assert len(set(frames_seen)) == len(frames_seen)

    def test_permuting_equal_scores_keeps_matches(self):
        # Well-separated tracks, detections near their own track: the matched
        # (det position, track) pairs must not depend on list order.
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(2, 6))
            centers = _spread_points(rng, n, min_dist=2.5)
            tracks = [(tid, tuple(c)) for tid, c in enumerate(centers)]
            dets = [
                det(c[0] + rng.uniform(-0.2, 0.2), c[1] + rng.uniform(-0.2, 0.2), score=0.7)
                for c in centers
            ]
            base = {
                (dets[i].box.cx, tid)
                for i, tid in associate(dets, tracks, CFG)
                if tid is not None
            }
            perm = rng.permutation(n)
            shuffled = [dets[i] for i in perm]
            permuted = {
                (shuffled[i].box.cx, tid)
                for i, tid in associate(shuffled, tracks, CFG)
                if tid is not None
            }
            assert base == permuted


def _spread_points(rng, n, min_dist, span=10.0):
    points = []
    while len(points) < n:
        cand = rng.uniform(-span, span, 2)
        if all(np.hypot(*(cand - p)) >= min_dist for p in points):
            points.append(cand)
    return points
