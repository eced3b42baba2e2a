import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slotvio import polygon
from slotvio.frontend import (NATURAL, PS_CORNER, FeatureTrack, ForcedKeyframeWarning, Frontend, FrontendConfig,
                              select_keyframe)
from slotvio.geom import BevCalibration, Pose, body_to_bev, compose, inverse, project_normalized, world_to_body
from slotvio.pstrack import SlotObservation

CAL = BevCalibration()


def grid_candidates(n, spacing=0.06):
    side = int(np.ceil(np.sqrt(n)))
    ij = np.array([(i, j) for i in range(side) for j in range(side)])[:n]
    return np.arange(n), (ij - side / 2) * spacing


def slot_ahead(x=6.0, y=0.0, sid_gt=0):
    body = polygon.rectangle((x, y), 0.0, 2.5, 5.5)
    return SlotObservation(body_to_bev(body, CAL), body, False, 0.9, 0.0, 0.1, sid_gt)


def test_budget_caps_tracks():
    fe = Frontend()
    ids, uv = grid_candidates(150)
    fe.ingest_frame(ids, uv, 0.0)
    assert len(fe.natural_active()) == 110


@given(st.integers(10, 200))
def test_budget_never_exceeded(n):
    fe = Frontend(FrontendConfig(max_features=n))
    ids, uv = grid_candidates(250)
    for k in range(3):
        fe.ingest_frame(ids, uv + 0.001 * k, 0.1 * k)
        assert len(fe.natural_active()) <= n


def test_track_length_follows_observations():
    fe = Frontend()
    for k in range(5):
        fe.ingest_frame([7], [[0.1 + 0.01 * k, 0.2]], 0.1 * k)
    (trk,) = fe.tracks.values()
    assert len(trk) == 5 and trk.landmark_id == 7 and trk.source == NATURAL
    fe.ingest_frame([], np.zeros((0, 2)), 0.6)
    assert not trk.active


def test_separation_rejects_close_candidates():
    fe = Frontend()
    fe.ingest_frame([0, 1, 2], [[0.0, 0.0], [0.01, 0.0], [0.2, 0.0]], 0.0)
    assert sorted(t.landmark_id for t in fe.natural_active()) == [0, 2]


def test_outlier_jump_ends_track():
    fe = Frontend()
    fe.ingest_frame([3], [[0.0, 0.0]], 0.0)
    fe.ingest_frame([3], [[0.5, 0.0]], 0.1)
    assert fe.rejected_outliers == 1
    assert len(fe.tracks) == 2  # the jumped observation starts a fresh track


def test_input_errors():
    fe = Frontend()
    with pytest.raises(ValueError):
        fe.ingest_frame([1, 1], [[0, 0], [0.3, 0]], 0.0)
    fe.ingest_frame([1], [[0, 0]], 1.0)
    with pytest.raises(ValueError):
        fe.ingest_frame([1], [[0, 0]], 1.0)
    with pytest.raises(ValueError):
        FrontendConfig(max_features=5)
    with pytest.raises(ValueError):
        FeatureTrack(0, PS_CORNER)


def test_slot_gives_four_corner_tracks():
    fe = Frontend()
    fe.ingest_frame([], np.zeros((0, 2)), 0.0, [(slot_ahead(), 4)])
    corners = [t for t in fe.tracks.values() if t.source == PS_CORNER]
    assert sorted(t.linked_slot for t in corners) == [(4, i) for i in range(4)]


def test_corner_tracks_persist_and_skip_budget():
    fe = Frontend(FrontendConfig(max_features=10))
    ids, uv = grid_candidates(30)
    for k in range(3):
        fe.ingest_frame(ids, uv, 0.1 * k, [(slot_ahead(6.0 - 0.1 * k), 4)])
    corners = [t for t in fe.tracks.values() if t.source == PS_CORNER]
    assert len(corners) == 4 and all(len(t) == 3 for t in corners)
    assert len(fe.natural_active()) == 10
    assert sum(fe.tracks[k].source == PS_CORNER for k in fe.current) == 4


def test_unassigned_slot_is_ignored():
    fe = Frontend()
    fe.ingest_frame([], np.zeros((0, 2)), 0.0, [(slot_ahead(), None)])
    assert not fe.tracks


def test_corner_projection_matches_camera_model():
    """Corners lifted from the BEV detection land where the camera would see the world corner."""
    fe = Frontend()
    pose = Pose(q=[np.cos(0.15), 0, 0, np.sin(0.15)], t=[2.0, -1.0, 0.0])
    world = polygon.rectangle((8.0, 1.0), 0.4, 2.5, 5.5)
    body = inverse(pose).apply(np.column_stack([world, np.zeros(4)]))[:, :2]
    obs = SlotObservation(body_to_bev(body, CAL), body, False, 0.9, 0.0, 0.1, 0)
    uv, vis = fe.corner_projections(obs)
    cam_pose = compose(pose, CAL.cam_extrinsic)
    expect, _ = project_normalized(world_to_body(np.column_stack([world, np.zeros(4)]), cam_pose))
    assert vis.any()
    assert np.max(np.abs(uv[vis] - expect[vis])) < 1e-9


def test_corners_behind_camera_not_visible():
    _, vis = Frontend().corner_projections(slot_ahead(x=-6.0))
    assert not vis.any()


def test_select_keyframe_examples():
    cfg = FrontendConfig()
    prev = {i: np.array([0.01 * i, 0.0]) for i in range(30)}
    d = select_keyframe(prev, dict(prev), cfg)
    assert not d.is_keyframe and d.parallax == 0.0 and d.n_shared == 30
    moved = {k: v + [2 * cfg.parallax_threshold, 0] for k, v in prev.items()}
    d = select_keyframe(prev, moved, cfg)
    assert d.is_keyframe and d.parallax == pytest.approx(2 * cfg.parallax_threshold)
    few = {k: prev[k] for k in range(cfg.min_tracked_for_keyframe - 1)}
    assert select_keyframe(prev, few, cfg).is_keyframe


def test_select_keyframe_forced():
    with pytest.warns(ForcedKeyframeWarning):
        d = select_keyframe({0: np.zeros(2)}, {1: np.zeros(2)}, FrontendConfig())
    assert d.is_keyframe and d.forced


@given(st.floats(0, 0.1), st.integers(1, 60))
def test_select_keyframe_monotone_in_parallax(shift, n):
    cfg = FrontendConfig()
    prev = {i: np.array([0.01 * i, 0.0]) for i in range(n)}
    cur = {k: v + [shift, 0.0] for k, v in prev.items()}
    d = select_keyframe(prev, cur, cfg)
    assert d.parallax == pytest.approx(shift)
    assert d.is_keyframe == (d.parallax > cfg.parallax_threshold or n < cfg.min_tracked_for_keyframe)


def test_corner_information_matches_detection_scatter():
    # slot corners lifted from noisy BEV detections are far less precise than tracked features;
    # the backend's default down-weighting should match the scatter the detector actually produces
    from slotvio.backend.window import BackendConfig
    from slotvio.sim.dataset import make_dataset

    fe = Frontend()
    errs = []
    for kind, seed in (("left90", 0), ("right_parallel", 1), ("round", 0)):
        ds = make_dataset(kind, seed)
        for fr in ds.log.bev[::2]:
            inv = inverse(ds.trajectory.pose_at(fr.t))
            for obs in fr.observations:
                if obs.gt_id < 0:
                    continue
                truth = SlotObservation(obs.corners_px, inv.apply(ds.world.slot_by_id(obs.gt_id).corners)[:, :2],
                                        False, 1.0, fr.t)
                uv, vis = fe.corner_projections(obs)
                uv_true, vis_true = fe.corner_projections(truth)
                errs.append((uv - uv_true)[vis & vis_true])
    e = np.concatenate(errs)
    assert len(e) > 200
    cfg = BackendConfig()
    implied = (cfg.reprojection_std / np.sqrt(np.mean(e * e))) ** 2
    assert 0.5 < cfg.ps_corner_info_scale / implied < 2.0
