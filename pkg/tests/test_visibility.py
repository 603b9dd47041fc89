import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from s3forge.errors import SchemaError
from s3forge.scene import CameraIntrinsics, OrientedBox3, Pose, Room, SceneObject, build_scene
from s3forge.visibility import (VisParams, VisibilityModel, compute_table, first_appearance, project,
                                segment_box_hit, surface_lattice, table_from_jsonl, table_to_jsonl,
                                visible_fraction, visible_objects)

import oracles

CAM = CameraIntrinsics()
EYE = Pose(0.0, 0.0, 1.0, 0.0, 0.0)


def test_lattice_sizes():
    assert len(surface_lattice(26)) == 26
    assert len(surface_lattice(8)) == 8
    assert len(surface_lattice(27)) == 56


def test_unit_box_projection_uses_near_face():
    bbox = project(OrientedBox3((2.0, 0.0, 1.0), (0.5, 0.5, 0.5)), EYE, CAM)
    # corners at depth 1.5 span 1 m: 384 * 1 / 1.5
    assert bbox[2] - bbox[0] == pytest.approx(256.0)
    assert (bbox[0] + bbox[2]) / 2 == pytest.approx(384.0, abs=1.0)


def test_thin_box_matches_plain_pinhole_width():
    bbox = project(OrientedBox3((2.0, 0.0, 1.0), (1e-6, 0.5, 0.5)), EYE, CAM)
    assert bbox[2] - bbox[0] == pytest.approx(768 * 0.5 / (2 * math.tan(math.radians(45))), rel=1e-5)


def test_box_behind_camera_projects_to_none():
    assert project(OrientedBox3((-2.0, 0.0, 1.0), (0.5, 0.5, 0.5)), EYE, CAM) is None


def test_straddling_box_still_projects():
    bbox = project(OrientedBox3((0.2, 0.0, 1.0), (1.0, 0.3, 0.3)), EYE, CAM)
    assert bbox is not None
    assert bbox[0] >= 0 and bbox[2] <= 768


def _pair_scene():
    room = Room("r0", ((-1, -3), (8, -3), (8, 3), (-1, 3)), 3.0)
    target = SceneObject("o_target", "chair", OrientedBox3((5.0, 0.0, 1.0), (0.3, 0.3, 0.3)), "r0")
    return room, target


def test_wall_between_hides_object():
    room, target = _pair_scene()
    s = build_scene("w", [room], [target], occluders=[OrientedBox3((2.5, 0, 1.5), (0.05, 2.0, 1.5))])
    frac = visible_fraction(target.box, EYE, CAM, s.occluders, VisParams())
    assert frac == 0.0
    clear = build_scene("c", [room], [target])
    assert visible_fraction(target.box, EYE, CAM, clear.occluders, VisParams()) > 0.0


def test_self_occlusion_is_ignored():
    room, target = _pair_scene()
    s = build_scene("c", [room], [target])
    model = VisibilityModel(s, CAM, VisParams())
    frac, px = model.object_visibility(EYE, 0)
    # back-face samples still count: the target does not block its own rays
    assert frac == 1.0 and px > 100


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_segment_box_hit_matches_separating_axis(seed):
    rng = np.random.default_rng(seed)
    box = OrientedBox3(tuple(rng.uniform(-1, 1, 3)), tuple(rng.uniform(0.05, 1.0, 3)), float(rng.uniform(-4, 4)))
    p, q = rng.uniform(-2.5, 2.5, (2, 3))
    assert segment_box_hit(p, q, box) == oracles.segment_hits_box_sat(p, q, box)


def test_visible_fraction_matches_ray_oracle(small_world):
    scene, traj = small_world.scene, small_world.trajectory
    model = VisibilityModel(scene, CAM, VisParams())
    rng = np.random.default_rng(11)
    nonzero = 0
    for _ in range(60):
        f = int(rng.integers(len(traj.poses)))
        i = int(rng.integers(len(model.objects)))
        frac, px = model.object_visibility(traj.poses[f], i)
        exp = oracles.visible_fraction_oracle(scene, model.objects[i], traj.poses[f], CAM, VisParams())
        assert frac == exp
        assert (px > 0) == (frac > 0)
        nonzero += frac > 0
    assert nonzero > 5


def test_table_rows_agree_with_model(small_world):
    table = small_world.table
    model = VisibilityModel(small_world.scene, CAM, table.params)
    for f in (0, table.n_frames // 3, table.n_frames - 1):
        frac, px, _ = model.evaluate(small_world.trajectory.poses[f])
        assert np.array_equal(frac, table.fraction[f])
        assert np.array_equal(px, table.px[f])
        # positive fraction implies positive projected area
        assert np.all(px[frac > 0] > 0)


def test_first_appearance_index(small_world):
    table = small_world.table
    fa = oracles.first_appearances(table)
    for oid in table.object_ids:
        assert first_appearance(table, oid) == fa[oid]
    f = next(v for v in fa.values() if v is not None)
    assert set(visible_objects(table, f)) == {o for o in table.object_ids if oracles.visible_at(table, f, o)}
    stricter = VisParams(tau_vis=0.9, min_px=5000)
    assert set(visible_objects(table, f, stricter)) <= set(visible_objects(table, f))


def test_table_round_trip_and_determinism(small_world):
    data = table_to_jsonl(small_world.table)
    back = table_from_jsonl(data)
    assert table_to_jsonl(back) == data
    again = compute_table(small_world.scene, small_world.trajectory, CAM, small_world.table.params)
    assert table_to_jsonl(again) == data


def test_table_without_header_is_rejected():
    with pytest.raises(SchemaError):
        table_from_jsonl(b'{"frame": 0, "object_id": "x", "fraction": 1, "px": 1, "dist": 1}\n')


def test_vis_params_validation():
    with pytest.raises(ValueError):
        VisParams(tau_vis=0.0)
    with pytest.raises(ValueError):
        VisParams(n_surface_samples=4)


def test_doubling_samples_moves_fractions_little(small_world):
    w = small_world
    models = [VisibilityModel(w.scene, CAM, VisParams(n_surface_samples=n)) for n in (26, 52, 260)]
    worst = 0.0
    for pose in w.trajectory.poses[::11]:
        base, double, dense = (m.evaluate(pose)[0] for m in models)
        worst = max(worst, np.abs(base - double).max(), np.abs(base - dense).max())
    assert worst <= 0.15
