import numpy as np
import pytest

import avh


def test_mesh_round_trip(tmp_path):
    m = avh.TriMesh()
    m.vertices = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    m.faces = np.array([[0, 1, 2]], dtype=np.int32)
    m = avh.compute_normals(m)
    np.testing.assert_allclose(m.vertex_normals, [[0, 0, 1]] * 3)
    avh.write_obj(m, tmp_path / "t.obj")
    r = avh.read_obj(tmp_path / "t.obj")
    np.testing.assert_allclose(r.vertices, m.vertices)
    assert r.faces.tolist() == [[0, 1, 2]]


def test_ray_cast_and_match():
    m = avh.TriMesh()
    m.vertices = np.array([[-1.0, -1, 1], [1, -1, 1], [0, 1, 1]])
    m.faces = np.array([[0, 1, 2]], dtype=np.int32)
    accel = avh.SurfaceAccel(avh.compute_normals(m))
    face, dist, pos = accel.ray_cast([0, 0, 0], [0, 0, 1], 5.0)
    assert face == 0 and dist == pytest.approx(1.0)
    assert accel.ray_cast([0, 0, 0], [0, 0, -1], 5.0) is None
    match = avh.find_match([0, 0, 0], [0, 0, 1], accel, 2.0)
    assert match["positive"] and match["distance"] == pytest.approx(1.0)


def test_confidence_terms():
    assert avh.normal_match_score([0, 0, 1], [0, 0, 1]) == 1.0
    assert avh.normal_match_score([0, 0, 1], [0, 0, -1]) == 0.0
    assert avh.frame_quality(np.full((4, 4), 131 / 255, np.float32))[1]
    assert not avh.frame_quality(np.full((4, 4), 129 / 255, np.float32))[1]


def test_inpaint_fills_hole():
    img = np.full((8, 8, 2), 0.25, np.float32)
    known = np.ones((8, 8), np.uint8)
    known[3:5, 3:5] = 0
    img[3:5, 3:5] = 9.0
    out = avh.fmm_inpaint(img, known)
    np.testing.assert_allclose(out, 0.25, atol=1e-6)


def test_select_frames_distinct_poses():
    poses = np.zeros((6, avh.POSE_VALUES))
    for i in range(3):
        poses[2 * i, i] = poses[2 * i + 1, i] = 1.5
    training, validation = avh.select_frames(poses.tolist(), 3)
    assert len(training) == 3 and validation == []
    assert len({t // 2 for t in training}) == 3


def test_decoder_shapes_and_count():
    cfg = avh.DecoderConfig(fc_size=4, latent_size=8, hidden_size=16, out_resolution=16)
    w = avh.init_weights(cfg, 3)
    assert w.parameter_count == avh.param_count(cfg) == sum(avh.param_report(cfg).values())
    color, disp = avh.decode(w, [0.0] * avh.POSE_VALUES)
    assert color.shape == (16, 16, 3) and disp.shape == (16, 16, 3)
    np.testing.assert_allclose(color, 0.5)  # zero-initialized output layer
    with pytest.raises(ValueError):
        avh.DecoderConfig(fc_size=4, latent_size=8, out_resolution=24)


def test_capsule_person_poses():
    t = avh.make_capsule_person()
    rest = avh.pose_mesh(t, [0.0] * t.shape_count, [0.0] * avh.POSE_VALUES)
    moved = avh.pose_mesh(t, [0.0] * t.shape_count, [0.0] * avh.POSE_VALUES, [0.0, 1.0, 0.0])
    np.testing.assert_allclose(moved.vertices - rest.vertices, np.tile([0.0, 1.0, 0.0], (len(rest.vertices), 1)),
                               atol=1e-12)
    with pytest.raises(ValueError):
        avh.pose_mesh(t, [], [0.0] * 3)
