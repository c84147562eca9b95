import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grpo3d.embeddings import EmbeddingProvider
from grpo3d.geometry import Aabb3, iou
from grpo3d.scene_sim import (
    COLORS,
    LABELS,
    CameraPose,
    PlacementError,
    SceneObject,
    SceneSpec,
    generate_questions,
    generate_scene,
    oracle_answer,
    render_view_features,
    sample_camera_ring,
    visible_objects,
)

EXTENT = Aabb3((0, 0, 0), (10, 10, 10))


def box_at(x, y, z, s=0.5):
    return Aabb3((x, y, z), (x + s, y + s, z + s))


def make_scene(objs):
    return SceneSpec("t", EXTENT, tuple(SceneObject(l, c, box_at(*p)) for l, c, p in objs))


def relation_oracle(scene, ref, direction):
    """Nearest object strictly ahead of ``ref`` along a compass direction (+x east, +y north)."""
    axis, sign = {"east": (0, 1), "west": (0, -1), "north": (1, 1), "south": (1, -1)}[direction]
    rc = [(scene.objects[ref].box.min[k] + scene.objects[ref].box.max[k]) / 2 for k in range(3)]
    best, best_d = None, math.inf
    for i, o in enumerate(scene.objects):
        c = [(o.box.min[k] + o.box.max[k]) / 2 for k in range(3)]
        if i == ref or sign * (c[axis] - rc[axis]) <= 0:
            continue
        d = math.dist(c, rc)
        if d < best_d:
            best, best_d = i, d
    return best


def nearest_oracle(scene, ref):
    rc = (np.array(scene.objects[ref].box.min) + scene.objects[ref].box.max) / 2
    d = [math.inf if i == ref else float(np.linalg.norm((np.array(o.box.min) + o.box.max) / 2 - rc))
         for i, o in enumerate(scene.objects)]
    return int(np.argmin(d))


def cone_oracle(scene, pose, cone_deg):
    view = np.subtract(pose.look_at, pose.position)
    out = []
    for i, o in enumerate(scene.objects):
        d = (np.array(o.box.min) + o.box.max) / 2 - pose.position
        angle = math.degrees(math.acos(np.clip(np.dot(d, view) / (np.linalg.norm(d) * np.linalg.norm(view)), -1, 1)))
        if angle <= cone_deg / 2 + 1e-9 and np.dot(d, view) > 0:
            out.append(i)
    return tuple(out)


def test_determinism_and_non_overlap():
    a = generate_scene(np.random.default_rng(5), 10, "s")
    b = generate_scene(np.random.default_rng(5), 10, "s")
    assert a == b
    for i in range(len(a.objects)):
        assert EXTENT.contains_box(a.objects[i].box)
        assert a.objects[i].label in LABELS and a.objects[i].color in COLORS
        for j in range(i + 1, len(a.objects)):
            assert iou(a.objects[i].box, a.objects[j].box) == 0.0


def test_twelve_objects_place_over_100_seeds():
    for seed in range(100):
        assert len(generate_scene(np.random.default_rng(seed), 12).objects) == 12


def test_floor_layout_rests_on_floor():
    s = generate_scene(np.random.default_rng(0), 8, layout="floor")
    assert all(o.box.min[2] == 0.0 for o in s.objects)


def test_invalid_generation_requests():
    with pytest.raises(ValueError):
        generate_scene(np.random.default_rng(0), 2)
    with pytest.raises(ValueError):
        generate_scene(np.random.default_rng(0), 13)
    with pytest.raises(PlacementError):
        generate_scene(np.random.default_rng(0), 12, extent=Aabb3((0, 0, 0), (2.2, 2.2, 2.2)))


def test_attribute_question_and_ambiguity():
    scene = make_scene([("chair", "red", (1, 1, 1)), ("table", "blue", (5, 5, 1)), ("table", "green", (8, 8, 1))])
    items = generate_questions(scene, np.random.default_rng(0))
    attr = [(q.question, q.answer, q.target) for q in items if q.template == "attribute"]
    assert attr == [("what color is the chair?", "red", 0)]
    assert oracle_answer(scene, "what color is the chair?") == "red"
    assert oracle_answer(scene, "what color is the table?") == ""
    assert oracle_answer(scene, "where is the remote control?") == ""


def test_relation_axes():
    scene = make_scene([("box", "red", (5, 5, 1)), ("lamp", "white", (5, 8, 1)), ("sofa", "gray", (8, 5, 1))])
    assert oracle_answer(scene, "what is the object north of the red box?") == "lamp"
    assert oracle_answer(scene, "what is the object east of the red box?") == "sofa"
    assert oracle_answer(scene, "what is the object west of the red box?") == ""
    assert oracle_answer(scene, "what is the object north of the blue box?") == ""


def test_generated_answers_match_brute_force_and_oracle():
    n_items = 0
    seed = 0
    while n_items < 1000:
        rng = np.random.default_rng(seed)
        scene = generate_scene(rng, int(rng.integers(5, 13)))
        for q in generate_questions(scene, rng):
            assert oracle_answer(scene, q.question) == q.answer
            obj = scene.objects[q.target]
            if q.template == "attribute":
                assert obj.color == q.answer
            elif q.template == "relation":
                direction = q.question.split()[4]
                assert relation_oracle(scene, q.reference, direction) == q.target
            else:
                assert nearest_oracle(scene, q.reference) == q.target
            assert obj.label == q.answer or q.template == "attribute"
            n_items += 1
        seed += 1


def test_max_questions_subsamples_in_order():
    scene = generate_scene(np.random.default_rng(3), 10)
    full = generate_questions(scene, np.random.default_rng(0))
    some = generate_questions(scene, np.random.default_rng(0), max_questions=5)
    assert len(some) == min(5, len(full))
    positions = [full.index(q) for q in some]
    assert positions == sorted(positions)


def test_camera_ring_geometry():
    scene = generate_scene(np.random.default_rng(0), 5)
    poses = sample_camera_ring(scene, 4)
    assert [p.angle_deg for p in poses] == [0.0, 90.0, 180.0, 270.0]
    half_diag = math.sqrt(300) / 2
    for p in poses:
        assert p.look_at == (5.0, 5.0, 5.0)
        assert math.hypot(p.position[0] - 5, p.position[1] - 5) == pytest.approx(1.2 * half_diag)
        assert p.position[2] == pytest.approx(7.0)
    assert len(sample_camera_ring(scene, 28)) == 28
    assert sample_camera_ring(scene, 3, "bottom")[0].position[2] < 0
    assert sample_camera_ring(scene, 3, "elevated")[0].position[2] > 10
    with pytest.raises(ValueError):
        sample_camera_ring(scene, 0)
    with pytest.raises(ValueError):
        sample_camera_ring(scene, 3, "sideways")


def test_camera_looking_away_sees_nothing():
    scene = generate_scene(np.random.default_rng(1), 6)
    pose = CameraPose("away", "horizontal", 0.0, (20.0, 5.0, 5.0), (30.0, 5.0, 5.0))
    v = render_view_features(scene, pose, EmbeddingProvider())
    assert v.visible == ()
    assert not v.point3d_embedding.any() and not v.rendered_joint_embedding.any()


def test_same_visible_set_same_embeddings():
    scene = make_scene([("chair", "red", (4.75, 4.75, 4.75))])
    p = EmbeddingProvider()
    a = render_view_features(scene, CameraPose("a", "horizontal", 0, (0.0, 5.0, 5.0), (5.0, 5.0, 5.0)), p)
    b = render_view_features(scene, CameraPose("b", "horizontal", 0, (10.0, 5.0, 5.0), (5.0, 5.0, 5.0)), p)
    assert a.visible == b.visible == (0,)
    assert np.array_equal(a.point3d_embedding, b.point3d_embedding)
    assert np.array_equal(a.rendered_joint_embedding, b.rendered_joint_embedding)


def test_visibility_matches_cone_oracle():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        scene = generate_scene(rng, 10, layout="floor" if seed % 2 else "free")
        for ring in ("horizontal", "elevated", "bottom"):
            for pose in sample_camera_ring(scene, 6, ring):
                for cone in (30.0, 60.0, 90.0, 120.0):
                    assert visible_objects(scene, pose, cone) == cone_oracle(scene, pose, cone)


@given(st.integers(0, 500), st.floats(1, 170), st.floats(1, 170))
def test_wider_cone_never_hides_objects(seed, c1, c2):
    scene = generate_scene(np.random.default_rng(seed), 8)
    narrow, wide = sorted((c1, c2))
    for pose in sample_camera_ring(scene, 5, "horizontal") + sample_camera_ring(scene, 3, "bottom"):
        assert set(visible_objects(scene, pose, narrow)) <= set(visible_objects(scene, pose, wide))


def test_scene_json_round_trip():
    scene = generate_scene(np.random.default_rng(2), 7, "scene_x")
    d = scene.to_dict()
    assert set(d) == {"id", "extent", "objects"}
    assert set(d["objects"][0]) == {"label", "color", "box"}
    assert SceneSpec.from_dict(d) == scene
