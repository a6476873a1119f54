import numpy as np
import pytest

from specres.geometry import BoxDomain, FaceBC, axis_box
from specres.quadrature import (
    GradingSpec,
    build_rule,
    face_rule,
    restrict,
    validation_counterpart,
)


def test_uniform_two_cells():
    rule = build_rule(axis_box([0.0], [1.0]), GradingSpec(kind="uniform", count=(2,)))
    assert np.allclose(rule.nodes().ravel(), [0.25, 0.75])
    assert np.allclose(rule.weights(), [0.5, 0.5])


def test_geometric_closed_form_widths():
    spec = GradingSpec(kind="geometric", count=(3,), focus=(0.0,), ratio=0.5)
    rule = build_rule(axis_box([0.0], [1.0]), spec)
    assert np.allclose(rule.weights(), [1 / 7, 2 / 7, 4 / 7])
    assert np.allclose(rule.nodes().ravel(), [1 / 14, 2 / 7, 5 / 7])
    assert rule.weight_sum() == pytest.approx(1.0, abs=1e-12)


def test_tensor_uniform_square():
    rule = build_rule(axis_box([0.0, 0.0], [1.0, 1.0]),
                      GradingSpec(kind="uniform", count=(2, 2)))
    assert rule.n_nodes == 4
    assert np.allclose(rule.weights(), 0.25)


def test_geometric_interior_focus_splits():
    spec = GradingSpec(kind="geometric", count=(10,), focus=(0.5,), ratio=0.5)
    rule = build_rule(axis_box([0.0], [1.0]), spec)
    nodes = rule.nodes().ravel()
    assert rule.weight_sum() == pytest.approx(1.0, abs=1e-12)
    # cells shrink toward the focus from both sides
    w = rule.weights()
    assert np.all(np.diff(w[:5]) < 0)
    assert np.all(np.diff(w[5:]) > 0)
    assert nodes[4] < 0.5 < nodes[5]


def test_grading_validation():
    with pytest.raises(ValueError):
        GradingSpec(kind="geometric", count=(5,), focus=(0.0,), ratio=1.5)
    with pytest.raises(ValueError):
        GradingSpec(kind="uniform", count=(0,))
    with pytest.raises(ValueError):
        GradingSpec(kind="nope", count=(5,))


def test_restrict_keeps_interior_nodes():
    rule = build_rule(axis_box([0.0], [1.0]), GradingSpec(kind="uniform", count=(4,)))
    sub = restrict(rule, axis_box([0.0], [0.5]))
    assert np.allclose(sub.nodes().ravel(), [0.125, 0.375])
    assert np.allclose(sub.weights(), [0.25, 0.25])
    assert sub.role == rule.role


def test_restrict_empty_errors():
    rule = build_rule(axis_box([0.0], [1.0]), GradingSpec(kind="uniform", count=(4,)))
    with pytest.raises(ValueError, match="no integration points"):
        restrict(rule, axis_box([0.96], [0.99]))


def test_restrict_lshape_child_from_parent_rule():
    # the 500x250 training rule of the top rectangle keeps plenty of nodes
    # inside the first added subdomain near the re-entrant corner
    box1 = axis_box([-1.0, 0.0], [1.0, 1.0])
    spec = GradingSpec(kind="geometric", count=(500, 250), focus=(0.0, 0.0), ratio=0.97)
    rule = build_rule(box1, spec)
    sub = restrict(rule, axis_box([-0.6, 0.0], [0.6, 0.6]))
    assert sub.n_nodes > 0
    assert sub.weight_sum() <= rule.weight_sum()
    pts = sub.nodes()
    assert np.all((pts[:, 0] > -0.6) & (pts[:, 0] < 0.6))
    assert np.all((pts[:, 1] > 0.0) & (pts[:, 1] < 0.6))
    # deepest child still has nodes
    sub2 = restrict(rule, axis_box([-0.2, 0.0], [0.2, 0.2]))
    assert sub2.n_nodes > 0


def test_validation_counterpart_counts():
    assert validation_counterpart(GradingSpec(kind="uniform", count=(100,))).count == (217,)
    assert validation_counterpart(GradingSpec(kind="uniform", count=(1,))).count == (3,)
    assert validation_counterpart(GradingSpec(kind="uniform", count=(500, 250))).count == (1085, 543)


def test_validation_counterpart_keeps_layout():
    spec = GradingSpec(kind="geometric", count=(500,), focus=(0.0,), ratio=0.98)
    den = validation_counterpart(spec)
    assert den.kind == spec.kind and den.focus == spec.focus and den.ratio == spec.ratio


def test_midpoint_second_order_convergence():
    exact = 2.0  # integral of sin over (0, pi)
    errs = []
    for n in (64, 128):
        rule = build_rule(axis_box([0.0], [np.pi]), GradingSpec(kind="uniform", count=(n,)))
        approx = float(rule.weights() @ np.sin(rule.nodes().ravel()))
        errs.append(abs(approx - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_geometric_weight_sum_matches_length():
    spec = GradingSpec(kind="geometric", count=(500,), focus=(0.0,), ratio=0.98)
    rule = build_rule(axis_box([0.0], [np.pi]), spec)
    assert rule.weight_sum() == pytest.approx(np.pi, rel=1e-12)


def test_rotated_box_rule_in_local_frame():
    box = BoxDomain(id=1, corner=np.array([0.0, 0.0]),
                    edge_vectors=np.array([[1.0, -1.0], [1.0, 1.0]]),
                    face_bc=(FaceBC.DIRICHLET,) * 4)
    rule = build_rule(box, GradingSpec(kind="uniform", count=(20, 20)))
    assert rule.weight_sum() == pytest.approx(2.0, rel=1e-12)  # area of the square
    t = (rule.nodes() - box.corner) @ box.edge_vectors.T / box.side_lengths ** 2
    assert np.all((t > 0.0) & (t < 1.0))


def test_restrict_requires_aligned_frame():
    axis_rule = build_rule(axis_box([0.0, 0.0], [1.0, 1.0]),
                           GradingSpec(kind="uniform", count=(8, 8)))
    rot = BoxDomain(id=9, corner=np.array([0.3, 0.3]),
                    edge_vectors=np.array([[0.2, -0.2], [0.2, 0.2]]),
                    face_bc=(FaceBC.DIRICHLET,) * 4)
    with pytest.raises(ValueError, match="aligned"):
        restrict(axis_rule, rot)


def test_rule_csv_export(tmp_path):
    rule = build_rule(axis_box([0.0], [1.0]), GradingSpec(kind="uniform", count=(3,)))
    path = tmp_path / "rule.csv"
    rule.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (3, 2)
    assert np.allclose(data[:, 1], 1.0 / 3.0)


def test_face_rule_1d_endpoint():
    pts, w = face_rule(axis_box([0.0], [np.pi]), face=1)
    assert np.allclose(pts, [[np.pi]])
    assert np.allclose(w, [1.0])


def test_face_rule_2d_edge():
    pts, w = face_rule(axis_box([0.0, 0.0], [2.0, 1.0]), face=3,
                       spec=GradingSpec(kind="uniform", count=(10,)))
    assert np.allclose(pts[:, 1], 1.0)
    assert w.sum() == pytest.approx(2.0)
