import numpy as np

from fabl.evaluation import SyntheticSpec, generate_synthetic, train_on
from fabl.features import MODALITIES, PartitionLayout
from fabl.importance import format_importance, importance_report
from fabl.skeleton import GENERIC15
from fabl.solver import Hyperparams, Standardizer, WeightModel


def zero_model(layout, c=2, meta=None):
    return WeightModel(np.zeros((layout.d, c)), np.zeros(c), layout, tuple(f"k{i}" for i in range(c)),
                       Standardizer.identity(layout.d), metadata=meta or {})


def test_zero_weights_give_uniform_shares():
    layout = PartitionLayout.uniform(4, 5, 2)
    report = importance_report(zero_model(layout))
    for cls in report["classes"]:
        assert all(j["share"] == 0.2 for j in cls["joints"])
        assert all(m["share"] == 0.25 for m in cls["modalities"])


def test_shares_sum_to_one_and_ranking():
    rng = np.random.default_rng(0)
    layout = PartitionLayout.uniform(4, 6, 3)
    W = rng.normal(size=(layout.d, 3))
    W[layout.joint_indices(4)] *= 10
    m = WeightModel(W, np.zeros(3), layout, ("a", "b", "c"), Standardizer.identity(layout.d))
    report = importance_report(m)
    for cls in report["classes"]:
        assert abs(sum(j["share"] for j in cls["joints"]) - 1) <= 1e-9
        assert abs(sum(q["share"] for q in cls["modalities"]) - 1) <= 1e-9
        norms = [j["norm"] for j in cls["joints"]]
        assert norms == sorted(norms, reverse=True)
        assert cls["joints"][0]["index"] == 4
    assert [q["name"] for q in report["classes"][0]["modalities"]] != [] and \
        {q["name"] for q in report["classes"][0]["modalities"]} == set(MODALITIES)


def test_planted_joint_ranked_first_for_each_class():
    fm, _ = generate_synthetic(SyntheticSpec(n=60, block_dim=6, noise_sigma=0.5, active_joints=(1,), seed=0))
    model, _ = train_on(fm, Hyperparams(0.01, 1.0))
    report = importance_report(model)
    assert all(cls["joints"][0]["index"] == 1 for cls in report["classes"])
    assert report["overall"]["joints"][0]["index"] == 1


def test_joint_names_from_body_model():
    layout = PartitionLayout.uniform(4, 15, 1)
    report = importance_report(zero_model(layout, meta={"body_model": "generic15"}))
    assert {j["name"] for j in report["classes"][0]["joints"]} == set(GENERIC15.joint_names)
    report = importance_report(zero_model(PartitionLayout.uniform(2, 3, 1)))
    assert {j["name"] for j in report["overall"]["joints"]} == {"joint0", "joint1", "joint2"}
    assert {q["name"] for q in report["overall"]["modalities"]} == {"modality0", "modality1"}


def test_format_table():
    text = format_importance(importance_report(zero_model(PartitionLayout.uniform(4, 3, 1))), top=2)
    assert "class k0" in text and "(all classes)" in text
    assert text.count("joint") >= 2
