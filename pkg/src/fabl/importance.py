"""Joint and modality importance read off a trained weight matrix."""
from __future__ import annotations

import numpy as np

from .features import MODALITIES
from .skeleton import BUILTIN_MODELS
from .solver import WeightModel, joint_group_norms, modality_group_norms


def _shares(norms: np.ndarray) -> np.ndarray:
    total = norms.sum()
    if total <= 0:
        return np.full(norms.shape, 1.0 / norms.size)
    return norms / total


def _ranked(norms, names):
    shares = _shares(norms)
    order = np.argsort(-norms, kind="stable")
    return [
        {"rank": r + 1, "index": int(k), "name": names[k], "norm": float(norms[k]), "share": float(shares[k])}
        for r, k in enumerate(order)
    ]


def joint_names_for(model: WeightModel) -> list[str]:
    body = BUILTIN_MODELS.get(model.metadata.get("body_model"))
    if body is not None and body.n_joints == model.layout.s:
        return list(body.joint_names)
    return [f"joint{k}" for k in range(model.layout.s)]


def modality_names_for(model: WeightModel) -> list[str]:
    if model.layout.m == len(MODALITIES):
        return list(MODALITIES)
    return [f"modality{q}" for q in range(model.layout.m)]


def importance_report(model: WeightModel) -> dict:
    """Per class, joints ranked by joint-group norm and modalities by modality-block norm.

    Shares are norms divided by their per-class total; an all-zero column
    gets uniform shares.
    """
    jn = joint_group_norms(model.W, model.layout)
    mn = modality_group_norms(model.W, model.layout)
    joints = joint_names_for(model)
    mods = modality_names_for(model)
    classes = [
        {
            "class": name,
            "joints": _ranked(jn[:, i], joints),
            "modalities": _ranked(mn[:, i], mods),
        }
        for i, name in enumerate(model.class_names)
    ]
    return {
        "classes": classes,
        "overall": {"joints": _ranked(jn.sum(axis=1), joints), "modalities": _ranked(mn.sum(axis=1), mods)},
    }


def format_importance(report: dict, top: int = 5) -> str:
    lines = []
    for entry in report["classes"] + [{"class": "(all classes)", **report["overall"]}]:
        lines.append(f"class {entry['class']}")
        joints = ", ".join(f"{j['name']} {100 * j['share']:.1f}%" for j in entry["joints"][:top])
        mods = ", ".join(f"{m['name']} {100 * m['share']:.1f}%" for m in entry["modalities"])
        lines.append(f"  joints:     {joints}")
        lines.append(f"  modalities: {mods}")
    return "\n".join(lines)
