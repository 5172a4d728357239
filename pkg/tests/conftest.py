import numpy as np
import pytest

from fabl import kernels
from fabl.data_io import DatasetManifest, ManifestEntry, save_canonical, save_manifest
from fabl.skeleton import GENERIC15, SkeletonSequence


def random_sequence(rng, T=12, s=15, torso=2, wave_joint=None, amplitude=0.3):
    """A jittered rest pose; ``wave_joint`` (if given) oscillates along x."""
    base = rng.normal(scale=0.4, size=(s, 3))
    coords = base[None] + rng.normal(scale=0.01, size=(T, s, 3))
    if wave_joint is not None:
        coords[:, wave_joint, 0] += amplitude * np.sin(np.linspace(0, 2 * np.pi, T))
    return SkeletonSequence(coords, torso)


def write_dataset(root, n_subjects=3, reps=2, seed=0):
    """Two classes on the generic 15-joint model: 'wave' moves a hand, 'still' does not."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    hand = GENERIC15.joint_names.index("right_hand")
    for subj in range(n_subjects):
        for label in ("still", "wave"):
            for r in range(reps):
                seq = random_sequence(rng, wave_joint=hand if label == "wave" else None)
                name = f"s{subj}_{label}_{r}.skel"
                save_canonical(seq, root / name)
                entries.append(ManifestEntry(name, label, f"subj{subj}"))
    manifest = DatasetManifest(root, "canonical", entries, body_model="generic15")
    save_manifest(manifest, root / "manifest.json")
    return root / "manifest.json"


@pytest.fixture
def dataset(tmp_path):
    return write_dataset(tmp_path / "data")


@pytest.fixture(params=kernels.available_backends())
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(kernels.DEFAULT_BACKEND)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record a one-line verdict for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
