import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

import mocaprecon
from mocaprecon import synth
from mocaprecon.models import ModelBundle, TrainConfig, load_model, save_model, train
from mocaprecon.pipeline import SplitSpec, fit_normalizer, load_catalog, normalize

SMALL_BVH = """HIERARCHY
ROOT Hips
{
\tOFFSET 0 0 0
\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
\tJOINT Spine
\t{
\t\tOFFSET 0 10 0
\t\tCHANNELS 3 Zrotation Yrotation Xrotation
\t\tJOINT Head
\t\t{
\t\t\tOFFSET 0 5 1
\t\t\tCHANNELS 3 Zrotation Xrotation Yrotation
\t\t\tEnd Site
\t\t\t{
\t\t\t\tOFFSET 0 3 0
\t\t\t}
\t\t}
\t}
\tJOINT LeftLeg
\t{
\t\tOFFSET 4 -2 0
\t\tCHANNELS 3 Xrotation Yrotation Zrotation
\t}
}
MOTION
Frames: 3
Frame Time: 0.008333
1 2 3 0 0 0 0 0 0 0 0 0 0 0 0
1.5 2 3 90 0 0 0 0 0 0 0 0 0 0 0
0 0 0 10 20 30 -15 5 25 40 -30 12 7 8 9
"""


@pytest.fixture(scope="session")
def small_bvh_text():
    return SMALL_BVH


# acceptance reporting

_CRITERIA: list[str] = []


@pytest.fixture
def record_criterion():
    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


# shared synthetic dataset and trained models


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cmu_synth")
    synth.write_dataset(root, seed=0)
    return root


@pytest.fixture(scope="session")
def catalog(dataset_dir):
    return load_catalog(dataset_dir / "catalog.json")


@pytest.fixture(scope="session")
def split(dataset_dir):
    return SplitSpec.load(dataset_dir / "split.json")


@pytest.fixture(scope="session")
def sequences(catalog):
    return {seq_id: catalog.load(seq_id) for seq_id in catalog.ids}


@pytest.fixture(scope="session")
def train_norm(sequences, split):
    return fit_normalizer([sequences[i] for i in split.train])


def _source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(mocaprecon.__file__).parent.glob("*.py")):
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def model_store(request, catalog, sequences, split):
    """``get(cfg, train_ids=None, val_ids=None) -> ModelBundle``, cached on disk across sessions.

    Ids default to the split's lists. The cache key covers the training
    config, the ids and the package sources, so any code change retrains.
    """
    cache_dir = Path(request.config.cache.mkdir("mocaprecon-models"))
    source = _source_digest()

    def get(cfg: TrainConfig, train_ids=None, val_ids=None) -> ModelBundle:
        train_ids = list(split.train if train_ids is None else train_ids)
        val_ids = list(split.validation if val_ids is None else val_ids)
        key = json.dumps([cfg.to_dict(), train_ids, val_ids, source], sort_keys=True)
        path = cache_dir / (hashlib.sha256(key.encode()).hexdigest()[:24] + ".mnn")
        if path.exists():
            return load_model(path)
        train_seqs = [sequences[i] for i in train_ids]
        norm = fit_normalizer(train_seqs)
        model, _ = train(
            [normalize(s.positions, norm) for s in train_seqs],
            [normalize(sequences[i].positions, norm) for i in val_ids],
            cfg,
            norm,
            catalog.unit_scale_to_cm,
        )
        bundle = ModelBundle(model, norm, cfg, catalog.unit_scale_to_cm, train_seqs[0].marker_names)
        save_model(path, bundle)
        return bundle

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
