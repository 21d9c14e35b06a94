import json

import numpy as np
import pytest
from conftest import random_example

from progreid.dataset import example_from_dict, example_to_dict, load_examples, reid_dataset, save_examples
from progreid.encoder import EncoderConfig
from progreid.errors import SchemaVersionMismatch
from progreid.features import FeatureConfig
from progreid.model import ModelConfig, ModelParams, predict_batch
from progreid.synth import gen_corpus, make_profiles


def test_example_round_trip(tmp_path):
    cfg = FeatureConfig(d_con=16)
    examples = [random_example(s) for s in range(5)]
    save_examples(examples, tmp_path / "ex", cfg, {"seed": 3})
    loaded = load_examples(tmp_path / "ex")
    assert len(loaded) == 5
    for a, b in zip(examples, loaded):
        assert a.claimed_id == b.claimed_id and a.label == b.label
        for p in a.channels:
            assert a.channels[p].node_ids == b.channels[p].node_ids
            assert a.features[p].tobytes() == b.features[p].tobytes()
            np.testing.assert_array_equal(a.channels[p].prop, b.channels[p].prop)
        assert a.graph.window == b.graph.window
    mcfg = ModelConfig(features=cfg, encoder=EncoderConfig(2, 4))
    params = ModelParams.init(mcfg, 0)
    assert predict_batch(examples, params, mcfg).tobytes() == predict_batch(loaded, params, mcfg).tobytes()
    meta = json.loads((tmp_path / "ex" / "meta.json").read_text())
    assert meta["count"] == 5 and meta["seed"] == 3


def test_schema_checked():
    obj = example_to_dict(random_example(0), FeatureConfig(d_con=16))
    obj["schema"] = 9
    with pytest.raises(SchemaVersionMismatch):
        example_from_dict(obj)


def test_reid_dataset_balanced_and_seeded():
    corpus = gen_corpus(make_profiles(4, seed=1), 8, 1)
    cfg = ModelConfig(features=FeatureConfig(d_con=8))
    data = reid_dataset(corpus, "prog00.exe", cfg, seed=4)
    labels = [ex.label for ex in data]
    assert labels.count(1) == labels.count(-1) == 8
    assert all(ex.claimed_id == "prog00.exe" for ex in data)
    again = reid_dataset(corpus, "prog00.exe", cfg, seed=4)
    assert all(a.features[p].tobytes() == b.features[p].tobytes() for a, b in zip(data, again) for p in a.features)
