import json

import numpy as np
import pytest

from progreid.channels import MetaPath
from progreid.dataset import reid_dataset
from progreid.encoder import EncoderConfig
from progreid.errors import BadProfile, UnknownVictim
from progreid.evaluation import score_examples
from progreid.events import Relation
from progreid.features import FeatureConfig
from progreid.model import ModelConfig, TrainConfig, train
from progreid.synth import (
    AttackScenario,
    ProgramProfile,
    corpus_from_manifest,
    gen_corpus,
    inject_disguise,
    make_profiles,
    sample_window,
    stream,
    window_bounds,
    write_corpus,
)


def prof(name, files=("/a",), pf=5.0, pi=0.0, socks=(), noise=0.0):
    return ProgramProfile(name, {"PP": 0, "PF": pf, "PI": pi}, files, (), socks, noise)


def test_profile_validation():
    with pytest.raises(BadProfile):
        prof("x", pf=-1)
    with pytest.raises(BadProfile):
        prof("x", noise=1.5)
    with pytest.raises(BadProfile):
        prof("x", files=())
    with pytest.raises(BadProfile):
        ProgramProfile("x", {"PQ": 1.0})
    with pytest.raises(BadProfile):
        gen_corpus([prof("a")], 3, 0)
    with pytest.raises(BadProfile):
        gen_corpus([prof("a"), prof("a")], 3, 0)
    assert ProgramProfile.from_dict(prof("x", ("/a", "/b")).to_dict()) == prof("x", ("/a", "/b"))


def test_zipf_weights_normalise():
    p = prof("x", tuple(f"/f{j}" for j in range(7)))
    w = p.weights(Relation.PF)
    assert abs(w.sum() - 1) < 1e-15 and (np.diff(w) < 0).all()


def test_single_file_without_noise():
    corpus = gen_corpus([prof("a.exe", ("/only",)), prof("b.exe", ("/other",))], 20, 1)
    dsts = {e.dst.key for w in range(20) for e in corpus.windows[("a.exe", w)]}
    assert dsts == {"/only"}
    for w in range(20):
        lo, hi = corpus.bounds(w)
        assert all(lo <= e.ts < hi for e in corpus.windows[("a.exe", w)])


def test_zero_rates_give_empty_windows():
    z = ProgramProfile("z.exe", {"PP": 0, "PF": 0, "PI": 0})
    corpus = gen_corpus([z, prof("b.exe")], 5, 0)
    assert all(corpus.windows[("z.exe", w)] == [] for w in range(5))


def test_poisson_mean():
    p = prof("a.exe", tuple(f"/f{j}" for j in range(5)), pf=12.0)
    counts = [len(sample_window(p, stream(4, 0, p.exec_name, w), window_bounds(w))) for w in range(1000)]
    assert abs(np.mean(counts) - 12.0) <= 0.05 * 12.0


def test_streams_independent_of_order():
    a = sample_window(prof("a.exe"), stream(9, 0, "a.exe", 7), window_bounds(7))
    stream(9, 0, "a.exe", 3).random(100)
    b = sample_window(prof("a.exe"), stream(9, 0, "a.exe", 7), window_bounds(7))
    assert a == b


def _written(tmp_path, sub, seed):
    profiles = make_profiles(4, seed=seed)
    corpus = gen_corpus(profiles, 6, seed)
    attacks = inject_disguise(corpus, AttackScenario("disguise", profiles[0].exec_name, profiles[1], 3), seed)
    return write_corpus(corpus, tmp_path / sub, attacks)


def test_seed_determinism_bytes(tmp_path):
    m1, m2 = _written(tmp_path, "a", 5), _written(tmp_path, "b", 5)
    files1 = sorted(p.relative_to(m1.parent) for p in m1.parent.rglob("*.jsonl"))
    files2 = sorted(p.relative_to(m2.parent) for p in m2.parent.rglob("*.jsonl"))
    assert files1 == files2
    for f in files1:
        assert (m1.parent / f).read_bytes() == (m2.parent / f).read_bytes()
    assert m1.read_bytes() == m2.read_bytes()
    m3 = _written(tmp_path, "c", 6)
    assert m3.read_bytes() != m1.read_bytes()


def test_manifest_round_trip(tmp_path):
    m = _written(tmp_path, "a", 5)
    corpus, attacks = corpus_from_manifest(m)
    again = gen_corpus(make_profiles(4, seed=5), 6, 5)
    assert corpus.windows == again.windows and corpus.profiles == again.profiles
    assert [a.label for a in attacks] == [-1] * 3 + [1] * 3
    entries = json.loads(m.read_text())["windows"]
    assert all({"claimed_id", "label", "split"} <= set(e) for e in entries)


def test_disguise_bookkeeping():
    a, b = prof("a.exe", ("/a",)), prof("b.exe", ("/b",))
    corpus = gen_corpus([a, b], 4, 0)
    out = []
    for i in range(10):
        out += inject_disguise(corpus, AttackScenario("disguise", "a.exe", b, 1), 0, i)
    attacks = [w for w in out if w.label == -1]
    assert len(attacks) == 10 and len(out) == 20
    assert all(w.claimed_id == "a.exe" for w in out)
    for w in attacks:
        assert {e.src.key for e in w.events} == {"a.exe"}
        assert {e.dst.key for e in w.events} <= {"/b"}
        assert w.window[0] >= corpus.bounds(corpus.n_windows)[0]


def test_hijack_superimposes():
    a = prof("a.exe", ("/a",), pf=8)
    extra = prof("evil.exe", ("/evil",), pf=0, pi=4, socks=("6.6.6.6:4444",))
    corpus = gen_corpus([a, prof("b.exe")], 4, 0)
    out = inject_disguise(corpus, AttackScenario("hijack", "a.exe", extra, 5), 3)
    attacks = [w for w in out if w.label == -1]
    assert len(attacks) == 5 and all(w.kind == "hijack" for w in attacks)
    seen = {e.dst.key for w in attacks for e in w.events}
    assert {"/a", "6.6.6.6:4444"} <= seen


def test_unknown_victim():
    corpus = gen_corpus([prof("a.exe"), prof("b.exe")], 2, 0)
    with pytest.raises(UnknownVictim):
        inject_disguise(corpus, AttackScenario("disguise", "zz.exe", prof("c.exe"), 1), 0)
    with pytest.raises(BadProfile):
        AttackScenario("disguise", "a.exe", prof("c.exe"), 0)


def _asymmetric_profiles():
    def p(name, pf, pi, tag, octet):
        return ProgramProfile(name, {"PP": 2, "PF": pf, "PI": pi}, tuple(f"/{tag}/f{j}" for j in range(6)),
                              tuple(f"{tag}h{j}.exe" for j in range(2)),
                              tuple(f"10.{octet}.0.{j + 1}:443" for j in range(6)), 0.05)

    return [p("sock.exe", 2, 20, "s", 1), p("file.exe", 20, 2, "f", 2), p("mix1.exe", 8, 8, "m", 3),
            p("mix2.exe", 8, 8, "n", 4)]


@pytest.mark.xfail(strict=False, reason="attention weights do not track the dominant channel; see README (known limitations)")
def test_attention_prefers_dominant_channel():
    cfg = ModelConfig(features=FeatureConfig(d_con=32), encoder=EncoderConfig(3, 8))
    pf, pi = cfg.channels.index(MetaPath.PF), cfg.channels.index(MetaPath.PI)
    wins = 0
    for seed in range(10):
        corpus = gen_corpus(_asymmetric_profiles(), 20, seed)
        ok = True
        for program, dominant, other in (("sock.exe", pi, pf), ("file.exe", pf, pi)):
            data = reid_dataset(corpus, program, cfg, seed)
            model = train(data, cfg, TrainConfig(lr=0.01, epochs=100, seed=seed))
            alpha = score_examples(model, data)[2].mean(axis=0)
            ok &= alpha[dominant] > alpha[other]
        wins += ok
    assert wins >= 8
