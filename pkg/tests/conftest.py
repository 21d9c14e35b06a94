import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from progreid.channels import DEFAULT_CHANNELS
from progreid.cli import main
from progreid.dataset import build_example
from progreid.events import Entity, Relation, SystemEvent
from progreid.features import FeatureConfig

WINDOW = (0, 1000)
DEMO = Path(__file__).resolve().parent.parent / "demo"

# (criterion number, passed, detail) lines reported at the end of the session
ACCEPTANCE: list[tuple[int, bool, str]] = []


def ev(src, dst, rel="PF", ts=10, host="h1"):
    rel = Relation(rel)
    make = {Relation.PP: Entity.process, Relation.PF: Entity.file, Relation.PI: Entity.socket}[rel]
    return SystemEvent(Entity.process(src), make(dst), rel, ts, host)


def random_events(rng: np.random.Generator, n_events: int = 30, target: str = "t.exe") -> list[SystemEvent]:
    """Random events around ``target``; some chains reach two or three hops out."""
    procs = [target] + [f"p{i}.exe" for i in range(6)]
    files = [f"/f/{i}" for i in range(8)]
    socks = [f"10.0.0.{i}:80" for i in range(1, 6)]
    out = [ev(target, files[0], "PF", 1)]
    for _ in range(n_events):
        src = procs[rng.integers(len(procs))]
        rel = ("PP", "PF", "PI")[rng.integers(3)]
        pool = {"PP": procs, "PF": files, "PI": socks}[rel]
        out.append(ev(src, pool[rng.integers(len(pool))], rel, int(rng.integers(0, 1000))))
    return out


def random_example(seed: int, d_con: int = 16, feature_set: str = "both", label=None,
                   channels=DEFAULT_CHANNELS, n_events: int = 30):
    rng = np.random.default_rng(seed)
    events = random_events(rng, n_events)
    if label is None:
        label = 1 if seed % 2 == 0 else -1
    return build_example(events, "t.exe", WINDOW, channels, FeatureConfig.from_feature_set(feature_set, d_con), label)


def separable_set(n_per_class: int = 10, d_con: int = 16):
    """Genuine windows touch one file set, impostors a disjoint one."""
    cfg = FeatureConfig.from_feature_set("both", d_con)
    out = []
    for i in range(2 * n_per_class):
        label = 1 if i < n_per_class else -1
        base = "good" if label == 1 else "bad"
        rng = np.random.default_rng(i)
        events = [ev("t.exe", f"/{base}/{j}", "PF", int(rng.integers(1000))) for j in range(3 + i % 3)]
        events.append(ev("t.exe", "peer.exe", "PP", 5))
        events.append(ev("t.exe", f"10.0.{0 if label == 1 else 1}.1:443", "PI", 6))
        out.append(build_example(events, "t.exe", WINDOW, DEFAULT_CHANNELS, cfg, label))
    return out


def run(*argv) -> int:
    return main([str(a) for a in argv])


def demo_pipeline(out: Path) -> Path:
    """gen -> ingest -> train -> eval -> detect on the bundled demo config."""
    cfg = DEMO / "demo.toml"
    steps = [
        ("gen", "--profiles", DEMO / "profiles.json", "--scenarios", DEMO / "scenarios.json", "--out", out / "corpus"),
        ("ingest", "--corpus", out / "corpus", "--program", "7z.exe", "--out", out / "train"),
        ("ingest", "--corpus", out / "corpus", "--program", "7z.exe", "--split", "attack", "--out", out / "test"),
        ("train", "--examples", out / "train", "--model-out", out / "7z.model.json"),
        ("eval", "--examples", out / "test", "--model", out / "7z.model.json", "--out", out / "report.json"),
        ("detect", "--examples", out / "test", "--model", out / "7z.model.json", "--out", out / "verdicts.jsonl"),
    ]
    for cmd, *rest in steps:
        assert run(cmd, "--config", cfg, *rest) == 0, cmd
    return out


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
