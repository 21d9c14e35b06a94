"""Synthetic enterprise workloads and disguise / hijack attack injection.

Every program gets a profile of expected event counts per relation and the
entities it prefers to touch. Windows are sampled independently: a Poisson
number of events per relation, destinations drawn from the preferred lists
with Zipf weights, or, with probability ``noise_rate``, a fresh random
entity.

Randomness comes from numpy's Philox generator, a 64-bit counter-based
generator. Each (purpose, program, window) triple gets its own stream keyed
by ``SeedSequence([seed, purpose, name hash, window])``, so any window can
be regenerated alone and in any order.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import BadProfile, UnknownVictim
from .events import Entity, Relation, SystemEvent, read_event_stream, write_event_stream
from .features import fnv1a_64

DAY = 86_400
EPOCH = 1_700_000_000
N_HOSTS = 4

# stream purposes
_CORPUS, _DISGUISE, _HIJACK, _GENUINE = 0, 1, 2, 3


@dataclass(frozen=True)
class ProgramProfile:
    exec_name: str
    rates: dict = field(default_factory=lambda: {"PP": 0.0, "PF": 0.0, "PI": 0.0})
    preferred_files: tuple = ()
    preferred_peers: tuple = ()
    preferred_sockets: tuple = ()
    noise_rate: float = 0.0
    zipf_s: float = 1.0

    def __post_init__(self):
        if not self.exec_name:
            raise BadProfile("profile needs an exec_name")
        rates = {}
        for rel in Relation:
            r = float(self.rates.get(rel.value, 0.0))
            if not r >= 0.0:
                raise BadProfile(f"{self.exec_name}: rate for {rel.value} must be >= 0")
            rates[rel.value] = r
        unknown = set(self.rates) - set(rates)
        if unknown:
            raise BadProfile(f"{self.exec_name}: unknown relation(s) {sorted(unknown)}")
        object.__setattr__(self, "rates", rates)
        for name in ("preferred_files", "preferred_peers", "preferred_sockets"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not 0.0 <= self.noise_rate <= 1.0:
            raise BadProfile(f"{self.exec_name}: noise_rate must lie in [0, 1]")
        if self.zipf_s < 0:
            raise BadProfile(f"{self.exec_name}: zipf_s must be >= 0")
        for rel in Relation:
            if rates[rel.value] > 0 and self.noise_rate < 1.0 and not self._preferred(rel):
                raise BadProfile(f"{self.exec_name}: positive {rel.value} rate with no preferred targets")
        try:
            for key in self.preferred_sockets:
                Entity.socket(key)
            for key in self.preferred_files:
                Entity.file(key)
            for key in self.preferred_peers:
                Entity.process(key)
        except ValueError as exc:
            raise BadProfile(f"{self.exec_name}: {exc}") from None

    def _preferred(self, rel: Relation) -> tuple:
        return {
            Relation.PP: self.preferred_peers,
            Relation.PF: self.preferred_files,
            Relation.PI: self.preferred_sockets,
        }[rel]

    def weights(self, rel: Relation) -> np.ndarray:
        """Normalised Zipf weights over the preferred targets of ``rel``."""
        n = len(self._preferred(rel))
        w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** self.zipf_s
        return w / w.sum()

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("preferred_files", "preferred_peers", "preferred_sockets"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProgramProfile":
        allowed = {"exec_name", "rates", "preferred_files", "preferred_peers", "preferred_sockets", "noise_rate", "zipf_s"}
        extra = set(d) - allowed
        if extra:
            raise BadProfile(f"unknown profile field(s) {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class AttackScenario:
    """``disguise``: the attacker profile runs under the victim's name.
    ``hijack``: the extra profile's behavior is mixed into genuine victim windows."""

    kind: str
    victim: str
    profile: ProgramProfile
    count: int = 10

    def __post_init__(self):
        if self.kind not in ("disguise", "hijack"):
            raise BadProfile(f"scenario kind must be disguise or hijack, got {self.kind!r}")
        if self.count < 1:
            raise BadProfile("scenario count must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "victim": self.victim, "profile": self.profile.to_dict(), "count": self.count}

    @classmethod
    def from_dict(cls, d: dict, profiles: Sequence[ProgramProfile] = ()) -> "AttackScenario":
        prof = d["profile"]
        if isinstance(prof, str):
            by_name = {p.exec_name: p for p in profiles}
            if prof not in by_name:
                raise BadProfile(f"scenario references unknown profile {prof!r}")
            prof = by_name[prof]
        else:
            prof = ProgramProfile.from_dict(prof)
        return cls(d["kind"], d["victim"], prof, int(d.get("count", 10)))


@dataclass
class LabeledWindow:
    claimed_id: str
    label: int
    window: tuple[int, int]
    events: list[SystemEvent]
    kind: str = "genuine"
    program: Optional[str] = None  # profile that produced the events, when known
    split: str = "attack"


def window_bounds(index: int, window_len: int = DAY) -> tuple[int, int]:
    start = EPOCH + index * window_len
    return start, start + window_len


def stream(seed: int, purpose: int, name: str, index: int, extra: int = 0) -> np.random.Generator:
    h = fnv1a_64(name)
    ss = np.random.SeedSequence([seed, purpose, h >> 32, h & 0xFFFFFFFF, index, extra])
    return np.random.Generator(np.random.Philox(ss))


def _noise_entity(rng: np.random.Generator, rel: Relation) -> Entity:
    k = int(rng.integers(1 << 24))
    if rel is Relation.PP:
        return Entity.process(f"tmp{k:06x}.exe")
    if rel is Relation.PF:
        return Entity.file(f"/tmp/noise/{k:06x}.dat")
    return Entity.socket(f"172.{k >> 16 & 255}.{k >> 8 & 255}.{k & 255}:{1024 + int(rng.integers(60000))}")


_MAKE = {Relation.PP: Entity.process, Relation.PF: Entity.file, Relation.PI: Entity.socket}


def sample_window(
    profile: ProgramProfile,
    rng: np.random.Generator,
    bounds: tuple[int, int],
    name: Optional[str] = None,
) -> list[SystemEvent]:
    """Draw one window of events for ``profile``, emitted under ``name`` (default: its own)."""
    src = Entity.process(name or profile.exec_name)
    start, end = bounds
    events = []
    for rel in Relation:
        n = int(rng.poisson(profile.rates[rel.value]))
        if n == 0:
            continue
        prefs = profile._preferred(rel)
        weights = profile.weights(rel) if prefs else None
        noisy = rng.random(n) < profile.noise_rate
        picks = rng.choice(len(prefs), size=n, p=weights) if prefs else np.zeros(n, dtype=int)
        stamps = rng.integers(start, end, size=n)
        hosts = rng.integers(N_HOSTS, size=n)
        for j in range(n):
            dst = _noise_entity(rng, rel) if (noisy[j] or not prefs) else _MAKE[rel](prefs[picks[j]])
            events.append(SystemEvent(src, dst, rel, int(stamps[j]), f"host{hosts[j]}"))
    events.sort(key=lambda e: e.ts)
    return events


@dataclass
class Corpus:
    """Genuine windows keyed by (exec_name, window index)."""

    profiles: list[ProgramProfile]
    n_windows: int
    seed: int
    window_len: int = DAY
    windows: dict = field(default_factory=dict)

    def programs(self) -> list[str]:
        return [p.exec_name for p in self.profiles]

    def profile(self, name: str) -> ProgramProfile:
        for p in self.profiles:
            if p.exec_name == name:
                return p
        raise UnknownVictim(f"no profile named {name!r}")

    def bounds(self, index: int) -> tuple[int, int]:
        return window_bounds(index, self.window_len)


def gen_corpus(
    profiles: Sequence[ProgramProfile], n_windows: int, seed: int, window_len: int = DAY
) -> Corpus:
    if len(profiles) < 2:
        raise BadProfile("need at least two program profiles")
    names = [p.exec_name for p in profiles]
    if len(set(names)) != len(names):
        raise BadProfile("duplicate exec_name in profiles")
    if n_windows < 1:
        raise BadProfile("n_windows must be >= 1")
    corpus = Corpus(list(profiles), n_windows, seed, window_len)
    for p in profiles:
        for w in range(n_windows):
            rng = stream(seed, _CORPUS, p.exec_name, w)
            corpus.windows[(p.exec_name, w)] = sample_window(p, rng, corpus.bounds(w))
    return corpus


def inject_disguise(corpus: Corpus, scenario: AttackScenario, seed: int, scenario_index: int = 0) -> list[LabeledWindow]:
    """``count`` attack windows (label -1) plus ``count`` fresh genuine victim windows (label +1).

    Test windows sit after the corpus windows in time.
    """
    if scenario.victim not in corpus.programs():
        raise UnknownVictim(f"victim {scenario.victim!r} is not in the corpus")
    victim = corpus.profile(scenario.victim)
    purpose = _DISGUISE if scenario.kind == "disguise" else _HIJACK
    out = []
    for k in range(scenario.count):
        idx = corpus.n_windows + k
        bounds = corpus.bounds(idx)
        rng = stream(seed, purpose, scenario.profile.exec_name, idx, scenario_index)
        if scenario.kind == "disguise":
            events = sample_window(scenario.profile, rng, bounds, name=victim.exec_name)
        else:
            base = sample_window(victim, stream(seed, _HIJACK, victim.exec_name, idx, scenario_index), bounds)
            extra = sample_window(scenario.profile, rng, bounds, name=victim.exec_name)
            events = sorted(base + extra, key=lambda e: e.ts)
        out.append(LabeledWindow(victim.exec_name, -1, bounds, events, scenario.kind))
    for k in range(scenario.count):
        idx = corpus.n_windows + k
        bounds = corpus.bounds(idx)
        rng = stream(seed, _GENUINE, victim.exec_name, idx, scenario_index)
        out.append(LabeledWindow(victim.exec_name, 1, bounds, sample_window(victim, rng, bounds), "genuine"))
    return out


def rename_process(events: Sequence[SystemEvent], old: str, new: str) -> list[SystemEvent]:
    """Rewrite every occurrence of process ``old`` as ``new``."""
    def swap(e: Entity) -> Entity:
        return Entity.process(new) if e == Entity.process(old) else e

    return [SystemEvent(swap(e.src), swap(e.dst), e.rel, e.ts, e.host) for e in events]


# ------------------------------------------------------------------- files


def load_profiles(path: str | os.PathLike) -> list[ProgramProfile]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise BadProfile("profile file must hold a JSON list")
    return [ProgramProfile.from_dict(d) for d in data]


def load_scenarios(path: str | os.PathLike, profiles: Sequence[ProgramProfile] = ()) -> list[AttackScenario]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise BadProfile("scenario file must hold a JSON list")
    return [AttackScenario.from_dict(d, profiles) for d in data]


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in name)


def write_corpus(
    corpus: Corpus, out_dir: str | os.PathLike, attacks: Sequence[LabeledWindow] = ()
) -> Path:
    """Write one JSONL per window and a ``manifest.json`` describing them."""
    out = Path(out_dir)
    entries = []
    for (name, w), events in sorted(corpus.windows.items()):
        rel = Path("corpus") / _slug(name) / f"w{w:04d}.jsonl"
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        write_event_stream(events, out / rel)
        entries.append({"path": rel.as_posix(), "program": name, "claimed_id": name, "label": 1,
                        "window": list(corpus.bounds(w)), "kind": "genuine", "split": "corpus"})
    for i, lw in enumerate(attacks):
        rel = Path("attacks") / f"a{i:04d}_{_slug(lw.claimed_id)}_{lw.kind}.jsonl"
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        write_event_stream(lw.events, out / rel)
        entries.append({"path": rel.as_posix(), "program": lw.claimed_id, "claimed_id": lw.claimed_id,
                        "label": lw.label, "window": list(lw.window), "kind": lw.kind, "split": "attack"})
    manifest = {
        "seed": corpus.seed,
        "n_windows": corpus.n_windows,
        "window_len": corpus.window_len,
        "programs": corpus.programs(),
        "profiles": [p.to_dict() for p in corpus.profiles],
        "windows": entries,
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    os.replace(tmp, out / "manifest.json")
    return out / "manifest.json"


def read_manifest(path: str | os.PathLike) -> tuple[dict, list[LabeledWindow]]:
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    windows = []
    for entry in manifest["windows"]:
        events = read_event_stream(path.parent / entry["path"])
        windows.append(
            LabeledWindow(entry["claimed_id"], int(entry["label"]), tuple(entry["window"]), events,
                          entry["kind"], entry["program"], entry["split"])
        )
    return manifest, windows


def corpus_from_manifest(path: str | os.PathLike) -> tuple[Corpus, list[LabeledWindow]]:
    """Rebuild the genuine corpus and the attack windows written by :func:`write_corpus`."""
    manifest, windows = read_manifest(path)
    profiles = [ProgramProfile.from_dict(d) for d in manifest.get("profiles", [])]
    corpus = Corpus(profiles, manifest["n_windows"], manifest["seed"], manifest["window_len"])
    attacks = []
    for lw in windows:
        if lw.split == "corpus":
            index = (lw.window[0] - EPOCH) // corpus.window_len
            corpus.windows[(lw.program, index)] = lw.events
        else:
            attacks.append(lw)
    return corpus, attacks


# ------------------------------------------------------- profile families


def make_profiles(
    n_programs: int = 10,
    seed: int = 0,
    n_groups: int = 5,
    files_per_group: int = 12,
    sockets_per_group: int = 6,
    peers_per_group: int = 4,
    picks: tuple[int, int, int] = (8, 4, 3),
    rates: tuple[float, float, float] = (4.0, 20.0, 8.0),
    noise_rate: float = 0.05,
) -> list[ProgramProfile]:
    """Distinct programs whose single channels overlap but whose combination does not.

    Program ``i`` draws files from group ``i % g``, sockets from group
    ``(i // 2) % g`` and peers from group ``(3 * i + i // g) % g``, so pairs of
    programs share one channel's vocabulary while differing elsewhere.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 97])))
    files = [[f"/opt/app{g}/lib{j:02d}.dll" for j in range(files_per_group)] for g in range(n_groups)]
    socks = [[f"10.{g}.0.{j + 1}:{443 if j % 2 else 80}" for j in range(sockets_per_group)] for g in range(n_groups)]
    peers = [[f"svc{g}_{j}.exe" for j in range(peers_per_group)] for g in range(n_groups)]
    out = []
    for i in range(n_programs):
        fg, sg, pg = i % n_groups, (i // 2) % n_groups, (3 * i + i // n_groups) % n_groups
        pf = rng.choice(files[fg], size=picks[0], replace=False).tolist()
        pi = rng.choice(socks[sg], size=picks[1], replace=False).tolist()
        pp = rng.choice(peers[pg], size=picks[2], replace=False).tolist()
        out.append(
            ProgramProfile(
                exec_name=f"prog{i:02d}.exe",
                rates={"PP": rates[0], "PF": rates[1], "PI": rates[2]},
                preferred_files=tuple(pf),
                preferred_peers=tuple(pp),
                preferred_sockets=tuple(pi),
                noise_rate=noise_rate,
            )
        )
    return out
