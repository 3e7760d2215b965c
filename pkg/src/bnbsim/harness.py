"""Batch runner, experiment configuration and trajectory replays."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import yaml

from .agents import AgentBackend, RemoteBackend, ScriptedBackend
from .cards import ATTACK_PHASES, Catalog, Phase, default_catalog, normalize_name
from .engine import MAX_TURNS, Scenario, scenario_from_mapping
from .gateway import Gateway, GatewayConfig, RetryPolicy
from .orchestrator import GameReport, RetrievalPolicy, Session, SessionConfig
from .rag import ChunkIndex, ChunkParams, Embedder, HashingEmbedder, RemoteEmbedder, build_index, ingest_corpus
from .render import trajectory_rows, win_rate
from .teams import Structure, build_team

__all__ = [
    "BatchReport",
    "ConfigError",
    "ExperimentConfig",
    "ReplayResult",
    "StructureResult",
    "TABLES_DIR",
    "build_retrieval_index",
    "load_config",
    "reference_documents",
    "replay_trajectory",
    "resolve_table_path",
    "run_batch",
    "run_single",
    "write_batch",
]

log = logging.getLogger(__name__)

TABLES_DIR = Path(str(resources.files("bnbsim") / "data" / "tables"))
RAG_MODES = ("none", "wiki", "news")
BACKENDS = ("scripted", "remote")
EMBEDDERS = ("hashing", "remote")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the key path."""


def _check(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _as_list(value: Any) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclass(frozen=True)
class ExperimentConfig:
    structures: tuple[Structure, ...] = tuple(Structure)
    runs: int = 30
    base_seed: int = 0
    workers: int = 4
    backend: str = "scripted"
    scripted_policy: str = "heuristic"
    scenario: str | None = None
    rag: str = "none"
    corpus: str | None = None
    index: str | None = None
    embedder: str = "hashing"
    top_k: int | tuple[int, ...] = 3
    chunk_size: int | tuple[int, ...] = 5000
    overlap: int | None = None
    retrieval_policy: RetrievalPolicy = RetrievalPolicy.ON_NO_REVEAL
    distinct_documents: bool = False
    discussion_rounds: int = 1
    context_window: int = 30
    gateway: GatewayConfig = field(default_factory=GatewayConfig)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_mapping(cls, doc: Any, source: str = "<config>") -> "ExperimentConfig":
        """Parse the sectioned config (``engine``, ``team``, ``rag``, ``gateway``, ``batch``)."""
        _check(isinstance(doc, Mapping), source, "top level must be a mapping")
        known = {"engine", "team", "rag", "gateway", "batch"}
        for key in doc:
            _check(key in known, str(key), f"unknown section; expected one of {', '.join(sorted(known))}")
        kw: dict[str, Any] = {}

        def section(name: str, allowed: set[str]) -> Mapping[str, Any]:
            sec = doc.get(name) or {}
            _check(isinstance(sec, Mapping), name, "must be a mapping")
            for key in sec:
                _check(key in allowed, f"{name}.{key}", f"unknown key; expected one of {', '.join(sorted(allowed))}")
            return sec

        eng = section("engine", {"scenario"})
        if eng.get("scenario") is not None:
            _check(isinstance(eng["scenario"], str), "engine.scenario", "must be a file path")
            kw["scenario"] = eng["scenario"]

        team = section("team", {"structures", "discussion_rounds", "context_window"})
        if "structures" in team:
            kw["structures"] = _parse_structures(team["structures"], "team.structures")
        for key in ("discussion_rounds", "context_window"):
            if key in team:
                _check(isinstance(team[key], int) and team[key] >= 1, f"team.{key}", "must be a positive integer")
                kw[key] = team[key]

        rag = section(
            "rag",
            {"mode", "corpus", "index", "embedder", "top_k", "chunk_size", "overlap", "policy", "distinct_documents"},
        )
        if "mode" in rag:
            mode = str(rag["mode"]).lower()
            _check(mode in RAG_MODES, "rag.mode", f"must be one of {', '.join(RAG_MODES)}")
            kw["rag"] = mode
        for key in ("corpus", "index"):
            if rag.get(key) is not None:
                kw[key] = str(rag[key])
        if "embedder" in rag:
            _check(rag["embedder"] in EMBEDDERS, "rag.embedder", f"must be one of {', '.join(EMBEDDERS)}")
            kw["embedder"] = rag["embedder"]
        for key in ("top_k", "chunk_size"):
            if key in rag:
                values = _as_list(rag[key])
                for i, v in enumerate(values):
                    _check(isinstance(v, int) and v >= 1, f"rag.{key}" + (f"[{i}]" if len(values) > 1 else ""),
                           "must be a positive integer")
                kw[key] = values[0] if len(values) == 1 else tuple(values)
        if rag.get("overlap") is not None:
            _check(isinstance(rag["overlap"], int) and rag["overlap"] >= 0, "rag.overlap", "must be a non-negative integer")
            kw["overlap"] = rag["overlap"]
        if "policy" in rag:
            try:
                kw["retrieval_policy"] = RetrievalPolicy(str(rag["policy"]).lower())
            except ValueError:
                raise ConfigError(
                    f"rag.policy: must be one of {', '.join(p.value for p in RetrievalPolicy)}"
                ) from None
        if "distinct_documents" in rag:
            _check(isinstance(rag["distinct_documents"], bool), "rag.distinct_documents", "must be true or false")
            kw["distinct_documents"] = rag["distinct_documents"]

        gw = section(
            "gateway",
            {"base_url", "model", "embedding_model", "temperature", "max_tokens", "timeout", "max_concurrency",
             "api_key_env", "embed_batch_size", "retry"},
        )
        gkw: dict[str, Any] = {}
        for key, value in gw.items():
            if key == "retry":
                _check(isinstance(value, Mapping), "gateway.retry", "must be a mapping")
                allowed = {f.name for f in fields(RetryPolicy)}
                for rk in value:
                    _check(rk in allowed, f"gateway.retry.{rk}", f"unknown key; expected one of {', '.join(sorted(allowed))}")
                    _check(isinstance(value[rk], (int, float)) and value[rk] >= 0, f"gateway.retry.{rk}", "must be a non-negative number")
                gkw["retry"] = RetryPolicy(**value)
            elif key in ("base_url", "model", "embedding_model", "api_key_env"):
                _check(isinstance(value, str) and value, f"gateway.{key}", "must be a non-empty string")
                gkw[key] = value
            elif key == "temperature":
                _check(isinstance(value, (int, float)) and 0 <= value <= 2, "gateway.temperature", "must be a number in [0, 2]")
                gkw[key] = float(value)
            elif key == "timeout":
                _check(isinstance(value, (int, float)) and value > 0, "gateway.timeout", "must be a positive number")
                gkw[key] = float(value)
            else:
                _check(value is None or (isinstance(value, int) and value >= 1), f"gateway.{key}", "must be a positive integer")
                gkw[key] = value
        if gkw:
            kw["gateway"] = GatewayConfig(**gkw)

        batch = section("batch", {"runs", "base_seed", "workers", "backend", "scripted_policy"})
        for key in ("runs", "workers"):
            if key in batch:
                _check(isinstance(batch[key], int) and batch[key] >= 1, f"batch.{key}", "must be a positive integer")
                kw[key] = batch[key]
        if "base_seed" in batch:
            _check(isinstance(batch["base_seed"], int), "batch.base_seed", "must be an integer")
            kw["base_seed"] = batch["base_seed"]
        if "backend" in batch:
            _check(batch["backend"] in BACKENDS, "batch.backend", f"must be one of {', '.join(BACKENDS)}")
            kw["backend"] = batch["backend"]
        if "scripted_policy" in batch:
            _check(batch["scripted_policy"] in ("heuristic", "round_robin"), "batch.scripted_policy",
                   "must be heuristic or round_robin")
            kw["scripted_policy"] = batch["scripted_policy"]
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        _check(self.runs >= 1, "batch.runs", "must be at least 1")
        _check(self.workers >= 1, "batch.workers", "must be at least 1")
        _check(bool(self.structures), "team.structures", "must name at least one structure")
        _check(self.rag in RAG_MODES, "rag.mode", f"must be one of {', '.join(RAG_MODES)}")
        _check(self.backend in BACKENDS, "batch.backend", f"must be one of {', '.join(BACKENDS)}")
        for k in _as_list(self.top_k):
            _check(k >= 1, "rag.top_k", "must be at least 1")
        for size in _as_list(self.chunk_size):
            ov = self.overlap_for(size)
            _check(size > ov >= 0, "rag.overlap", f"must satisfy chunk_size ({size}) > overlap ({ov}) >= 0")

    def overlap_for(self, chunk_size: int) -> int:
        """Explicit overlap, else one tenth of the chunk size (5000 -> 500, 1000 -> 100)."""
        return self.overlap if self.overlap is not None else chunk_size // 10

    # -- sweeps and identity ----------------------------------------------

    @property
    def is_sweep(self) -> bool:
        return isinstance(self.top_k, tuple) or isinstance(self.chunk_size, tuple)

    def expand(self) -> list["ExperimentConfig"]:
        """One config per point of the ``top_k`` x ``chunk_size`` grid."""
        return [
            replace(self, top_k=k, chunk_size=c)
            for c, k in itertools.product(_as_list(self.chunk_size), _as_list(self.top_k))
        ]

    @property
    def label(self) -> str:
        if self.rag == "none":
            return "none"
        return f"{self.rag}-k{self.top_k}-c{self.chunk_size}"

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.runs)]

    def echo(self) -> dict[str, Any]:
        data = asdict(self)
        data["structures"] = [s.value for s in self.structures]
        data["retrieval_policy"] = self.retrieval_policy.value
        for key in ("top_k", "chunk_size"):
            if isinstance(data[key], tuple):
                data[key] = list(data[key])
        return data

    def digest(self) -> str:
        # workers only changes scheduling, never results
        echo = {k: v for k, v in self.echo().items() if k != "workers"}
        return hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()[:16]

    def session_config(self) -> SessionConfig:
        return SessionConfig(
            retrieval_policy=self.retrieval_policy if self.rag != "none" else RetrievalPolicy.NEVER,
            top_k=int(self.top_k) if not isinstance(self.top_k, tuple) else self.top_k[0],
            distinct_documents=self.distinct_documents,
            discussion_rounds=self.discussion_rounds,
            context_window=self.context_window,
        )


def _parse_structures(value: Any, path: str) -> tuple[Structure, ...]:
    if value == "all" or value == ["all"]:
        return tuple(Structure)
    items = _as_list(value)
    out = []
    for i, item in enumerate(items):
        try:
            out.append(Structure.parse(str(item)))
        except ValueError as exc:
            raise ConfigError(f"{path}[{i}]: {exc}") from None
    return tuple(out)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError(f"{where}: malformed config ({getattr(exc, 'problem', exc)})") from None
    return ExperimentConfig.from_mapping(doc or {}, source=str(path))


# -- retrieval setup ---------------------------------------------------------


def reference_documents(catalog: Catalog) -> list[tuple[str, str]]:
    """Small offline knowledge base built from the card descriptions.

    One document per card, so that scripted runs can exercise retrieval with
    no corpus on disk.
    """
    docs = []
    for card in sorted(catalog.cards, key=lambda c: c.id):
        kind = "procedure" if card.phase is Phase.PROCEDURE else f"{card.phase.label} attack"
        docs.append((f"cards/{card.id}.md", f"# {card.name}\n\n{card.name} ({kind}). {card.description}\n"))
    return docs


def build_retrieval_index(
    cfg: ExperimentConfig, catalog: Catalog, gateway: Gateway | None = None
) -> tuple[ChunkIndex | None, Embedder | None]:
    if cfg.rag == "none":
        return None, None
    if cfg.embedder == "remote":
        if gateway is None:
            raise ConfigError("rag.embedder: remote embeddings need a gateway (use the remote backend or set embedder: hashing)")
        embedder: Embedder = RemoteEmbedder(gateway)
    else:
        embedder = HashingEmbedder()
    if cfg.index:
        return ChunkIndex.load(cfg.index, embedder), embedder
    size = cfg.chunk_size if not isinstance(cfg.chunk_size, tuple) else cfg.chunk_size[0]
    params = ChunkParams(size, cfg.overlap_for(size))
    if cfg.corpus:
        return ingest_corpus(cfg.corpus, embedder, params), embedder
    log.info("rag.mode=%s without rag.corpus: using the built-in card reference corpus", cfg.rag)
    return build_index(reference_documents(catalog), embedder, params), embedder


# -- batches -----------------------------------------------------------------


@dataclass(frozen=True)
class StructureResult:
    structure: str
    runs: int
    wins: int
    losses: int
    aborts: int
    win_rate: str


@dataclass
class BatchReport:
    config: dict[str, Any]
    config_digest: str
    label: str
    seeds: list[int]
    results: dict[str, StructureResult]
    games: dict[str, list[GameReport]]
    wall_clock: dict[str, float] = field(default_factory=dict)

    def rates(self) -> dict[str, str]:
        return {s: r.win_rate for s, r in self.results.items()}

    def to_json(self) -> str:
        """Deterministic summary; wall-clock timings are kept out of it."""
        doc = {
            "config": self.config,
            "config_digest": self.config_digest,
            "label": self.label,
            "seeds": self.seeds,
            "results": {s: asdict(r) for s, r in self.results.items()},
            "games": {
                s: [
                    {
                        "seed": g.seed,
                        "status": g.status,
                        "turns": len(g.turns),
                        "retrievals": g.retrieval_count,
                        "diagnostic": g.diagnostic,
                    }
                    for g in games
                ]
                for s, games in self.games.items()
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def make_backend(cfg: ExperimentConfig, catalog: Catalog, gateway: Gateway | None) -> AgentBackend:
    if cfg.backend == "remote":
        if gateway is None:
            raise ConfigError("batch.backend: remote backend needs a gateway")
        return RemoteBackend(gateway)
    return ScriptedBackend(catalog, policy=cfg.scripted_policy, seed=cfg.base_seed)


def load_scenario(path: str | Path, catalog: Catalog) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"engine.scenario: cannot load {path}: {exc}") from None
    if not isinstance(doc, Mapping):
        raise ConfigError(f"engine.scenario: {path} must hold a mapping")
    scenario, problems = scenario_from_mapping(catalog, doc)
    if problems:
        raise ConfigError(f"engine.scenario: {path}: " + "; ".join(problems))
    return scenario


def run_batch(
    cfg: ExperimentConfig,
    *,
    catalog: Catalog | None = None,
    gateway: Gateway | None = None,
    index: ChunkIndex | None = None,
    embedder: Embedder | None = None,
    backend: AgentBackend | None = None,
    progress: Callable[[str, int, GameReport], None] | None = None,
) -> BatchReport:
    """Play ``runs`` games for every structure and aggregate win rates.

    Game ``i`` of every structure uses seed ``base_seed + i``, so structures
    face the same scenarios. Games run on a thread pool; results are merged in
    (structure, seed) order so the report never depends on scheduling.
    """
    if cfg.is_sweep:
        raise ConfigError("rag: top_k/chunk_size lists describe a sweep; call expand() and run each point")
    catalog = catalog or default_catalog()
    if index is None and cfg.rag != "none":
        index, embedder = build_retrieval_index(cfg, catalog, gateway)
    backend = backend or make_backend(cfg, catalog, gateway)
    scenario = load_scenario(cfg.scenario, catalog) if cfg.scenario else None
    session_cfg = cfg.session_config()
    digest = cfg.digest()
    teams = {s: build_team(s) for s in cfg.structures}
    seeds = cfg.seeds()

    def play(job: tuple[Structure, int]) -> GameReport:
        structure, seed = job
        t0 = time.perf_counter()
        session = Session(
            catalog,
            teams[structure],
            backend,
            seed=seed,
            scenario=scenario,
            index=index,
            embedder=embedder,
            config=session_cfg,
            run_id=f"{cfg.label}-{structure.value}",
            config_digest=digest,
        )
        report = session.run_game()
        timings[(structure.value, seed)] = time.perf_counter() - t0
        if progress:
            progress(structure.value, seed, report)
        return report

    jobs = [(s, seed) for s in cfg.structures for seed in seeds]
    timings: dict[tuple[str, int], float] = {}
    t_start = time.perf_counter()
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(play, jobs))  # map() yields in submission order
    else:
        reports = [play(j) for j in jobs]
    elapsed = time.perf_counter() - t_start

    games: dict[str, list[GameReport]] = {s.value: [] for s in cfg.structures}
    for (structure, _), report in zip(jobs, reports):
        games[structure.value].append(report)
    results = {}
    for s, reps in games.items():
        wins = sum(r.won for r in reps)
        aborts = sum(r.aborted for r in reps)
        results[s] = StructureResult(s, len(reps), wins, len(reps) - wins - aborts, aborts, win_rate(wins, len(reps)))
    per_game = sorted(timings.values())
    wall = {
        "total_seconds": round(elapsed, 3),
        "games": len(per_game),
        "mean_game_seconds": round(sum(per_game) / len(per_game), 4) if per_game else 0.0,
        "max_game_seconds": round(per_game[-1], 4) if per_game else 0.0,
    }
    return BatchReport(cfg.echo(), digest, cfg.label, seeds, results, games, wall)


def write_batch(report: BatchReport, out_dir: str | Path) -> dict[str, Path]:
    """Write ``reports/``, ``transcripts/``, the manifest and timing under ``out_dir``."""
    out = Path(out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    summary = out / "reports" / f"batch-{report.label}.json"
    summary.write_text(report.to_json(), encoding="utf-8")
    paths["summary"] = summary
    for games in report.games.values():
        for g in games:
            g.write(out / "transcripts")
    manifest_path = out / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else {"batches": {}}
    manifest["batches"][report.label] = {
        "config": report.config,
        "config_digest": report.config_digest,
        "seeds": report.seeds,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["manifest"] = manifest_path
    timing_path = out / "timing.json"
    timing = json.loads(timing_path.read_text(encoding="utf-8")) if timing_path.exists() else {}
    timing[report.label] = report.wall_clock
    timing_path.write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["timing"] = timing_path
    return paths


def run_single(
    cfg: ExperimentConfig,
    structure: Structure,
    seed: int,
    *,
    catalog: Catalog | None = None,
    gateway: Gateway | None = None,
) -> GameReport:
    catalog = catalog or default_catalog()
    index, embedder = build_retrieval_index(cfg, catalog, gateway)
    session = Session(
        catalog,
        build_team(structure),
        make_backend(cfg, catalog, gateway),
        seed=seed,
        scenario=load_scenario(cfg.scenario, catalog) if cfg.scenario else None,
        index=index,
        embedder=embedder,
        config=cfg.session_config(),
        run_id=f"{cfg.label}-{structure.value}",
        config_digest=cfg.digest(),
    )
    return session.run_game()


# -- trajectory replays ------------------------------------------------------


def resolve_table_path(spec: str | Path) -> Path:
    """Find a trajectory file: as given, then under the packaged tables directory."""
    path = Path(spec)
    if path.is_file():
        return path
    for candidate in (TABLES_DIR / path.name, TABLES_DIR / f"{path.name}.cfg"):
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"no trajectory file {spec!r} (looked in the working directory and {TABLES_DIR})")


@dataclass
class ReplayResult:
    name: str
    title: str
    report: GameReport
    expected: list[list[str]]
    mismatches: list[dict[str, Any]]
    known_anomalies: list[dict[str, Any]]

    @property
    def ok(self) -> bool:
        """True when every difference from the printed table is a documented anomaly."""
        return all(m["known"] for m in self.mismatches)

    @property
    def actual(self) -> list[list[str]]:
        return trajectory_rows(self.report.turns)


_COLUMNS = ("turn", "procedure", "roll", "modifier", "success", "revealed", "retrieval")


def _same_card(catalog: Catalog, printed: str, actual_id: str | None, candidates: Sequence[str], phases) -> bool:
    if printed == "-" or actual_id is None:
        return printed == "-" and actual_id is None
    key = normalize_name(printed)
    return any(
        key in {normalize_name(s) for s in catalog.get(c).spellings()} and c == actual_id
        for c in candidates
        if catalog.get(c).phase in phases
    )


def replay_trajectory(path: str | Path, catalog: Catalog | None = None) -> ReplayResult:
    """Replay a printed trajectory through the full session loop.

    The file fixes the scenario, the procedure sequence and the natural rolls.
    The scripted team plays the listed procedures, the engine resolves them and
    retrieval runs against the card reference corpus. Each resulting row is
    compared cell by cell against the printed one.
    """
    catalog = catalog or default_catalog()
    path = resolve_table_path(path)
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    for key in ("attack_cards", "established", "forced_rolls", "procedures"):
        if key not in doc:
            raise ConfigError(f"{path}: {key}: required")
    scenario, problems = scenario_from_mapping(catalog, doc)
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems))
    rolls = list(doc["forced_rolls"])
    procs = list(doc["procedures"])
    if len(rolls) != len(procs) or not 1 <= len(rolls) <= MAX_TURNS:
        raise ConfigError(f"{path}: forced_rolls and procedures must have the same length (1..{MAX_TURNS})")
    structure = Structure.parse(str(doc.get("structure", "HomoCen")))
    embedder = HashingEmbedder()
    index = build_index(reference_documents(catalog), embedder, ChunkParams(1000, 100))
    session = Session(
        catalog,
        build_team(structure),
        ScriptedBackend(catalog, policy="fixed", choices=procs),
        seed=int(doc.get("seed", 0)),
        scenario=scenario,
        index=index,
        embedder=embedder,
        config=SessionConfig(retrieval_policy=RetrievalPolicy(doc.get("retrieval_policy", "on_no_reveal"))),
        forced_rolls=rolls,
        run_id=f"replay-{doc.get('name', path.stem)}",
    )
    report = session.run_game()

    expected = [[str(c) for c in row] for row in doc.get("expected", [])]
    anomalies = list(doc.get("known_anomalies") or [])
    known = {(int(a["turn"]), str(a["column"])) for a in anomalies}
    mismatches: list[dict[str, Any]] = []
    if expected and len(expected) != len(report.turns):
        mismatches.append({"turn": None, "column": "rows", "printed": len(expected), "actual": len(report.turns), "known": False})
    proc_phase = (Phase.PROCEDURE,)
    for row, rec, actual in zip(expected, report.turns, trajectory_rows(report.turns)):
        turn = rec.turn
        checks = {
            "turn": row[0] == actual[0],
            "procedure": _same_card(catalog, row[1], rec.procedure_id, [c.id for c in catalog.procedures], proc_phase),
            "roll": row[2] == actual[2],
            "modifier": row[3] == actual[3],
            "success": row[4] == actual[4],
            "revealed": _same_card(catalog, row[5], rec.revealed_id, scenario.attack_cards, ATTACK_PHASES),
            "retrieval": row[6] == actual[6],
        }
        for col, i in zip(_COLUMNS, range(7)):
            if not checks[col]:
                mismatches.append(
                    {"turn": turn, "column": col, "printed": row[i], "actual": actual[i], "known": (turn, col) in known}
                )
    return ReplayResult(
        name=str(doc.get("name", path.stem)),
        title=str(doc.get("title", path.stem)),
        report=report,
        expected=expected,
        mismatches=mismatches,
        known_anomalies=anomalies,
    )
