"""Conversational game loop.

The captain opens the game, defenders discuss and settle on one procedure per
turn, the engine resolves the roll, and the captain may consult the knowledge
base through the retrieval agent when an attempt reveals nothing.
"""
from __future__ import annotations

import itertools
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .agents import AgentBackend, AgentPrompt, Task, extract_decision
from .cards import Catalog
from .engine import (
    MAX_TURNS,
    AttemptOutcome,
    GameError,
    GameState,
    GameStatus,
    Scenario,
    game_status,
    new_game,
    resolve_attempt,
    roll_d20,
)
from .gateway import GatewayError
from .rag import ChunkIndex, Embedder, HashingEmbedder, query
from .teams import Role, TeamConfig, role_prompt

__all__ = [
    "GameReport",
    "Message",
    "MessageKind",
    "RetrievalPolicy",
    "ScenarioLeakError",
    "Session",
    "SessionConfig",
    "TurnAborted",
    "TurnRecord",
    "embedder_for_index",
    "run_game",
]

log = logging.getLogger(__name__)


class MessageKind(str, Enum):
    SCENARIO = "scenario"
    DISCUSSION = "discussion"
    DECISION = "decision"
    OUTCOME = "outcome"
    RETRIEVAL_QUERY = "retrieval_query"
    RETRIEVAL_RESULT = "retrieval_result"


class RetrievalPolicy(str, Enum):
    ON_NO_REVEAL = "on_no_reveal"
    ON_FAILURE_ONLY = "on_failure_only"
    NEVER = "never"

    def triggers(self, outcome: AttemptOutcome) -> bool:
        if self is RetrievalPolicy.ON_NO_REVEAL:
            return outcome.revealed_card is None
        if self is RetrievalPolicy.ON_FAILURE_ONLY:
            return not outcome.success
        return False


class ScenarioLeakError(RuntimeError):
    pass


class TurnAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class Message:
    speaker: str
    turn: int
    kind: MessageKind
    text: str
    timestamp: float
    data: Mapping[str, Any] | None = None

    def to_record(self) -> dict[str, Any]:
        rec = {
            "type": "message",
            "speaker": self.speaker,
            "turn": self.turn,
            "kind": self.kind.value,
            "text": self.text,
            "timestamp": self.timestamp,
        }
        if self.data is not None:
            rec["data"] = dict(self.data)
        return rec


@dataclass(frozen=True)
class TurnRecord:
    turn: int
    procedure_id: str
    procedure: str
    natural_roll: int
    modifier: int
    success: bool
    revealed_id: str | None
    revealed: str | None
    retrieval: bool


@dataclass
class GameReport:
    run_id: str
    seed: int
    structure: str
    status: str
    turns: list[TurnRecord]
    transcript: list[Message]
    attack_cards: list[str]
    established: list[str]
    config_digest: str = ""
    diagnostic: str | None = None

    @property
    def won(self) -> bool:
        return self.status == GameStatus.WON.value

    @property
    def aborted(self) -> bool:
        return self.status == "aborted"

    @property
    def retrieval_count(self) -> int:
        return sum(1 for m in self.transcript if m.kind is MessageKind.RETRIEVAL_QUERY)

    def summary(self) -> dict[str, Any]:
        return {
            "type": "summary",
            "run_id": self.run_id,
            "seed": self.seed,
            "structure": self.structure,
            "status": self.status,
            "turns_played": len(self.turns),
            "revealed": [t.revealed_id for t in self.turns if t.revealed_id],
            "attack_cards": self.attack_cards,
            "established": self.established,
            "retrieval_count": self.retrieval_count,
            "config_digest": self.config_digest,
            "diagnostic": self.diagnostic,
            "trajectory": [asdict(t) for t in self.turns],
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(m.to_record(), sort_keys=True) for m in self.transcript]
        lines.append(json.dumps(self.summary(), sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> Path:
        """Persist as ``<out_dir>/<run_id>/<seed>.log``."""
        path = Path(out_dir) / self.run_id / f"{self.seed}.log"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path


@dataclass(frozen=True)
class SessionConfig:
    retrieval_policy: RetrievalPolicy = RetrievalPolicy.ON_NO_REVEAL
    top_k: int = 3
    distinct_documents: bool = False
    discussion_rounds: int = 1
    context_window: int = 30
    decision_retries: int = 2
    leak_retries: int = 3


def embedder_for_index(index: ChunkIndex) -> Embedder:
    """Offline embedder matching an index built with :class:`HashingEmbedder`."""
    emb_id = index.embedder_id
    if emb_id.startswith("hashing-"):
        _, gram, dim = emb_id.split("-")
        return HashingEmbedder(dim=int(dim), ngram=int(gram.removesuffix("gram")))
    raise ValueError(f"index uses embedder {emb_id!r}; pass a matching embedder explicitly")


class Session:
    """One game, played strictly in turn order."""

    def __init__(
        self,
        catalog: Catalog,
        team: TeamConfig,
        backend: AgentBackend,
        *,
        seed: int,
        scenario: Scenario | None = None,
        index: ChunkIndex | None = None,
        embedder: Embedder | None = None,
        config: SessionConfig | None = None,
        forced_rolls: Sequence[int] | None = None,
        run_id: str | None = None,
        config_digest: str = "",
        clock: Callable[[], float] | None = None,
    ):
        self.catalog = catalog
        self.team = team
        self.backend = backend
        self.seed = seed
        self.config = config or SessionConfig()
        self.index = index
        if index is not None and embedder is None and len(index):
            embedder = embedder_for_index(index)
        self.embedder = embedder
        self.forced_rolls = list(forced_rolls) if forced_rolls is not None else None
        self.game: GameState = new_game(catalog, seed, scenario)
        self.transcript: list[Message] = []
        self.records: list[TurnRecord] = []
        self.run_id = run_id or f"run-{team.structure.value}"
        self.config_digest = config_digest
        self._turn = 0
        counter = itertools.count()
        self._clock = clock or (lambda: float(next(counter)))

    # -- helpers -----------------------------------------------------------

    def _emit(self, speaker: str, kind: MessageKind, text: str, data: Mapping[str, Any] | None = None) -> Message:
        msg = Message(speaker, self._turn, kind, text, self._clock(), data)
        self.transcript.append(msg)
        return msg

    def _label(self, card_id: str) -> str:
        return self.catalog.get(card_id).label

    def _window(self) -> tuple[Message, ...]:
        n = self.config.context_window
        recent_from = max(0, len(self.transcript) - n) if n > 0 else len(self.transcript)
        opening = [m for m in self.transcript[:recent_from] if m.kind is MessageKind.SCENARIO and m.turn == 0]
        return tuple(opening + self.transcript[recent_from:])

    def _history(self) -> list[dict[str, Any]]:
        return [
            {
                "turn": o.turn,
                "procedure": o.procedure_id,
                "roll": o.natural_roll,
                "modifier": o.modifier,
                "success": o.success,
                "revealed": o.revealed_card,
            }
            for o in self.game.history
        ]

    def _last_retrieval(self) -> str | None:
        for m in reversed(self.transcript):
            if m.kind is MessageKind.RETRIEVAL_RESULT:
                return m.text
        return None

    def _procedure_view(self) -> list[dict[str, Any]]:
        est = self.game.scenario.established
        return [
            {"id": c.id, "label": c.label, "established": c.id in est, "spellings": list(c.spellings())}
            for c in self.catalog.procedures
        ]

    def game_context(self) -> str:
        """Public game state as text, for prompt templates."""
        est = self.game.scenario.established
        lines = [f"Turn {min(self.game.turn + 1, MAX_TURNS)} of {MAX_TURNS}."]
        lines.append("Established Procedures (+3): " + ", ".join(self._label(p) for p in sorted(est)))
        lines.append(
            "Other Procedures (+0): " + ", ".join(c.label for c in self.catalog.procedures if c.id not in est)
        )
        if self.game.revealed:
            lines.append("Revealed attack cards: " + ", ".join(self._label(c) for c in self.game.revealed))
        else:
            lines.append("Revealed attack cards: none")
        for o in self.game.history:
            result = "success" if o.success else "failure"
            found = self._label(o.revealed_card) if o.revealed_card else "nothing revealed"
            lines.append(
                f"Turn {o.turn}: {self._label(o.procedure_id)} rolled {o.natural_roll}{o.modifier:+d} -> {result}, {found}"
            )
        return "\n".join(lines)

    def _defender_context(self, proposals: list[tuple[str, str]], round_no: int) -> dict[str, Any]:
        return {
            "turn": self.game.turn + 1,
            "round": round_no,
            "game_seed": self.seed,
            "procedures": self._procedure_view(),
            "history": self._history(),
            "revealed": list(self.game.revealed),
            "proposals": list(proposals),
            "seniors": [r.role_id for r in self.team.defenders if r.is_senior],
            "last_retrieval": self._last_retrieval(),
        }

    def _captain_context(self) -> dict[str, Any]:
        last = self.game.history[-1] if self.game.history else None
        return {
            "turn": self.game.turn,
            "game_seed": self.seed,
            "initial_compromise": self.game.scenario.attack_cards[0],
            "attack_cards": list(self.game.scenario.attack_cards),
            "last_procedure_label": self._label(last.procedure_id) if last else "",
            "revealed_labels": [self._label(c) for c in self.game.revealed],
        }

    def _ask(self, role: Role, task: Task, instruction: str, context: Mapping[str, Any]) -> str:
        prompt = AgentPrompt(
            task=task,
            system=role_prompt(role, self.game_context()),
            window=self._window(),
            instruction=instruction,
            context=context,
        )
        return self.backend.respond(role, prompt)

    # -- game phases -------------------------------------------------------

    def hidden_names(self) -> list[str]:
        names = []
        for cid in self.game.scenario.attack_cards:
            card = self.catalog.get(cid)
            names.append(card.name)
            if card.short_name:
                names.append(card.short_name)
        return names

    def leaks(self, text: str) -> list[str]:
        low = text.lower()
        return [n for n in self.hidden_names() if n.lower() in low]

    def describe_scenario(self) -> Message:
        if self.game.turn != 0 or any(m.kind is MessageKind.SCENARIO for m in self.transcript):
            raise GameError("the scenario is described once, before turn 1")
        ic = self.catalog.get(self.game.scenario.attack_cards[0])
        instruction = (
            f"Craft a detailed initial scenario description based on the Initial Compromise card "
            f"'{ic.name}' ({ic.description}). Give the defenders enough context to start investigating, "
            "but do not reveal any card names or direct clues."
        )
        captain = self.team.captain
        for attempt in range(self.config.leak_retries + 1):
            text = self._ask(captain, Task.DESCRIBE_SCENARIO, instruction, self._captain_context()).strip()
            leaked = self.leaks(text)
            if text and not leaked:
                break
            log.info("scenario description rejected (attempt %d): leaked %s", attempt + 1, leaked or "empty text")
            instruction = (
                "Your previous description named a hidden attack card. Rephrase it so that it describes "
                "observable symptoms only and contains no card names."
            )
        else:
            raise ScenarioLeakError(
                f"captain kept naming hidden cards after {self.config.leak_retries} retries"
            )
        msg = self._emit(captain.role_id, MessageKind.SCENARIO, text)
        est = self.game.scenario.established
        intro = (
            "Procedure cards available to the defenders. Established Procedures add +3 to the roll; "
            "Other Procedures add +0.\n"
            "Established: " + ", ".join(self._label(p) for p in sorted(est)) + "\n"
            "Other: " + ", ".join(c.label for c in self.catalog.procedures if c.id not in est)
        )
        self._emit(captain.role_id, MessageKind.SCENARIO, intro, {"established": sorted(est)})
        return msg

    def _collect_preference(self, role: Role, proposals: list[tuple[str, str]], round_no: int) -> str | None:
        instruction = (
            f"Turn {self.game.turn + 1}. Discuss which single Procedure the team should use now. "
            "End with one line 'DECISION: <procedure name>' naming your preferred Procedure."
        )
        for attempt in range(self.config.decision_retries + 1):
            text = self._ask(role, Task.DISCUSS, instruction, self._defender_context(proposals, round_no))
            pref = extract_decision(text, self.catalog)
            self._emit(role.role_id, MessageKind.DISCUSSION, text, {"preference": pref})
            if pref is not None:
                return pref
            instruction = (
                "Your last message did not end with a valid 'DECISION: <procedure name>' line. Valid procedures: "
                + ", ".join(c.label for c in self.catalog.procedures)
            )
        return None

    def _leader_decision(self, leader: Role, proposals: list[tuple[str, str]]) -> str:
        instruction = (
            f"Turn {self.game.turn + 1}. As team leader, choose the single Procedure the team will use. "
            "End with one line 'DECISION: <procedure name>'."
        )
        for attempt in range(self.config.decision_retries + 1):
            text = self._ask(leader, Task.DECIDE, instruction, self._defender_context(proposals, 0))
            choice = extract_decision(text, self.catalog)
            if choice is not None:
                self._emit(leader.role_id, MessageKind.DECISION, text, {"procedure": choice})
                return choice
            log.info("leader decision unparseable (attempt %d)", attempt + 1)
            instruction = (
                "Your reply did not end with a valid 'DECISION: <procedure name>' line. Valid procedures: "
                + ", ".join(c.label for c in self.catalog.procedures)
            )
        raise TurnAborted(
            f"turn {self.game.turn + 1}: no parseable decision from {leader.role_id} after "
            f"{self.config.decision_retries + 1} attempts; last reply: {text[:200]!r}"
        )

    def _vote(self, proposals: list[tuple[str, str]]) -> str:
        final: dict[str, str] = {}
        for rid, pid in proposals:
            final[rid] = pid  # later statements override earlier ones
        if not final:
            raise TurnAborted(f"turn {self.game.turn + 1}: no defender stated a valid procedure")
        tally = Counter(final.values())
        first_seen = {}
        for i, (_, pid) in enumerate(proposals):
            first_seen.setdefault(pid, i)
        top = max(tally.values())
        winner = min((p for p in tally if tally[p] == top), key=lambda p: first_seen[p])
        proposer = next(rid for rid, pid in proposals if pid == winner)
        text = (
            f"Team vote: {self._label(winner)} carries {tally[winner]} of {len(final)} votes.\n"
            f"DECISION: {self._label(winner)}"
        )
        self._emit(proposer, MessageKind.DECISION, text, {"procedure": winner, "votes": dict(sorted(tally.items()))})
        return winner

    def run_turn(self) -> TurnRecord:
        if game_status(self.game) is not GameStatus.ONGOING:
            raise GameError(f"game is already {game_status(self.game).value}")
        if not any(m.kind is MessageKind.SCENARIO for m in self.transcript):
            self.describe_scenario()
        turn = self.game.turn + 1
        self._turn = turn
        captain = self.team.captain
        self._emit(
            captain.role_id,
            MessageKind.SCENARIO,
            f"Turn {turn} of {MAX_TURNS}. Defenders, discuss and agree on one Procedure card.",
            {"announce": turn},
        )
        proposals: list[tuple[str, str]] = []
        for round_no in range(1, max(1, self.config.discussion_rounds) + 1):
            for role in self.team.speaking_order():
                pref = self._collect_preference(role, proposals, round_no)
                if pref is not None:
                    proposals.append((role.role_id, pref))

        leader = self.team.leader
        if leader is not None:
            choice = self._leader_decision(leader, [p for p in proposals if p[0] != leader.role_id])
        else:
            choice = self._vote(proposals)

        if self.forced_rolls is not None:
            if turn - 1 >= len(self.forced_rolls):
                raise TurnAborted(f"turn {turn}: forced roll list exhausted")
            roll = self.forced_rolls[turn - 1]
        else:
            roll, self.game = roll_d20(self.game)
        outcome, self.game = resolve_attempt(self.game, self.catalog, choice, roll)

        result = "SUCCESS" if outcome.success else "FAILURE"
        if outcome.revealed_card:
            detail = f"The attempt revealed an attack card: {self._label(outcome.revealed_card)}."
        elif outcome.success:
            detail = "The procedure succeeded but did not detect any hidden attack card."
        else:
            detail = "No attack card was revealed."
        self._emit(
            captain.role_id,
            MessageKind.OUTCOME,
            f"{self._label(choice)}: rolled {outcome.natural_roll} {outcome.modifier:+d} = {outcome.total}. "
            f"{result}. {detail}",
            {
                "procedure": choice,
                "roll": outcome.natural_roll,
                "modifier": outcome.modifier,
                "total": outcome.total,
                "success": outcome.success,
                "revealed": outcome.revealed_card,
            },
        )
        retrieved = self.maybe_retrieve(outcome)
        record = TurnRecord(
            turn=outcome.turn,
            procedure_id=choice,
            procedure=self._label(choice),
            natural_roll=outcome.natural_roll,
            modifier=outcome.modifier,
            success=outcome.success,
            revealed_id=outcome.revealed_card,
            revealed=self._label(outcome.revealed_card) if outcome.revealed_card else None,
            retrieval=retrieved is not None,
        )
        self.records.append(record)
        return record

    def maybe_retrieve(self, outcome: AttemptOutcome):
        """Post-attempt retrieval step; returns ``(query, results)`` or ``None``."""
        if not self.config.retrieval_policy.triggers(outcome):
            return None
        if self.index is None or len(self.index) == 0 or self.embedder is None:
            log.info("turn %d: retrieval skipped, no knowledge base loaded", outcome.turn)
            return None
        captain = self.team.captain
        instruction = (
            "The last procedure attempt revealed nothing. Write one short retrieval query using relevant "
            "scenario keywords that could help the defenders choose their next procedure. Reply with the query only."
        )
        text = self._ask(captain, Task.RETRIEVAL_QUERY, instruction, self._captain_context()).strip()
        text = text.splitlines()[0].strip() if text else ""
        if not text or self.leaks(text):
            # never let a query leak hidden card names to the defenders
            text = " ".join([self._label(outcome.procedure_id)] + [self._label(c) for c in self.game.revealed])
        self._emit(captain.role_id, MessageKind.RETRIEVAL_QUERY, text, {"top_k": self.config.top_k})
        results = query(
            self.index, text, self.config.top_k, self.embedder, distinct_documents=self.config.distinct_documents
        )
        body = "\n\n".join(f"[{i}] ({r.chunk_id}, score {r.score:.3f})\n{r.text.strip()}" for i, r in enumerate(results, 1))
        self._emit(
            self.team.retrieval_agent.role_id,
            MessageKind.RETRIEVAL_RESULT,
            body or "No relevant passages found.",
            {"chunks": [str(r.chunk_id) for r in results], "scores": [round(r.score, 6) for r in results]},
        )
        return text, results

    def report(self, status: str | None = None, diagnostic: str | None = None) -> GameReport:
        return GameReport(
            run_id=self.run_id,
            seed=self.seed,
            structure=self.team.structure.value,
            status=status or game_status(self.game).value,
            turns=list(self.records),
            transcript=list(self.transcript),
            attack_cards=list(self.game.scenario.attack_cards),
            established=sorted(self.game.scenario.established),
            config_digest=self.config_digest,
            diagnostic=diagnostic,
        )

    def run_game(self) -> GameReport:
        try:
            if not self.transcript:
                self.describe_scenario()
            while game_status(self.game) is GameStatus.ONGOING:
                self.run_turn()
        except (TurnAborted, ScenarioLeakError, GatewayError) as exc:
            log.warning("game %s/%s aborted: %s", self.run_id, self.seed, exc)
            return self.report(status="aborted", diagnostic=f"{type(exc).__name__}: {exc}")
        return self.report()


def run_game(session: Session) -> GameReport:
    return session.run_game()


def load_transcript(path: str | Path) -> tuple[list[dict[str, Any]], dict[str, Any]]:
    """Read a ``.log`` transcript back into message records and the summary record."""
    records = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    summary = records.pop() if records and records[-1].get("type") == "summary" else {}
    return records, summary
