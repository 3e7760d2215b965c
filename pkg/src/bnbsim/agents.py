"""Agent backends: a deterministic scripted team and a remote chat model."""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import yaml

from .cards import Catalog, Phase, normalize_name
from .gateway import ChatRequest, Gateway
from .teams import Expertise, Role

__all__ = [
    "AgentBackend",
    "AgentPrompt",
    "RemoteBackend",
    "ScriptedBackend",
    "Task",
    "extract_decision",
    "load_narratives",
]

NARRATIVES_PATH = Path(str(resources.files("bnbsim") / "data" / "narratives.yaml"))
_DECISION_RE = re.compile(r"^\s*\**\s*DECISION\s*\**\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)


class Task(str, Enum):
    DESCRIBE_SCENARIO = "describe_scenario"
    DISCUSS = "discuss"
    DECIDE = "decide"
    RETRIEVAL_QUERY = "retrieval_query"


@dataclass(frozen=True)
class AgentPrompt:
    task: Task
    system: str
    window: tuple  # tuple[Message, ...]; typed loosely to avoid an import cycle
    instruction: str
    context: Mapping[str, Any] = field(default_factory=dict)


class AgentBackend(Protocol):
    def respond(self, role: Role, prompt: AgentPrompt) -> str: ...


def extract_decision(text: str, catalog: Catalog) -> str | None:
    """Procedure id named on the last ``DECISION:`` line, or ``None``.

    Matching ignores case and punctuation. If no spelling matches exactly, the
    longest procedure spelling contained in the line wins, so trailing
    decoration such as ``(+3)`` is tolerated.
    """
    found = _DECISION_RE.findall(text or "")
    if not found:
        return None
    key = normalize_name(found[-1])
    if not key:
        return None
    procedures = catalog.by_phase(Phase.PROCEDURE)
    for card in procedures:
        if any(normalize_name(s) == key for s in card.spellings()):
            return card.id
    best: tuple[int, str] | None = None
    padded = f" {key} "
    for card in procedures:
        for s in card.spellings():
            ns = normalize_name(s)
            if ns and f" {ns} " in padded and (best is None or len(ns) > best[0]):
                best = (len(ns), card.id)
    return best[1] if best else None


def load_narratives(path: str | Path = NARRATIVES_PATH) -> dict[str, dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return yaml.safe_load(fh) or {}


def _unit(*parts: object) -> float:
    """Deterministic uniform [0, 1) keyed on ``parts``."""
    digest = hashlib.blake2b("|".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


class ScriptedBackend:
    """Network-free team.

    Policies:
      ``heuristic``    role-aware scoring over the visible game record
      ``round_robin``  turn t plays the t-th procedure in catalog order
      ``fixed``        plays ``choices[t - 1]`` on turn t

    Every reply is a pure function of the role, the prompt and ``seed``.
    """

    def __init__(
        self,
        catalog: Catalog,
        *,
        policy: str = "heuristic",
        choices: Sequence[str] | None = None,
        seed: int = 0,
        narratives: Mapping[str, Mapping[str, Any]] | None = None,
    ):
        if policy not in ("heuristic", "round_robin", "fixed"):
            raise ValueError(f"unknown scripted policy {policy!r}")
        if policy == "fixed" and not choices:
            raise ValueError("fixed policy needs a list of procedure choices")
        self.catalog = catalog
        self.policy = policy
        self.choices = [catalog.resolve(c, Phase.PROCEDURE).id for c in choices or ()]
        self.seed = seed
        self.narratives = dict(narratives if narratives is not None else load_narratives())

    # -- captain -----------------------------------------------------------

    def _describe(self, ctx: Mapping[str, Any]) -> str:
        entry = self.narratives.get(ctx.get("initial_compromise", ""), {})
        story = entry.get("narrative") or (
            "Security monitoring raised an alert that something is wrong on the corporate network, "
            "but nobody yet knows how the attackers got in."
        )
        return f"{story.strip()} Defenders, it is your job to work out what happened."

    def _query(self, ctx: Mapping[str, Any]) -> str:
        entry = self.narratives.get(ctx.get("initial_compromise", ""), {})
        parts = [ctx.get("last_procedure_label", "")]
        parts += list(ctx.get("revealed_labels", ()))
        parts += list(entry.get("keywords", ()))
        return " ".join(p for p in parts if p).strip() or "incident investigation detection procedures"

    # -- defenders ---------------------------------------------------------

    def _scripted_choice(self, turn: int) -> str | None:
        if self.policy == "fixed":
            return self.choices[turn - 1] if turn - 1 < len(self.choices) else self.choices[-1]
        if self.policy == "round_robin":
            procs = self.catalog.procedures
            return procs[(turn - 1) % len(procs)].id
        return None

    def _scores(self, role: Role, ctx: Mapping[str, Any], round_no: int) -> dict[str, float]:
        turn = ctx["turn"]
        history = ctx.get("history", ())
        retrieved = normalize_name(ctx.get("last_retrieval") or "")
        beginner = role.expertise is Expertise.BEGINNER
        scores: dict[str, float] = {}
        for proc in ctx["procedures"]:
            pid = proc["id"]
            s = 0.0
            if pid in role.recommended_procedures:
                s += 2.0
            if proc["established"]:
                s += 1.5
            for h in history:
                if h["procedure"] != pid:
                    continue
                if h["success"] and not h["revealed"]:
                    s -= 2.5  # nothing left for it to find
                elif not h["success"]:
                    s -= 0.4
                else:
                    s += 0.3
            if retrieved and any(f" {normalize_name(sp)} " in f" {retrieved} " for sp in proc["spellings"]):
                s += 2.0
            if beginner:
                s += sum(1.0 for rid, p in ctx.get("proposals", ()) if p == pid and rid in ctx.get("seniors", ()))
            s += (3.0 if beginner else 1.0) * _unit(self.seed, ctx.get("game_seed", 0), role.role_id, turn, round_no, pid)
            scores[pid] = s
        return scores

    def _discuss(self, role: Role, ctx: Mapping[str, Any]) -> str:
        turn = ctx["turn"]
        labels = {p["id"]: p["label"] for p in ctx["procedures"]}
        fixed = self._scripted_choice(turn)
        if fixed is not None:
            return f"Turn {turn}: I recommend {labels[fixed]}.\nDECISION: {labels[fixed]}"
        scores = self._scores(role, ctx, ctx.get("round", 1))
        ranked = sorted(scores, key=lambda p: (-scores[p], p))
        pick = ranked[0]
        reason = self._reason(role, ctx, pick)
        prior = [p for _, p in ctx.get("proposals", ())]
        if role.is_argumentative and prior:
            lean = Counter(prior).most_common(1)[0][0]
            if pick == lean and len(ranked) > 1 and scores[ranked[1]] >= scores[pick] - 1.0:
                pick = ranked[1]
                reason = (
                    f"I want to push back on the lean toward {labels[lean]}; "
                    f"we may be anchoring on it. {self._reason(role, ctx, pick)}"
                )
        return f"Turn {turn}: I propose {labels[pick]}. {reason}\nDECISION: {labels[pick]}"

    def _reason(self, role: Role, ctx: Mapping[str, Any], pid: str) -> str:
        proc = next(p for p in ctx["procedures"] if p["id"] == pid)
        retrieved = normalize_name(ctx.get("last_retrieval") or "")
        if retrieved and any(f" {normalize_name(sp)} " in f" {retrieved} " for sp in proc["spellings"]):
            return "The retrieved material points at it."
        if pid in role.recommended_procedures:
            return "It is squarely in my area of expertise."
        if proc["established"]:
            return "It is an established procedure, so we get the +3."
        return "We have not exhausted it yet."

    def _decide(self, role: Role, ctx: Mapping[str, Any]) -> str:
        turn = ctx["turn"]
        labels = {p["id"]: p["label"] for p in ctx["procedures"]}
        fixed = self._scripted_choice(turn)
        if fixed is not None:
            return f"We go with {labels[fixed]}.\nDECISION: {labels[fixed]}"
        members = [(rid, p) for rid, p in ctx.get("proposals", ()) if rid != role.role_id]
        tally = Counter(p for _, p in members)
        if tally:
            top = max(tally.values())
            tied = [p for p in tally if tally[p] == top]
            scores = self._scores(role, ctx, 0)
            pick = max(tied, key=lambda p: (scores[p], p))
            note = f"{top} of {len(members)} members back it"
        else:
            scores = self._scores(role, ctx, 0)
            pick = max(scores, key=lambda p: (scores[p], p))
            note = "my own read of the situation"
        return f"After hearing the team, we use {labels[pick]} ({note}).\nDECISION: {labels[pick]}"

    def respond(self, role: Role, prompt: AgentPrompt) -> str:
        ctx = prompt.context
        if prompt.task is Task.DESCRIBE_SCENARIO:
            return self._describe(ctx)
        if prompt.task is Task.RETRIEVAL_QUERY:
            return self._query(ctx)
        if prompt.task is Task.DECIDE:
            return self._decide(role, ctx)
        return self._discuss(role, ctx)


class RemoteBackend:
    """Agents driven by a chat-completions model through a :class:`Gateway`."""

    def __init__(self, gateway: Gateway, *, temperature: float | None = None, model: str | None = None):
        self.gateway = gateway
        self.temperature = gateway.config.temperature if temperature is None else temperature
        self.model = model

    def build_request(self, role: Role, prompt: AgentPrompt) -> ChatRequest:
        messages = [{"role": "system", "content": prompt.system}]
        for m in prompt.window:
            if m.speaker == role.role_id:
                messages.append({"role": "assistant", "content": m.text})
            else:
                messages.append({"role": "user", "content": f"[{m.speaker}] {m.text}"})
        messages.append({"role": "user", "content": prompt.instruction})
        return ChatRequest(messages=messages, model=self.model, temperature=self.temperature)

    def respond(self, role: Role, prompt: AgentPrompt) -> str:
        return self.gateway.chat(self.build_request(role, prompt))
