"""Backdoors & Breaches rules as pure state transitions.

A :class:`GameState` is an immutable value. Every operation returns a new
state; the RNG stream travels inside the state as a ``random.Random`` state
tuple, so the same seed always yields the same scenario and roll sequence.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .cards import ATTACK_PHASES, Catalog, Phase, detection_set

__all__ = [
    "AttemptOutcome",
    "ESTABLISHED_BONUS",
    "ESTABLISHED_COUNT",
    "GameError",
    "GameState",
    "GameStatus",
    "MAX_TURNS",
    "SUCCESS_THRESHOLD",
    "Scenario",
    "ScenarioError",
    "game_status",
    "new_game",
    "replay",
    "resolve_attempt",
    "roll_d20",
    "scenario_from_mapping",
]

MAX_TURNS = 10
SUCCESS_THRESHOLD = 11
ESTABLISHED_BONUS = 3
ESTABLISHED_COUNT = 4


class GameError(Exception):
    """Illegal move or engine contract violation."""


class ScenarioError(GameError):
    pass


class GameStatus(str, Enum):
    ONGOING = "ongoing"
    WON = "won"
    LOST = "lost"


@dataclass(frozen=True)
class Scenario:
    attack_cards: tuple[str, ...]  # one per attack phase, in phase order
    established: frozenset[str]

    def validate(self, catalog: Catalog) -> None:
        errors = []
        phases = []
        for card_id in self.attack_cards:
            if card_id not in catalog:
                errors.append(f"unknown attack card {card_id!r}")
                continue
            phases.append(catalog.get(card_id).phase)
        for phase in ATTACK_PHASES:
            n = phases.count(phase)
            if n != 1:
                errors.append(f"scenario needs exactly one {phase.value} card, got {n}")
        if Phase.PROCEDURE in phases:
            errors.append("procedure cards cannot be attack cards")
        if len(self.established) != ESTABLISHED_COUNT:
            errors.append(f"established set must hold {ESTABLISHED_COUNT} procedures, got {len(self.established)}")
        for proc in sorted(self.established):
            if proc not in catalog or catalog.get(proc).phase is not Phase.PROCEDURE:
                errors.append(f"established entry {proc!r} is not a procedure card")
        if errors:
            raise ScenarioError("; ".join(errors))

    def ordered(self, catalog: Catalog) -> "Scenario":
        """Same scenario with attack cards sorted into phase order."""
        rank = {p: i for i, p in enumerate(ATTACK_PHASES)}
        cards = sorted(self.attack_cards, key=lambda c: rank[catalog.get(c).phase])
        return Scenario(tuple(cards), self.established)


def scenario_from_mapping(catalog: Catalog, doc: Mapping[str, Any]) -> tuple[Scenario | None, list[str]]:
    """Build a scenario from a parsed override document.

    ``attack_cards`` may be a list of four ids/names or a mapping of phase to
    id/name (the mapping form disambiguates names shared across phases).
    Returns the scenario (``None`` if no ``established`` given and the caller
    must draw one) and any problems found.
    """
    problems: list[str] = []
    raw = doc.get("attack_cards")
    attack: list[str] = []
    if isinstance(raw, Mapping):
        for key, value in raw.items():
            try:
                phase = Phase(key)
                attack.append(catalog.resolve(str(value), phase).id)
            except (KeyError, ValueError) as exc:
                problems.append(f"attack_cards.{key}: {exc}")
    elif isinstance(raw, list):
        # A name shared across phases (e.g. Credential Stuffing) takes the
        # phase the other entries leave open.
        resolved: dict[int, str] = {}
        deferred: list[int] = []
        for i, value in enumerate(raw):
            try:
                resolved[i] = catalog.resolve(str(value), ATTACK_PHASES).id
            except ValueError:
                deferred.append(i)
            except KeyError as exc:
                problems.append(f"attack_cards[{i}]: {exc}")
        taken = {catalog.get(c).phase for c in resolved.values()}
        for i in deferred:
            open_phases = [p for p in ATTACK_PHASES if p not in taken]
            try:
                card = catalog.resolve(str(raw[i]), open_phases)
            except (KeyError, ValueError) as exc:
                problems.append(f"attack_cards[{i}]: {exc}")
                continue
            resolved[i] = card.id
            taken.add(card.phase)
        attack = [resolved[i] for i in sorted(resolved)]
    else:
        problems.append("attack_cards: required list or mapping of four attack cards")
    established: list[str] = []
    raw_est = doc.get("established")
    if raw_est is not None:
        if not isinstance(raw_est, list):
            problems.append("established: expected a list of procedure ids")
        else:
            for i, value in enumerate(raw_est):
                try:
                    established.append(catalog.resolve(str(value), Phase.PROCEDURE).id)
                except (KeyError, ValueError) as exc:
                    problems.append(f"established[{i}]: {exc}")
    if problems:
        return None, problems
    scenario = Scenario(tuple(attack), frozenset(established))
    if raw_est is None:
        return scenario, []
    try:
        scenario.validate(catalog)
    except ScenarioError as exc:
        return None, [str(exc)]
    return scenario.ordered(catalog), []


@dataclass(frozen=True)
class AttemptOutcome:
    turn: int
    procedure_id: str
    natural_roll: int
    modifier: int
    total: int
    success: bool
    revealed_card: str | None = None


@dataclass(frozen=True)
class GameState:
    scenario: Scenario
    rng_seed: int
    rng_state: tuple = field(repr=False)
    revealed: tuple[str, ...] = ()
    turn: int = 0
    history: tuple[AttemptOutcome, ...] = ()

    @property
    def status(self) -> GameStatus:
        return game_status(self)

    @property
    def unrevealed(self) -> tuple[str, ...]:
        return tuple(c for c in self.scenario.attack_cards if c not in self.revealed)


def game_status(state: GameState) -> GameStatus:
    if len(state.revealed) == len(ATTACK_PHASES) and state.turn <= MAX_TURNS:
        return GameStatus.WON
    if state.turn >= MAX_TURNS:
        return GameStatus.LOST
    return GameStatus.ONGOING


def new_game(catalog: Catalog, seed: int, override: Scenario | None = None) -> GameState:
    """Set up a game. Without an override, draw one attack card per phase and
    four established procedures from the seeded stream."""
    rng = random.Random(seed)
    if override is not None:
        if not override.established:
            # Partial override: attack cards fixed, established set drawn.
            procs = [c.id for c in catalog.procedures]
            override = Scenario(override.attack_cards, frozenset(rng.sample(procs, ESTABLISHED_COUNT)))
        override.validate(catalog)
        scenario = override.ordered(catalog)
    else:
        attack = tuple(rng.choice(catalog.by_phase(p)).id for p in ATTACK_PHASES)
        procs = [c.id for c in catalog.procedures]
        scenario = Scenario(attack, frozenset(rng.sample(procs, ESTABLISHED_COUNT)))
    return GameState(scenario=scenario, rng_seed=seed, rng_state=rng.getstate())


def roll_d20(state: GameState) -> tuple[int, GameState]:
    """Draw a d20 from the state's stream; returns the roll and the advanced state."""
    if game_status(state) is not GameStatus.ONGOING:
        raise GameError(f"cannot roll: game is {game_status(state).value}")
    rng = random.Random()
    rng.setstate(state.rng_state)
    value = rng.randint(1, 20)
    return value, replace(state, rng_state=rng.getstate())


def resolve_attempt(
    state: GameState, catalog: Catalog, procedure_id: str, natural_roll: int
) -> tuple[AttemptOutcome, GameState]:
    if game_status(state) is not GameStatus.ONGOING:
        raise GameError(f"cannot attempt a procedure: game is {game_status(state).value}")
    if procedure_id not in catalog or catalog.get(procedure_id).phase is not Phase.PROCEDURE:
        raise GameError(f"unknown procedure {procedure_id!r}")
    if not isinstance(natural_roll, int) or not 1 <= natural_roll <= 20:
        raise GameError(f"natural roll must be in 1..20, got {natural_roll!r}")

    modifier = ESTABLISHED_BONUS if procedure_id in state.scenario.established else 0
    total = natural_roll + modifier
    success = total >= SUCCESS_THRESHOLD
    revealed_card = None
    if success:
        detectable = detection_set(catalog, procedure_id)
        # unrevealed is already in phase order, so the first hit is the earliest phase
        for card_id in state.unrevealed:
            if card_id in detectable:
                revealed_card = card_id
                break
    turn = state.turn + 1
    outcome = AttemptOutcome(
        turn=turn,
        procedure_id=procedure_id,
        natural_roll=natural_roll,
        modifier=modifier,
        total=total,
        success=success,
        revealed_card=revealed_card,
    )
    revealed = state.revealed + ((revealed_card,) if revealed_card else ())
    return outcome, replace(state, revealed=revealed, turn=turn, history=state.history + (outcome,))


def replay(
    catalog: Catalog,
    scenario: Scenario,
    forced_rolls: Sequence[int],
    procedure_choices: Iterable[str],
    *,
    seed: int = 0,
) -> list[AttemptOutcome]:
    """Run the engine on injected rolls and choices instead of the RNG."""
    choices = list(procedure_choices)
    if len(choices) != len(forced_rolls):
        raise GameError(f"length mismatch: {len(choices)} procedures vs {len(forced_rolls)} rolls")
    if len(choices) > MAX_TURNS:
        raise GameError(f"at most {MAX_TURNS} turns can be replayed, got {len(choices)}")
    state = new_game(catalog, seed, scenario)
    outcomes = []
    for proc, roll in zip(choices, forced_rolls):
        if game_status(state) is not GameStatus.ONGOING:
            raise GameError(f"game already {game_status(state).value} before turn {state.turn + 1}")
        outcome, state = resolve_attempt(state, catalog, proc, roll)
        outcomes.append(outcome)
    return outcomes
