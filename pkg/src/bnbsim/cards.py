"""Card universe: attack and procedure cards plus the detection matrix."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping

import yaml

__all__ = [
    "Phase",
    "ATTACK_PHASES",
    "Card",
    "Catalog",
    "CatalogError",
    "CatalogParseError",
    "CatalogValidationError",
    "DEFAULT_CATALOG_PATH",
    "EXPECTED_PHASE_COUNTS",
    "default_catalog",
    "detection_set",
    "load_catalog",
    "normalize_name",
]


class Phase(str, Enum):
    INITIAL_COMPROMISE = "initial_compromise"
    PIVOT_ESCALATE = "pivot_escalate"
    C2_EXFIL = "c2_exfil"
    PERSISTENCE = "persistence"
    PROCEDURE = "procedure"

    @property
    def label(self) -> str:
        return _PHASE_LABELS[self]

    @property
    def is_attack(self) -> bool:
        return self is not Phase.PROCEDURE


_PHASE_LABELS = {
    Phase.INITIAL_COMPROMISE: "Initial Compromise",
    Phase.PIVOT_ESCALATE: "Pivot and Escalate",
    Phase.C2_EXFIL: "C2 and Exfil",
    Phase.PERSISTENCE: "Persistence",
    Phase.PROCEDURE: "Procedure",
}

# Order matters: reveal tie-breaks walk the phases in this order.
ATTACK_PHASES: tuple[Phase, ...] = (
    Phase.INITIAL_COMPROMISE,
    Phase.PIVOT_ESCALATE,
    Phase.C2_EXFIL,
    Phase.PERSISTENCE,
)

EXPECTED_PHASE_COUNTS: Mapping[Phase, int] = MappingProxyType(
    {
        Phase.INITIAL_COMPROMISE: 13,
        Phase.PIVOT_ESCALATE: 12,
        Phase.C2_EXFIL: 7,
        Phase.PERSISTENCE: 14,
        Phase.PROCEDURE: 12,
    }
)

DEFAULT_CATALOG_PATH = Path(str(resources.files("bnbsim") / "data" / "cards.yaml"))

_ID_RE = re.compile(r"^[a-z0-9]+(?:_[a-z0-9]+)*$")


class CatalogError(Exception):
    """Base class for catalog load failures."""


class CatalogParseError(CatalogError):
    pass


class CatalogValidationError(CatalogError):
    """Raised with every violated invariant, not only the first."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid card catalog:\n  " + "\n  ".join(self.errors))


def normalize_name(text: str) -> str:
    """Case- and punctuation-insensitive key used for name lookup."""
    return " ".join(re.findall(r"[a-z0-9]+", text.lower()))


@dataclass(frozen=True)
class Card:
    id: str
    name: str
    phase: Phase
    description: str
    short_name: str | None = None
    aliases: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        """Name as printed in trajectory tables."""
        return self.short_name or self.name

    def spellings(self) -> tuple[str, ...]:
        names = [self.name, self.id.replace("_", " "), *self.aliases]
        if self.short_name:
            names.append(self.short_name)
        return tuple(names)


@dataclass(frozen=True)
class Catalog:
    cards: tuple[Card, ...]
    detection: Mapping[str, frozenset[str]]
    source: str = "<memory>"
    _by_id: Mapping[str, Card] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", MappingProxyType({c.id: c for c in self.cards}))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Catalog):
            return NotImplemented
        return self.cards == other.cards and dict(self.detection) == dict(other.detection)

    def __hash__(self) -> int:
        return hash(self.cards)

    def __contains__(self, card_id: object) -> bool:
        return card_id in self._by_id

    def __len__(self) -> int:
        return len(self.cards)

    def get(self, card_id: str) -> Card:
        try:
            return self._by_id[card_id]
        except KeyError:
            raise KeyError(f"unknown card id: {card_id!r}") from None

    def by_phase(self, phase: Phase) -> tuple[Card, ...]:
        return tuple(c for c in self.cards if c.phase is phase)

    @property
    def procedures(self) -> tuple[Card, ...]:
        return self.by_phase(Phase.PROCEDURE)

    @property
    def phase_counts(self) -> dict[Phase, int]:
        return {p: len(self.by_phase(p)) for p in Phase}

    def resolve(self, text: str, phase: Phase | Iterable[Phase] | None = None) -> Card:
        """Look up a card by id, name, short name or alias.

        Raises KeyError when nothing matches and ValueError when the spelling is
        ambiguous within the allowed phases.
        """
        if text in self._by_id:
            card = self._by_id[text]
            if phase is None or card.phase in _phase_set(phase):
                return card
        key = normalize_name(text)
        allowed = _phase_set(phase)
        hits = [
            c
            for c in self.cards
            if c.phase in allowed and any(normalize_name(s) == key for s in c.spellings())
        ]
        if not hits:
            raise KeyError(f"no card matches {text!r}")
        if len(hits) > 1:
            ids = ", ".join(c.id for c in hits)
            raise ValueError(f"{text!r} is ambiguous ({ids}); give a card id or a phase")
        return hits[0]


def _phase_set(phase: Phase | Iterable[Phase] | None) -> frozenset[Phase]:
    if phase is None:
        return frozenset(Phase)
    if isinstance(phase, Phase):
        return frozenset([phase])
    return frozenset(phase)


def detection_set(catalog: Catalog, procedure_id: str) -> frozenset[str]:
    """Attack card ids a successful roll of ``procedure_id`` can reveal."""
    card = catalog.get(procedure_id)
    if card.phase is not Phase.PROCEDURE:
        raise KeyError(f"{procedure_id!r} is not a procedure card")
    return catalog.detection.get(procedure_id, frozenset())


def load_catalog(path: str | Path = DEFAULT_CATALOG_PATH, *, check_counts: bool | None = None) -> Catalog:
    """Parse and validate a card file.

    ``check_counts`` enforces the standard 13/12/7/14/12 deck composition. It
    defaults to on for the shipped file and off for custom decks.
    """
    path = Path(path)
    if check_counts is None:
        check_counts = path.resolve() == DEFAULT_CATALOG_PATH.resolve()
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CatalogParseError(f"{path}: cannot read card file: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise CatalogParseError(f"{where}: {problem}") from exc
    return build_catalog(doc, source=str(path), check_counts=check_counts)


def build_catalog(doc: Any, *, source: str = "<memory>", check_counts: bool = False) -> Catalog:
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise CatalogValidationError(["<root>: expected a mapping with keys 'cards' and 'detection'"])
    for key in doc:
        if key not in ("cards", "detection"):
            errors.append(f"{key}: unknown top-level key")

    raw_cards = doc.get("cards")
    cards: list[Card] = []
    if not isinstance(raw_cards, list):
        errors.append("cards: expected a list of card mappings")
        raw_cards = []
    seen: set[str] = set()
    for i, raw in enumerate(raw_cards):
        where = f"cards[{i}]"
        if not isinstance(raw, dict):
            errors.append(f"{where}: expected a mapping")
            continue
        for key in raw:
            if key not in ("id", "name", "phase", "description", "short_name", "aliases"):
                errors.append(f"{where}.{key}: unknown key")
        card_id = raw.get("id")
        ok = True
        for key in ("id", "name", "description"):
            if not isinstance(raw.get(key), str) or not raw.get(key).strip():
                errors.append(f"{where}.{key}: required non-empty string")
                ok = False
        if isinstance(card_id, str) and card_id and not _ID_RE.match(card_id):
            errors.append(f"{where}.id: {card_id!r} is not a lowercase snake-case slug")
        try:
            phase = Phase(raw.get("phase"))
        except ValueError:
            choices = ", ".join(p.value for p in Phase)
            errors.append(f"{where}.phase: {raw.get('phase')!r} not one of {choices}")
            ok = False
        aliases = raw.get("aliases", [])
        if not isinstance(aliases, list) or not all(isinstance(a, str) for a in aliases):
            errors.append(f"{where}.aliases: expected a list of strings")
            aliases = []
        short_name = raw.get("short_name")
        if short_name is not None and not isinstance(short_name, str):
            errors.append(f"{where}.short_name: expected a string")
            short_name = None
        if isinstance(card_id, str):
            if card_id in seen:
                errors.append(f"{where}.id: duplicate card id {card_id!r}")
                ok = False
            seen.add(card_id)
        if ok:
            cards.append(
                Card(
                    id=card_id,
                    name=raw["name"].strip(),
                    phase=phase,
                    description=raw["description"].strip(),
                    short_name=short_name,
                    aliases=tuple(aliases),
                )
            )

    by_id = {c.id: c for c in cards}
    raw_det = doc.get("detection")
    detection: dict[str, frozenset[str]] = {}
    if not isinstance(raw_det, dict):
        errors.append("detection: expected a mapping of procedure id to attack ids")
        raw_det = {}
    for proc_id, targets in raw_det.items():
        where = f"detection.{proc_id}"
        proc = by_id.get(proc_id)
        if proc is None:
            errors.append(f"{where}: unknown card id {proc_id!r}")
        elif proc.phase is not Phase.PROCEDURE:
            errors.append(f"{where}: key {proc_id!r} is not a procedure card")
        if targets is None:
            targets = []
        if not isinstance(targets, list):
            errors.append(f"{where}: expected a list of attack card ids")
            continue
        for j, target in enumerate(targets):
            card = by_id.get(target)
            if card is None:
                errors.append(f"{where}[{j}]: unknown card id {target!r}")
            elif not card.phase.is_attack:
                errors.append(f"{where}[{j}]: {target!r} is a procedure, not an attack card")
        detection[proc_id] = frozenset(t for t in targets if t in by_id and by_id[t].phase.is_attack)

    detectable = set().union(*detection.values()) if detection else set()
    for card in cards:
        if card.phase.is_attack and card.id not in detectable:
            errors.append(f"undetectable attack card: {card.id!r} is revealed by no procedure")

    if check_counts:
        for phase, want in EXPECTED_PHASE_COUNTS.items():
            got = sum(1 for c in cards if c.phase is phase)
            if got != want:
                errors.append(f"cards: phase {phase.value} has {got} cards, expected {want}")

    if errors:
        raise CatalogValidationError(errors)
    for card in cards:
        if card.phase is Phase.PROCEDURE:
            detection.setdefault(card.id, frozenset())
    return Catalog(cards=tuple(cards), detection=MappingProxyType(detection), source=source)


_default: Catalog | None = None


def default_catalog() -> Catalog:
    """Shipped catalog, loaded once."""
    global _default
    if _default is None:
        _default = load_catalog(DEFAULT_CATALOG_PATH)
    return _default
