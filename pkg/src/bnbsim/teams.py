"""The eight team structures and their role prompts."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

__all__ = [
    "DEFENDER_COUNT",
    "EXPERT_ORDER",
    "EXPERTISE_PROCEDURES",
    "Expertise",
    "PROMPT_DIR",
    "Role",
    "Structure",
    "TeamConfig",
    "build_team",
    "captain_role",
    "retrieval_role",
    "role_prompt",
]

DEFENDER_COUNT = 5
PROMPT_DIR = Path(str(resources.files("bnbsim") / "data" / "prompts"))


class Expertise(str, Enum):
    GENERALIST = "generalist"
    ENDPOINT_SECURITY = "endpoint_security"
    NETWORK_TRAFFIC = "network_traffic"
    LOG_BEHAVIOR = "log_behavior"
    DECEPTION_CONTAINMENT = "deception_containment"
    INCIDENT_RESPONSE = "incident_response"
    BEGINNER = "beginner"


# Four-expert teams take the first four, three-expert teams the first three.
EXPERT_ORDER: tuple[Expertise, ...] = (
    Expertise.ENDPOINT_SECURITY,
    Expertise.NETWORK_TRAFFIC,
    Expertise.LOG_BEHAVIOR,
    Expertise.DECEPTION_CONTAINMENT,
    Expertise.INCIDENT_RESPONSE,
)

# Procedures each expert's role text recommends.
EXPERTISE_PROCEDURES: dict[Expertise, tuple[str, ...]] = {
    Expertise.ENDPOINT_SECURITY: ("endpoint_security_protection_analysis", "endpoint_analysis"),
    Expertise.NETWORK_TRAFFIC: ("network_threat_hunting", "firewall_log_review"),
    Expertise.LOG_BEHAVIOR: ("siem_log_analysis", "user_and_entity_behavior_analytics"),
    Expertise.DECEPTION_CONTAINMENT: ("cyber_deception", "isolation"),
    Expertise.INCIDENT_RESPONSE: ("memory_analysis", "crisis_management"),
}

_EXPERT_TEMPLATES = {
    Expertise.ENDPOINT_SECURITY: ("endpoint_security_expert", "Endpoint Security Expert"),
    Expertise.NETWORK_TRAFFIC: ("network_traffic_expert", "Network Traffic Analysis Expert"),
    Expertise.LOG_BEHAVIOR: ("log_behavior_expert", "Log and Behavioral Analysis Expert"),
    Expertise.DECEPTION_CONTAINMENT: ("deception_containment_expert", "Deception and Containment Expert"),
    Expertise.INCIDENT_RESPONSE: ("incident_response_expert", "Incident Response Expert"),
}


class Structure(str, Enum):
    HOMO_CEN = "HomoCen"
    HETERO_CEN = "HeteroCen"
    HOMO_DECEN = "HomoDecen"
    HETERO_DECEN = "HeteroDecen"
    HOMO_HIER = "HomoHier"
    HETERO_HIER = "HeteroHier"
    HOMO_ARG = "HomoArg"
    HETERO_ARG = "HeteroArg"

    @classmethod
    def parse(cls, text: str) -> "Structure":
        key = text.replace("_", "").replace("-", "").replace(".", "").replace(" ", "").lower()
        for s in cls:
            if s.value.lower() == key or s.name.replace("_", "").lower() == key:
                return s
        raise ValueError(f"unknown team structure {text!r}; choose from {', '.join(s.value for s in cls)}")

    @property
    def label(self) -> str:
        """Row label in win-rate tables, e.g. ``Homo. Cen.``."""
        for suffix, text in (("Decen", "Decen."), ("Cen", "Cen."), ("Hier", "Hier."), ("Arg", "Arg.")):
            if self.value.endswith(suffix):
                return f"{self.value[: -len(suffix)]}. {text}"
        raise AssertionError(self.value)

    @property
    def heterogeneous(self) -> bool:
        return self.value.startswith("Hetero")

    @property
    def centralized(self) -> bool:
        return self.value.endswith("Cen") and not self.value.endswith("Decen")

    @property
    def hierarchical(self) -> bool:
        return self.value.endswith("Hier")

    @property
    def argumentative(self) -> bool:
        return self.value.endswith("Arg")


@dataclass(frozen=True)
class Role:
    role_id: str
    title: str
    expertise: Expertise
    template: str
    prompt_text: str
    is_leader: bool = False
    is_argumentative: bool = False
    is_senior: bool = False

    @property
    def recommended_procedures(self) -> tuple[str, ...]:
        return EXPERTISE_PROCEDURES.get(self.expertise, ())


@dataclass(frozen=True)
class TeamConfig:
    structure: Structure
    defenders: tuple[Role, ...]
    captain: Role
    retrieval_agent: Role

    @property
    def leader(self) -> Role | None:
        return next((r for r in self.defenders if r.is_leader), None)

    def speaking_order(self) -> tuple[Role, ...]:
        """Order in which defenders speak during a discussion round."""
        if self.structure.centralized:
            return tuple(r for r in self.defenders if not r.is_leader) + tuple(r for r in self.defenders if r.is_leader)
        if self.structure.hierarchical:
            return tuple(r for r in self.defenders if r.expertise is not Expertise.BEGINNER) + tuple(
                r for r in self.defenders if r.expertise is Expertise.BEGINNER
            )
        return self.defenders

    def role(self, role_id: str) -> Role:
        for r in (*self.defenders, self.captain, self.retrieval_agent):
            if r.role_id == role_id:
                return r
        raise KeyError(role_id)


def _load(template: str, prompt_dir: Path) -> str:
    path = prompt_dir / f"{template}.txt"
    text = path.read_text(encoding="utf-8").strip()
    if not text:
        raise ValueError(f"empty prompt template {path}")
    return text


def _role(role_id: str, template: str, title: str, expertise: Expertise, prompt_dir: Path, **flags) -> Role:
    return Role(
        role_id=role_id,
        title=title,
        expertise=expertise,
        template=template,
        prompt_text=_load(template, prompt_dir),
        **flags,
    )


def _expert(expertise: Expertise, prompt_dir: Path, argumentative: bool = False, senior: bool = False) -> Role:
    template, title = _EXPERT_TEMPLATES[expertise]
    if argumentative:
        template, title = f"argumentative_{template}", f"Argumentative {title}"
    return _role(
        f"{expertise.value}_expert", template, title, expertise, prompt_dir,
        is_argumentative=argumentative, is_senior=senior,
    )


def captain_role(prompt_dir: Path = PROMPT_DIR) -> Role:
    return _role("incident_captain", "incident_captain", "Incident Captain", Expertise.GENERALIST, prompt_dir)


def retrieval_role(prompt_dir: Path = PROMPT_DIR) -> Role:
    return _role("retrieval_agent", "retrieval_agent", "Retrieval Agent", Expertise.GENERALIST, prompt_dir)


def build_team(structure: Structure | str, prompt_dir: Path = PROMPT_DIR) -> TeamConfig:
    structure = Structure.parse(structure) if isinstance(structure, str) else structure
    G = Expertise.GENERALIST
    if structure is Structure.HOMO_CEN:
        defenders = [_role("team_leader", "team_leader", "Team Leader", G, prompt_dir, is_leader=True)]
        defenders += [_role(f"team_member_{i}", "team_member", "Team Member", G, prompt_dir) for i in range(1, 5)]
    elif structure is Structure.HETERO_CEN:
        defenders = [_role("team_leader", "team_leader", "Team Leader", G, prompt_dir, is_leader=True)]
        defenders += [_expert(e, prompt_dir) for e in EXPERT_ORDER[:4]]
    elif structure is Structure.HOMO_DECEN:
        defenders = [_role(f"team_member_{i}", "team_member", "Team Member", G, prompt_dir) for i in range(1, 6)]
    elif structure is Structure.HETERO_DECEN:
        defenders = [_expert(e, prompt_dir) for e in EXPERT_ORDER]
    elif structure is Structure.HOMO_HIER:
        defenders = [
            _role(f"senior_member_{i}", "senior_team_member", "Senior Team Member", G, prompt_dir, is_senior=True)
            for i in range(1, 4)
        ]
        defenders += [_role(f"beginner_{i}", "beginner", "Junior Team Member", Expertise.BEGINNER, prompt_dir) for i in (1, 2)]
    elif structure is Structure.HETERO_HIER:
        defenders = [_expert(e, prompt_dir, senior=True) for e in EXPERT_ORDER[:3]]
        defenders += [_role(f"beginner_{i}", "beginner", "Junior Team Member", Expertise.BEGINNER, prompt_dir) for i in (1, 2)]
    elif structure is Structure.HOMO_ARG:
        defenders = [
            _role(f"team_member_{i}", "argumentative_team_member", "Argumentative Team Member", G, prompt_dir,
                  is_argumentative=True)
            for i in range(1, 6)
        ]
    elif structure is Structure.HETERO_ARG:
        defenders = [_expert(e, prompt_dir, argumentative=True) for e in EXPERT_ORDER]
    else:  # pragma: no cover
        raise ValueError(structure)
    return TeamConfig(
        structure=structure,
        defenders=tuple(defenders),
        captain=captain_role(prompt_dir),
        retrieval_agent=retrieval_role(prompt_dir),
    )


def role_prompt(role: Role, game_context: str, prompt_dir: Path = PROMPT_DIR) -> str:
    """System prompt for ``role``: role text, then the rules with the game context filled in."""
    rules = _load("rules", prompt_dir)
    text = f"You are the {role.title}.\n\n{role.prompt_text}\n\n{rules}"
    return text.replace("{game_context}", game_context.strip() or "(none yet)")
