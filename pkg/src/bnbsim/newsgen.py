"""Synthetic news-style incident stories for the narrative retrieval corpus."""
from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import yaml

from .cards import ATTACK_PHASES, Catalog
from .engine import scenario_from_mapping
from .gateway import ChatRequest, Gateway, GatewayError

__all__ = [
    "NEWS_TEMPLATE_PATH",
    "NewsItem",
    "fill_template",
    "gen_news",
    "load_exclusions",
    "load_template",
    "sample_combination",
]

log = logging.getLogger(__name__)

NEWS_TEMPLATE_PATH = Path(str(resources.files("bnbsim") / "data" / "news_prompt.txt"))
SYSTEM_PROMPT = "You write realistic, self-contained incident response news stories."
MAX_REJECTIONS = 10_000


@dataclass(frozen=True)
class NewsItem:
    index: int
    file: str
    attack_cards: tuple[str, ...]
    procedures: tuple[str, ...]
    established: tuple[str, ...]
    status: str  # "prompt", "story" or "failed"
    error: str | None = None


def load_template(path: str | Path = NEWS_TEMPLATE_PATH) -> str:
    text = Path(path).read_text(encoding="utf-8")
    for slot in ("{attack_cards}", "{procedure_cards}"):
        if slot not in text:
            raise ValueError(f"{path}: template lacks the {slot} slot")
    return text


def load_exclusions(path: str | Path, catalog: Catalog) -> set[tuple[str, ...]]:
    """Attack-card combinations that generated stories must avoid.

    Accepts a scenario or trajectory file (one ``attack_cards`` entry), a list
    of combinations, or a mapping with a ``combinations`` list. Each combination
    is a list of four attack cards or a phase mapping.
    """
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, Mapping) and "attack_cards" in doc:
        entries: list[Any] = [doc["attack_cards"]]
    elif isinstance(doc, Mapping) and "combinations" in doc:
        entries = list(doc["combinations"] or [])
    elif isinstance(doc, list):
        entries = doc
    else:
        raise ValueError(f"{path}: expected attack_cards, a combinations list, or a list of combinations")
    out = set()
    for i, entry in enumerate(entries):
        scenario, problems = scenario_from_mapping(catalog, {"attack_cards": entry})
        if problems:
            raise ValueError(f"{path}: combinations[{i}]: " + "; ".join(problems))
        out.add(scenario.ordered(catalog).attack_cards)
    return out


def sample_combination(
    catalog: Catalog, rng: random.Random, procedure_count: int = 6, established_count: int = 4
) -> tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]:
    """One attack card per phase, ``procedure_count`` procedures, the first
    ``established_count`` of which are marked established."""
    attack = tuple(rng.choice(catalog.by_phase(p)).id for p in ATTACK_PHASES)
    procs = tuple(c.id for c in rng.sample(catalog.procedures, procedure_count))
    return attack, procs, procs[:established_count]


def fill_template(
    template: str, catalog: Catalog, attack: Sequence[str], procedures: Sequence[str], established: Iterable[str]
) -> str:
    est = set(established)
    attack_lines = "\n".join(f"- {catalog.get(c).phase.label}: {catalog.get(c).name}" for c in attack)
    proc_lines = "\n".join(
        f"- {catalog.get(p).name} ({'Established Procedure, +3' if p in est else 'Procedure, +0'})" for p in procedures
    )
    return template.replace("{attack_cards}", attack_lines).replace("{procedure_cards}", proc_lines)


def gen_news(
    catalog: Catalog,
    count: int,
    seed: int,
    out_dir: str | Path,
    *,
    gateway: Gateway | None = None,
    dry_run: bool = False,
    exclude: set[tuple[str, ...]] | None = None,
    procedure_count: int = 6,
    story_retries: int = 2,
    template_path: str | Path = NEWS_TEMPLATE_PATH,
) -> list[NewsItem]:
    """Write ``count`` stories (or, with ``dry_run``, their prompts) plus ``manifest.json``.

    Combinations listed in ``exclude`` are rejected and redrawn, so none of
    them is ever used for a story.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if not dry_run and gateway is None:
        raise ValueError("a gateway is required unless dry_run is set")
    if not 1 <= procedure_count <= len(catalog.procedures):
        raise ValueError(f"procedure_count must be in 1..{len(catalog.procedures)}")
    template = load_template(template_path)
    exclude = exclude or set()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    width = max(3, len(str(max(count - 1, 0))))
    items: list[NewsItem] = []
    for i in range(count):
        for _ in range(MAX_REJECTIONS):
            attack, procs, est = sample_combination(catalog, rng, procedure_count, min(4, procedure_count))
            if attack not in exclude:
                break
        else:
            raise RuntimeError("exclusion list rules out nearly every attack combination")
        prompt = fill_template(template, catalog, attack, procs, est)
        if dry_run:
            name = f"prompt_{i:0{width}d}.txt"
            (out / name).write_text(prompt, encoding="utf-8")
            items.append(NewsItem(i, name, attack, procs, est, "prompt"))
            continue
        name = f"news_{i:0{width}d}.txt"
        error = None
        for attempt in range(story_retries + 1):
            try:
                story = gateway.chat(
                    ChatRequest(
                        messages=[{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": prompt}],
                        temperature=gateway.config.temperature,
                    )
                )
            except GatewayError as exc:
                error = f"{type(exc).__name__}: {exc}"
                log.warning("story %d attempt %d failed: %s", i, attempt + 1, error)
                continue
            (out / name).write_text(story.strip() + "\n", encoding="utf-8")
            items.append(NewsItem(i, name, attack, procs, est, "story"))
            break
        else:
            items.append(NewsItem(i, name, attack, procs, est, "failed", error))
    manifest = {
        "seed": seed,
        "count": count,
        "dry_run": dry_run,
        "procedure_count": procedure_count,
        "excluded_combinations": sorted(list(c) for c in exclude),
        "items": [asdict(it) for it in items],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return items
