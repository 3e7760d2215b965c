"""Text renderings: turn trajectories and win-rate tables."""
from __future__ import annotations

import csv
import io
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

from .cards import ATTACK_PHASES, Catalog, Phase, normalize_name
from .orchestrator import TurnRecord

__all__ = [
    "TRAJECTORY_COLUMNS",
    "delta_cell",
    "parse_trajectory_csv",
    "render_sweep_table",
    "render_trajectory",
    "render_winrate_table",
    "trajectory_rows",
    "win_rate",
]

TRAJECTORY_COLUMNS = ("Turn", "Procedure", "Roll", "Modifier", "Success", "Revealed Incident", "Retrieval")
MODE_COLUMNS = (("none", "Base"), ("wiki", "RAG-Wiki"), ("news", "RAG-News"))
_TENTH = Decimal("0.1")


def win_rate(wins: int, runs: int) -> str:
    """``100 * wins / runs`` rounded half-up to one decimal, e.g. ``18, 30 -> "60.0"``."""
    if runs < 1:
        raise ValueError("runs must be positive")
    if not 0 <= wins <= runs:
        raise ValueError(f"wins must lie in [0, {runs}], got {wins}")
    value = Decimal(100 * wins) / Decimal(runs)
    return str(value.quantize(_TENTH, rounding=ROUND_HALF_UP))


def delta_cell(value: str, base: str) -> str:
    """``"60.0 (+40.0)"``. The delta is taken between the displayed (rounded) values."""
    delta = (Decimal(value) - Decimal(base)).quantize(_TENTH, rounding=ROUND_HALF_UP)
    sign = "-" if delta < 0 else "+"
    return f"{value} ({sign}{abs(delta)})"


def _yes(flag: bool) -> str:
    return "Yes" if flag else "No"


def trajectory_rows(records: Iterable[TurnRecord]) -> list[list[str]]:
    return [
        [
            str(r.turn),
            r.procedure,
            str(r.natural_roll),
            f"{r.modifier:+d}",
            _yes(r.success),
            r.revealed or "-",
            _yes(r.retrieval),
        ]
        for r in records
    ]


def render_trajectory(records: Sequence[TurnRecord], fmt: str = "markdown") -> str:
    rows = trajectory_rows(records)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown trajectory format {fmt!r}")
    lines = ["| " + " | ".join(TRAJECTORY_COLUMNS) + " |", "|" + "|".join("---" for _ in TRAJECTORY_COLUMNS) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def _flag(text: str, column: str, line: int) -> bool:
    if text == "Yes":
        return True
    if text == "No":
        return False
    raise ValueError(f"row {line}: {column} must be Yes or No, got {text!r}")


def parse_trajectory_csv(
    text: str, catalog: Catalog, attack_cards: Sequence[str] | None = None
) -> list[TurnRecord]:
    """Inverse of ``render_trajectory(..., "csv")``.

    Card labels are mapped back to ids through ``catalog``. A few attack cards
    share a printed name across phases; pass the game's ``attack_cards`` to
    disambiguate those.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != TRAJECTORY_COLUMNS:
        raise ValueError(f"expected header {','.join(TRAJECTORY_COLUMNS)}")
    records = []
    for line, row in enumerate(reader, start=2):
        if len(row) != len(TRAJECTORY_COLUMNS):
            raise ValueError(f"row {line}: expected {len(TRAJECTORY_COLUMNS)} fields, got {len(row)}")
        turn, proc, roll, mod, success, revealed, retrieval = row
        card = catalog.resolve(proc, Phase.PROCEDURE)
        revealed_id = None
        if revealed != "-":
            if attack_cards is not None:
                key = normalize_name(revealed)
                hits = [c for c in attack_cards if key in {normalize_name(s) for s in catalog.get(c).spellings()}]
                if len(hits) != 1:
                    raise ValueError(f"row {line}: {revealed!r} is not one of the game's attack cards")
                revealed_id = hits[0]
            else:
                revealed_id = catalog.resolve(revealed, ATTACK_PHASES).id
        records.append(
            TurnRecord(
                turn=int(turn),
                procedure_id=card.id,
                procedure=proc,
                natural_roll=int(roll),
                modifier=int(mod),
                success=_flag(success, "Success", line),
                revealed_id=revealed_id,
                revealed=None if revealed == "-" else revealed,
                retrieval=_flag(retrieval, "Retrieval", line),
            )
        )
    return records


def render_winrate_table(rates: Mapping[str, Mapping[str, str]], labels: Mapping[str, str] | None = None) -> str:
    """Markdown win-rate table.

    ``rates`` maps retrieval mode (``none``/``wiki``/``news``) to
    ``{structure: win_rate}``. Modes other than ``none`` carry a signed delta
    against the ``none`` column.
    """
    modes = [(m, title) for m, title in MODE_COLUMNS if m in rates]
    if not modes:
        raise ValueError("no retrieval modes to tabulate")
    structures = list(rates[modes[0][0]])
    for mode, _ in modes:
        if set(rates[mode]) != set(structures):
            raise ValueError(f"structure mismatch between modes: {modes[0][0]} vs {mode}")
    base = rates.get("none")
    lines = ["| Team | " + " | ".join(t for _, t in modes) + " |", "|---|" + "|".join("---" for _ in modes) + "|"]
    for s in structures:
        cells = []
        for mode, _ in modes:
            v = rates[mode][s]
            cells.append(v if base is None or mode == "none" else delta_cell(v, base[s]))
        name = labels.get(s, s) if labels else s
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_sweep_table(knob: str, rates: Mapping[str, Mapping[object, str]]) -> str:
    """Markdown table for a one-knob sweep: rows are knob values, columns are modes."""
    modes = [(m, title) for m, title in MODE_COLUMNS if m in rates]
    values = sorted({v for m, _ in modes for v in rates[m]}, key=lambda v: (str(type(v)), v))
    lines = [f"| {knob} | " + " | ".join(t for _, t in modes) + " |", "|---|" + "|".join("---" for _ in modes) + "|"]
    for v in values:
        lines.append(f"| {v} | " + " | ".join(rates[m].get(v, "-") for m, _ in modes) + " |")
    return "\n".join(lines) + "\n"
