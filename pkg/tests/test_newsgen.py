from __future__ import annotations

import json
import random

import httpx
import pytest
import yaml

from bnbsim.cards import ATTACK_PHASES
from bnbsim.gateway import Gateway, GatewayConfig, RetryPolicy
from bnbsim.newsgen import fill_template, gen_news, load_exclusions, load_template, sample_combination


def test_template_clauses():
    text = load_template()
    assert "Begin the story with a clear and relevant title" in text
    assert "Do not include any specific date or timestamp" in text


def test_sample_combination_shape(catalog):
    rng = random.Random(0)
    for _ in range(50):
        attack, procs, est = sample_combination(catalog, rng)
        assert [catalog.get(c).phase for c in attack] == list(ATTACK_PHASES)
        assert len(set(procs)) == 6 and est == procs[:4]


def test_fill_template_marks_established(catalog):
    attack = ("phish", "local_privilege_escalation", "http_as_exfil", "application_shimming")
    text = fill_template("{attack_cards}\n--\n{procedure_cards}", catalog, attack, ["isolation", "memory_analysis"], ["isolation"])
    assert "- Initial Compromise: Phish" in text
    assert "- Isolation (Established Procedure, +3)" in text
    assert "- Memory Analysis (Procedure, +0)" in text


def test_dry_run_is_deterministic(catalog, tmp_path):
    gen_news(catalog, 5, 3, tmp_path / "a", dry_run=True)
    gen_news(catalog, 5, 3, tmp_path / "b", dry_run=True)
    for name in ["manifest.json"] + [f"prompt_{i:03d}.txt" for i in range(5)]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_exclusions_are_honoured(catalog, tmp_path):
    # exclude every initial-compromise card but one; all stories must use it
    from bnbsim.cards import Phase

    ics = [c.id for c in catalog.by_phase(Phase.INITIAL_COMPROMISE)]
    rng = random.Random(1)
    combos = set()
    for _ in range(400):
        attack, _, _ = sample_combination(catalog, rng)
        if attack[0] != ics[0]:
            combos.add(attack)
    ex = tmp_path / "ex.yaml"
    ex.write_text(yaml.safe_dump({"combinations": [list(c) for c in sorted(combos)]}))
    exclude = load_exclusions(ex, catalog)
    assert exclude == combos
    items = gen_news(catalog, 30, 1, tmp_path / "out", dry_run=True, exclude=exclude)
    assert not any(it.attack_cards in exclude for it in items)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert len(manifest["excluded_combinations"]) == len(combos)


def test_exclusion_from_trajectory_file(catalog):
    from bnbsim.harness import TABLES_DIR

    ex = load_exclusions(TABLES_DIR / "northface.cfg", catalog)
    assert ex == {("credential_stuffing", "internal_password_spray", "https_as_exfil", "new_user_added")}


def test_live_generation_with_stub(catalog, tmp_path):
    seen = []

    def handler(request):
        body = json.loads(request.content)
        seen.append(body)
        if len(seen) == 2:
            return httpx.Response(500, json={"error": "boom"})
        return httpx.Response(200, json={"choices": [{"message": {"content": "Title\n\nA story."}}]})

    gw = Gateway(GatewayConfig(base_url="http://stub/v1", retry=RetryPolicy(attempts=1, base_delay=0)),
                 api_key="k", transport=httpx.MockTransport(handler))
    items = gen_news(catalog, 3, 0, tmp_path, gateway=gw)
    assert [it.status for it in items] == ["story"] * 3
    assert (tmp_path / "news_000.txt").read_text() == "Title\n\nA story.\n"
    assert seen[0]["messages"][1]["content"].startswith("Suppose we are writing")


def test_requires_gateway_unless_dry_run(catalog, tmp_path):
    with pytest.raises(ValueError):
        gen_news(catalog, 1, 0, tmp_path)
