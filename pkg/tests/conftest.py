from __future__ import annotations

from pathlib import Path

import pytest

from ontodesk.config import load_scenario
from ontodesk.dsl import parse_template
from ontodesk.kbfile import load_ontology

REPO_ROOT = Path(__file__).resolve().parents[1]
CASE_STUDY = REPO_ROOT / "scenarios" / "case-study"


@pytest.fixture(scope="session")
def case_dir() -> Path:
    return CASE_STUDY


@pytest.fixture()
def case_kb():
    return load_ontology((CASE_STUDY / "schema.kb").read_text())


@pytest.fixture()
def case_template(case_kb):
    return parse_template(
        (CASE_STUDY / "templates" / "general_finding.brt").read_text(), case_kb
    )


@pytest.fixture()
def promotion_rule_text() -> str:
    return (CASE_STUDY / "rules" / "new_phone_promotion.brl").read_text()


@pytest.fixture()
def case_config():
    return load_scenario(CASE_STUDY / "scenario.yaml")
