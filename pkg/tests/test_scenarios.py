from __future__ import annotations

import json

import pytest

from conftest import DATA
from cup.gateway import ScriptedBackend
from cup.scenarios import GARDENER_SEED, adversarial_script, gardener_config, gardener_script


def test_packaged_script_matches_builder():
    assert json.loads((DATA / "gardener_script.json").read_text()) == json.loads(json.dumps(gardener_script()))


def test_packaged_config_matches_builder():
    data = json.loads((DATA / "gardener.json").read_text())
    assert data == gardener_config()
    assert data["seed"] == GARDENER_SEED


def test_scripts_load():
    ScriptedBackend(gardener_script())
    ScriptedBackend(adversarial_script())


def test_gardener_needs_enough_residents():
    with pytest.raises(ValueError):
        gardener_script(n=10)
