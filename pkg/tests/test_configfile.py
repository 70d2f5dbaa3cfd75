import json

import numpy as np
import pytest

from dodecopter.configfile import (
    ParseError,
    ValidationError,
    configuration_from_dict,
    configuration_to_text,
    load_configuration,
    save_configuration,
)
from dodecopter.dynamics import assemble_vehicle
from dodecopter.fixtures import FIXTURE_NAMES, FLOWN_AND_TABLE, build_fixture, fixture_path, fixture_text, load_fixture
from dodecopter.geometry import check_no_overlap, is_valid_configuration


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_fixture_round_trip_is_byte_identical(name, tmp_path):
    shipped = fixture_path(name).read_text(encoding="utf-8")
    assert shipped == fixture_text(name)
    c = load_fixture(name)
    save_configuration(c, tmp_path / "out.json")
    assert (tmp_path / "out.json").read_text(encoding="utf-8") == shipped
    assert is_valid_configuration(c)[0]
    assert check_no_overlap(c)
    assert "reconstructed" in c.meta["note"] or "synthetic" in c.meta["note"] or "stand-in" in c.meta["note"]


def test_flown_list():
    assert len(FLOWN_AND_TABLE) == 7
    assert set(FLOWN_AND_TABLE) <= set(FIXTURE_NAMES)


def test_stand_in_is_six_dof():
    m = assemble_vehicle(build_fixture("dodeca12_6dof"))
    assert m.n == 12 and m.dof == 6
    assert "stand-in" in build_fixture("dodeca12_6dof").meta["note"]


def test_loaded_positions_are_centered():
    c = load_fixture("tetra_hexadeca")
    assert np.allclose(c.centered_positions.sum(axis=0), 0, atol=1e-12)
    assert c.n == 16 and c.module_scale == 0.3


def test_unknown_fixture():
    with pytest.raises(KeyError):
        build_fixture("octocopter")


def _doc(**module):
    m = {"pos": [0, 0, 0], "orient": 0, "spin": 1}
    m.update(module)
    return {"module_scale": 0.3, "modules": [m]}


@pytest.mark.parametrize(
    "doc,field",
    [
        (_doc(orient=25), "orient"),
        (_doc(spin=0), "spin"),
        (_doc(pos=[0, 0]), "pos"),
        (_doc(pos=[0, 0.5, 0]), "pos"),
        (_doc(color="red"), "modules[0]"),
        ({"module_scale": -1, "modules": []}, "module_scale"),
        ({"modules": []}, "modules"),
        ({"modules": [{"pos": [0, 0, 0]}], "extra": 1}, "<root>"),
        ([], "<root>"),
    ],
)
def test_parse_errors_name_the_field(doc, field):
    with pytest.raises(ParseError, match=field.replace("[", r"\[").replace("]", r"\]")):
        configuration_from_dict(doc)


def test_validation_errors():
    dup = {"modules": [{"pos": [0, 0, 0]}, {"pos": [1, 0, 0]}, {"pos": [0, 0, 0]}]}
    with pytest.raises(ValidationError, match="0 and 2"):
        configuration_from_dict(dup)
    apart = {"modules": [{"pos": [0, 0, 0]}, {"pos": [3, 3, 3]}]}
    with pytest.raises(ValidationError, match="components"):
        configuration_from_dict(apart)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "modules": [\n    {"pos": [0,0,0],}\n  ]\n}\n', encoding="utf-8")
    with pytest.raises(ParseError, match="line 3"):
        load_configuration(p)


def test_defaults_and_meta_carried(tmp_path):
    c = configuration_from_dict({"modules": [{"pos": [0, 0, 0]}], "meta": {"b": 1, "a": [2]}})
    assert c.module_scale == 1.0 and c.placements[0].spin == 1
    text = configuration_to_text(c)
    assert json.loads(text)["meta"] == {"a": [2], "b": 1}
    p = tmp_path / "c.json"
    save_configuration(c, p)
    assert configuration_to_text(load_configuration(p)) == text
