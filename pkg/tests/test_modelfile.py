import copy
import json

import numpy as np
import pytest

from frgd.errors import ParseError, SchemaError, ValidationError
from frgd.modelfile import builtin_models, emit_model, load_model, model_text, parse_model, parse_model_file

from conftest import bundle


@pytest.mark.parametrize("name", builtin_models())
def test_bundled_models_parse_and_round_trip(name):
    b = load_model(name)
    again = parse_model_file(emit_model(b))
    assert emit_model(again) == emit_model(b)
    assert again.model.g.M == b.model.g.M
    for e, f in zip(b.model.g.edges, again.model.g.edges):
        assert (e.src, e.dst) == (f.src, f.dst)
        assert np.allclose(e.map.linear, f.map.linear)
        assert np.allclose(e.map.translation, f.map.translation)


def test_expressions_are_evaluated():
    m = bundle("sg").model
    top = m.vertices(0, False)
    assert np.allclose(top[2], [0.5, np.sqrt(3) / 2])


def doc(name="sg"):
    return json.loads(model_text(name))


@pytest.mark.parametrize("text", ["", "   \n", "[]", "{}"])
def test_empty_documents(text):
    with pytest.raises(ParseError):
        parse_model_file(text)


def test_syntax_error_reports_position():
    with pytest.raises(ParseError, match="line 2"):
        parse_model_file('{"name": "x",\n "states": [,]}')


def test_undeclared_state():
    d = doc("vicsek_overlap")
    d["edges"][0]["to"] = "nowhere"
    with pytest.raises(ValidationError, match="undeclared state"):
        parse_model(d)


def test_unknown_fields():
    d = doc()
    d["colour"] = "red"
    with pytest.raises(SchemaError, match="colour"):
        parse_model(d)
    d = doc()
    d["ifs"][0]["shear"] = 1
    with pytest.raises(SchemaError, match="shear"):
        parse_model(d)


def test_bad_values():
    d = doc()
    d["ifs"][0]["scale"] = "1/0"
    with pytest.raises(SchemaError):
        parse_model(d)
    d = doc()
    d["ifs"][0]["scale"] = 1.5
    with pytest.raises(ValidationError):
        parse_model(d)
    d = doc()
    d["measure"] = {"0": 0.5, "1": 0.25, "2": 0.5}
    with pytest.raises(ValidationError):
        parse_model(d)


def test_parse_does_not_mutate_input():
    d = doc()
    before = copy.deepcopy(d)
    parse_model(d)
    assert d == before


def test_missing_model():
    with pytest.raises(FileNotFoundError):
        load_model("no_such_model")
