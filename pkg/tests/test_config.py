from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grazing_optics.config import PARABOLA_SCENARIO, dump_scenario, load_scenario, parse_scenario
from grazing_optics.errors import ConfigError


def test_parse_parabola():
    sc = parse_scenario(PARABOLA_SCENARIO)
    assert sc["obstacle"]["family"] == "Poly2D"
    assert sc.eps == (0.1, 0.05, 0.025)
    ob = sc.obstacle()
    assert ob.dim == 2 and ob.r == 2.0
    assert float(ob.F([[0.5]])[0]) == pytest.approx(0.75)


def test_round_trip_and_digest():
    sc = parse_scenario(PARABOLA_SCENARIO)
    again = parse_scenario(dump_scenario(sc))
    assert again == sc
    assert again.digest() == sc.digest()


def test_load_file(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text(PARABOLA_SCENARIO)
    assert load_scenario(p) == parse_scenario(PARABOLA_SCENARIO)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1e-3, 10, allow_nan=False), min_size=1, max_size=4, unique=True),
       st.floats(0.1, 5), st.integers(0, 2 ** 31), st.sampled_from(["zero", "sin_u", "sin_sum"]))
def test_round_trip_property(eps, T, seed, kind):
    eps = sorted(eps, reverse=True)
    text = (f"[scenario]\nseed = {seed}\n[obstacle]\nfamily = IsoPower\nk = 2\ndim = 3\n"
            f"[incidence]\ntheta = 0.6, 0.8\n[asymptotics]\nT = {T!r}\neps = {', '.join(map(repr, eps))}\n"
            f"[source]\nkind = {kind}\nkappa = 0.1\n")
    sc = parse_scenario(text)
    assert sc.seed == seed
    assert sc.eps == tuple(eps)
    assert parse_scenario(dump_scenario(sc)) == sc


@pytest.mark.parametrize("text,line,column,fragment", [
    ("[scenario]\nname = x\n", 1, 1, "missing section [obstacle]"),
    ("[obstacle]\nfamily = Poly2D\nr = abc\n", 3, 5, "bad float"),
    ("[obstacle]\nfamily = Poly2D\nbogus = 1\n", 3, 1, "unknown key"),
    ("[obstacle]\nfamily = Poly2D\n[extra]\n", 3, 1, "unknown section"),
    ("[obstacle]\nfamily = Blob\n", 2, 10, "unknown obstacle family"),
    ("[obstacle]\nfamily = Poly2D\n[incidence]\ntheta = 1, 0\n", 4, 9, "theta needs 1"),
    ("[obstacle]\nfamily = Poly2D\n[asymptotics]\neps = 0.1, 0.2\n", 4, 7, "strictly decreasing"),
    ("[obstacle]\nfamily = Poly2D\n[source]\nkind = cubic\n", 4, 8, "unknown source kind"),
    ("[obstacle]\nfamily = Poly2D\nr = 1\nr = 2\n", 4, 1, "duplicate key"),
])
def test_errors_carry_position(text, line, column, fragment):
    with pytest.raises(ConfigError) as info:
        parse_scenario(text)
    assert info.value.line == line
    assert info.value.column == column
    assert fragment in str(info.value)
