import pytest

from leakloc import fixtures
from leakloc.errors import DuplicateId, MalformedLine, MissingEndpoint, UnitsUnknown, UnsupportedSection
from leakloc.inp import network_to_inp, parse_inp
from leakloc.network import edge_node_incidence, serialize_network_json

MINIMAL = """
[TITLE]
minimal
[JUNCTIONS]
;ID  Elev  Demand
J1   10    2.5
[RESERVOIRS]
R1   60
[PIPES]
P1  R1  J1  1000  300  130  0  Open
[OPTIONS]
Units LPS
Headloss H-W
[END]
"""


class TestParse:
    def test_minimal(self):
        net = parse_inp(MINIMAL)
        assert (net.n, net.m) == (2, 1)
        j = net.node("J1")
        assert j.base_demand == pytest.approx(2.5e-3)
        assert net.pipes[0].diameter == pytest.approx(0.3)  # mm -> m
        assert net.node("R1").fixed_head == 60.0

    def test_section_order_irrelevant(self):
        parts = MINIMAL.split("[")
        shuffled = "[" + "[".join(reversed([p for p in parts if p.strip()]))
        a, b = parse_inp(MINIMAL), parse_inp(shuffled)
        # indices follow file order, so compare by id
        assert {n.id: n for n in a.nodes} == {n.id: n for n in b.nodes}
        assert a.pipes == b.pipes

    def test_cms_units(self):
        net = parse_inp(MINIMAL.replace("Units LPS", "Units CMS"))
        assert net.node("J1").base_demand == pytest.approx(2.5)

    def test_missing_units_assumes_lps(self, caplog):
        net = parse_inp(MINIMAL.replace("Units LPS\n", ""))
        assert net.node("J1").base_demand == pytest.approx(2.5e-3)
        assert "LPS" in caplog.text

    def test_demands_section(self):
        text = MINIMAL.replace("[END]", "[DEMANDS]\nJ1  1.5\n[END]")
        assert parse_inp(text).node("J1").base_demand == pytest.approx(1.5e-3)

    def test_pumps_rejected(self):
        text = MINIMAL.replace("[END]", "[PUMPS]\nPU1 R1 J1 HEAD 1\n[END]")
        with pytest.raises(UnsupportedSection):
            parse_inp(text)

    def test_unknown_units(self):
        with pytest.raises(UnitsUnknown):
            parse_inp(MINIMAL.replace("Units LPS", "Units GPM"))

    def test_duplicate(self):
        with pytest.raises(DuplicateId):
            parse_inp(MINIMAL.replace("[RESERVOIRS]\nR1", "[RESERVOIRS]\nJ1"))

    def test_missing_endpoint(self):
        with pytest.raises(MissingEndpoint):
            parse_inp(MINIMAL.replace("P1  R1  J1", "P1  R1  J9"))

    def test_malformed_has_line_number(self):
        with pytest.raises(MalformedLine) as info:
            parse_inp(MINIMAL.replace("J1   10    2.5", "J1   ten   2.5"))
        assert info.value.lineno == 6  # MINIMAL opens with a blank line


class TestRoundTrip:
    @pytest.mark.parametrize("make", [fixtures.grid3, fixtures.twin_reservoirs, fixtures.triangle])
    def test_inp_round_trip(self, make):
        net = make()
        back = parse_inp(network_to_inp(net))
        assert_same_network(back, net)

    def test_shipped_modena_like(self):
        from importlib import resources

        text = resources.files("leakloc.data").joinpath("modena_like.inp").read_text()
        net = parse_inp(text)
        assert len(net.junctions) == 268
        assert net.m == 317
        assert len(net.reservoirs) == 4
        assert edge_node_incidence(net).shape == (317, 272)
        assert_same_network(net, fixtures.modena_like())


def assert_same_network(a, b):
    nodes_b = {n.id: n for n in b.nodes}
    assert sorted(nodes_b) == sorted(n.id for n in a.nodes)
    for n in a.nodes:
        m = nodes_b[n.id]
        assert n.kind == m.kind
        assert n.elevation == pytest.approx(m.elevation, rel=1e-12)
        assert n.base_demand == pytest.approx(m.base_demand, rel=1e-12)
    for p, q in zip(a.pipes, b.pipes):
        assert (p.id, p.source, p.sink) == (q.id, q.source, q.sink)
        assert p.length == pytest.approx(q.length, rel=1e-12)
        assert p.diameter == pytest.approx(q.diameter, rel=1e-12)
