"""Reader for the gravity-fed subset of the EPANET INP format.

Only junctions, reservoirs and pipes are modelled.  Sections describing
active or storage elements are rejected as soon as they carry an entry
(EPANET itself writes empty headers for them).  Flows are converted to m3/s
and diameters from mm to m; lengths and heads are already metres in SI files.
"""

from __future__ import annotations

import logging

from .errors import DuplicateId, MalformedLine, MissingEndpoint, UnitsUnknown, UnsupportedSection
from .network import JUNCTION, RESERVOIR, Network, Node, Pipe

log = logging.getLogger(__name__)

UNSUPPORTED = {"PUMPS", "VALVES", "TANKS"}
FLOW_UNITS = {"LPS": 1e-3, "CMS": 1.0}
DIAMETER_SCALE = 1e-3  # SI files give diameters in mm


def _sections(text: str):
    """Yield (section, lineno, fields, raw) for every data line."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise MalformedLine(lineno, raw, "unterminated section header")
            section = line[1:-1].strip().upper()
            continue
        if section is None:
            raise MalformedLine(lineno, raw, "data before first section header")
        yield section, lineno, line.split(), raw


def _float(tok: str, lineno: int, raw: str, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise MalformedLine(lineno, raw, f"{what} is not a number") from None


def parse_inp(text: str) -> Network:
    title: list[str] = []
    junctions: dict[str, tuple] = {}
    reservoirs: dict[str, tuple] = {}
    pipes: list[tuple] = []
    demands: dict[str, list[tuple]] = {}
    patterns: dict[str, list[float]] = {}
    coords: dict[str, tuple[float, float]] = {}
    units = None
    headloss = "H-W"

    for section, lineno, tok, raw in _sections(text):
        if section in UNSUPPORTED:
            raise UnsupportedSection(f"line {lineno}: [{section}] entries are not supported")
        if section == "TITLE":
            title.append(raw.strip())
        elif section == "JUNCTIONS":
            if len(tok) < 2:
                raise MalformedLine(lineno, raw, "expected ID Elevation [Demand] [Pattern]")
            if tok[0] in junctions or tok[0] in reservoirs:
                raise DuplicateId(f"line {lineno}: duplicate node id {tok[0]!r}")
            elev = _float(tok[1], lineno, raw, "elevation")
            dem = _float(tok[2], lineno, raw, "demand") if len(tok) > 2 else 0.0
            pat = tok[3] if len(tok) > 3 else None
            junctions[tok[0]] = (elev, dem, pat, lineno)
        elif section == "RESERVOIRS":
            if len(tok) < 2:
                raise MalformedLine(lineno, raw, "expected ID Head [Pattern]")
            if tok[0] in junctions or tok[0] in reservoirs:
                raise DuplicateId(f"line {lineno}: duplicate node id {tok[0]!r}")
            reservoirs[tok[0]] = (_float(tok[1], lineno, raw, "head"), lineno)
        elif section == "PIPES":
            if len(tok) < 6:
                raise MalformedLine(lineno, raw, "expected ID Node1 Node2 Length Diameter Roughness")
            status = tok[7].upper() if len(tok) > 7 else "OPEN"
            if status == "CV":
                raise UnsupportedSection(f"line {lineno}: check-valve pipe {tok[0]!r} not supported")
            if status == "CLOSED":
                log.warning("line %d: closed pipe %s dropped", lineno, tok[0])
                continue
            vals = [_float(t, lineno, raw, name) for t, name in
                    zip(tok[3:6], ("length", "diameter", "roughness"))]
            pipes.append((tok[0], tok[1], tok[2], *vals, lineno, raw))
        elif section == "DEMANDS":
            if len(tok) < 2:
                raise MalformedLine(lineno, raw, "expected Junction Demand [Pattern]")
            demands.setdefault(tok[0], []).append(
                (_float(tok[1], lineno, raw, "demand"), tok[2] if len(tok) > 2 else None, lineno)
            )
        elif section == "PATTERNS":
            if len(tok) < 2:
                raise MalformedLine(lineno, raw, "expected ID Multiplier...")
            patterns.setdefault(tok[0], []).extend(
                _float(t, lineno, raw, "multiplier") for t in tok[1:]
            )
        elif section == "OPTIONS":
            key = tok[0].upper()
            if key == "UNITS":
                if len(tok) < 2:
                    raise MalformedLine(lineno, raw, "Units needs a value")
                units = tok[1].upper()
                if units not in FLOW_UNITS:
                    raise UnitsUnknown(f"line {lineno}: flow units {tok[1]!r} not supported (LPS, CMS)")
            elif key == "HEADLOSS" and len(tok) > 1:
                headloss = tok[1].upper()
        elif section == "COORDINATES":
            if len(tok) < 3:
                raise MalformedLine(lineno, raw, "expected Node X Y")
            coords[tok[0]] = (_float(tok[1], lineno, raw, "x"), _float(tok[2], lineno, raw, "y"))
        # every other section is irrelevant to a steady gravity model

    if headloss not in ("H-W", "HW"):
        raise UnsupportedSection(f"headloss formula {headloss!r} not supported (H-W only)")
    if units is None:
        log.warning("no Units directive in [OPTIONS]; assuming LPS")
        units = "LPS"
    qscale = FLOW_UNITS[units]

    entries = []
    for jid, (elev, dem, pat, lineno) in junctions.items():
        if jid in demands:
            dem = sum(d for d, _, _ in demands[jid])
            pat = demands[jid][0][1] or pat
        entries.append((lineno, Node(jid, JUNCTION, elev, dem * qscale, None, pat, coords.get(jid))))
    for rid, (head, lineno) in reservoirs.items():
        entries.append((lineno, Node(rid, RESERVOIR, head, 0.0, head, None, coords.get(rid))))
    nodes = [nd for _, nd in sorted(entries, key=lambda e: e[0])]
    unknown_dem = set(demands) - set(junctions)
    if unknown_dem:
        jid = sorted(unknown_dem)[0]
        raise MissingEndpoint(f"line {demands[jid][0][2]}: [DEMANDS] references unknown junction {jid!r}")

    known = set(junctions) | set(reservoirs)
    pipe_objs = []
    seen: set[str] = set()
    for pid, a, b, length, diam, rough, lineno, raw in pipes:
        if pid in seen:
            raise DuplicateId(f"line {lineno}: duplicate pipe id {pid!r}")
        seen.add(pid)
        for end in (a, b):
            if end not in known:
                raise MissingEndpoint(f"line {lineno}: pipe {pid!r} references unknown node {end!r}")
        try:
            pipe_objs.append(Pipe(pid, a, b, length, diam * DIAMETER_SCALE, rough))
        except ValueError as exc:
            raise MalformedLine(lineno, raw, str(exc)) from None

    return Network(tuple(nodes), tuple(pipe_objs), "\n".join(title), patterns)


def network_to_inp(net: Network) -> str:
    """Write a network as an LPS INP file (inverse of :func:`parse_inp`)."""
    out = ["[TITLE]", *(net.title.splitlines() or [""]), "", "[JUNCTIONS]",
           ";ID\tElev\tDemand\tPattern"]
    for nd in net.nodes:
        if not nd.is_reservoir:
            pat = nd.pattern or ""
            out.append(f"{nd.id}\t{nd.elevation!r}\t{nd.base_demand / 1e-3!r}\t{pat}")
    out += ["", "[RESERVOIRS]", ";ID\tHead"]
    for nd in net.nodes:
        if nd.is_reservoir:
            out.append(f"{nd.id}\t{nd.fixed_head!r}")
    out += ["", "[TANKS]", "", "[PIPES]", ";ID\tNode1\tNode2\tLength\tDiameter\tRoughness\tMinorLoss\tStatus"]
    for p in net.pipes:
        out.append(f"{p.id}\t{p.source}\t{p.sink}\t{p.length!r}\t{p.diameter / DIAMETER_SCALE!r}\t{p.roughness!r}\t0\tOpen")
    out += ["", "[PUMPS]", "", "[VALVES]", "", "[PATTERNS]"]
    for pid, mult in net.patterns.items():
        for i in range(0, len(mult), 6):
            out.append(pid + "\t" + "\t".join(repr(x) for x in mult[i:i + 6]))
    out += ["", "[OPTIONS]", "Units\tLPS", "Headloss\tH-W", "", "[COORDINATES]"]
    for nd in net.nodes:
        if nd.coordinates is not None:
            out.append(f"{nd.id}\t{nd.coordinates[0]!r}\t{nd.coordinates[1]!r}")
    out += ["", "[END]", ""]
    return "\n".join(out)
