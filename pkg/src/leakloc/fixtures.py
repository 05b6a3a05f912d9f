"""Reference networks used by tests, benchmarks and the CLI.

The grid fixtures are generated from fixed seeds so that every run (and every
machine) sees the same pipes.  ``modena_like`` builds a synthetic network with
the same element counts as the Modena benchmark (268 junctions, 4 reservoirs,
317 pipes); the real file can be supplied through ``MODENA_INP``.
"""

from __future__ import annotations

import json
import math
import os
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra, minimum_spanning_tree
from scipy.spatial import Delaunay

from .hydraulics import DemandPattern
from .network import JUNCTION, RESERVOIR, Network, Node, Pipe

GRID_SEED = 20240501
MODENA_SEED = 268317
DIAMETER_CATALOGUE = (0.1, 0.125, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.5, 0.6, 0.7, 0.8)


def _junction(id_, elev, demand, xy=None):
    return Node(id_, JUNCTION, float(elev), float(demand), None, None, xy)


def _reservoir(id_, head, xy=None):
    return Node(id_, RESERVOIR, float(head), 0.0, float(head), None, xy)


def single_pipe(head=50.0, demand=0.005, elevation=0.0, length=1000.0, diameter=0.3,
                roughness=130.0) -> Network:
    """Reservoir R joined to junction J by one pipe."""
    return Network(
        (_reservoir("R", head), _junction("J", elevation, demand)),
        (Pipe("P1", "R", "J", length, diameter, roughness),),
        "single pipe",
    )


def chain(n_junctions=2, head=50.0, demands=None, lengths=None, diameters=None,
          roughness=130.0, elevation=0.0) -> Network:
    """Path R - J1 - J2 - ... fed from one end."""
    demands = [0.003] * n_junctions if demands is None else list(demands)
    lengths = [500.0] * n_junctions if lengths is None else list(lengths)
    diameters = [0.25] * n_junctions if diameters is None else list(diameters)
    nodes = [_reservoir("R", head)] + [
        _junction(f"J{i + 1}", elevation, demands[i]) for i in range(n_junctions)
    ]
    ids = [nd.id for nd in nodes]
    pipes = [
        Pipe(f"P{i + 1}", ids[i], ids[i + 1], lengths[i], diameters[i], roughness)
        for i in range(n_junctions)
    ]
    return Network(tuple(nodes), tuple(pipes), f"chain of {n_junctions}")


def twin_reservoirs(head=50.0, demand=0.004) -> Network:
    """Mirror-symmetric network: R1 - A - C - B - R2 with equal pipes."""
    nodes = (
        _reservoir("R1", head), _junction("A", 0.0, demand), _junction("C", 0.0, demand),
        _junction("B", 0.0, demand), _reservoir("R2", head),
    )
    pipes = (
        Pipe("P1", "R1", "A", 400.0, 0.2, 120.0),
        Pipe("P2", "A", "C", 300.0, 0.15, 120.0),
        Pipe("P3", "B", "C", 300.0, 0.15, 120.0),
        Pipe("P4", "R2", "B", 400.0, 0.2, 120.0),
    )
    return Network(nodes, pipes, "twin reservoirs")


def triangle(head=40.0) -> Network:
    """Three junctions in a loop fed by one reservoir (smallest looped case)."""
    nodes = (
        _reservoir("R", head), _junction("A", 2.0, 0.002), _junction("B", 1.0, 0.003),
        _junction("C", 0.0, 0.0015),
    )
    pipes = (
        Pipe("P1", "R", "A", 300.0, 0.2, 130.0),
        Pipe("P2", "A", "B", 250.0, 0.15, 110.0),
        Pipe("P3", "B", "C", 200.0, 0.1, 120.0),
        Pipe("P4", "A", "C", 350.0, 0.125, 100.0),
    )
    return Network(nodes, pipes, "triangle")


def diamond() -> Network:
    """R feeding a and b, both feeding c; unit-length pipes."""
    nodes = (
        _reservoir("R", 30.0), _junction("a", 0.0, 0.001), _junction("b", 0.0, 0.001),
        _junction("c", 0.0, 0.001),
    )
    pipes = (
        Pipe("Ra", "R", "a", 1.0, 0.1, 100.0),
        Pipe("Rb", "R", "b", 1.0, 0.1, 100.0),
        Pipe("ac", "c", "a", 1.0, 0.1, 100.0),
        Pipe("bc", "c", "b", 1.0, 0.1, 100.0),
    )
    return Network(nodes, pipes, "diamond")


def small_fixtures() -> dict[str, Network]:
    """All networks with at most three junctions."""
    return {
        "single_pipe": single_pipe(),
        "chain2": chain(2),
        "chain3": chain(3, demands=[0.002, 0.004, 0.001], lengths=[400, 250, 600],
                        diameters=[0.3, 0.2, 0.15]),
        "twin_reservoirs": twin_reservoirs(),
        "triangle": triangle(),
        "diamond": diamond(),
    }


def grid(n_side: int, seed: int = GRID_SEED, head: float = 60.0, spacing: float = 200.0,
         demand: float = 0.001, diameters=(0.1, 0.125, 0.15, 0.2)) -> Network:
    """n_side x n_side junction grid fed by one reservoir at a corner.

    Pipe lengths, diameters, roughness, elevations and demands are jittered
    from ``seed``.  Junction ``J{r}_{c}`` sits at row r, column c.
    """
    rng = np.random.default_rng(seed)
    nodes = [_reservoir("R", head, (-spacing, 0.0))]
    for r in range(n_side):
        for c in range(n_side):
            elev = rng.uniform(0.0, 6.0)
            dem = demand * rng.uniform(0.5, 1.5)
            nodes.append(_junction(f"J{r}_{c}", round(elev, 3), round(dem, 7),
                                   (c * spacing, -r * spacing)))
    pipes = [Pipe("PR", "R", "J0_0", spacing, 0.4, 130.0)]
    k = 0

    def add(a, b):
        nonlocal k
        k += 1
        length = round(spacing * rng.uniform(0.7, 1.3), 2)
        diam = float(rng.choice(diameters))
        rough = round(rng.uniform(90.0, 140.0), 1)
        pipes.append(Pipe(f"P{k}", a, b, length, diam, rough))

    for r in range(n_side):
        for c in range(n_side):
            if c + 1 < n_side:
                add(f"J{r}_{c}", f"J{r}_{c + 1}")
            if r + 1 < n_side:
                add(f"J{r}_{c}", f"J{r + 1}_{c}")
    return Network(tuple(nodes), tuple(pipes), f"{n_side}x{n_side} grid (seed {seed})")


def grid3() -> Network:
    return grid(3)


def grid5() -> Network:
    return grid(5)


GRID5_SENSOR_COUNT = 6


def grid5_sensors(net: Network | None = None) -> list[str]:
    """Reservoir plus six greedily placed junction sensors."""
    from .placement import PlacementProblem, place_sensors

    net = net or grid5()
    fixed = [net.nodes[i].id for i in net.reservoirs]
    chosen = place_sensors(PlacementProblem.build(net, count=GRID5_SENSOR_COUNT, fixed=fixed))
    return fixed + chosen


# -- demand pattern ------------------------------------------------------------------


def diurnal_pattern() -> DemandPattern:
    """Shipped 24-hour multiplier profile (mean 1)."""
    text = resources.files("leakloc.data").joinpath("diurnal_pattern.json").read_text()
    return DemandPattern(tuple(json.loads(text)["multipliers"]))


def pattern_at_hours(pattern: DemandPattern, hours) -> DemandPattern:
    return DemandPattern(tuple(pattern[h] for h in hours))


# -- Modena-sized synthetic network --------------------------------------------------


def modena_like(seed: int = MODENA_SEED) -> Network:
    """Synthetic network with Modena's element counts.

    Junctions are scattered over a 6 x 5 km area; the pipe layout is a
    minimum spanning tree of the Delaunay triangulation plus the 46 shortest
    remaining triangulation edges (loops), and four reservoirs each feed one
    junction.  Diameters are sized from the flow each pipe would carry if
    demand were routed along shortest paths to the nearest reservoir.
    """
    n_j, n_r, n_loops = 268, 4, 46
    rng = np.random.default_rng(seed)
    xy = rng.uniform((0.0, 0.0), (6000.0, 5000.0), size=(n_j, 2))
    tri = Delaunay(xy)
    edges = set()
    for simplex in tri.simplices:
        for a, b in ((0, 1), (1, 2), (0, 2)):
            u, w = sorted((int(simplex[a]), int(simplex[b])))
            edges.add((u, w))
    edges = sorted(edges)
    dist = np.array([np.hypot(*(xy[u] - xy[w])) for u, w in edges])
    graph = csr_matrix((dist, ([e[0] for e in edges], [e[1] for e in edges])), shape=(n_j, n_j))
    mst = minimum_spanning_tree(graph).tocoo()
    tree = {tuple(sorted((int(u), int(w)))) for u, w in zip(mst.row, mst.col)}
    rest = sorted((d, e) for d, e in zip(dist, edges) if e not in tree)
    links = sorted(tree) + [e for _, e in rest[:n_loops]]

    # reservoirs near the four edges of the area, each tied to its nearest junction
    anchors = np.array([(3000.0, -300.0), (6300.0, 2500.0), (3000.0, 5300.0), (-300.0, 2500.0)])
    feed = [int(np.argmin(np.hypot(*(xy - a).T))) for a in anchors]
    elev = 34.0 + 0.004 * xy[:, 0] + 0.003 * xy[:, 1] + rng.uniform(-1.5, 1.5, n_j)
    demand = rng.gamma(4.0, 1.0, n_j)
    demand *= 0.4 / demand.sum()  # ~400 l/s total

    lengths = [float(np.hypot(*(xy[u] - xy[w]))) * 1.05 for u, w in links]
    res_len = [float(np.hypot(*(xy[f] - a))) + 100.0 for f, a in zip(feed, anchors)]

    # route demand to each junction's nearest reservoir to size pipes
    n = n_j + n_r
    all_links = links + [(n_j + r, feed[r]) for r in range(n_r)]
    all_len = lengths + res_len
    g = csr_matrix((all_len, ([u for u, _ in all_links], [w for _, w in all_links])), shape=(n, n))
    d_res, pred = dijkstra(g, directed=False, indices=list(range(n_j, n)), return_predecessors=True)
    nearest = np.argmin(d_res[:, :n_j], axis=0)
    carried: dict[tuple[int, int], float] = {}
    for j in range(n_j):
        r = nearest[j]
        v = j
        while v != n_j + r:
            u = pred[r, v]
            key = tuple(sorted((int(u), int(v))))
            carried[key] = carried.get(key, 0.0) + demand[j]
            v = u
    diameters = []
    for u, w in all_links:
        q = carried.get(tuple(sorted((u, w))), 0.0) * 1.3
        need = math.sqrt(4.0 * q / (math.pi * 0.9)) if q > 0 else 0.0
        diameters.append(next((d for d in DIAMETER_CATALOGUE if d >= need), DIAMETER_CATALOGUE[-1]))

    nodes = [
        _junction(f"N{j + 1}", round(float(elev[j]), 2), round(float(demand[j]), 7),
                  (round(float(xy[j, 0]), 1), round(float(xy[j, 1]), 1)))
        for j in range(n_j)
    ]
    heads = (112.0, 108.0, 112.0, 110.0)
    nodes += [_reservoir(f"R{r + 1}", heads[r], tuple(float(c) for c in anchors[r]))
              for r in range(n_r)]
    ids = [nd.id for nd in nodes]
    pipes = [
        Pipe(f"L{k + 1}", ids[u], ids[w], round(all_len[k], 2), diameters[k],
             float(rng.choice((110.0, 120.0, 130.0))))
        for k, (u, w) in enumerate(all_links[:len(links)])
    ]
    pipes += [
        Pipe(f"S{r + 1}", ids[n_j + r], ids[feed[r]], round(res_len[r], 2),
             diameters[len(links) + r], 130.0)
        for r in range(n_r)
    ]
    # junctions first, then reservoirs: declaration order is the node index order
    return Network(tuple(nodes), tuple(pipes), f"Modena-like synthetic network (seed {seed})")


MODENA_ENV = "MODENA_INP"


def modena_path() -> Path | None:
    """Path of the real benchmark file when ``MODENA_INP`` points at one."""
    env = os.environ.get(MODENA_ENV)
    if env and Path(env).is_file():
        return Path(env)
    return None


def load_modena() -> tuple[Network, bool]:
    """Return ``(network, is_real)``: the real file if configured, else the stand-in."""
    from .inp import parse_inp

    path = modena_path()
    if path is not None:
        return parse_inp(path.read_text(encoding="utf-8", errors="replace")), True
    text = resources.files("leakloc.data").joinpath("modena_like.inp").read_text()
    return parse_inp(text), False
