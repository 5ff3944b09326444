"""Green-band (time-space) diagrams as SVG with a CSV twin.

The horizontal axis measures free transit time along a corridor, so every
trajectory band has slope one.  The vertical axis covers one cycle; a band
that runs past the cycle end continues from the bottom.  The CSV twin holds
every drawn element, and :func:`svg_from_csv` redraws the SVG from it alone.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Sequence

from .assignment import FlowAssignment
from .network import Network
from .signals import SignalSchedule

WIDTH, HEIGHT = 800.0, 500.0
MARGIN = 60.0
FLOW_TOL = 1e-9


@dataclass(frozen=True)
class Band:
    signal: str
    x: float
    start: float
    end: float
    state: str  # green | red


@dataclass(frozen=True)
class Segment:
    commodity: str
    path: int
    flow: float
    x0: float
    t0: float
    x1: float
    t1: float
    thickness: float


def _corridor(net: Network, fa: FlowAssignment | None) -> dict[str, float]:
    """Positions (cumulative transit seconds) along the busiest path."""
    pos: dict[str, float] = {}
    if fa is None:
        # signals only: order intersections as declared, one cycle-tenth apart
        for i, ix in enumerate(net.intersections):
            for v in ix.incoming_nodes + ix.outgoing_nodes:
                pos[v] = float(i)
        return pos
    paths = [p for p in fa.paths() if not p.cycle]
    if not paths:
        return pos
    ref = max(paths, key=lambda p: (fa.commodities[p.commodity].demand, p.flow, -p.commodity))
    exp = fa.exp
    dt = net.step_length
    x = 0.0
    first = exp.node_label(int(exp.tail[ref.arcs[0]]))[0]
    pos[first] = 0.0
    for a in ref.arcs:
        if exp.is_waiting(a):
            continue
        arc = net.arcs[exp.base_index[a]]
        x += arc.transit * dt
        pos.setdefault(arc.head, x)
    for ix in net.intersections:
        known = [pos[v] for v in ix.incoming_nodes + ix.outgoing_nodes if v in pos]
        if known:
            for v in ix.incoming_nodes + ix.outgoing_nodes:
                pos.setdefault(v, min(known))
    return pos


def build_diagram(net: Network, schedule: SignalSchedule, fa: FlowAssignment | None = None):
    """Bands and trajectory segments of a green-band diagram."""
    gamma = net.cycle_time
    dt = net.step_length
    if fa is None:
        warnings.warn("no path flows given: drawing signal bands only")
    pos = _corridor(net, fa)
    bands: list[Band] = []
    for ix in net.intersections:
        xs = [pos[v] for v in ix.incoming_nodes if v in pos]
        if not xs:
            continue
        x = min(xs)
        for g in ix.group_ids:
            if g not in schedule.groups:
                continue
            st = schedule.status(g)
            k = len(st)
            t = 0
            while t < k:
                u = t
                while u < k and st[u] == st[t]:
                    u += 1
                bands.append(Band(f"{ix.id}{g}" if not g.startswith(ix.id) else g, x, t * dt, u * dt,
                                  "green" if st[t] else "red"))
                t = u
    segs: list[Segment] = []
    if fa is not None:
        exp = fa.exp
        for i, p in enumerate(fa.paths()):
            if p.cycle or p.flow <= FLOW_TOL:
                continue
            c = fa.commodities[p.commodity]
            name = c.id or f"{c.origin}->{c.destination}"
            t = int(exp.layer[p.arcs[0]]) * dt
            for a in p.arcs:
                if exp.is_waiting(a):
                    v = net.nodes[exp.base_index[a]]
                    if v in pos:
                        segs.extend(_wrap(name, i, p.flow, pos[v], t, pos[v], t + dt, gamma, dt))
                    t += dt
                    continue
                arc = net.arcs[exp.base_index[a]]
                dur = arc.transit * dt
                if arc.tail in pos and arc.head in pos and dur > 0:
                    segs.extend(_wrap(name, i, p.flow, pos[arc.tail], t, pos[arc.head], t + dur, gamma, dt))
                t += dur
    return bands, segs


def _wrap(name, i, flow, x0, t0, x1, t1, gamma, dt) -> list[Segment]:
    shift = (t0 // gamma) * gamma
    t0 -= shift
    t1 -= shift
    if t1 <= gamma + 1e-12:
        return [Segment(name, i, flow, x0, t0, x1, t1, dt)]
    frac = (gamma - t0) / (t1 - t0)
    xm = x0 + frac * (x1 - x0)
    return [Segment(name, i, flow, x0, t0, xm, gamma, dt)] + _wrap(name, i, flow, xm, gamma, x1, t1, gamma, dt)


def diagram_rows(gamma: float, bands: Sequence[Band], segs: Sequence[Segment]) -> list[list[str]]:
    rows = [["kind", "label", "index", "flow", "x0", "t0", "x1", "t1", "state_or_thickness"],
            ["meta", "cycle", "", "", "", "0", "", f"{gamma:.6g}", ""]]
    for b in bands:
        rows.append(["band", b.signal, "", "", f"{b.x:.6g}", f"{b.start:.6g}", f"{b.x:.6g}", f"{b.end:.6g}", b.state])
    for s in segs:
        rows.append(["traj", s.commodity, str(s.path), f"{s.flow:.6g}", f"{s.x0:.6g}", f"{s.t0:.6g}",
                     f"{s.x1:.6g}", f"{s.t1:.6g}", f"{s.thickness:.6g}"])
    return rows


_PALETTE = ["#e07b00", "#7b3fa0", "#1f66c2", "#2a9d4b", "#c2371f", "#6b6b6b"]


def render_svg(rows: Sequence[Sequence[str]]) -> str:
    gamma = float(next(r for r in rows if r[0] == "meta")[7])
    bands = [r for r in rows if r[0] == "band"]
    trajs = [r for r in rows if r[0] == "traj"]
    xs = [float(r[4]) for r in bands] + [float(r[c]) for r in trajs for c in (4, 6)]
    xmax = max(xs + [1.0])
    sx = (WIDTH - 2 * MARGIN) / xmax
    sy = (HEIGHT - 2 * MARGIN) / gamma

    def X(x):
        return MARGIN + float(x) * sx

    def Y(t):
        return HEIGHT - MARGIN - float(t) * sy

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0f}" height="{HEIGHT:.0f}" '
           f'viewBox="0 0 {WIDTH:.0f} {HEIGHT:.0f}">',
           f'<rect x="0" y="0" width="{WIDTH:.0f}" height="{HEIGHT:.0f}" fill="white"/>',
           f'<line x1="{MARGIN:.3f}" y1="{Y(0):.3f}" x2="{WIDTH - MARGIN:.3f}" y2="{Y(0):.3f}" stroke="black"/>',
           f'<line x1="{MARGIN:.3f}" y1="{Y(gamma):.3f}" x2="{WIDTH - MARGIN:.3f}" y2="{Y(gamma):.3f}" '
           f'stroke="black" stroke-dasharray="4 3"/>',
           f'<text x="{MARGIN - 8:.3f}" y="{Y(gamma):.3f}" text-anchor="end" font-size="11">{gamma:g} s</text>',
           f'<text x="{MARGIN - 8:.3f}" y="{Y(0):.3f}" text-anchor="end" font-size="11">0 s</text>']
    names = list(dict.fromkeys(r[1] for r in trajs))
    for r in trajs:
        color = _PALETTE[names.index(r[1]) % len(_PALETTE)]
        x0, t0, x1, t1, th = (float(v) for v in (r[4], r[5], r[6], r[7], r[8]))
        pts = [(X(x0), Y(t0)), (X(x1), Y(t1)), (X(x1), Y(min(t1 + th, gamma))), (X(x0), Y(min(t0 + th, gamma)))]
        op = min(0.85, 0.25 + 0.6 * float(r[3]))
        out.append('<polygon points="' + " ".join(f"{a:.3f},{b:.3f}" for a, b in pts)
                   + f'" fill="{color}" fill-opacity="{op:.3f}" stroke="none"/>')
        if abs(t1 - gamma) <= 1e-9:
            # wrap marker: the trajectory continues from the bottom of the cycle
            out.append(f'<line x1="{X(x1):.3f}" y1="{Y(gamma):.3f}" x2="{X(x1):.3f}" y2="{Y(0):.3f}" '
                       f'stroke="{color}" stroke-width="0.6" stroke-dasharray="2 3"/>')
    labels: dict[tuple[str, str], None] = {}
    for i, r in enumerate(bands):
        color = "#2a9d4b" if r[8] == "green" else "#c2371f"
        off = list(dict.fromkeys(b[1] for b in bands if b[4] == r[4])).index(r[1]) * 5.0
        x = X(r[4]) + off
        out.append(f'<line x1="{x:.3f}" y1="{Y(r[5]):.3f}" x2="{x:.3f}" y2="{Y(r[7]):.3f}" '
                   f'stroke="{color}" stroke-width="4"/>')
        labels[(r[1], f"{x:.3f}")] = None
    for (name, x) in labels:
        out.append(f'<text x="{x}" y="{HEIGHT - MARGIN + 16:.3f}" text-anchor="middle" font-size="10">{name}</text>')
    for i, n in enumerate(names):
        color = _PALETTE[i % len(_PALETTE)]
        out.append(f'<text x="{WIDTH - MARGIN:.3f}" y="{20 + 14 * i:.3f}" text-anchor="end" font-size="11" '
                   f'fill="{color}">{n}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_greenband(net: Network, schedule: SignalSchedule, fa: FlowAssignment | None, path) -> tuple[str, str]:
    """Write ``path`` (SVG) and ``path`` with a ``.csv`` suffix; returns both names."""
    bands, segs = build_diagram(net, schedule, fa)
    rows = diagram_rows(net.cycle_time, bands, segs)
    path = str(path)
    csv_path = (path[:-4] if path.endswith(".svg") else path) + ".csv"
    with open(csv_path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    with open(path, "w") as fh:
        fh.write(render_svg(rows))
    return path, csv_path


def svg_from_csv(csv_path) -> str:
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    return render_svg(rows)
