"""Plain-text world files.

Grids are stored as per-column run-length spans, floats with repr (shortest
round-trip form), so write(read(path)) reproduces the file byte for byte.
"""

from __future__ import annotations

import io

import numpy as np

from .world import Container, Door, Pose2D, TargetObject, WorldSpec

FORMAT_NAME = "roomseek-world"
FORMAT_VERSION = 1


class WorldIOError(ValueError):
    pass


def _cells_to_runs(cells: tuple[tuple[int, int], ...]) -> list[tuple[int, int, int]]:
    """Pack a cell set into (ix, iy_lo, iy_hi_exclusive) column runs."""
    by_col: dict[int, list[int]] = {}
    for ix, iy in cells:
        by_col.setdefault(ix, []).append(iy)
    runs = []
    for ix in sorted(by_col):
        ys = sorted(by_col[ix])
        lo = prev = ys[0]
        for y in ys[1:]:
            if y == prev + 1:
                prev = y
                continue
            runs.append((ix, lo, prev + 1))
            lo = prev = y
        runs.append((ix, lo, prev + 1))
    return runs


def _runs_to_cells(runs: list[tuple[int, int, int]]) -> tuple[tuple[int, int], ...]:
    cells = []
    for ix, lo, hi in runs:
        for iy in range(lo, hi):
            cells.append((ix, iy))
    return tuple(cells)


def _fmt_runs(runs: list[tuple[int, int, int]]) -> str:
    flat = [str(v) for run in runs for v in run]
    return f"{len(runs)} " + " ".join(flat)


def _parse_runs(tokens: list[str], pos: int) -> tuple[list[tuple[int, int, int]], int]:
    n = int(tokens[pos])
    pos += 1
    runs = []
    for _ in range(n):
        runs.append((int(tokens[pos]), int(tokens[pos + 1]), int(tokens[pos + 2])))
        pos += 3
    return runs, pos


def _fmt_pose(p: Pose2D) -> str:
    return f"{p.x!r} {p.y!r} {p.heading!r}"


def write_world(spec: WorldSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_world(spec))


def dumps_world(spec: WorldSpec) -> str:
    out = io.StringIO()
    w, h = spec.shape
    out.write(f"{FORMAT_NAME} {FORMAT_VERSION}\n")
    out.write(f"seed {spec.seed}\n")
    out.write(f"resolution {spec.resolution!r}\n")
    out.write(f"size {w} {h}\n")
    out.write(f"spawn {_fmt_pose(spec.spawn)}\n")
    out.write(f"rooms {len(spec.rooms)}\n")
    for x0, y0, x1, y1 in spec.rooms:
        out.write(f"room {x0} {y0} {x1} {y1}\n")
    cols = []
    for ix in range(w):
        col = spec.walls[ix]
        if not col.any():
            continue
        edges = np.flatnonzero(np.diff(np.concatenate(([0], col.view(np.int8), [0]))))
        runs = [(ix, int(edges[i]), int(edges[i + 1]))
                for i in range(0, len(edges), 2)]
        cols.append((ix, runs))
    out.write(f"walls {len(cols)}\n")
    for ix, runs in cols:
        spans = " ".join(f"{lo} {hi}" for _, lo, hi in runs)
        out.write(f"wcol {ix} {len(runs)} {spans}\n")
    out.write(f"doors {len(spec.doors)}\n")
    for d in spec.doors:
        out.write(f"door {d.id} {int(d.locked)} {int(d.exterior)} "
                  f"{len(d.fronts)} "
                  + " ".join(_fmt_pose(p) for p in d.fronts)
                  + " " + _fmt_runs(_cells_to_runs(d.cells)) + "\n")
    out.write(f"containers {len(spec.containers)}\n")
    for c in spec.containers:
        out.write(f"container {c.id} {c.kind} {_fmt_pose(c.front)} "
                  f"{len(c.contents)} "
                  + (" ".join(c.contents) + " " if c.contents else "")
                  + _fmt_runs(_cells_to_runs(c.cells)) + "\n")
    out.write(f"targets {len(spec.targets)}\n")
    for t in spec.targets:
        inside = t.inside if t.inside is not None else "-"
        out.write(f"target {t.id} {t.category} {t.cell[0]} {t.cell[1]} {inside}\n")
    out.write("end\n")
    return out.getvalue()


def read_world(path: str) -> WorldSpec:
    with open(path, "r", encoding="utf-8") as f:
        return loads_world(f.read())


def loads_world(text: str) -> WorldSpec:
    lines = text.splitlines()
    if not lines:
        raise WorldIOError("empty world file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != FORMAT_NAME:
        raise WorldIOError(f"not a {FORMAT_NAME} file")
    if int(head[1]) != FORMAT_VERSION:
        raise WorldIOError(f"unsupported version {head[1]}")
    it = iter(lines[1:])

    def expect(tag: str) -> list[str]:
        line = next(it)
        tokens = line.split()
        if not tokens or tokens[0] != tag:
            raise WorldIOError(f"expected '{tag}', got '{line}'")
        return tokens[1:]

    seed = int(expect("seed")[0])
    resolution = float(expect("resolution")[0])
    w, h = (int(v) for v in expect("size"))
    sx, sy, sh = (float(v) for v in expect("spawn"))
    spawn = Pose2D(sx, sy, sh)
    n_rooms = int(expect("rooms")[0])
    rooms = []
    for _ in range(n_rooms):
        rooms.append(tuple(int(v) for v in expect("room")))
    walls = np.zeros((w, h), dtype=bool)
    n_cols = int(expect("walls")[0])
    for _ in range(n_cols):
        tk = expect("wcol")
        ix = int(tk[0])
        n_runs = int(tk[1])
        for i in range(n_runs):
            lo = int(tk[2 + 2 * i])
            hi = int(tk[3 + 2 * i])
            walls[ix, lo:hi] = True
    doors = []
    n_doors = int(expect("doors")[0])
    for _ in range(n_doors):
        tk = expect("door")
        did = tk[0]
        locked = bool(int(tk[1]))
        exterior = bool(int(tk[2]))
        n_fronts = int(tk[3])
        pos = 4
        fronts = []
        for _ in range(n_fronts):
            fronts.append(Pose2D(float(tk[pos]), float(tk[pos + 1]),
                                 float(tk[pos + 2])))
            pos += 3
        runs, pos = _parse_runs(tk, pos)
        doors.append(Door(did, _runs_to_cells(runs), tuple(fronts),
                          locked=locked, exterior=exterior))
    containers = []
    n_cont = int(expect("containers")[0])
    for _ in range(n_cont):
        tk = expect("container")
        cid = tk[0]
        kind = tk[1]
        front = Pose2D(float(tk[2]), float(tk[3]), float(tk[4]))
        n_contents = int(tk[5])
        pos = 6
        contents = tuple(tk[pos:pos + n_contents])
        pos += n_contents
        runs, pos = _parse_runs(tk, pos)
        containers.append(Container(cid, kind, _runs_to_cells(runs), front,
                                    contents=contents))
    targets = []
    n_tgt = int(expect("targets")[0])
    for _ in range(n_tgt):
        tk = expect("target")
        inside = None if tk[4] == "-" else tk[4]
        targets.append(TargetObject(tk[0], tk[1], (int(tk[2]), int(tk[3])),
                                    inside=inside))
    if next(it, "end").split() != ["end"]:
        raise WorldIOError("missing end marker")
    return WorldSpec(seed=seed, resolution=resolution, walls=walls,
                     rooms=tuple(rooms), doors=tuple(doors),
                     containers=tuple(containers), targets=tuple(targets),
                     spawn=spawn)
