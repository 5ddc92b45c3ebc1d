"""Terrain-navigation grid worlds with forest and open-terrain dynamics.

Cells are numbered row-major (``state = row * width + col``). Actions are
north, east, south, west and stay. Every state-action pair has five outcome
slots: for a move in direction ``d`` they are (``d``, left of ``d``, right of
``d``, opposite of ``d``, stay); for the stay action slot 0 is the current
cell and slots 1-4 are north, east, south and west. Off-grid neighbours are
clamped onto the current cell.

Nine shared Boltzmann models drive the dynamics: one per move direction on
each terrain class plus one stay model (45 energies).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dynamics import Assignment, BoltzmannDynamics
from .errors import InvalidArgumentError, ParseError
from .mdp import ParamVector, TabularMdp

NORTH, EAST, SOUTH, WEST, STAY = range(5)
ACTION_NAMES = ("north", "east", "south", "west", "stay")
OUTCOME_NAMES = ("intended", "left", "right", "opposite", "stay")
MODEL_NAMES = tuple(
    f"{terrain}-{ACTION_NAMES[d]}" for terrain in ("open", "forest") for d in range(4)
) + ("stay",)
STAY_MODEL = 8

_OFFSETS = {NORTH: (-1, 0), EAST: (0, 1), SOUTH: (1, 0), WEST: (0, -1)}

REFERENCE_THETA_R = (6.0, 6.0)
REFERENCE_DISCOUNT = 0.99
ZERO_ENERGY = -30.0
DEFAULT_THRESHOLD = 0.5


@dataclass
class MapSpec:
    """Grayscale terrain map; ``terrain`` is True where the cell is forest."""

    gray: np.ndarray
    goal: tuple
    starts: list
    terrain: np.ndarray | None = None
    threshold: float = DEFAULT_THRESHOLD
    name: str = field(default="map")

    def __post_init__(self):
        self.gray = np.asarray(self.gray, dtype=np.float64)
        self.goal = tuple(int(x) for x in self.goal)
        self.starts = [tuple(int(x) for x in s) for s in self.starts]
        if self.terrain is None:
            self.terrain = self.gray < self.threshold
        self.terrain = np.asarray(self.terrain, dtype=bool)

    @property
    def height(self) -> int:
        return self.gray.shape[0]

    @property
    def width(self) -> int:
        return self.gray.shape[1]

    def state(self, cell) -> int:
        return int(cell[0]) * self.width + int(cell[1])

    def violations(self) -> list[str]:
        problems = []
        if self.gray.ndim != 2 or self.gray.size == 0:
            return ["gray: must be a non-empty matrix"]
        if not np.all((self.gray >= 0) & (self.gray <= 1)):
            problems.append("gray: values outside [0, 1]")
        if self.terrain.shape != self.gray.shape:
            problems.append("terrain: shape differs from gray")
        for label, cell in [("goal", self.goal)] + [("start", s) for s in self.starts]:
            if not (0 <= cell[0] < self.height and 0 <= cell[1] < self.width):
                problems.append(f"{label} {cell}: outside the {self.height}x{self.width} grid")
        if not self.starts:
            problems.append("starts: empty")
        return problems


class GridWorld(NamedTuple):
    mdp: TabularMdp
    dynamics: BoltzmannDynamics
    assignment: Assignment
    goal_state: int


def true_model_rows(forest_includes_stay: bool = True) -> np.ndarray:
    """Outcome probabilities of the nine models, shape (9, 5)."""
    rows = np.zeros((9, 5))
    rows[0:4] = [0.8, 0.1, 0.1, 0.0, 0.0]
    if forest_includes_stay:
        rows[4:8] = [0.3, 0.175, 0.175, 0.175, 0.175]
    else:
        rows[4:8] = [0.3, 0.7 / 3, 0.7 / 3, 0.7 / 3, 0.0]
    rows[STAY_MODEL] = [1.0, 0.0, 0.0, 0.0, 0.0]
    return rows


def true_energies(forest_includes_stay: bool = True) -> np.ndarray:
    rows = true_model_rows(forest_includes_stay)
    with np.errstate(divide="ignore"):
        return np.where(rows > 0, np.log(rows), ZERO_ENERGY)


def reference_params(forest_includes_stay: bool = True) -> ParamVector:
    """Reward weights (6, 6) with the true dynamics energies, tied."""
    return ParamVector(np.array(REFERENCE_THETA_R), true_energies(forest_includes_stay).ravel(), tied=True)


def grid_layout(spec: MapSpec):
    """Successor slots and model assignment, each shaped (n_states, 5, ...)."""
    H, W = spec.height, spec.width
    S = H * W
    rr, cc = np.divmod(np.arange(S), W)

    def neighbour(d):
        if d == STAY:
            return np.arange(S)
        dr, dc = _OFFSETS[d]
        r2, c2 = rr + dr, cc + dc
        inside = (r2 >= 0) & (r2 < H) & (c2 >= 0) & (c2 < W)
        return np.where(inside, r2 * W + c2, np.arange(S))

    nb = {d: neighbour(d) for d in range(5)}
    successors = np.zeros((S, 5, 5), dtype=np.intp)
    for d in range(4):
        order = (d, (d + 3) % 4, (d + 1) % 4, (d + 2) % 4, STAY)
        successors[:, d] = np.stack([nb[o] for o in order], axis=1)
    successors[:, STAY] = np.stack([nb[o] for o in (STAY, NORTH, EAST, SOUTH, WEST)], axis=1)

    forest = spec.terrain.ravel()
    model_of = np.empty((S, 5), dtype=np.intp)
    for d in range(4):
        model_of[:, d] = np.where(forest, 4 + d, d)
    model_of[:, STAY] = STAY_MODEL
    return successors, model_of


def build(spec: MapSpec, gamma: float = REFERENCE_DISCOUNT,
          forest_includes_stay: bool = True) -> GridWorld:
    """Construct the MDP, the true dynamics and the model assignment of a map."""
    problems = spec.violations()
    if problems:
        raise InvalidArgumentError("invalid map: " + "; ".join(problems))
    S = spec.height * spec.width
    successors, model_of = grid_layout(spec)
    goal = spec.state(spec.goal)
    f = np.zeros((S, 2))
    f[:, 0] = spec.gray.ravel()
    f[goal, 1] = 1.0
    features = np.repeat(f[:, None, :], 5, axis=1)
    start = np.zeros(S)
    for cell in spec.starts:
        start[spec.state(cell)] += 1.0
    start /= start.sum()
    mdp = TabularMdp(features, gamma, start, successors)
    assignment = Assignment(model_of, successors, MODEL_NAMES, OUTCOME_NAMES)
    dyn = BoltzmannDynamics(assignment, true_energies(forest_includes_stay))
    return GridWorld(mdp, dyn, assignment, goal)


# -- built-in desk-scale maps ------------------------------------------------


def _paint(gray, rng, mask, lo, hi):
    gray[mask] = rng.uniform(lo, hi, size=int(mask.sum()))


def make_train_map() -> MapSpec:
    """16x16 map: forest quadrants cut by a road cross leading to a central goal."""
    H = W = 16
    rng = np.random.default_rng(16)
    gray = rng.uniform(0.12, 0.38, size=(H, W))
    rr, cc = np.mgrid[0:H, 0:W]
    meadow = ((rr >= 2) & (rr <= 5) & (cc >= 9) & (cc <= 13)) | ((rr >= 10) & (rr <= 13) & (cc >= 2) & (cc <= 5))
    _paint(gray, rng, meadow, 0.55, 0.72)
    road = (rr == 8) | (cc == 8) | ((rr == 13) & (cc >= 8)) | ((cc == 3) & (rr <= 8))
    road &= ~((rr == 8) & (cc <= 1)) & ~((cc == 8) & (rr >= 14))
    _paint(gray, rng, road, 0.82, 0.97)
    starts = [(0, 0), (0, 15), (15, 0), (15, 15), (0, 8), (15, 8), (8, 0), (8, 15)]
    return MapSpec(gray=np.round(gray, 3), goal=(7, 8), starts=starts, name="train16")


def make_transfer_map() -> MapSpec:
    """24x24 map with a different road network and an off-centre goal."""
    H = W = 24
    rng = np.random.default_rng(24)
    gray = rng.uniform(0.1, 0.4, size=(H, W))
    rr, cc = np.mgrid[0:H, 0:W]
    meadow = ((rr - 16) ** 2 + (cc - 6) ** 2 <= 12) | ((rr >= 3) & (rr <= 7) & (cc >= 3) & (cc <= 9))
    _paint(gray, rng, meadow, 0.55, 0.72)
    road = (rr == 5) | (cc == 17) | (rr == cc) & (rr >= 5) | ((rr == 19) & (cc >= 10))
    road &= ~((rr == 5) & (cc >= 21))
    _paint(gray, rng, road, 0.82, 0.97)
    starts = [(0, 0), (23, 0), (23, 23), (0, 23), (12, 0), (23, 12), (12, 23), (0, 12)]
    return MapSpec(gray=np.round(gray, 3), goal=(9, 17), starts=starts, name="transfer24")


BUILTIN_MAPS = {"train16": make_train_map, "transfer24": make_transfer_map}


def builtin_map(name: str) -> MapSpec:
    try:
        return BUILTIN_MAPS[name]()
    except KeyError:
        raise InvalidArgumentError(f"unknown built-in map {name!r}; have {sorted(BUILTIN_MAPS)}") from None


# -- map files ---------------------------------------------------------------


def format_map(spec: MapSpec) -> str:
    lines = [
        f"# serd-map {spec.name}",
        f"width {spec.width}",
        f"height {spec.height}",
        f"goal {spec.goal[0]} {spec.goal[1]}",
        "starts " + " ".join(f"{r} {c}" for r, c in spec.starts),
        f"threshold {spec.threshold!r}",
        "gray",
    ]
    lines += [" ".join(repr(float(x)) for x in row) for row in spec.gray]
    lines.append("terrain")
    lines += ["".join("f" if x else "o" for x in row) for row in spec.terrain]
    return "\n".join(lines) + "\n"


def save_map(path, spec: MapSpec) -> None:
    Path(path).write_text(format_map(spec))


def parse_map(text: str, name: str = "map") -> MapSpec:
    """Parse the map text format.

    Header keys ``width``, ``height``, ``goal r c``, ``starts r c r c ...``
    and optional ``threshold``; then a ``gray`` section of ``height`` rows and
    an optional ``terrain`` section of ``f``/``o`` strings.
    """
    header, gray_rows, terrain_rows = {}, [], []
    section = "header"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in ("gray", "terrain"):
            section = line
            continue
        try:
            if section == "header":
                key, _, rest = line.partition(" ")
                header[key] = rest.split()
            elif section == "gray":
                gray_rows.append([float(x) for x in line.split()])
            else:
                if set(line) - {"f", "o"}:
                    raise ValueError("terrain rows use only 'f' and 'o'")
                terrain_rows.append([ch == "f" for ch in line])
        except ValueError as exc:
            raise ParseError(f"map line {lineno}: {exc}") from None
    try:
        width, height = int(header["width"][0]), int(header["height"][0])
        goal = tuple(int(x) for x in header["goal"])
        flat = [int(x) for x in header.get("starts", [])]
        threshold = float(header.get("threshold", [DEFAULT_THRESHOLD])[0])
    except (KeyError, IndexError, ValueError) as exc:
        raise ParseError(f"map header incomplete or malformed ({exc})") from None
    if len(goal) != 2 or len(flat) % 2:
        raise ParseError("goal and starts need row/column pairs")
    if len(gray_rows) != height or any(len(r) != width for r in gray_rows):
        raise ParseError(f"gray section must be {height} rows of {width} values")
    terrain = None
    if terrain_rows:
        if len(terrain_rows) != height or any(len(r) != width for r in terrain_rows):
            raise ParseError(f"terrain section must be {height} rows of {width} characters")
        terrain = np.array(terrain_rows)
    starts = list(zip(flat[0::2], flat[1::2]))
    spec = MapSpec(np.array(gray_rows), goal, starts, terrain, threshold, name)
    problems = spec.violations()
    if problems:
        raise ParseError("invalid map: " + "; ".join(problems))
    return spec


def load_map(path) -> MapSpec:
    """Load a map file, or a built-in map given as ``builtin:<name>``."""
    path = str(path)
    if path.startswith("builtin:"):
        return builtin_map(path.split(":", 1)[1])
    return parse_map(Path(path).read_text(), name=Path(path).stem)


def render_ascii(spec: MapSpec) -> str:
    """Quick text view: ``#`` forest, ``.`` open, ``=`` road, ``G`` goal, ``S`` start."""
    rows = []
    starts = set(spec.starts)
    for r in range(spec.height):
        row = ""
        for c in range(spec.width):
            if (r, c) == spec.goal:
                row += "G"
            elif (r, c) in starts:
                row += "S"
            elif spec.terrain[r, c]:
                row += "#"
            else:
                row += "=" if spec.gray[r, c] >= 0.8 else "."
        rows.append(row)
    return "\n".join(rows)
