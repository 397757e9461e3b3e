"""Room geometry: rectangular lattice, exit and entrance placement, distance field.

The room is a grid of square cells (0.4 m a side by default).  One short
wall carries the exit (a single centered cell unless a wider exit is
configured), the opposite wall is the entrance.  Every cell stores its
Euclidean distance to the exit, in cell units; conversion to meters is
left to the measurement layer.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

CELL_SIZE_M = 0.4


class ConfigurationError(ValueError):
    """Raised for geometry or parameter values outside their valid range."""


class Cell(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True, eq=False)
class Room:
    """Immutable room geometry with precomputed distance field and neighborhoods.

    ``length`` counts cells along the exit-to-entrance axis (rows),
    ``width`` across it (columns).  Row 0 is the exit wall, row
    ``length - 1`` the entrance wall.  Walls are impassable and are not
    modeled as cells; neighborhoods are simply clipped at the boundary.
    """

    length: int
    width: int
    exit_cells: tuple[Cell, ...]
    entrance_cells: tuple[Cell, ...]
    static_field: np.ndarray = field(repr=False)
    # flat-index lookup tables, one entry per cell, used by the simulation core
    nbr_cells: list[tuple[int, ...]] = field(repr=False)
    nbr_diag: list[tuple[bool, ...]] = field(repr=False)

    @property
    def n_cells(self) -> int:
        return self.length * self.width

    @property
    def exit_cell(self) -> Cell:
        """Center cell of the exit (the unique exit cell at width 1)."""
        return self.exit_cells[len(self.exit_cells) // 2]

    def index(self, cell: Cell) -> int:
        return cell[0] * self.width + cell[1]

    def cell(self, idx: int) -> Cell:
        return Cell(idx // self.width, idx % self.width)

    def contains(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.length and 0 <= cell[1] < self.width

    def field_at(self, cell: Cell) -> float:
        return float(self.static_field[cell[0], cell[1]])


def build_room(length_cells: int, width_cells: int, exit_width_cells: int = 1) -> Room:
    """Build a room with a centered exit and a full entrance wall opposite it.

    The distance field of a cell is the Euclidean distance (in cell
    units) to the nearest exit cell; it is zero exactly on the exit.
    Width and exit width must be odd so the exit centers exactly.
    """
    if length_cells < 3 or width_cells < 3:
        raise ConfigurationError(
            f"room must be at least 3x3 cells, got {length_cells}x{width_cells}")
    if width_cells % 2 == 0:
        raise ConfigurationError(
            f"width_cells must be odd so the exit centers exactly, got {width_cells}")
    if exit_width_cells < 1 or exit_width_cells % 2 == 0 or exit_width_cells > width_cells:
        raise ConfigurationError(
            f"exit_width_cells must be odd, >= 1 and <= width, got {exit_width_cells}")

    mid = width_cells // 2
    half = exit_width_cells // 2
    exits = tuple(Cell(0, c) for c in range(mid - half, mid + half + 1))
    entrances = tuple(Cell(length_cells - 1, c) for c in range(width_cells))

    rows = np.arange(length_cells)[:, None]
    cols = np.arange(width_cells)[None, :]
    field_per_exit = [
        np.sqrt((rows - e.row) ** 2 + (cols - e.col) ** 2) for e in exits
    ]
    static = np.minimum.reduce(field_per_exit) if len(exits) > 1 else field_per_exit[0]

    nbr_cells: list[tuple[int, ...]] = []
    nbr_diag: list[tuple[bool, ...]] = []
    for r in range(length_cells):
        for c in range(width_cells):
            cells = []
            diags = []
            for dr in (-1, 0, 1):
                nr = r + dr
                if not 0 <= nr < length_cells:
                    continue
                for dc in (-1, 0, 1):
                    nc = c + dc
                    if not 0 <= nc < width_cells:
                        continue
                    cells.append(nr * width_cells + nc)
                    diags.append(dr != 0 and dc != 0)
            nbr_cells.append(tuple(cells))
            nbr_diag.append(tuple(diags))

    return Room(
        length=length_cells,
        width=width_cells,
        exit_cells=exits,
        entrance_cells=entrances,
        static_field=static,
        nbr_cells=nbr_cells,
        nbr_diag=nbr_diag,
    )


def neighborhood(room: Room, x: Cell) -> list[Cell]:
    """Moore neighborhood of ``x`` clipped to the room, including ``x`` itself."""
    if not room.contains(x):
        raise ValueError(f"cell {x} outside room {room.length}x{room.width}")
    return [room.cell(i) for i in room.nbr_cells[room.index(x)]]
