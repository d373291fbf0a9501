"""Grid-based part layouts.

A layout tiles the generator's first spatial block with K parts: every
grid cell belongs to exactly one part, and each part owns at least one
cell. Parts are arbitrary cell sets, not rectangles, so assembly code
must scatter per-cell.

The assignment is stored as an explicit sequence of (cell, part) entries
rather than a dict so that corrupted states (a dropped or doubly-assigned
cell) are representable and can be reported by ``validate_layout``.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError

Cell = tuple[int, int]  # (row, col); row 0 is the top row, col 0 the left column

FACE_SWAP = "face_swap"
FACIAL_PARTS = "facial_parts"
CANONICAL_KINDS = (FACE_SWAP, FACIAL_PARTS)


@dataclass(frozen=True)
class PartLayout:
    """Assignment of grid cells to parts 1..num_parts.

    ``assignment`` holds ((row, col), part_id) entries. A valid layout has
    exactly one entry per grid cell; use ``validate_layout`` to check.
    """

    grid_height: int
    grid_width: int
    num_parts: int
    assignment: tuple[tuple[Cell, int], ...]
    part_names: tuple[str, ...] | None = None

    @staticmethod
    def from_grid(
        rows: Sequence[Sequence[int]],
        num_parts: int | None = None,
        part_names: Sequence[str] | None = None,
    ) -> "PartLayout":
        """Build a layout from a 2-D grid of part ids (row-major)."""
        if not rows or not rows[0]:
            raise ValidationError("layout grid must be non-empty")
        height = len(rows)
        width = len(rows[0])
        for r, row in enumerate(rows):
            if len(row) != width:
                raise ValidationError(f"ragged layout grid: row {r} has {len(row)} cells, expected {width}")
        entries = tuple(
            ((r, c), int(rows[r][c])) for r in range(height) for c in range(width)
        )
        if num_parts is None:
            num_parts = max(part for _, part in entries)
        names = tuple(part_names) if part_names is not None else None
        return PartLayout(height, width, int(num_parts), entries, names)

    def cell_to_part(self) -> dict[Cell, int]:
        """Cell -> part mapping. Requires a valid (partition) layout."""
        report = validate_layout(self)
        if not report.ok:
            raise ValidationError(f"invalid layout: {report.violations[0].message}")
        return dict(self.assignment)

    def grid(self) -> list[list[int]]:
        """Row-major grid of part ids. Requires a valid layout."""
        mapping = self.cell_to_part()
        return [
            [mapping[(r, c)] for c in range(self.grid_width)]
            for r in range(self.grid_height)
        ]

    def cell_counts(self) -> list[int]:
        """Number of cells owned by each part, index 0 = part 1."""
        counts = [0] * self.num_parts
        for (_, part) in self.assignment:
            if 1 <= part <= self.num_parts:
                counts[part - 1] += 1
        return counts

    def fingerprint(self) -> str:
        """Stable content hash used to match bundles/checkpoints to layouts."""
        digest = hashlib.sha256(format_layout(self).encode("utf-8"))
        return digest.hexdigest()[:16]


@dataclass(frozen=True)
class LayoutViolation:
    """One broken layout invariant, localized to a cell or part."""

    kind: str  # missing_cell | duplicate_cell | empty_part | bad_part_id | cell_out_of_bounds | bad_shape
    message: str
    cell: Cell | None = None
    part: int | None = None


@dataclass(frozen=True)
class LayoutReport:
    ok: bool
    violations: tuple[LayoutViolation, ...]


def validate_layout(layout: PartLayout) -> LayoutReport:
    """Check the partition invariants; violations are data, not exceptions.

    Reports, with the offending cell or part: cells assigned zero or more
    than one part, parts owning no cells, part ids outside 1..K, and cells
    outside the grid.
    """
    violations: list[LayoutViolation] = []
    if layout.grid_height < 1 or layout.grid_width < 1 or layout.num_parts < 1:
        violations.append(
            LayoutViolation(
                "bad_shape",
                f"grid {layout.grid_height}x{layout.grid_width} with {layout.num_parts} parts is not positive",
            )
        )
        return LayoutReport(False, tuple(violations))

    seen = Counter()
    owned = Counter()
    for cell, part in layout.assignment:
        r, c = cell
        if not (0 <= r < layout.grid_height and 0 <= c < layout.grid_width):
            violations.append(
                LayoutViolation(
                    "cell_out_of_bounds",
                    f"cell {cell} outside {layout.grid_height}x{layout.grid_width} grid",
                    cell=cell,
                )
            )
            continue
        if not (1 <= part <= layout.num_parts):
            violations.append(
                LayoutViolation(
                    "bad_part_id",
                    f"cell {cell} assigned part {part}, valid range is 1..{layout.num_parts}",
                    cell=cell,
                    part=part,
                )
            )
            continue
        seen[cell] += 1
        owned[part] += 1

    for r in range(layout.grid_height):
        for c in range(layout.grid_width):
            n = seen[(r, c)]
            if n == 0:
                violations.append(
                    LayoutViolation("missing_cell", f"cell {(r, c)} is unassigned", cell=(r, c))
                )
            elif n > 1:
                violations.append(
                    LayoutViolation(
                        "duplicate_cell", f"cell {(r, c)} assigned {n} times", cell=(r, c)
                    )
                )

    for part in range(1, layout.num_parts + 1):
        if owned[part] == 0:
            violations.append(
                LayoutViolation("empty_part", f"part {part} owns no cells", part=part)
            )

    return LayoutReport(not violations, tuple(violations))


def canonical_layout(kind: str) -> PartLayout:
    """The two built-in 8x8 layouts.

    ``face_swap``: part 1 ("face") is the central rows 2-6 x cols 2-5
    block (20 cells); part 2 ("everything else") is the remaining 44.

    ``facial_parts``: five parts; part 2 hairline/forehead (row 2,
    cols 2-5), part 3 eyes (row 3, cols 2-5), part 4 nose/mouth
    (rows 4-5, cols 3-4), part 5 face shape (rows 4-5 cols 2 and 5 plus
    row 6 cols 2-5), part 1 background/hair everywhere else.
    """
    if kind == FACE_SWAP:
        rows = [[2] * 8 for _ in range(8)]
        for r in range(2, 7):
            for c in range(2, 6):
                rows[r][c] = 1
        return PartLayout.from_grid(rows, num_parts=2, part_names=("face", "everything else"))
    if kind == FACIAL_PARTS:
        rows = [[1] * 8 for _ in range(8)]
        for c in range(2, 6):
            rows[2][c] = 2
            rows[3][c] = 3
            rows[6][c] = 5
        for r in (4, 5):
            rows[r][2] = 5
            rows[r][3] = 4
            rows[r][4] = 4
            rows[r][5] = 5
        names = ("background/hair", "hairline/forehead", "eyes", "nose/mouth", "face shape")
        return PartLayout.from_grid(rows, num_parts=5, part_names=names)
    raise ValidationError(f"unknown canonical layout kind {kind!r}; expected one of {CANONICAL_KINDS}")


def part_cells(layout: PartLayout, part: int) -> list[Cell]:
    """Cells of ``part`` in row-major order; fixes the scatter order of assembly."""
    if not (1 <= part <= layout.num_parts):
        raise ValidationError(f"part id {part} out of range 1..{layout.num_parts}")
    cells = sorted(cell for cell, p in layout.assignment if p == part)
    return cells


def format_layout(layout: PartLayout) -> str:
    """Serialize to the layout file format (see ``parse_layout``)."""
    lines = [
        f"grid_height {layout.grid_height}",
        f"grid_width {layout.grid_width}",
        f"num_parts {layout.num_parts}",
    ]
    if layout.part_names is not None:
        lines.append("part_names " + " ".join(name.replace(" ", "_") for name in layout.part_names))
    for row in layout.grid():
        lines.append(" ".join(str(p) for p in row))
    return "\n".join(lines) + "\n"


def parse_layout(text: str) -> PartLayout:
    """Parse the layout file format.

    Three header lines (``grid_height N``, ``grid_width N``, ``num_parts K``),
    an optional ``part_names`` line, then grid_height rows of space-separated
    part ids. Ragged rows and malformed headers are rejected with the
    offending line number.
    """
    lines = text.splitlines()
    header: dict[str, int] = {}
    part_names: tuple[str, ...] | None = None
    idx = 0
    expected = ("grid_height", "grid_width", "num_parts")
    for key in expected:
        if idx >= len(lines):
            raise ValidationError(f"line {idx + 1}: missing header field {key!r}")
        tokens = lines[idx].split()
        if len(tokens) != 2 or tokens[0] != key:
            raise ValidationError(f"line {idx + 1}: expected '{key} <int>', found {lines[idx]!r}")
        try:
            header[key] = int(tokens[1])
        except ValueError:
            raise ValidationError(f"line {idx + 1}: {key} value {tokens[1]!r} is not an integer") from None
        idx += 1

    if idx < len(lines) and lines[idx].startswith("part_names"):
        names = lines[idx].split()[1:]
        if len(names) != header["num_parts"]:
            raise ValidationError(
                f"line {idx + 1}: part_names lists {len(names)} names for {header['num_parts']} parts"
            )
        part_names = tuple(name.replace("_", " ") for name in names)
        idx += 1

    height, width = header["grid_height"], header["grid_width"]
    rows: list[list[int]] = []
    for r in range(height):
        line_no = idx + r + 1
        if idx + r >= len(lines):
            raise ValidationError(f"line {line_no}: missing grid row {r} (expected {height} rows)")
        tokens = lines[idx + r].split()
        if len(tokens) != width:
            raise ValidationError(
                f"line {line_no}: ragged row ({len(tokens)} cells, expected {width})"
            )
        try:
            rows.append([int(t) for t in tokens])
        except ValueError:
            raise ValidationError(f"line {line_no}: non-integer part id in grid row") from None

    trailing = [ln for ln in lines[idx + height:] if ln.strip()]
    if trailing:
        raise ValidationError(f"line {idx + height + 1}: unexpected trailing content {trailing[0]!r}")

    return PartLayout.from_grid(rows, num_parts=header["num_parts"], part_names=part_names)


def load_layout(path: str | Path) -> PartLayout:
    """Read a layout file; ``path`` may also name a canonical kind or be
    inline layout text (anything containing a newline)."""
    if str(path) in CANONICAL_KINDS:
        return canonical_layout(str(path))
    if "\n" in str(path):
        return parse_layout(str(path))
    file = Path(path)
    if not file.exists():
        raise ValidationError(f"layout file {file} does not exist")
    return parse_layout(file.read_text())


def save_layout(layout: PartLayout, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_layout(layout))
    return path


def render_layout(layout: PartLayout) -> str:
    """Human-readable grid rendering used by the layout-check command."""
    width = len(str(layout.num_parts))
    mapping = dict(layout.assignment)
    rows = []
    for r in range(layout.grid_height):
        cells = []
        for c in range(layout.grid_width):
            part = mapping.get((r, c))
            cells.append("." * width if part is None else str(part).rjust(width))
        rows.append(" ".join(cells))
    return "\n".join(rows)


def all_part_cells(layout: PartLayout) -> dict[int, list[Cell]]:
    """part -> row-major cells for every part."""
    return {part: part_cells(layout, part) for part in range(1, layout.num_parts + 1)}


def check_is_valid(layout: PartLayout) -> None:
    """Raise ValidationError unless the layout is a proper partition."""
    report = validate_layout(layout)
    if not report.ok:
        summary = "; ".join(v.message for v in report.violations[:3])
        raise ValidationError(f"invalid layout: {summary}")


def mirror_layout(layout: PartLayout) -> PartLayout:
    """Left-right mirrored copy (used for symmetry checks)."""
    entries = tuple(
        ((r, layout.grid_width - 1 - c), part) for (r, c), part in layout.assignment
    )
    return PartLayout(
        layout.grid_height, layout.grid_width, layout.num_parts, entries, layout.part_names
    )


def iter_cells(height: int, width: int) -> Iterable[Cell]:
    for r in range(height):
        for c in range(width):
            yield (r, c)
