"""Layout invariants: canonical grids, violation localization, file format."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from puzzlegan.errors import ValidationError
from puzzlegan.layout import (
    PartLayout,
    canonical_layout,
    format_layout,
    load_layout,
    mirror_layout,
    parse_layout,
    part_cells,
    render_layout,
    save_layout,
    validate_layout,
)


def test_canonical_facial_parts_grid_and_counts():
    layout = canonical_layout("facial_parts")
    assert (layout.grid_height, layout.grid_width, layout.num_parts) == (8, 8, 5)
    assert layout.cell_counts() == [44, 4, 4, 4, 8]
    assert validate_layout(layout).ok
    grid = layout.grid()
    assert [grid[2][c] for c in range(2, 6)] == [2, 2, 2, 2]  # hairline row
    assert [grid[3][c] for c in range(2, 6)] == [3, 3, 3, 3]  # eyes row
    assert grid[4][3] == grid[5][4] == 4  # nose/mouth core
    assert grid[4][2] == grid[4][5] == grid[6][3] == 5  # face shape ring
    assert grid[0][0] == grid[7][7] == grid[3][1] == 1  # background


def test_canonical_face_swap_counts():
    layout = canonical_layout("face_swap")
    assert (layout.grid_height, layout.grid_width, layout.num_parts) == (8, 8, 2)
    assert layout.cell_counts() == [20, 44]
    assert validate_layout(layout).ok
    # part 1 is the inner face window: rows 2..6, cols 2..5
    assert part_cells(layout, 1) == [(r, c) for r in range(2, 7) for c in range(2, 6)]


def test_unknown_canonical_kind():
    with pytest.raises(ValidationError, match="unknown canonical layout"):
        canonical_layout("nope")


def _drop_cell(layout: PartLayout, cell) -> PartLayout:
    entries = tuple(e for e in layout.assignment if e[0] != cell)
    return PartLayout(layout.grid_height, layout.grid_width, layout.num_parts, entries)


def test_missing_cell_violation_localized():
    layout = _drop_cell(canonical_layout("facial_parts"), (0, 0))
    report = validate_layout(layout)
    assert not report.ok
    kinds = {(v.kind, v.cell) for v in report.violations}
    assert ("missing_cell", (0, 0)) in kinds


def test_duplicate_cell_violation_localized():
    base = canonical_layout("facial_parts")
    entries = base.assignment + (((3, 3), 1),)  # cell (3,3) now assigned twice
    layout = PartLayout(8, 8, 5, entries)
    report = validate_layout(layout)
    assert not report.ok
    assert any(v.kind == "duplicate_cell" and v.cell == (3, 3) for v in report.violations)


def test_empty_part_violation_names_part():
    base = canonical_layout("facial_parts")
    entries = tuple((cell, 1 if p == 4 else p) for cell, p in base.assignment)
    layout = PartLayout(8, 8, 5, entries)
    report = validate_layout(layout)
    assert not report.ok
    assert any(v.kind == "empty_part" and v.part == 4 for v in report.violations)


def test_bad_part_id_and_out_of_bounds():
    base = canonical_layout("face_swap")
    entries = base.assignment[:-1] + ((base.assignment[-1][0], 9),)
    report = validate_layout(PartLayout(8, 8, 2, entries))
    assert any(v.kind == "bad_part_id" for v in report.violations)

    entries = base.assignment + (((8, 0), 1),)
    report = validate_layout(PartLayout(8, 8, 2, entries))
    assert any(v.kind == "cell_out_of_bounds" and v.cell == (8, 0) for v in report.violations)


def test_format_parse_round_trip(tmp_path):
    layout = canonical_layout("facial_parts")
    text = format_layout(layout)
    again = parse_layout(text)
    assert again == layout
    path = save_layout(layout, tmp_path / "l.txt")
    assert load_layout(path) == layout


def test_parse_rejects_ragged_row_with_line_number():
    text = "grid_height 2\ngrid_width 3\nnum_parts 1\n1 1 1\n1 1\n"
    with pytest.raises(ValidationError, match="line 5.*ragged"):
        parse_layout(text)


def test_parse_rejects_trailing_content_and_bad_header():
    good = "grid_height 1\ngrid_width 2\nnum_parts 1\n1 1\n"
    with pytest.raises(ValidationError, match="line 5"):
        parse_layout(good + "junk\n")
    with pytest.raises(ValidationError, match="line 1"):
        parse_layout("grid_h 1\n")
    with pytest.raises(ValidationError, match="line 4.*non-integer"):
        parse_layout("grid_height 1\ngrid_width 2\nnum_parts 1\n1 x\n")


def test_part_names_round_trip():
    layout = canonical_layout("facial_parts")
    assert layout.part_names is not None
    parsed = parse_layout(format_layout(layout))
    assert parsed.part_names == layout.part_names


def test_load_layout_accepts_inline_text():
    layout = canonical_layout("face_swap")
    assert load_layout(format_layout(layout)) == layout


def test_render_layout_shows_part_ids():
    text = render_layout(canonical_layout("face_swap"))
    rows = text.splitlines()
    assert len(rows) == 8
    assert rows[0].split() == ["2"] * 8
    assert rows[2].split() == ["2", "2", "1", "1", "1", "1", "2", "2"]


def test_part_cells_row_major_and_bad_part():
    layout = canonical_layout("facial_parts")
    cells = part_cells(layout, 5)
    assert cells == sorted(cells)
    assert len(cells) == 8
    with pytest.raises(ValidationError, match="out of range"):
        part_cells(layout, 6)


def test_mirror_layout_preserves_validity_and_counts():
    layout = canonical_layout("facial_parts")
    mirrored = mirror_layout(layout)
    assert validate_layout(mirrored).ok
    assert mirrored.cell_counts() == layout.cell_counts()
    # canonical facial layout is left-right symmetric
    assert dict(mirrored.assignment) == dict(layout.assignment)


def test_fingerprint_tracks_content():
    a = canonical_layout("facial_parts")
    b = canonical_layout("face_swap")
    assert a.fingerprint() != b.fingerprint()
    assert a.fingerprint() == canonical_layout("facial_parts").fingerprint()


@given(
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=0, max_value=10_000),
)
def test_random_total_assignments_validate_iff_all_parts_used(h, w, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, h * w + 1))
    grid = rng.integers(1, k + 1, size=(h, w))
    layout = PartLayout.from_grid(grid.tolist(), num_parts=k)
    report = validate_layout(layout)
    used = set(grid.flatten().tolist())
    assert report.ok == (used == set(range(1, k + 1)))
    if not report.ok:
        assert all(v.kind == "empty_part" for v in report.violations)
