import math
from decimal import Decimal
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crustprobe import georef, synth
from crustprobe.errors import ExtrapolationError, FormatError, ValidationError
from conftest import C, N, S


def make_track(points):
    return georef.NavTrack([georef.TrackSample(*p) for p in points])


class TestPositionAt:
    def test_knot_point_exact(self):
        track = make_track([(0.0, 1.0, 2.0, 3.0), (10.0, 11.0, 12.0, 13.0)])
        assert georef.position_at(track, 0.0) == (1.0, 2.0, 3.0)
        assert georef.position_at(track, 10.0) == (11.0, 12.0, 13.0)

    def test_linear_midpoint(self):
        track = make_track([(0.0, 0.0, 0.0, 1.0), (10.0, 1.0, 0.0, 1.0)])
        x, y, alt = georef.position_at(track, 5.0)
        assert x == pytest.approx(0.5)
        assert (y, alt) == (0.0, 1.0)

    def test_random_times_match_linear_scan_oracle(self):
        rng = np.random.default_rng(5)
        times = np.cumsum(rng.uniform(0.5, 2.0, size=20))
        pts = [(float(t), float(rng.normal()), float(rng.normal()), float(rng.uniform(1, 2)))
               for t in times]
        track = make_track(pts)

        def oracle(t):
            for a, b in zip(pts, pts[1:]):
                if a[0] <= t <= b[0]:
                    w = (t - a[0]) / (b[0] - a[0])
                    return tuple(a[k] + w * (b[k] - a[k]) for k in (1, 2, 3))
            raise AssertionError

        for t in rng.uniform(times[0], times[-1], size=50):
            got = georef.position_at(track, float(t))
            want = oracle(float(t))
            assert all(abs(g - w) < 1e-12 for g, w in zip(got, want))

    @pytest.mark.parametrize("t", [-0.1, 10.1])
    def test_out_of_range_refused(self, t):
        track = make_track([(0.0, 0.0, 0.0, 1.0), (10.0, 1.0, 0.0, 1.0)])
        with pytest.raises(ExtrapolationError):
            georef.position_at(track, t)

    def test_track_needs_two_samples(self):
        with pytest.raises(ValidationError):
            georef.position_at(make_track([(0.0, 0.0, 0.0, 1.0)]), 0.0)

    def test_track_timestamps_must_increase(self):
        track = make_track([(0.0, 0.0, 0.0, 1.0), (0.0, 1.0, 0.0, 1.0)])
        with pytest.raises(ValidationError, match="increasing"):
            georef.position_at(track, 0.0)


class TestCellOf:
    @pytest.mark.parametrize(
        "x,y,expected",
        [
            ((0.0), 0.0, (0, 0)),
            (0.10, 0.05, (1, 0)),  # boundary goes to the higher cell
            (-0.01, 0.23, (-1, 2)),
            (0.3, 0.3, (3, 3)),  # exact decimal boundary despite float rounding
        ],
    )
    def test_examples(self, x, y, expected):
        assert georef.cell_of(x, y) == expected

    @pytest.mark.parametrize("v", ["-0.01", "0.23", "0.05", "1.9", "-3.21", "0.1", "7.77"])
    def test_floor_semantics_against_integer_arithmetic(self, v):
        # exact-rational oracle on the decimal value the float literal encodes
        want = math.floor(Fraction(Decimal(v)) / Fraction(1, 10))
        assert georef.cell_of(float(v), 0.0)[0] == want

    def test_nan_rejected(self):
        with pytest.raises(ValidationError):
            georef.cell_of(float("nan"), 0.0)
        with pytest.raises(ValidationError):
            georef.cell_of(0.0, float("inf"))

    @given(
        st.floats(min_value=-1000, max_value=1000),
        st.integers(min_value=-100, max_value=100),
    )
    @settings(max_examples=300, deadline=None)
    def test_translation_by_whole_cells(self, x, k):
        ix, _ = georef.cell_of(x, 0.0)
        jx, _ = georef.cell_of(x + k * georef.CELL_EDGE_M, 0.0)
        assert jx == ix + k

    @given(st.integers(min_value=-10000, max_value=10000))
    @settings(max_examples=200, deadline=None)
    def test_cell_center_requantizes_to_same_cell(self, ix):
        center = (ix + 0.5) * georef.CELL_EDGE_M
        assert georef.cell_of(center, center)[0] == ix


class TestCoLocate:
    def _survey_track_cells(self, n_labeled=None):
        spec = synth.SceneSpec(
            transect_length_m=1.0,
            patches=(synth.Patch(0.0, 0.5, C, 0.05), synth.Patch(0.5, 1.0, S)),
            auv_altitude_m=0.1,
            samples_per_ping=256,
            seed=2,
        )
        survey, _, cells = synth.synthesize_survey(spec)
        track = make_track([(p.timestamp, p.x_m, p.y_m, p.altitude_m) for p in survey.pings])
        if n_labeled is not None:
            cells = cells[:n_labeled]
        return survey, track, cells

    def test_labeled_and_unlabeled_pings(self):
        survey, track, cells = self._survey_track_cells(n_labeled=3)
        colocation = georef.co_locate(survey.pings, track, cells)
        hit = colocation.hits[0]
        assert hit is not None and hit.label == C
        # last ping is at x ~ 0.9995, far beyond the 3 labeled cells
        assert colocation.hits[survey.pings[-1].index] is None

    def test_fully_labeled_track_has_label_fraction_one(self):
        survey, track, cells = self._survey_track_cells()
        colocation = georef.co_locate(survey.pings, track, cells)
        assert colocation.labeled_fraction() == 1.0

    def test_matches_brute_force_join(self):
        survey, track, cells = self._survey_track_cells()
        pings = survey.pings[:100]
        colocation = georef.co_locate(pings, track, cells)

        for ping in pings:
            x, y, _ = georef.position_at(track, ping.timestamp)
            expected = None
            for cell in cells:  # brute-force double loop
                if (
                    cell.ix * 0.1 <= x < (cell.ix + 1) * 0.1
                    and cell.iy * 0.1 <= y < (cell.iy + 1) * 0.1
                ):
                    expected = (cell.ix, cell.iy, cell.label)
                    break
            got = colocation.hits[ping.index]
            got_tuple = None if got is None else (got.ix, got.iy, got.label)
            assert got_tuple == expected

    def test_extrapolation_names_ping(self):
        survey, track, cells = self._survey_track_cells()
        short_track = make_track(
            [(p.timestamp, p.x_m, p.y_m, p.altitude_m) for p in survey.pings[:10]]
        )
        with pytest.raises(ExtrapolationError, match="ping 10"):
            georef.co_locate(survey.pings, short_track, cells)

    def test_duplicate_cells_rejected(self):
        survey, track, cells = self._survey_track_cells()
        with pytest.raises(ValidationError, match="duplicate"):
            georef.co_locate(survey.pings, track, cells + [cells[0]])


class TestCsvInterfaces:
    def test_track_roundtrip(self, tmp_path):
        track = make_track([(0.0, 0.1, -0.2, 1.5), (1.0, 0.2, -0.1, 1.4)])
        path = tmp_path / "nav.csv"
        georef.write_track(track, path)
        again = georef.read_track(path)
        assert again.samples == track.samples

    def test_cells_roundtrip(self, tmp_path):
        cells = [georef.GridCell(0, 0, C, "synthetic"), georef.GridCell(-3, 7, N, "visual-classifier")]
        path = tmp_path / "cells.csv"
        georef.write_cells(cells, path)
        assert georef.read_cells(path) == cells

    def test_colocation_roundtrip_keeps_labeled_hits(self, tmp_path):
        colocation = georef.CoLocation(
            {0: georef.CellHit(0, 0, C), 1: None, 2: georef.CellHit(1, 0, S)}
        )
        path = tmp_path / "colo.csv"
        georef.write_colocation(colocation, path)
        again = georef.read_colocation(path, all_ping_indices=[0, 1, 2])
        assert again.hits == colocation.hits

    def test_bad_headers_rejected(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\n")
        for reader in (georef.read_track, georef.read_cells, georef.read_colocation):
            with pytest.raises(FormatError):
                reader(path)
