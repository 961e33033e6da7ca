import xml.etree.ElementTree as ET

import pytest

from loopsim.svg import Panel, Series, render_chart

SVG_NS = "{http://www.w3.org/2000/svg}"


def _chart(n_panels=1, n_series=1, npts=5):
    panels = []
    for p in range(n_panels):
        series = tuple(
            Series(
                label=f"M = {10 * (s + 1)}",
                xs=tuple(range(1, npts + 1)),
                ys=tuple(0.5 + 0.01 * (s + 1) * i + 0.05 * p for i in range(npts)),
            )
            for s in range(n_series)
        )
        panels.append(Panel(title=f"p = 0.{5 + p}, s = 0.3", series=series))
    return render_chart(panels, y_label="R^2 (unitless)")


def _tags(svg, tag):
    return ET.fromstring(svg).iter(f"{SVG_NS}{tag}")


class TestDocumentShape:
    def test_well_formed_xml_with_svg_root(self):
        svg = _chart(n_panels=3, n_series=2)
        root = ET.fromstring(svg)
        assert root.tag == f"{SVG_NS}svg"
        assert root.get("version") == "1.1"
        assert svg.startswith('<?xml version="1.0"')

    def test_single_panel_dimensions(self):
        root = ET.fromstring(_chart(n_panels=1))
        assert root.get("width") == "380"
        assert root.get("height") == "260"

    def test_four_panels_fill_a_2x2_grid(self):
        root = ET.fromstring(_chart(n_panels=4))
        assert root.get("width") == "760"
        assert root.get("height") == "520"
        assert root.get("viewBox") == "0 0 760 520"

    def test_odd_panel_count_rounds_rows_up(self):
        root = ET.fromstring(_chart(n_panels=3))
        assert root.get("width") == "760"
        assert root.get("height") == "520"

    def test_no_external_references(self):
        svg = _chart(n_panels=2, n_series=3)
        assert "http" not in svg.replace("http://www.w3.org/2000/svg", "")
        assert "@font-face" not in svg and "<script" not in svg


class TestMarksAndLegend:
    def test_single_point_series_renders_marker_not_line(self):
        svg = render_chart(
            [Panel(title="t", series=(Series("only", (1,), (0.5,)),))],
            y_label="y",
        )
        assert len(list(_tags(svg, "circle"))) == 1
        assert len(list(_tags(svg, "polyline"))) == 0

    def test_every_point_gets_a_marker(self):
        svg = _chart(n_panels=1, n_series=2, npts=7)
        assert len(list(_tags(svg, "circle"))) == 14

    def test_series_within_a_panel_are_visually_distinct(self):
        svg = _chart(n_panels=1, n_series=3, npts=4)
        lines = [el for el in _tags(svg, "polyline")]
        strokes = {el.get("stroke") for el in lines}
        dashes = {el.get("stroke-dasharray") for el in lines}
        assert len(lines) == 3
        assert len(strokes) == 3
        assert len(dashes) == 3  # None plus two distinct patterns

    def test_legend_labels_every_series(self):
        svg = _chart(n_panels=1, n_series=3)
        texts = [el.text for el in _tags(svg, "text")]
        for label in ("M = 10", "M = 20", "M = 30"):
            assert label in texts

    def test_panel_titles_and_axis_labels_present(self):
        svg = _chart(n_panels=2)
        texts = [el.text for el in _tags(svg, "text")]
        assert "p = 0.5, s = 0.3" in texts
        assert "p = 0.6, s = 0.3" in texts
        assert "round" in texts
        assert "R^2 (unitless)" in texts


class TestEscapingAndDeterminism:
    def test_markup_in_labels_is_escaped(self):
        svg = render_chart(
            [
                Panel(
                    title="a < b & c > d",
                    series=(Series('"quoted" <label>', (1, 2), (0.0, 1.0)),),
                )
            ],
            y_label="y",
        )
        root = ET.fromstring(svg)  # would raise on raw markup
        texts = [el.text for el in root.iter(f"{SVG_NS}text")]
        assert "a < b & c > d" in texts
        assert '"quoted" <label>' in texts

    def test_byte_identical_for_identical_input(self):
        assert _chart(n_panels=3, n_series=2) == _chart(n_panels=3, n_series=2)

    def test_flat_series_do_not_divide_by_zero(self):
        svg = render_chart(
            [Panel(title="flat", series=(Series("c", (1, 2, 3), (0.7, 0.7, 0.7)),))],
            y_label="y",
        )
        ET.fromstring(svg)
        assert "nan" not in svg.lower() and "inf" not in svg.lower()

    def test_zero_flat_series_handled(self):
        svg = render_chart(
            [Panel(title="zero", series=(Series("z", (1, 1), (0.0, 0.0)),))],
            y_label="y",
        )
        ET.fromstring(svg)
        assert "nan" not in svg.lower()


class TestValidation:
    def test_empty_chart_rejected(self):
        with pytest.raises(ValueError, match="panel"):
            render_chart([], y_label="y")

    def test_empty_panel_rejected(self):
        with pytest.raises(ValueError, match="series"):
            Panel(title="t", series=())

    def test_mismatched_series_rejected(self):
        with pytest.raises(ValueError, match="equal-length"):
            Series("s", (1, 2), (1.0,))
        with pytest.raises(ValueError, match="non-empty"):
            Series("s", (), ())
