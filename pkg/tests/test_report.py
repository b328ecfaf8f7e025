import re
import xml.etree.ElementTree as ET

import pytest

from pqii.bench import BenchError, BenchRow, read_csv, write_csv
from pqii.report import charts_from_rows, line_chart, write_report

SVG_NS = "{http://www.w3.org/2000/svg}"


def row(case="single", m=8, ks=256, rmse=1.0, wall=1.0, n=1000, phase="total"):
    return BenchRow(case, n, 48, m, ks, 1, 1, 0, rmse, wall, phase, "2026-01-01T00:00:00+00:00")


def polylines(svg: str):
    root = ET.fromstring(svg)
    return [p.get("points").split() for p in root.iter(f"{SVG_NS}polyline")]


def test_one_series_two_points():
    charts = charts_from_rows([row(m=4, rmse=2.0), row(m=8, rmse=1.0)])
    lines = polylines(charts["rmse-m"])
    assert len(lines) == 1 and len(lines[0]) == 2
    assert "rmse-ks" not in charts


def test_svg_is_standalone():
    svg = line_chart({"single": [(1, 2), (2, 3)]}, "t <&>", "x", "y")
    root = ET.fromstring(svg)
    assert root.tag == f"{SVG_NS}svg"
    assert "href" not in svg and "<script" not in svg


def test_runtime_chart_three_series_ordering():
    rows = []
    for n, (s, p, pi) in {1000: (1.0, 0.8, 0.7), 2000: (4.0, 2.0, 1.5)}.items():
        rows += [row("single", n=n, wall=s), row("parallel_pq", n=n, wall=p), row("parallel_pq_index", n=n, wall=pi)]
    svg = charts_from_rows(rows)["runtime"]
    lines = polylines(svg)
    assert len(lines) == 3
    # larger wall time sits higher on the page (smaller y)
    last_y = [float(pts[-1].split(",")[1]) for pts in lines]
    assert last_y[0] < last_y[1] < last_y[2]


def test_runtime_by_case_when_nothing_varies():
    rows = [row("single", wall=3.0), row("parallel_pq", wall=2.0)]
    svg = charts_from_rows(rows)["runtime"]
    assert len(polylines(svg)) == 2
    assert "parallel_pq" in svg


def test_phase_rows_ignored():
    rows = [row(m=4), row(m=8), row(m=16, phase="encode")]
    lines = polylines(charts_from_rows(rows)["rmse-m"])
    assert len(lines[0]) == 2


def test_median_of_duplicate_points():
    rows = [row(m=4, rmse=r) for r in (1.0, 5.0, 2.0)] + [row(m=8, rmse=1.0)]
    svg = charts_from_rows(rows)["rmse-m"]
    assert len(polylines(svg)[0]) == 2


def test_csv_round_trip(tmp_path):
    rows = [row(m=4, rmse=0.123456789, wall=1.5), row("parallel_pq", m=8)]
    write_csv(rows, tmp_path / "b.csv")
    assert read_csv(tmp_path / "b.csv") == rows


def test_csv_append_keeps_one_header(tmp_path):
    write_csv([row()], tmp_path / "b.csv", append=True)
    write_csv([row(m=4)], tmp_path / "b.csv", append=True)
    text = (tmp_path / "b.csv").read_text()
    assert text.count("# pqii-bench v1") == 1
    assert len(read_csv(tmp_path / "b.csv")) == 2


def test_malformed_row_line_number(tmp_path):
    write_csv([row(), row()], tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    lines[3] = lines[3].replace(",8,", ",eight,", 1)
    (tmp_path / "b.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(BenchError, match="line 4"):
        read_csv(tmp_path / "b.csv")


def test_header_only(tmp_path):
    write_csv([], tmp_path / "b.csv")
    with pytest.raises(BenchError, match="no data rows"):
        read_csv(tmp_path / "b.csv")


def test_unknown_case_label(tmp_path):
    write_csv([row()], tmp_path / "b.csv")
    text = (tmp_path / "b.csv").read_text().replace("\nsingle,", "\nmulti_node,")
    (tmp_path / "b.csv").write_text(text)
    with pytest.raises(BenchError, match="line 3"):
        read_csv(tmp_path / "b.csv")


def test_write_report_paths(tmp_path):
    paths = write_report([row(m=4), row(m=8)], tmp_path / "out.svg")
    assert sorted(p.name for p in paths) == ["out-rmse-m.svg", "out-runtime.svg"]
    for p in paths:
        assert re.match(r"<svg ", p.read_text())
