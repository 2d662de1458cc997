import json

from chimera.evaluation import BiasReport, QuadrantCounts
from chimera.report import (
    RANKING_COLUMNS,
    format_bias_table,
    format_quadrant_table,
    format_ranking_table,
    quadrants_csv,
    render_text_report,
    write_report,
)


def _ranking_values():
    return {c: float(10 * i) for i, c in enumerate(RANKING_COLUMNS)}


def _bias_dict():
    values = _ranking_values()
    return {
        "theoretical": values,
        "actual": {k: v - 5.0 for k, v in values.items()},
        "bias": {k: -5.0 for k in values},
        "num_theoretical": 40,
        "num_actual": 30,
        "degenerate_actual": False,
    }


def test_ranking_table_has_all_columns():
    table = format_ranking_table(_ranking_values())
    for column in RANKING_COLUMNS:
        assert column in table


def test_bias_table_rows_signed():
    report = BiasReport(**_bias_dict())
    table = format_bias_table(report)
    assert "-5.00" in table
    assert "theoretical=40 actual=30" in table


def test_degenerate_bias_warns():
    d = _bias_dict()
    d["degenerate_actual"] = True
    table = format_bias_table(BiasReport(**d))
    assert "warning" in table


def test_quadrant_table_and_csv():
    counts = QuadrantCounts(dlf=5, df=2, lf=1, mf=3)
    table = format_quadrant_table(counts, k=5)
    assert "DLF" in table and "11" in table
    csv_text = quadrants_csv(counts)
    assert csv_text.splitlines() == ["quadrant,count", "DLF,5", "DF,2", "LF,1", "MF,3"]


def test_render_full_text_report():
    report = {
        "detection": {"precision": 0.9, "recall": 0.8, "f1": 0.847},
        "ranking": _ranking_values(),
        "bias": _bias_dict(),
        "quadrants": {"DLF": 3, "DF": 1, "LF": 0, "MF": 2, "k": 5, "total": 6},
    }
    text = render_text_report(report)
    for needle in ("Anomaly detection", "Root cause localization",
                   "Diagnostic bias", "Diagnosis quadrants"):
        assert needle in text


def test_write_report_artifacts(tmp_path):
    report = {
        "detection": {"precision": 1.0, "recall": 1.0, "f1": 1.0},
        "ranking": _ranking_values(),
        "bias": _bias_dict(),
        "quadrants": {"DLF": 3, "DF": 1, "LF": 0, "MF": 2, "k": 5, "total": 6},
    }
    history = [{"epoch": 1, "detector": 0.5, "localizer": 1.0, "disentangle": 0.1,
                "align": 0.2, "total": 2.0, "val_f1": 0.8},
               {"epoch": 2, "detector": 0.2, "localizer": 0.5, "disentangle": 0.05,
                "align": 0.1, "total": 1.0, "val_f1": 1.0}]
    paths = write_report(tmp_path, report, history=history)
    loaded = json.loads(paths["json"].read_text())
    assert loaded["quadrants"]["DLF"] == 3
    assert paths["text"].read_text().startswith("Anomaly detection")
    for key in ("fig_ranking", "fig_quadrants", "fig_bias", "fig_training"):
        assert paths[key].exists()
        assert paths[key].stat().st_size > 1000  # a real PNG, not a stub
    assert paths["quadrants_csv"].read_text().startswith("quadrant,count")
