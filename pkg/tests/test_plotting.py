import math

import pytest

from arscale.core.errors import InsufficientDataError
from arscale.core.models import EstimatorKind, RecordStatus, ResultRecord, ResultTable
from arscale.services.plotting import export_plot, render_svg


@pytest.fixture
def table():
    records = []
    for N in (1, 5):
        for T in (10, 50, 250):
            beta = float(N * T)
            records.append(ResultRecord(d=2, p=1, p_student=1, r=2, N=N, T=T, estimator=EstimatorKind.OLS,
                                        error_frob_sq=4.0 / beta, train_loss=1.0, beta=beta, gamma=4.0,
                                        beta_tilde=beta / math.log1p(math.sqrt(N)), kappa=1.0, eta=1.0,
                                        status=RecordStatus.AVERAGED))
    return ResultTable(averaged=records)


def test_render_is_deterministic(table):
    assert render_svg(table) == render_svg(table)


def test_render_is_standalone_svg(table):
    svg = render_svg(table, x="beta_tilde/gamma", series="pdN", title="rate").decode("utf-8")
    assert "<svg" in svg and svg.rstrip().endswith("</svg>")
    assert "<script" not in svg
    assert "href=\"http" not in svg


def test_render_rejects_bad_arguments(table):
    with pytest.raises(ValueError):
        render_svg(table, x="T")
    with pytest.raises(ValueError):
        render_svg(table, series="seed")


def test_render_needs_records():
    with pytest.raises(InsufficientDataError):
        render_svg(ResultTable())


def test_export_plot(tmp_path, table):
    path = export_plot(table, tmp_path / "plots" / "rate.svg", series="p_student")
    assert path.read_bytes() == render_svg(table, series="p_student")
