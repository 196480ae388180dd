import math

import numpy as np
import pytest

from arscale.core.models import CSV_COLUMNS, EstimatorKind, NoiseFamily, RecordStatus, ResultRecord, ResultTable
from arscale.storage.files import (
    atomic_write_text,
    export_csv,
    export_dataset_csv,
    import_dataset_csv,
    load_blocks,
    load_dataset,
    load_model,
    read_csv,
    save_blocks,
    save_dataset,
    save_model,
)


def sample_table():
    common = dict(d=2, p=1, p_student=1, r=2, N=1, T=10, beta=10.0, gamma=4.0,
                  beta_tilde=10.0 / math.log(2.0), kappa=1.25, eta=1.0)
    raw = [
        ResultRecord(seed=0, estimator=EstimatorKind.OLS, error_frob_sq=0.1 / 3, train_loss=0.9, **common),
        ResultRecord(seed=1, estimator=EstimatorKind.OLS, status=RecordStatus.FAILED, **common),
        ResultRecord(seed=0, estimator=EstimatorKind.GROUP_NUCLEAR_PROX, lam=1e-3, step_size=1e-1,
                     error_frob_sq=0.02, train_loss=0.8, **common),
    ]
    averaged = [raw[0].model_copy(update={"seed": None, "status": RecordStatus.AVERAGED})]
    return ResultTable(raw=raw, averaged=averaged)


def test_dataset_round_trip(tmp_path, small_dataset):
    stem = save_dataset(small_dataset, tmp_path / "run")
    assert (tmp_path / "run.npy").exists() and (tmp_path / "run.json").exists()
    loaded = load_dataset(stem)
    np.testing.assert_array_equal(loaded.data, small_dataset.data)
    assert loaded.noise.family == NoiseFamily.GAUSSIAN
    assert loaded.seed == small_dataset.seed


def test_dataset_without_sidecar(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path / "run")
    (tmp_path / "run.json").unlink()
    loaded = load_dataset(tmp_path / "run.npy")
    assert loaded.noise is None
    np.testing.assert_array_equal(loaded.data, small_dataset.data)


def test_dataset_csv_long_format(tmp_path, small_dataset):
    path = export_dataset_csv(small_dataset, tmp_path / "run.csv")
    header = path.read_text().splitlines()[0]
    assert header == "n,t,i,value"
    np.testing.assert_array_equal(import_dataset_csv(path).data, small_dataset.data)


def test_model_round_trip(tmp_path, small_model):
    path = save_model(small_model, tmp_path / "model.json")
    loaded = load_model(path)
    np.testing.assert_array_equal(loaded.stacked, small_model.stacked)
    assert loaded.sigma == small_model.sigma


def test_model_file_shape_mismatch(tmp_path):
    (tmp_path / "bad.json").write_text('{"p": 2, "d": 1, "sigma": 1.0, "blocks": [[[0.5]]]}')
    with pytest.raises(ValueError):
        load_model(tmp_path / "bad.json")


def test_blocks_round_trip(tmp_path, rng):
    blocks = rng.standard_normal((3, 2, 2))
    path = save_blocks(blocks, tmp_path / "fit")
    assert path.suffix == ".npy"
    np.testing.assert_array_equal(load_blocks(path), blocks)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = atomic_write_text(tmp_path / "sub" / "out.txt", "hello")
    atomic_write_text(target, "again")
    assert target.read_text() == "again"
    assert sorted(p.name for p in target.parent.iterdir()) == ["out.txt"]


def test_results_csv_round_trip(tmp_path):
    table = sample_table()
    path = export_csv(table, tmp_path / "results.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + len(table)

    loaded = read_csv(path)
    assert len(loaded.raw) == 3 and len(loaded.averaged) == 1
    assert loaded.raw[0].error_frob_sq == 0.1 / 3
    assert loaded.raw[0].lam is None and loaded.raw[0].step_size is None
    assert loaded.raw[2].lam == 1e-3
    assert math.isnan(loaded.raw[1].error_frob_sq)
    assert loaded.averaged[0].seed is None


def test_single_record_is_one_row(tmp_path):
    table = ResultTable(raw=sample_table().raw[:1])
    assert len(export_csv(table, tmp_path / "one.csv").read_text().splitlines()) == 2


def test_empty_table_is_rejected(tmp_path):
    with pytest.raises(ValueError):
        export_csv(ResultTable(), tmp_path / "empty.csv")


def test_read_csv_missing_columns(tmp_path):
    (tmp_path / "bad.csv").write_text("d,p\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(tmp_path / "bad.csv")
