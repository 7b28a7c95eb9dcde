import json

import numpy as np
import pytest

from dsmatch.data import (BootstrapConfig, Dataset, SchemaConfig, load_config,
                          load_dataset, numeric_columns, standardize_columns)
from dsmatch.errors import (ConfigError, DegenerateColumnError, DomainError,
                            ParseError, SchemaError)

SCHEMA = SchemaConfig("treat", "y", ("x1", "x2"))


def test_four_row_csv():
    csv = b"treat,y,x1,x2\n0,1.5,1,2\n1,2.5,3,4\n0,0.5,5,6\n1,3.0,7,8\n"
    ds = load_dataset(csv, SCHEMA)
    assert ds.n == 4 and ds.n_treated == 2
    np.testing.assert_array_equal(ds.A, [0, 1, 0, 1])
    np.testing.assert_array_equal(ds.X[:, 1], [2, 4, 6, 8])
    assert ds.covariate_names == ("x1", "x2")


def test_row_order_preserved():
    rows = "\n".join(f"{i % 2},{i},{i * 10},{-i}" for i in range(30))
    ds = load_dataset(("treat,y,x1,x2\n" + rows).encode(), SCHEMA)
    np.testing.assert_array_equal(ds.Y, np.arange(30))


def test_bad_treatment_value_names_row():
    csv = b"treat,y,x1,x2\n0,1,1,1\n2,1,1,1\n1,1,1,1\n"
    with pytest.raises(DomainError, match="row 2"):
        load_dataset(csv, SCHEMA)


def test_missing_column():
    with pytest.raises(SchemaError, match="x2"):
        load_dataset(b"treat,y,x1\n0,1,1\n1,2,2\n", SCHEMA)


def test_unparsable_cell_reports_line():
    csv = b"treat,y,x1,x2\n0,1,1,1\n1,abc,1,1\n"
    with pytest.raises(ParseError) as info:
        load_dataset(csv, SCHEMA)
    assert info.value.row == 1 and info.value.column == "y"
    assert "line 3" in str(info.value)


def test_missing_cell():
    with pytest.raises(ParseError, match="missing"):
        load_dataset(b"treat,y,x1,x2\n0,1,,1\n1,2,1,1\n", SCHEMA)


def test_dataset_is_read_only():
    ds = Dataset(np.ones((4, 1)), [0, 1, 0, 1], [1.0, 2, 3, 4])
    with pytest.raises(ValueError):
        ds.Y[0] = 5


def test_empty_arm_rejected():
    with pytest.raises(DomainError):
        Dataset(np.ones((3, 1)), [1, 1, 1], [1.0, 2, 3])


def test_standardize(rng):
    V = rng.normal(3, 5, size=(50, 4))
    Z, params = standardize_columns(V)
    assert np.abs(Z.mean(axis=0)).max() < 1e-10
    assert np.abs(Z.var(axis=0, ddof=1) - 1).max() < 1e-10
    np.testing.assert_allclose(params.invert(Z), V, atol=1e-10)
    np.testing.assert_allclose(params.apply(V), Z, atol=1e-12)


def test_standardize_constant_column():
    V = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
    with pytest.raises(DegenerateColumnError) as info:
        standardize_columns(V)
    assert info.value.column == 1


def test_numeric_columns():
    X = np.column_stack([[0, 1, 1, 0], [1.5, 2, 3, 4], [1, 1, 1, 1]])
    assert list(numeric_columns(X)) == [1]


def test_config_round_trip(tmp_path):
    d = {
        "treatment_column": "t", "outcome_column": "y", "covariate_columns": ["a", "b"],
        "estimand": ["ATT", "QTT"], "xi": [0.25, 0.5], "M": 2,
        "bootstrap": {"replicates": 50, "weight_scheme": "multinomial", "seed": 9},
        "models": [{"kind": "propensity", "feature_map": "raw"},
                   {"kind": "prognostic", "feature_map": "raw", "arm": 0}],
    }
    cfg = SchemaConfig.from_dict(d)
    assert SchemaConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    assert load_config(p).to_dict() == cfg.to_dict()
    t = tmp_path / "c.toml"
    t.write_text('treatment_column = "t"\noutcome_column = "y"\n'
                 'covariate_columns = ["a"]\n[bootstrap]\nreplicates = 7\n')
    assert load_config(t).bootstrap.replicates == 7


@pytest.mark.parametrize("bad", [
    {"estimand": ["ATX"]},
    {"xi": [1.5]},
    {"estimand": ["QTE"]},
    {"M": 0},
    {"colour": "red"},
])
def test_config_rejects(bad):
    d = {"treatment_column": "t", "outcome_column": "y", "covariate_columns": ["a"]}
    d.update(bad)
    with pytest.raises(ConfigError):
        SchemaConfig.from_dict(d)


def test_bootstrap_config_rejects():
    with pytest.raises(ConfigError):
        BootstrapConfig(replicates=1)
    with pytest.raises(ConfigError):
        BootstrapConfig(weight_scheme="poisson")


def test_unreadable_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("this is = = not toml")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
