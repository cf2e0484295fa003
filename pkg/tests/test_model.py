import json

import numpy as np
import pytest

from vendingrd.model import (
    ErasureParams,
    ProblemSpec,
    SpecFormatError,
    binary_erasure_spec,
    load_spec,
    save_spec,
    spec_from_document,
    spec_to_document,
    with_node3_erasure_metric,
)
from vendingrd.probability import entropy


def test_erasure_source_marginals():
    spec = binary_erasure_spec(ErasureParams(0.2))
    pz = spec.source.table.sum(axis=0)
    assert pz == pytest.approx([0.4, 0.4, 0.2], abs=1e-15)
    px = spec.source.table.sum(axis=1)
    assert px == pytest.approx([0.5, 0.5], abs=1e-15)
    assert entropy(spec.source, ["z"]) == pytest.approx(1.5219280948873623, abs=1e-12)
    assert spec.lambda_max == 1.0


def test_erasure_params_domain():
    with pytest.raises(ValueError):
        ErasureParams(-0.01)
    with pytest.raises(ValueError):
        ErasureParams(1.2)


def test_vending_machine_reveals_x_only_under_action_one():
    spec = binary_erasure_spec(0.3)
    a = spec.a_alpha.index("1")
    for xi, xsym in enumerate(spec.x_alpha.symbols):
        for zi in range(3):
            assert spec.vending.table[a, xi, zi, spec.y_alpha.index(xsym)] == 1.0
    off = spec.a_alpha.index("0")
    assert np.all(spec.vending.table[off, :, :, spec.y_alpha.index("phi")] == 1.0)


def test_metrics_are_hamming_on_the_right_arguments():
    spec = binary_erasure_spec(0.2)
    assert spec.d1[0, 1, 2, 0] == 0.0 and spec.d1[0, 1, 2, 1] == 1.0
    ze = spec.z_alpha.index("e")
    assert spec.d2[0, 0, ze, spec.xhat2_alpha.index("e")] == 0.0
    assert spec.d2[0, 0, ze, spec.xhat2_alpha.index("0")] == 1.0


def test_node3_metric_encodes_erasure_indicator():
    spec = with_node3_erasure_metric(binary_erasure_spec(0.2))
    assert spec.mode == "heegard-berger"
    d3 = spec.d3
    ze = spec.z_alpha.index("e")
    z0 = spec.z_alpha.index("0")
    k0, k1, kstar = (spec.xhat3_alpha.index(s) for s in ("0", "1", "*"))
    assert d3[0, 0, ze, k1] == 0.0
    assert d3[0, 0, ze, k0] == np.inf
    assert d3[0, 0, z0, k0] == 0.0
    assert d3[0, 0, z0, k1] == np.inf
    assert np.all(d3[:, :, :, kstar] == 1.0)


def test_node3_rejects_non_erasure_base():
    spec = with_node3_erasure_metric(binary_erasure_spec(0.2))
    with pytest.raises(SpecFormatError):
        with_node3_erasure_metric(spec)


def test_round_trip_is_bit_exact(tmp_path):
    for eps in (0.2, 1 / 3, 0.05):
        spec = binary_erasure_spec(eps)
        path = tmp_path / f"spec_{eps:.2f}.json"
        save_spec(spec, path)
        loaded = load_spec(path)
        assert loaded.mode == spec.mode
        assert np.array_equal(loaded.source.table, spec.source.table)
        assert np.array_equal(loaded.vending.table, spec.vending.table)
        assert np.array_equal(loaded.cost, spec.cost)
        assert np.array_equal(loaded.d1, spec.d1)
        assert np.array_equal(loaded.d2, spec.d2)
        # saving the loaded spec reproduces the document exactly
        assert spec_to_document(loaded) == spec_to_document(spec)


def test_round_trip_heegard_berger(tmp_path):
    spec = with_node3_erasure_metric(binary_erasure_spec(0.2))
    path = tmp_path / "hb.json"
    save_spec(spec, path)
    loaded = load_spec(path)
    assert loaded.mode == "heegard-berger"
    assert np.array_equal(loaded.d3, spec.d3)
    assert loaded.xhat3_alpha.symbols == ("0", "1", "*")


def test_loader_rejects_unnormalized_rows():
    doc = spec_to_document(binary_erasure_spec(0.2))
    doc["vending"]["0,0,0"] = {"phi": "0.5"}
    with pytest.raises(SpecFormatError) as err:
        spec_from_document(doc)
    assert "row" in str(err.value)


def test_loader_rejects_bad_source_mass():
    doc = spec_to_document(binary_erasure_spec(0.2))
    doc["source"]["table"]["0,0"] = "0.9"
    with pytest.raises(SpecFormatError):
        spec_from_document(doc)


def test_loader_names_missing_fields():
    doc = spec_to_document(binary_erasure_spec(0.2))
    del doc["cost"]
    with pytest.raises(SpecFormatError) as err:
        spec_from_document(doc)
    assert "cost" in str(err.value)


def test_loader_rejects_inf_probability():
    doc = spec_to_document(binary_erasure_spec(0.2))
    doc["source"]["table"]["0,0"] = "inf"
    with pytest.raises(SpecFormatError):
        spec_from_document(doc)


def test_loader_reports_json_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"mode": "indirect",\n  "alphabets": }')
    with pytest.raises(SpecFormatError) as err:
        load_spec(path)
    assert "line 2" in str(err.value)


def test_metric_needs_finite_column():
    spec = binary_erasure_spec(0.2)
    d1 = spec.d1.copy()
    d1[0, 0, 0, :] = np.inf
    with pytest.raises(SpecFormatError):
        ProblemSpec(
            mode=spec.mode,
            x_alpha=spec.x_alpha,
            z_alpha=spec.z_alpha,
            y_alpha=spec.y_alpha,
            a_alpha=spec.a_alpha,
            xhat1_alpha=spec.xhat1_alpha,
            xhat2_alpha=spec.xhat2_alpha,
            source=spec.source,
            vending=spec.vending,
            cost=spec.cost,
            d1=d1,
            d2=spec.d2,
        )


def test_direct_mode_requires_copy_source():
    spec = binary_erasure_spec(0.2)
    doc = spec_to_document(spec)
    doc["mode"] = "direct"
    with pytest.raises(SpecFormatError):
        spec_from_document(doc)


def test_seventeen_digit_strings(tmp_path):
    spec = binary_erasure_spec(1 / 3)
    doc = spec_to_document(spec)
    raw = doc["source"]["table"]["0,e"]
    assert isinstance(raw, str)
    assert float(raw) == (1 / 3) / 2
    text = json.dumps(doc)
    assert "inf" not in text.replace('"inf"', "")
