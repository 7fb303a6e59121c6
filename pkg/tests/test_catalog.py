import numpy as np
import pytest

from emrbench.catalog import (
    CatalogError,
    VariableKind,
    catalog_from_rows,
    load_catalog,
    normalize_name,
    save_catalog,
)

from conftest import CAT3_ROWS


def test_normalize_name_strips_and_casefolds():
    assert normalize_name("  Heart_Rate ") == "heart_rate"
    assert normalize_name("HR") == normalize_name("hr")


class TestParsing:
    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "cat.csv"
        path.write_text("name,kind\nx,vital\n")
        with pytest.raises(CatalogError, match="line 1"):
            load_catalog(path)

    def test_field_count_error_names_line(self):
        with pytest.raises(CatalogError, match="line 3"):
            catalog_from_rows(["heart_rate,vital,,1,350,,", "too,short"])

    def test_unknown_kind(self):
        with pytest.raises(CatalogError, match="unknown kind"):
            catalog_from_rows(["x,vitals,,1,2,,"])

    def test_internal_requires_range(self):
        with pytest.raises(CatalogError, match="min_value"):
            catalog_from_rows(["x,vital,,,350,,"])

    def test_internal_range_must_be_ordered(self):
        with pytest.raises(CatalogError):
            catalog_from_rows(["x,vital,,350,350,,"])

    def test_internal_rejects_treatment_limit(self):
        with pytest.raises(CatalogError):
            catalog_from_rows(["x,lab,,0,10,5,"])

    def test_external_requires_positive_limit(self):
        with pytest.raises(CatalogError):
            catalog_from_rows(["x,drug,,,,0,"])
        with pytest.raises(CatalogError):
            catalog_from_rows(["x,intervention,,,,,"])

    def test_mesh_heading_is_drug_only(self):
        with pytest.raises(CatalogError):
            catalog_from_rows(["x,vital,,1,2,,SomeHeading"])
        with pytest.raises(CatalogError):
            catalog_from_rows(["x,intervention,,,,1,SomeHeading"])

    def test_alias_collision_names_both_variables(self):
        with pytest.raises(CatalogError) as err:
            catalog_from_rows(
                ["heart_rate,vital,hr,1,350,,", "pulse,vital,HR,1,350,,"]
            )
        assert "heart_rate" in str(err.value) and "pulse" in str(err.value)

    def test_duplicate_canonical_name(self):
        with pytest.raises(CatalogError):
            catalog_from_rows(["x,vital,,1,2,,", "x,lab,,0,5,,"])


class TestResolution:
    def test_canonical_alias_case_and_padding(self, cat3):
        assert cat3.resolve("heart_rate") == 0
        assert cat3.resolve("HR") == 0
        assert cat3.resolve(" hr ") == 0
        assert cat3.resolve("Heart_Rate") == 0
        assert cat3.resolve("EPI") == 2

    def test_unknown_returns_none(self, cat3):
        assert cat3.resolve("albumin") is None

    def test_index_of_requires_canonical(self, cat3):
        assert cat3.index_of("creatinine_mg_dl") == 1
        with pytest.raises(KeyError):
            cat3.index_of("creatinine")  # alias, not canonical


class TestDerivedArrays:
    def test_masks(self, cat3):
        assert cat3.width == 3
        assert cat3.internal_mask.tolist() == [True, True, False]
        assert cat3.external_mask.tolist() == [False, False, True]
        assert cat3.drug_mask.tolist() == [False, False, True]

    def test_clamp_bounds(self, cat3):
        assert cat3.min_values.tolist() == [1.0, 0.0, 0.0]
        assert cat3.max_values.tolist() == [350.0, 30.0, 1.0]
        limits = cat3.treatment_limits
        assert np.isnan(limits[:2]).all() and limits[2] == 1.0

    def test_restrict_preserves_order(self, demo_catalog):
        internals = demo_catalog.restrict(
            [VariableKind.VITAL, VariableKind.LAB]
        )
        assert internals.width == 14
        assert internals.internal_mask.all()
        assert internals.names == tuple(
            n
            for n, keep in zip(demo_catalog.names, demo_catalog.internal_mask)
            if keep
        )

    def test_mesh_groups(self, demo_catalog):
        groups = demo_catalog.mesh_groups()
        assert set(groups) == {"Cardiotonic Agents", "Diuretics"}
        cardio = groups["Cardiotonic Agents"]
        assert [demo_catalog.names[i] for i in cardio] == [
            "epinephrine_mcg_kg_min",
            "dopamine_mcg_kg_min",
        ]


def test_save_load_round_trip(tmp_path, cat3):
    path = tmp_path / "cat.csv"
    save_catalog(cat3, path)
    again = load_catalog(path)
    assert again.specs == cat3.specs


def test_demo_catalog_shape(demo_catalog):
    assert demo_catalog.width == 20
    kinds = demo_catalog.kinds
    assert sum(k is VariableKind.VITAL for k in kinds) == 8
    assert sum(k is VariableKind.LAB for k in kinds) == 6
    assert sum(k is VariableKind.DRUG for k in kinds) == 4
    assert sum(k is VariableKind.INTERVENTION for k in kinds) == 2


def test_rows_reject_header_duplication():
    # catalog_from_rows expects data rows only; a pasted header must fail
    with pytest.raises(CatalogError):
        catalog_from_rows(
            [
                "canonical_name,kind,aliases,min_value,max_value,"
                "treatment_upper_limit,mesh_heading",
                *CAT3_ROWS,
            ]
        )
