import numpy as np
import pytest
from hypothesis import given, strategies as st

from etabench.errors import FormulaError, SchemaError
from etabench.schema import (
    ConstraintKind,
    FeatureSchema,
    FeatureSpec,
    Formula,
    parse_schema,
    serialize_schema,
)


def test_formula_arithmetic():
    f = Formula('("a" + "b") * 2 - "c" / 4')
    assert f.evaluate({"a": 1.0, "b": 2.0, "c": 8.0}) == pytest.approx(4.0)
    assert f.references == {"a", "b", "c"}


def test_formula_division_by_zero_yields_zero():
    f = Formula('"a" / "b"')
    assert f.evaluate({"a": 5.0, "b": 0.0}) == 0.0
    # vectorized: only the zero-denominator entries collapse
    out = f.evaluate({"a": np.array([6.0, 5.0]), "b": np.array([2.0, 0.0])})
    assert out.tolist() == [3.0, 0.0]


def test_formula_unary_minus_and_literals():
    assert Formula('-"a" + 1.5e1').evaluate({"a": 5.0}) == pytest.approx(10.0)


@pytest.mark.parametrize("bad", ["", '"a" +', '("a"', '"a" $ "b"', "foo"])
def test_formula_rejects_garbage(bad):
    with pytest.raises(FormulaError):
        Formula(bad)


def test_formula_unknown_reference_at_eval():
    with pytest.raises(FormulaError):
        Formula('"ghost"').evaluate({"a": 1.0})


def test_spec_requires_formula_iff_derived():
    with pytest.raises(SchemaError):
        FeatureSpec("x", ConstraintKind.DERIVED)
    with pytest.raises(SchemaError):
        FeatureSpec("x", ConstraintKind.FREE, formula=Formula("1"))


def test_spec_range_only_on_clip():
    with pytest.raises(SchemaError):
        FeatureSpec("x", ConstraintKind.FREE, valid_range=(0.0, 1.0))
    with pytest.raises(SchemaError):
        FeatureSpec("x", ConstraintKind.RANGE_CLIPPED, valid_range=(2.0, 1.0))


def test_schema_rejects_duplicates_and_label_collision():
    a = FeatureSpec("a", ConstraintKind.FREE)
    with pytest.raises(SchemaError):
        FeatureSchema("T", "Label", [a, FeatureSpec("a", ConstraintKind.MASKED)])
    with pytest.raises(SchemaError):
        FeatureSchema("T", "a", [a])


def test_schema_validates_derived_references():
    good = FeatureSchema(
        "T",
        "Label",
        [
            FeatureSpec("a", ConstraintKind.FREE),
            FeatureSpec("m", ConstraintKind.DERIVED, formula=Formula('"a" * 2')),
        ],
    )
    assert good.indices_of_kind(ConstraintKind.DERIVED).tolist() == [1]
    with pytest.raises(SchemaError):
        FeatureSchema(
            "T", "Label",
            [FeatureSpec("m", ConstraintKind.DERIVED, formula=Formula('"ghost"'))],
        )
    # derived may not chain onto derived
    with pytest.raises(SchemaError):
        FeatureSchema(
            "T",
            "Label",
            [
                FeatureSpec("a", ConstraintKind.FREE),
                FeatureSpec("m1", ConstraintKind.DERIVED, formula=Formula('"a"')),
                FeatureSpec("m2", ConstraintKind.DERIVED, formula=Formula('"m1"')),
            ],
        )


def test_evaluate_derived_single_and_batch():
    schema = FeatureSchema(
        "T",
        "Label",
        [
            FeatureSpec("total", ConstraintKind.FREE),
            FeatureSpec("count", ConstraintKind.FREE),
            FeatureSpec("mean", ConstraintKind.DERIVED, formula=Formula('"total" / "count"')),
        ],
    )
    vec = schema.evaluate_derived(np.array([10.0, 4.0, 99.0]))
    assert vec.tolist() == [10.0, 4.0, 2.5]
    mat = schema.evaluate_derived(np.array([[10.0, 4.0, 0.0], [3.0, 0.0, 7.0]]))
    assert mat[:, 2].tolist() == [2.5, 0.0]


def test_parse_serialize_round_trip_and_grammar():
    text = """# demo schema
attack_type Botnet
label "Label"
feature "Flow Duration" clip range 0.0 120.5
feature "URG Flag Count" mask
feature "Rate" derived "Bytes" / "Flow Duration"
feature "Bytes" clip
feature "Jitter" free
"""
    schema = parse_schema(text)
    assert schema.attack_type == "Botnet"
    assert schema.names == ["Flow Duration", "URG Flag Count", "Rate", "Bytes", "Jitter"]
    assert schema.features[0].valid_range == (0.0, 120.5)
    assert parse_schema(serialize_schema(schema)) == schema


@pytest.mark.parametrize(
    "line",
    [
        "feature Flow free",                      # unquoted name
        'feature "a" clip range 1',               # incomplete range
        'feature "a" wobble',                     # unknown kind
        'feature "a" derived',                    # missing formula
        'feature "a" free extra',                 # trailing junk
        "unknown_directive x",
    ],
)
def test_parse_rejects_bad_lines(line):
    with pytest.raises(SchemaError):
        parse_schema(f"attack_type T\nlabel L\n{line}\n")


def test_parse_requires_header():
    with pytest.raises(SchemaError):
        parse_schema('feature "a" free\n')


def test_drop_features_cascades_to_dependent_derived():
    schema = parse_schema(
        "attack_type T\nlabel L\n"
        'feature "a" free\n'
        'feature "b" free\n'
        'feature "r" derived "a" / "b"\n'
    )
    reduced = schema.drop_features(["b"])
    assert reduced.names == ["a"]


_name = st.text(
    alphabet=st.characters(whitelist_categories=("Lu", "Ll", "Nd"), whitelist_characters=" _/"),
    min_size=1,
    max_size=12,
).map(str.strip).filter(lambda s: s and s != "Label")


@given(
    names=st.lists(_name, min_size=1, max_size=8, unique=True),
    kinds=st.lists(st.sampled_from(["free", "mask", "clip"]), min_size=8, max_size=8),
    ranges=st.lists(
        st.tuples(
            st.floats(-1e6, 1e6, allow_nan=False), st.floats(0, 1e6, allow_nan=False)
        ),
        min_size=8,
        max_size=8,
    ),
)
def test_round_trip_random_schemas(names, kinds, ranges):
    specs = []
    for name, kind, (lo, width) in zip(names, kinds, ranges):
        if kind == "free":
            specs.append(FeatureSpec(name, ConstraintKind.FREE))
        elif kind == "mask":
            specs.append(FeatureSpec(name, ConstraintKind.MASKED))
        else:
            specs.append(
                FeatureSpec(name, ConstraintKind.RANGE_CLIPPED, valid_range=(lo, lo + width))
            )
    schema = FeatureSchema("T", "Label", specs)
    assert parse_schema(serialize_schema(schema)) == schema
