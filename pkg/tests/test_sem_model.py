import pytest

from flourishsem.sem import SpecError, load_model, parse_model


def test_full_spec_shapes(full_spec):
    assert full_spec.loading_shapes() == ((6, 1), (43, 9))
    assert full_spec.exogenous == ("climate_risk",)
    assert len(full_spec.endogenous) == 9
    assert all(p == "climate_risk" for _, p in full_spec.paths)


def test_bundled_parameter_count(full_spec):
    assert full_spec.n_observed == 49
    assert full_spec.n_free == (49 - 10) + 9 + 1 + 9 + 49 == 107
    assert full_spec.degrees_of_freedom() == 49 * 50 // 2 - 107 == 1118


def test_duplicate_indicator_rejected():
    with pytest.raises(SpecError, match="simple structure"):
        parse_model("a =~ happiness lifesat\nb =~ happiness optimism\n")


def test_measurement_only_model():
    spec = parse_model("f =~ a b c\n")
    assert spec.exogenous == ("f",) and spec.endogenous == ()
    assert spec.param_names == ("f=~b", "f=~c", "f~~f", "a~~a", "b~~b", "c~~c")
    assert spec.degrees_of_freedom() == 0


@pytest.mark.parametrize("text, match", [
    ("f =~\n", "no indicators"),
    ("f =~ a b\nf ~ g\n", "unknown latent"),
    ("f =~ a\ng =~ b\nh =~ c\ng ~ f\nh ~ g\n", "exogenous"),
    ("f =~ a\nf ~ f\n", "itself"),
    ("just some words\n", "cannot parse"),
    ("", "no latent"),
])
def test_spec_errors(text, match):
    with pytest.raises(SpecError, match=match):
        parse_model(text)


def test_unknown_indicator_with_observed_list():
    with pytest.raises(SpecError, match="unknown indicator"):
        parse_model("f =~ a zz\n", observed=["a", "b"])


def test_free_reference_marker_and_comments():
    spec = parse_model("# comment\nf =~ a*free b =1@b c  # trailing\ng =~ d\ng ~ f\n")
    assert spec.block("f").reference == "b"
    assert "f=~a" in spec.param_names and "f=~b" not in spec.param_names
    again = parse_model(spec.to_text())
    assert again == spec


def test_multi_predictor_paths_and_packing():
    spec = parse_model("k1 =~ x1 x2\nk2 =~ x3 x4\ne =~ y1 y2\ne ~ k1 + k2\n")
    kinds = [p.kind for p in spec.params]
    assert kinds == sorted(kinds, key=["loading", "path", "phi", "psi", "theta"].index)
    assert spec.paths == (("e", "k1"), ("e", "k2"))
    assert "k2~~k1" in spec.param_names


def test_default_model_file_round_trip(tmp_path, full_spec):
    path = tmp_path / "m.sem"
    path.write_text(full_spec.to_text())
    assert load_model(path) == full_spec


def test_reordered_keeps_references(full_spec):
    r = full_spec.reordered(indicators={"subjective_wellbeing": ["lifesat", "happiness", "optimism",
                                                                   "innerpeace", "selfesteem"]})
    assert r.block("subjective_wellbeing").reference == "happiness"
    assert set(r.param_names) == set(full_spec.param_names)
