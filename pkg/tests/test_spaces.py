import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from oracles import pearson_definition
from tourspend.data import CountryAttributes, ExpenditureCube, parse_quarter
from tourspend.spaces import (EntityVectors, SimMatrix, attractiveness, build_entity_vectors, data_year,
                              expenditure_matrix, fit_growth_model, fit_level_model, growth_panels,
                              origin_relative_expenditure, predict_expenditure, prediction_panel,
                              similarity, split_years, topk_graph)
from tourspend.synth import growth_panel, level_panel


def cube_from(table):
    """table: {(origin, dest, muni): usd}"""
    return ExpenditureCube.from_records(
        [(origin, dest, m, "Accommodations", "2013Q1", usd, 1) for (origin, dest, m), usd in table.items()])


def test_origin_vectors_pivot():
    cube = cube_from({("A", "X", "x1", ): 10, ("A", "Y", "y1"): 5, ("A", "Y", "y2"): 1, ("B", "Z", "z1"): 7})
    v = build_entity_vectors(cube, "origin")
    assert v.entities == ["A", "B"]
    assert v.categories == ["X", "Y", "Z"]
    assert v.values.tolist() == [[10.0, 6.0, 0.0], [0.0, 0.0, 7.0]]


def test_destination_vectors_restricted():
    cube = cube_from({("A", "X", "x1"): 10, ("B", "X", "x2"): 5, ("A", "Y", "y1"): 3})
    v = build_entity_vectors(cube, "destination", dest="X")
    assert v.entities == ["x1", "x2"]
    assert v.categories == ["A", "B"]
    with pytest.raises(ValueError):
        build_entity_vectors(cube, "destination", dest="Q")
    with pytest.raises(ValueError):
        build_entity_vectors(cube, "industry")


def test_similarity_matches_definition():
    rng = np.random.default_rng(0)
    values = rng.gamma(1.0, 1000.0, (6, 9)) * (rng.uniform(size=(6, 9)) > 0.3)
    vecs = EntityVectors("origin", list("ABCDEF"), list(range(9)), values)
    sim = similarity(vecs)
    for i in range(6):
        for j in range(6):
            if i != j:
                ref = pearson_definition(list(np.log1p(values[i])), list(np.log1p(values[j])))
                assert sim.values[i, j] == pytest.approx(ref, abs=1e-12)
    assert np.array_equal(sim.values, sim.values.T)
    assert np.all(np.diag(sim.values) == 1.0)
    raw = similarity(vecs, transform="raw")
    assert raw.values[0, 1] == pytest.approx(pearson_definition(list(values[0]), list(values[1])), abs=1e-12)


def test_similarity_drops_constant_vectors():
    values = np.array([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0], [3.0, 1.0, 2.0]])
    sim = similarity(EntityVectors("origin", ["A", "B", "C"], [0, 1, 2], values))
    assert sim.entities == ["A", "C"]
    assert sim.excluded == ("B",)


def test_similarity_needs_three_categories():
    vecs = EntityVectors("origin", ["A", "B"], [0, 1], np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        similarity(vecs)


def sim_from(matrix, names=None):
    mat = np.asarray(matrix, float)
    return SimMatrix(names or [chr(65 + i) for i in range(len(mat))], mat)


def test_topk_union_and_degree():
    rng = np.random.default_rng(1)
    A = rng.uniform(-1, 1, (10, 10))
    S = (A + A.T) / 2
    np.fill_diagonal(S, 1.0)
    sim = sim_from(S)
    for k in (1, 2, 4):
        g = topk_graph(sim, k)
        for node in g.nodes:
            assert len(g.neighbours(node)) >= k
        for a, b, w in g.edges:
            assert a < b
            assert w == sim.get(a, b)
    with pytest.raises(ValueError):
        topk_graph(sim, 10)


def test_topk_ties_prefer_smaller_key():
    S = np.ones((4, 4)) * 0.5
    np.fill_diagonal(S, 1.0)
    g = topk_graph(sim_from(S), 1)
    # everyone picks A; A picks B
    assert [(a, b) for a, b, _ in g.edges] == [("A", "B"), ("A", "C"), ("A", "D")]


def test_prediction_single_neighbour_exact():
    sim = sim_from([[1.0, 0.4, -0.2], [0.4, 1.0, -0.1], [-0.2, -0.1, 1.0]])
    spend_table = {("A", "X"): 10.0, ("B", "X"): 123.456, ("C", "X"): 99.0}
    pred = predict_expenditure(sim, spend_table, "X")
    assert pred.values["A"] == 123.456
    assert pred.values["B"] == 10.0
    assert pred.undefined == ["C"]


def test_prediction_weighted_mean_and_missing_pairs():
    sim = sim_from([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
    pred = predict_expenditure(sim, {("B", "X"): 30.0, ("C", "X"): 60.0}, "X")
    assert pred.values["A"] == pytest.approx((0.5 * 30 + 0.25 * 60) / 0.75)
    assert pred.values["B"] == pytest.approx(30.0)


def test_prediction_unclamped_uses_signed_weights():
    sim = sim_from([[1.0, 0.6, -0.2], [0.6, 1.0, 0.3], [-0.2, 0.3, 1.0]])
    spend_table = {("A", "X"): 1.0, ("B", "X"): 2.0, ("C", "X"): 4.0}
    pred = predict_expenditure(sim, spend_table, "X", clamp_negative=False)
    assert pred.values["A"] == pytest.approx((0.6 * 2 - 0.2 * 4) / 0.4)


@st.composite
def prediction_instances(draw):
    n = draw(st.integers(2, 9))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.01, 1.0, (n, n))
    S = (A + A.T) / 2
    np.fill_diagonal(S, 1.0)
    spend = rng.gamma(0.5, 1000.0, n)
    return S, spend


@given(prediction_instances())
def test_prediction_within_neighbour_range(instance):
    S, spend = instance
    sim = sim_from(S)
    spend_table = {(origin, "X"): v for origin, v in zip(sim.entities, spend)}
    pred = predict_expenditure(sim, spend_table, "X")
    for i, origin in enumerate(sim.entities):
        others = np.delete(spend, i)
        assert others.min() * (1 - 1e-12) <= pred.values[origin] <= others.max() * (1 + 1e-12)


def test_prediction_panel_layout():
    sim = sim_from([[1.0, 0.5, 0.2], [0.5, 1.0, 0.4], [0.2, 0.4, 1.0]])
    spend_table = pd.DataFrame({"X": [1.0, 2.0, 3.0], "Y": [0.0, 5.0, 1.0]}, index=list("ABC"))
    panel = prediction_panel(sim, spend_table)
    assert list(panel.columns) == ["origin", "dest", "spend", "predicted"]
    assert len(panel) == 6
    row = panel[(panel.origin == "C") & (panel.dest == "Y")].iloc[0]
    assert row.predicted == pytest.approx((0.2 * 0.0 + 0.4 * 5.0) / 0.6)


def test_level_model_recovers_planted_slope():
    hits = 0
    for seed in range(20):
        frame = level_panel(30, 6, 1.5, 0.3, np.random.default_rng(seed))
        fit = fit_level_model(frame["spend"], frame["predicted"])
        hits += abs(fit.coefficients["ln(P+1)"] - 1.5) <= 3 * fit.std_errors["ln(P+1)"]
    assert hits >= 18


def test_level_model_exact_without_noise():
    frame = level_panel(20, 6, 1.5, 0.0, np.random.default_rng(0))
    fit = fit_level_model(frame["spend"], frame["predicted"])
    assert fit.coefficients["ln(P+1)"] == pytest.approx(1.5, abs=1e-8)


def test_growth_model_persistence_exact():
    frame = growth_panel(25, 6, 1.0, 0.0, 0.0, np.random.default_rng(3))
    fit = fit_growth_model(frame["spend_t"], frame["spend_next"], frame["predicted_t"])
    assert fit.coefficients["ln(E_t+1)"] == pytest.approx(1.0, abs=1e-8)
    assert fit.coefficients["ln(P_t+1)"] == pytest.approx(0.0, abs=1e-8)


def test_level_model_needs_two_ways():
    idx = pd.MultiIndex.from_tuples([("A", "X"), ("B", "X"), ("C", "X")])
    s = pd.Series([1.0, 2.0, 3.0], index=idx)
    with pytest.raises(ValueError):
        fit_level_model(s, s)


def test_data_year_alignment():
    assert data_year(parse_quarter("2011Q4")) == 2012
    assert data_year(parse_quarter("2012Q3")) == 2012
    assert data_year(parse_quarter("2012Q4")) == 2013
    assert data_year(parse_quarter("2014Q3")) == 2014


def test_split_years_partitions_cube(small_synth):
    years = split_years(small_synth.cube)
    assert sorted(years) == [2012, 2013, 2014]
    assert sum(c.total_cents for c in years.values()) == small_synth.cube.total_cents


def test_growth_panels_on_synthetic(small_synth):
    panels = growth_panels(small_synth.cube)
    assert sorted(panels) == [2013, 2014]
    for panel in panels.values():
        assert list(panel.columns) == ["origin", "dest", "spend_t", "spend_next", "predicted_t"]
        assert (panel["predicted_t"] >= 0).all()
        assert not panel.duplicated(["origin", "dest"]).any()


def test_attractiveness_columns_sum_to_one(small_synth):
    countries = {row.iso3: CountryAttributes(row.iso3, row.population, row.gdp_per_capita, row.gdp_total,
                                             row.continent)
                 for row in small_synth.countries.itertuples()}
    attr = attractiveness(small_synth.cube, countries)
    assert np.allclose(attr.sum(axis=0), 1.0, atol=1e-12)
    # definition check for one cell
    spend_table = expenditure_matrix(small_synth.cube)
    gdp = pd.Series({origin: countries[origin].gdp_total for origin in spend_table.index})
    ratio = spend_table["COL"] / gdp
    assert attr.loc["XAA", "COL"] == pytest.approx(ratio["XAA"] / ratio.sum(), rel=1e-12)


def test_origin_relative_expenditure_shares(small_synth):
    dest = "COL"
    munis = small_synth.cube.subset(dest_country=dest).values("municipality_id")
    partition = {muni: i % 2 + 1 for i, muni in enumerate(munis)}
    table = origin_relative_expenditure(small_synth.cube, partition, dest)
    per_origin = table.origin_shares.groupby("origin")["share"].sum()
    assert np.allclose(per_origin, 1.0, atol=1e-12)
    per_industry = table.industry_shares.groupby("industry")["share"].sum()
    assert np.allclose(per_industry, 1.0, atol=1e-12)
    top = table.top("origin", n=2)
    assert (top.groupby("cluster").size() <= 2).all()
    with pytest.raises(ValueError):
        origin_relative_expenditure(small_synth.cube, {munis[0]: 1}, dest)
