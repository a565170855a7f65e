import dataclasses

import numpy as np
import pytest
from scipy import stats

from msocc import model
from msocc.estimation import FitOptions
from msocc.metrics import MisclassificationProbs, identity_probs
from msocc.model import OccupancyParams
from msocc.simulation import (
    CASE_STUDY_SPECIES,
    SimSpec,
    corrupt_labels,
    case_study_params,
    run_experiment,
    simulate_history,
    simulate_records,
    transfer_probs,
)
from msocc.survey import MISSING, ImageRecord, SurveyDataError, build_detection_history


def three_species(psi):
    return OccupancyParams(psi, [1.0, 1.0, 1.0])


def test_all_present_perfect_detection():
    psi = np.zeros(8)
    psi[7] = 1.0
    h = simulate_history(SimSpec(three_species(psi), 20, 5, seed=1))
    assert (h.y == 1).all()


def test_all_absent_gives_zeros():
    psi = np.zeros(8)
    psi[0] = 1.0
    h = simulate_history(SimSpec(OccupancyParams(psi, [0.9, 0.9, 0.9]), 20, 5, seed=1))
    assert (h.y == 0).all()


def test_seeded_and_missing_rate():
    spec = SimSpec(case_study_params(), 200, 8, missing_rate=0.3, seed=9)
    a, b = simulate_history(spec), simulate_history(spec)
    assert a == b
    frac = (a.y[0] == MISSING).mean()
    assert abs(frac - 0.3) < 4 * np.sqrt(0.3 * 0.7 / a.y[0].size)
    assert simulate_history(dataclasses.replace(spec, seed=10)) != a


@pytest.fixture(scope="module")
def large_sim():
    spec = SimSpec(case_study_params(), 100_000, 10, seed=4)
    return simulate_history(spec, return_states=True)


@pytest.mark.slow
def test_detection_rate_moments(large_sim):
    h, _ = large_sim
    params = case_study_params()
    for s in range(3):
        per_site = h.y[s].mean(axis=1)
        expected = model.marginal_occupancy(params, s) * params.p[s]
        se = per_site.std(ddof=1) / np.sqrt(per_site.size)
        assert abs(per_site.mean() - expected) < 3 * se


@pytest.mark.slow
def test_latent_state_frequencies(large_sim):
    _, states = large_sim
    psi = case_study_params().psi
    observed = np.bincount(states, minlength=8)
    chi2, pval = stats.chisquare(observed, psi * states.size)
    assert pval > 1e-3


def test_records_round_trip_to_history():
    spec = SimSpec(case_study_params(), 15, 7, missing_rate=0.2, seed=3, species=CASE_STUDY_SPECIES)
    h = simulate_history(spec)
    # every site needs an active month for its deployment windows to exist
    keep = (h.y[0] != MISSING).any(axis=1)
    assert keep.all()
    records, windows = simulate_records(h, seed=3, background={"fox": 1.0})
    rebuilt = build_detection_history(records, list(CASE_STUDY_SPECIES), windows)
    assert rebuilt == h


def _records(n, labels, seed=0):
    rng = np.random.default_rng(seed)
    return [
        ImageRecord(f"S{i % 7}", f"2018-0{1 + i % 9}-10T00:00:00Z", str(rng.choice(labels)))
        for i in range(n)
    ]


def test_identity_corruption():
    recs = _records(200, ["lynx", "fox", "chamois"])
    out = corrupt_labels(recs, identity_probs(["chamois", "fox", "lynx"]), seed=1)
    assert all(r.label_pred == r.label_true for r in out)


def test_corruption_is_seeded_and_preserves_fields():
    recs = _records(300, ["lynx", "fox", "chamois"])
    probs = transfer_probs(["lynx", "fox", "chamois"])
    a = corrupt_labels(recs, probs, seed=5)
    assert a == corrupt_labels(recs, probs, seed=5)
    assert len(a) == len(recs)
    for r, c in zip(recs, a):
        assert (r.site_id, r.timestamp, r.label_true) == (c.site_id, c.timestamp, c.label_true)


def test_corruption_missing_row():
    probs = identity_probs(["lynx"])
    with pytest.raises(SurveyDataError, match="fox"):
        corrupt_labels(_records(5, ["fox"]), probs)


def test_chamois_retention_rate():
    recs = [ImageRecord("A", "2018-01-01T00:00:00Z", "chamois")] * 10_000
    probs = transfer_probs(["chamois", "roe_deer", "lynx"])
    assert probs.row("chamois")[0] == 0.08
    kept = sum(r.label_pred == "chamois" for r in corrupt_labels(recs, probs, seed=2))
    sd = np.sqrt(10_000 * 0.08 * 0.92)
    assert abs(kept - 800) < 3 * sd


def test_transfer_probs_rows_stochastic():
    probs = transfer_probs(["lynx", "owl"])
    assert len(probs.true_labels) == 17
    np.testing.assert_allclose(probs.probs.sum(axis=1), 1.0, atol=1e-12)
    assert probs.row("owl")[1] == 1.0


@pytest.fixture(scope="module")
def survey():
    spec = SimSpec(case_study_params(), 40, 6, seed=8, species=CASE_STUDY_SPECIES)
    h = simulate_history(spec)
    return simulate_records(h, seed=8, background={"human": 2.0, "fox": 1.0})


def test_experiment_identity_gives_zero_deltas(survey):
    records, windows = survey
    labels = sorted({r.label_true for r in records})
    rep = run_experiment(records, CASE_STUDY_SPECIES, identity_probs(labels), windows,
                         FitOptions(seed=1), seed=1)
    assert rep.history_truth == rep.history_classified
    assert all(v == 0.0 for v in rep.deltas.values())
    assert rep.metrics.accuracy == 1.0


def test_experiment_perfect_recall_on_modeled_species(survey):
    records, windows = survey
    labels = ["chamois", "fox", "human", "lynx", "roe_deer"]
    P = np.eye(5)
    # background classes confuse each other but never a modeled species
    P[1] = [0, 0.5, 0.5, 0, 0]
    P[2] = [0, 0.3, 0.7, 0, 0]
    rep = run_experiment(records, CASE_STUDY_SPECIES, MisclassificationProbs(labels, labels, P),
                         windows, FitOptions(seed=1), seed=4)
    assert rep.metrics.accuracy < 1.0
    assert rep.history_truth == rep.history_classified
    assert all(v == 0.0 for v in rep.deltas.values())


def test_experiment_with_transfer_errors_reports_deltas(survey):
    records, windows = survey
    labels = sorted({r.label_true for r in records})
    rep = run_experiment(records, CASE_STUDY_SPECIES, transfer_probs(labels), windows,
                         FitOptions(seed=2, n_starts=2), seed=2,
                         corrupt_sites={f"site{i:02d}" for i in range(25, 40)})
    assert rep.history_truth != rep.history_classified
    assert set(rep.deltas) >= {"marginal(lynx)", "p(chamois)", "conditional(lynx|roe_deer=1)"}
    assert all(v >= 0 for v in rep.deltas.values())
    assert rep.metrics.recall["chamois"] < 0.3
