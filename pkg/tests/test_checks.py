from beamlattice import checks, ctc, search


def test_suites_pass():
    report = checks.run_all(15, seed=3)
    assert report == {"prefix": [], "partition": [], "beam": []}


def test_mutation_is_caught_and_undone():
    report = checks.run_all(15, seed=3, mutate="window-start")
    assert all(report.values())
    assert "got" in str(report["prefix"][0])
    assert ctc.window_for is checks._original_window_for
    assert search.window_for is checks._original_window_for


def test_zero_trials_is_vacuous():
    assert checks.run_all(0) == {"prefix": [], "partition": [], "beam": []}
