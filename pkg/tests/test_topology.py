from collections import Counter
from fractions import Fraction

import pytest

from braidmc.topology import (
    REPORT_COLUMNS,
    Spectrum,
    accumulate,
    avg_cycle_length,
    f_pc,
    mean_fpc,
    p_of,
    spectrum_report,
    top_invariants,
    wilson_halfwidth,
)
from braidmc.universal import EmptyStream
from braidmc.worldlines import CycleVector


def test_p_of():
    p = p_of(CycleVector((1, 1, 0)), 3)
    assert p.p == (Fraction(1, 3), Fraction(2, 3), Fraction(0))
    assert p.p_prime == (Fraction(2, 3), Fraction(0))
    assert sum(p.p) == 1


def test_cycle_measures():
    assert f_pc(CycleVector((1, 1, 0)), 3) == Fraction(2, 3)
    assert f_pc(CycleVector.trivial(4), 4) == 0
    assert f_pc(CycleVector((0, 0, 0, 1)), 4) == 1
    assert avg_cycle_length(CycleVector((1, 1, 0)), 3) == Fraction(4, 3)
    assert avg_cycle_length(CycleVector((0, 0, 1)), 3) == 3
    assert avg_cycle_length(CycleVector.trivial(3), 3) == 0


def test_cycle_vector_must_match_N():
    with pytest.raises(ValueError):
        p_of(CycleVector((1, 1)), 4)
    with pytest.raises(ValueError):
        accumulate([CycleVector((2, 0)), CycleVector((3, 0, 0))])


def test_accumulate():
    stream = [CycleVector((3, 0, 0))] * 2 + [CycleVector((1, 1, 0))]
    spectrum = accumulate(stream)
    assert spectrum.N == 3
    assert spectrum.total_samples == 3
    assert spectrum.probability((3, 0, 0)) == pytest.approx(2 / 3)
    assert spectrum.probability((0, 0, 1)) == 0.0
    assert mean_fpc(spectrum) == Fraction(2, 9)
    assert [str(e.q) for e in spectrum.entries()] == ["3-0-0", "1-1-0"]
    assert str(top_invariants(spectrum, 1)[0].q) == "3-0-0"


def test_accumulate_empty():
    with pytest.raises(EmptyStream):
        accumulate([])


def test_merge_matches_single_accumulation():
    a = [CycleVector((2, 0))] * 3
    b = [CycleVector((0, 1))] * 2 + [CycleVector((2, 0))]
    merged = accumulate(a).merge(accumulate(b))
    whole = accumulate(a + b)
    assert merged.counts == whole.counts
    assert mean_fpc(merged) == mean_fpc(whole)
    assert Spectrum().merge(whole).counts == whole.counts
    with pytest.raises(ValueError):
        whole.merge(accumulate([CycleVector((3, 0, 0))]))


def test_spectrum_report():
    spectrum = accumulate([CycleVector((1, 1, 0))] * 99 + [CycleVector((0, 0, 1))])
    text = spectrum_report(spectrum, threshold=0.05)
    lines = text.splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS + ("p1", "p2", "p3"))
    assert len(lines) == 2
    assert lines[1].startswith("1-1-0,")
    assert len(spectrum_report(spectrum, threshold=0).splitlines()) == 3
    assert text.endswith("\n")


def test_spectrum_frame_percentages():
    frame = accumulate([CycleVector((1, 1, 0))]).to_frame()
    assert frame.loc[0, "p1"] == pytest.approx(100 / 3)
    assert frame.loc[0, "p2"] == pytest.approx(200 / 3)
    assert frame.loc[0, "avg_lambda"] == pytest.approx(4 / 3)


def test_spectrum_errors_follow_n_eff():
    stream = [CycleVector((2, 0))] * 50 + [CycleVector((0, 1))] * 50
    wide = accumulate(stream, n_eff_fraction=0.25).entries()[0].err
    narrow = accumulate(stream).entries()[0].err
    assert wide > narrow
    assert narrow == pytest.approx(wilson_halfwidth(0.5, 100))
    assert wilson_halfwidth(0.5, 0) == 0.0
    with pytest.raises(ValueError):
        accumulate(stream, n_eff_fraction=0)


def test_spectrum_json():
    spectrum = accumulate([CycleVector((2, 0)), CycleVector((0, 1))])
    payload = spectrum.to_dict({"model": "nn_chain"})
    assert payload["metadata"] == {"model": "nn_chain"}
    assert payload["mean_fpc"] == pytest.approx(0.5)
    assert Counter(e["q"] for e in payload["entries"]) == Counter({"2-0": 1, "0-1": 1})
