import numpy as np
import pytest

from ssctm.analysis import (
    OUT_OF_DOMAIN,
    AxisSpec,
    GridSpec,
    classify_region,
    fluctuation_family,
    onramp_admissible,
    sweep,
    sweep_csv,
    throughput,
    throughput_bounds,
)
from ssctm.markov import steady_state
from ssctm.model import CellParams, FreewayModel
from ssctm.scenarios import bundled
from ssctm.stability import AMBIGUOUS, STABLE, UNSTABLE, decide

COARSE = GridSpec.parse("0:6000:300,0:3000:300")


@pytest.fixture(scope="module")
def coarse_baseline():
    return classify_region(bundled("baseline"), COARSE)


class TestGrid:
    def test_parse_round_trip(self):
        g = GridSpec.parse("0:6000:30,0:3000:30")
        assert str(g) == "0:6000:30,0:3000:30"
        assert g.r1.values().size == 201 and g.r2.values().size == 101
        assert g.r1.values()[-1] == 6000.0

    def test_endpoint_not_on_grid(self):
        np.testing.assert_allclose(AxisSpec(0, 100, 30).values(), [0, 30, 60, 90])

    def test_float_step_keeps_endpoint(self):
        assert AxisSpec(0, 1, 0.1).values().size == 11

    @pytest.mark.parametrize("text", ["0:6000:30", "a:b:c,0:1:1", "0:10:0,0:1:1", "5:1:1,0:1:1", ""])
    def test_bad(self, text):
        with pytest.raises(ValueError):
            GridSpec.parse(text)


class TestThroughput:
    def test_two_cell(self, baseline):
        assert throughput(baseline, (4500, 0)) == 9000.0
        assert throughput(baseline, (3000, 1000)) == 7000.0

    def test_remaining_distance_weights(self):
        m = FreewayModel(CellParams(0.5, 60, 20, 400), (1, 1, 1), ((6000,) * 3,), ((0,),))
        assert throughput(m, (100, 10, 1)) == pytest.approx(0.5 * (300 + 20 + 1))

    def test_onramp_domain(self, baseline):
        assert onramp_admissible(baseline, 2970, 3000)
        assert not onramp_admissible(baseline, 3000, 3000)
        assert onramp_admissible(baseline, 1e9, None)


class TestRegion:
    def test_three_regions(self, coarse_baseline):
        rm = coarse_baseline
        for tag in (STABLE, AMBIGUOUS, UNSTABLE):
            assert rm.count(tag) > 0
        # the r2 = 3000 column is out of the on-ramp domain
        assert rm.count(OUT_OF_DOMAIN) == rm.r1.size
        assert np.all(rm.verdict[:, -1] == OUT_OF_DOMAIN)
        assert rm.verdict.shape == (21, 11)

    def test_matches_pointwise_decide(self, baseline, coarse_baseline):
        rm = coarse_baseline
        for a in (0, 7, 14):
            for b in (0, 5):
                v = decide(baseline, (rm.r1[a], rm.r2[b]))
                assert rm.verdict[a, b] == v.tag
                assert rm.margin_min[a, b] == v.margin_min

    def test_all_unstable_above_capacity(self, baseline):
        rm = classify_region(baseline, GridSpec.parse("4600:6000:200,0:2000:500"))
        assert rm.count(UNSTABLE) == rm.verdict.size

    def test_monotone_along_rays(self, coarse_baseline):
        # once a ray in r1 or r2 leaves the stable region it never comes back
        v = coarse_baseline.verdict
        lines = [v[a, :-1] for a in range(v.shape[0])] + [v[:, b] for b in range(v.shape[1] - 1)]
        for line in lines:
            seen_unstable = False
            for tag in line:
                if tag == UNSTABLE:
                    seen_unstable = True
                assert not (seen_unstable and tag == STABLE)

    def test_variant2_frontier(self):
        rm = classify_region(bundled("variant2"), COARSE)
        st = rm.points(STABLE)
        assert st[:, 0].max() == 4200 and st[:, 1].max() == 2700
        # nothing at or beyond the mean capacity of cell 1 is certified
        assert np.all(rm.verdict[rm.r1 >= 4500][:, :-1] != STABLE)
        # cell 2 still spills back: large r2 lowers the adjusted capacity of cell 1
        assert decide(bundled("variant2"), (3600, 2400)).tag == UNSTABLE

    def test_csv(self, coarse_baseline):
        lines = coarse_baseline.to_csv().splitlines()
        assert lines[0] == "r1,r2,verdict,margin_min"
        assert len(lines) == 1 + 21 * 11
        assert lines[-1].split(",")[2] == OUT_OF_DOMAIN

    def test_jobs_invariant(self, baseline):
        g = GridSpec.parse("3000:4800:300,0:1500:300")
        assert classify_region(baseline, g, jobs=1).to_csv() == classify_region(baseline, g, jobs=2).to_csv()

    def test_needs_two_cells(self):
        m = FreewayModel(CellParams(1, 60, 20, 400), (1,), ((6000,),), ((0,),))
        with pytest.raises(ValueError):
            classify_region(m, COARSE)


class TestThroughputBounds:
    def test_ordering_and_argmax(self, baseline, coarse_baseline):
        tb = throughput_bounds(baseline, COARSE, region=coarse_baseline)
        assert tb.J_lower <= tb.J_upper
        assert tb.grid_J_lower <= tb.J_lower and tb.grid_J_upper <= tb.J_upper
        assert decide(baseline, tb.argmax_lower).tag == STABLE
        assert decide(baseline, tb.argmax_upper).tag in (STABLE, AMBIGUOUS)
        assert throughput(baseline, tb.argmax_lower) == tb.J_lower

    def test_upper_bound_value(self, baseline, coarse_baseline):
        # r1 = 4500 saturates the mean capacity of cell 1 and is the best necessary point
        tb = throughput_bounds(baseline, COARSE, region=coarse_baseline)
        assert tb.J_upper == 9000.0

    def test_no_refine(self, baseline, coarse_baseline):
        tb = throughput_bounds(baseline, COARSE, region=coarse_baseline, refine=False)
        assert tb.J_lower == tb.grid_J_lower


class TestFamily:
    def test_lambda_one_is_baseline(self, baseline):
        fam = fluctuation_family(baseline, 1.0, 3000.0)
        assert np.array_equal(fam.modes, baseline.modes)
        assert np.array_equal(fam.Lambda, baseline.Lambda)

    @pytest.mark.parametrize("lam", [0.5, 1.5, 2.0])
    def test_generator_rows(self, baseline, lam):
        fam = fluctuation_family(baseline, lam, 1500.0)
        np.testing.assert_allclose(fam.Lambda.sum(axis=1), 0, atol=1e-15)
        assert fam.Lambda[1, 1] == -(1 + lam)
        np.testing.assert_allclose(fam.stationary, steady_state(fam.Lambda))
        # incidents are more frequent: normal mode occupancy falls
        assert fam.stationary[0] < steady_state(baseline.Lambda)[0] or lam <= 1

    def test_no_fluctuation(self, baseline):
        fam = fluctuation_family(baseline, 1.0, 0.0)
        tb = throughput_bounds(fam, COARSE)
        # capacity-limited maximum 2 * 6000; the certified bound trails by under one r1 step
        assert tb.J_upper == 12000.0
        assert tb.J_upper - 2 * COARSE.r1.step < tb.J_lower <= tb.J_upper

    def test_sweep_table(self, baseline):
        g = GridSpec.parse("0:6000:600,0:3000:600")
        rows = sweep(baseline, [(1.0, 3000.0), (2.0, 3000.0)], g)
        assert [(r.lam, r.dF) for r in rows] == [(1.0, 3000.0), (2.0, 3000.0)]
        assert rows[1].J_upper <= rows[0].J_upper
        text = sweep_csv(rows)
        assert text.splitlines()[0] == "lambda,dF,J_upper,J_lower"
        assert len(text.splitlines()) == 3


class TestCorrelation:
    def test_upper_bound_shared(self):
        ups = [throughput_bounds(bundled(n), COARSE).J_upper
               for n in ("baseline", "corr_comonotone", "corr_anticorrelated")]
        assert ups[0] == ups[1] == ups[2]

    def test_anticorrelated_modes(self):
        m = bundled("corr_anticorrelated")
        assert m.modes.tolist() == [[6000, 3000], [3000, 6000]]
        np.testing.assert_allclose(m.stationary @ m.modes, [4500, 4500])
